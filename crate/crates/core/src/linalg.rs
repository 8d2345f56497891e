//! Dense row-major matrices and an LU factorisation with partial pivoting.
//!
//! The factorisation itself is delegated to `faer`; this module adds the
//! singularity test, residual check and iterative refinement used by the
//! collocation solver.

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::{Mat, MatRef};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("singular system: zero pivot at column {column}")]
    Singular { column: usize },
    #[error("non-finite entry in matrix")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.len() != rows * cols {
            return Err(LinalgError::DimMismatch { expected: rows * cols, got: data.len() });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn view(&self) -> MatRef<'_, f64> {
        MatRef::from_row_major_slice(&self.data, self.rows, self.cols)
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// `y = A x`
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `y = Aᵀ x`
    pub fn tr_matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.rows, "tr_matvec dimension mismatch");
        let mut y = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                axpy(xi, self.row(i), &mut y);
            }
        }
        y
    }

    /// `C = A B`
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Mat::<f64>::zeros(self.rows, other.cols);
        faer::linalg::matmul::matmul(
            out.as_mut(),
            faer::Accum::Replace,
            self.view(),
            other.view(),
            1.0,
            faer::Par::Seq,
        );
        Matrix::from_fn(self.rows, other.cols, |i, j| out[(i, j)])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Writes the matrix in a coordinate-format text dump (one `i j value` per nonzero, 1-based).
    pub fn write_market<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let nnz = self.data.iter().filter(|v| **v != 0.0).count();
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.rows, self.cols, nnz)?;
        for i in 0..self.rows {
            for j in 0..self.cols {
                let v = self[(i, j)];
                if v != 0.0 {
                    writeln!(w, "{} {} {}", i + 1, j + 1, v)?;
                }
            }
        }
        Ok(())
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

pub fn norm_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Pivots smaller than this multiple of `n·eps·max|A|` are treated as exact zeros.
const SINGULAR_PIVOT_FACTOR: f64 = 1.0;

/// LU factors of a square matrix, `PA = LU`.
pub struct Lu {
    n: usize,
    inner: PartialPivLu<f64>,
    min_pivot_ratio: f64,
}

impl std::fmt::Debug for Lu {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Lu").field("n", &self.n).field("min_pivot_ratio", &self.min_pivot_ratio).finish()
    }
}

impl Lu {
    pub fn factor(a: &Matrix) -> Result<Self, LinalgError> {
        if a.rows != a.cols {
            return Err(LinalgError::NotSquare { rows: a.rows, cols: a.cols });
        }
        if !a.is_finite() {
            return Err(LinalgError::NonFinite);
        }
        let n = a.rows;
        let scale = a.max_abs();
        if n == 0 {
            return Ok(Self { n, inner: Mat::<f64>::zeros(0, 0).partial_piv_lu(), min_pivot_ratio: 1.0 });
        }
        if scale == 0.0 {
            return Err(LinalgError::Singular { column: 0 });
        }
        let inner = a.view().partial_piv_lu();
        let u = inner.U();
        let tol = SINGULAR_PIVOT_FACTOR * n as f64 * f64::EPSILON * scale;
        let mut min_ratio = f64::INFINITY;
        for k in 0..n {
            let p = u[(k, k)].abs();
            if !(p > tol) {
                return Err(LinalgError::Singular { column: k });
            }
            min_ratio = min_ratio.min(p / scale);
        }
        Ok(Self { n, inner, min_pivot_ratio: min_ratio })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Smallest |U_kk| relative to max|A|; a cheap conditioning indicator.
    pub fn min_pivot_ratio(&self) -> f64 {
        self.min_pivot_ratio
    }

    fn check(&self, b: &[f64]) {
        assert_eq!(b.len(), self.n, "rhs length does not match factor dimension");
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.check(b);
        let mut rhs = Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        self.inner.solve_in_place(rhs.as_mut());
        (0..self.n).map(|i| rhs[(i, 0)]).collect()
    }

    /// Solves `Aᵀ x = b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        self.check(b);
        let mut rhs = Mat::<f64>::from_fn(self.n, 1, |i, _| b[i]);
        self.inner.solve_transpose_in_place(rhs.as_mut());
        (0..self.n).map(|i| rhs[(i, 0)]).collect()
    }
}

/// Outcome of a checked solve.
#[derive(Debug, Clone)]
pub struct CheckedSolve {
    pub x: Vec<f64>,
    /// ‖Ax − b‖ / max(1, ‖b‖) after refinement.
    pub relative_residual: f64,
    pub refinement_steps: usize,
    pub warning: Option<String>,
}

pub const RESIDUAL_TOLERANCE: f64 = 1e-8;

pub fn relative_residual(a: &Matrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.matvec(x);
    let r: Vec<f64> = ax.iter().zip(b).map(|(p, q)| p - q).collect();
    norm2(&r) / norm2(b).max(1.0)
}

/// Solves with a residual check; when the residual exceeds the tolerance a few
/// steps of iterative refinement are applied and a conditioning warning attached.
pub fn solve_checked(a: &Matrix, lu: &Lu, b: &[f64]) -> CheckedSolve {
    let mut x = lu.solve(b);
    let mut res = relative_residual(a, &x, b);
    let mut steps = 0;
    while res > RESIDUAL_TOLERANCE && steps < 3 {
        let ax = a.matvec(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
        let dx = lu.solve(&r);
        let cand: Vec<f64> = x.iter().zip(&dx).map(|(p, q)| p + q).collect();
        let cand_res = relative_residual(a, &cand, b);
        steps += 1;
        if cand_res < res {
            x = cand;
            res = cand_res;
        } else {
            break;
        }
    }
    let warning = (res > RESIDUAL_TOLERANCE || steps > 0).then(|| {
        format!(
            "ill-conditioned system: relative residual {res:.3e} after {steps} refinement step(s), min pivot ratio {:.3e}",
            lu.min_pivot_ratio()
        )
    });
    CheckedSolve { x, relative_residual: res, refinement_steps: steps, warning }
}
