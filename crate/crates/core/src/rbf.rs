//! Polyharmonic cubic RBF collocation with appended polynomials.
//!
//! û(x) = Σ_j λ_j φ(‖x − x_j‖) + Σ_k γ_k P_k(x), with φ(r) = r³ and
//! side conditions Σ_j λ_j P_k(x_j) = 0.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::linalg::{solve_checked, LinalgError, Lu, Matrix};
use crate::pointcloud::{NodeKind, PointCloud, Segment};

#[derive(Debug, Error)]
pub enum RbfError {
    #[error("no boundary data for segment `{0}`")]
    MissingBoundaryData(Segment),
    #[error("boundary data for segment `{segment}` has {got} values, expected {expected}")]
    BoundaryDataLength { segment: Segment, expected: usize, got: usize },
    #[error("boundary node {0} has no segment")]
    UnsegmentedBoundary(usize),
    #[error("source has {got} values, expected {expected}")]
    SourceLength { expected: usize, got: usize },
    #[error("singular collocation system (zero pivot at column {0})")]
    Singular(usize),
    #[error(transparent)]
    Linalg(LinalgError),
}

impl From<LinalgError> for RbfError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::Singular { column } => RbfError::Singular(column),
            other => RbfError::Linalg(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    PolyharmonicCubic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbfConfig {
    pub kernel: Kernel,
    pub poly_degree: usize,
    /// Adds one centre at `x_b + offset·n_b` per boundary node and collocates the
    /// interior operator there as well. `None` gives the plain square system.
    pub ghost_offset: Option<f64>,
}

impl Default for RbfConfig {
    fn default() -> Self {
        Self { kernel: Kernel::PolyharmonicCubic, poly_degree: 1, ghost_offset: None }
    }
}

impl RbfConfig {
    pub fn n_poly(&self) -> usize {
        n_monomials(self.poly_degree)
    }
}

pub fn phi_value(r: f64) -> f64 {
    r * r * r
}

/// Gradient with respect to `x` and 2-D Laplacian of φ(‖x − center‖).
pub fn phi_derivatives(center: [f64; 2], x: [f64; 2]) -> ([f64; 2], f64) {
    let dx = x[0] - center[0];
    let dy = x[1] - center[1];
    let r = (dx * dx + dy * dy).sqrt();
    ([3.0 * r * dx, 3.0 * r * dy], 9.0 * r)
}

/// C(n+2, n)
pub fn n_monomials(n: usize) -> usize {
    (n + 1) * (n + 2) / 2
}

/// Exponent pairs (a, b) of x^a y^b in graded-lexicographic order.
pub fn exponents(n: usize) -> Vec<(i32, i32)> {
    let mut e = Vec::with_capacity(n_monomials(n));
    for d in 0..=n as i32 {
        for a in (0..=d).rev() {
            e.push((a, d - a));
        }
    }
    e
}

fn mono(x: f64, a: i32) -> f64 {
    if a < 0 {
        0.0
    } else {
        x.powi(a)
    }
}

/// Values of the monomials of degree ≤ n at `x`.
pub fn poly_basis(x: [f64; 2], n: usize) -> Vec<f64> {
    exponents(n).into_iter().map(|(a, b)| mono(x[0], a) * mono(x[1], b)).collect()
}

/// (∂/∂x, ∂/∂y, ∇²) of each monomial at `x`.
pub fn poly_derivatives(x: [f64; 2], n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let e = exponents(n);
    let px = e.iter().map(|&(a, b)| a as f64 * mono(x[0], a - 1) * mono(x[1], b)).collect();
    let py = e.iter().map(|&(a, b)| b as f64 * mono(x[0], a) * mono(x[1], b - 1)).collect();
    let pl = e
        .iter()
        .map(|&(a, b)| {
            (a * (a - 1)) as f64 * mono(x[0], a - 2) * mono(x[1], b)
                + (b * (b - 1)) as f64 * mono(x[0], a) * mono(x[1], b - 2)
        })
        .collect();
    (px, py, pl)
}

/// Elementary linear operators applied to the expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Value,
    Dx,
    Dy,
    Laplacian,
}

/// Constant-coefficient operator `a_lap ∇² + a_x ∂x + a_y ∂y + a_0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearOp {
    pub a_lap: f64,
    pub a_x: f64,
    pub a_y: f64,
    pub a_0: f64,
}

impl LinearOp {
    pub const LAPLACIAN: LinearOp = LinearOp { a_lap: 1.0, a_x: 0.0, a_y: 0.0, a_0: 0.0 };
}

/// RBF centres plus polynomial degree; evaluates operator rows.
#[derive(Debug, Clone)]
pub struct Basis {
    pub centers: Vec<[f64; 2]>,
    pub config: RbfConfig,
}

impl Basis {
    pub fn new(centers: Vec<[f64; 2]>, config: RbfConfig) -> Self {
        Self { centers, config }
    }

    /// Centres for `cloud`: its nodes, followed by ghost centres if configured.
    pub fn for_cloud(cloud: &PointCloud, config: RbfConfig) -> Self {
        let mut centers = cloud.coords.clone();
        if let Some(h) = config.ghost_offset {
            for i in 0..cloud.len() {
                if cloud.tags[i].is_boundary() {
                    let [x, y] = cloud.coords[i];
                    let [nx, ny] = cloud.normals[i];
                    centers.push([x + h * nx, y + h * ny]);
                }
            }
        }
        Self { centers, config }
    }

    pub fn n_centers(&self) -> usize {
        self.centers.len()
    }

    pub fn n_poly(&self) -> usize {
        self.config.n_poly()
    }

    /// Length of a coefficient vector: centres plus monomials.
    pub fn dim(&self) -> usize {
        self.n_centers() + self.n_poly()
    }

    /// Writes the row of `op` evaluated at `x` into `out` (length `dim()`).
    pub fn op_row_into(&self, op: Op, x: [f64; 2], out: &mut [f64]) {
        let nc = self.n_centers();
        for (j, c) in self.centers.iter().enumerate() {
            out[j] = match op {
                Op::Value => {
                    let r = ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)).sqrt();
                    phi_value(r)
                }
                Op::Dx => phi_derivatives(*c, x).0[0],
                Op::Dy => phi_derivatives(*c, x).0[1],
                Op::Laplacian => phi_derivatives(*c, x).1,
            };
        }
        let n = self.config.poly_degree;
        let tail = &mut out[nc..];
        match op {
            Op::Value => tail.copy_from_slice(&poly_basis(x, n)),
            _ => {
                let (px, py, pl) = poly_derivatives(x, n);
                tail.copy_from_slice(match op {
                    Op::Dx => &px,
                    Op::Dy => &py,
                    _ => &pl,
                });
            }
        }
    }

    pub fn op_row(&self, op: Op, x: [f64; 2]) -> Vec<f64> {
        let mut r = vec![0.0; self.dim()];
        self.op_row_into(op, x, &mut r);
        r
    }

    pub fn linear_op_row(&self, op: LinearOp, x: [f64; 2]) -> Vec<f64> {
        let mut row = vec![0.0; self.dim()];
        let mut tmp = vec![0.0; self.dim()];
        for (coef, o) in [(op.a_lap, Op::Laplacian), (op.a_x, Op::Dx), (op.a_y, Op::Dy), (op.a_0, Op::Value)] {
            if coef != 0.0 {
                self.op_row_into(o, x, &mut tmp);
                crate::linalg::axpy(coef, &tmp, &mut row);
            }
        }
        row
    }

    pub fn normal_row(&self, x: [f64; 2], n: [f64; 2]) -> Vec<f64> {
        self.linear_op_row(LinearOp { a_lap: 0.0, a_x: n[0], a_y: n[1], a_0: 0.0 }, x)
    }

    /// Operator matrix with one row per point.
    pub fn op_matrix(&self, op: Op, points: &[[f64; 2]]) -> Matrix {
        let mut m = Matrix::zeros(points.len(), self.dim());
        for (i, p) in points.iter().enumerate() {
            self.op_row_into(op, *p, m.row_mut(i));
        }
        m
    }

    /// Side-condition block: row k holds P_k at each centre, zeros in the polynomial columns.
    pub fn side_condition_rows(&self) -> Matrix {
        let m = self.n_poly();
        let mut out = Matrix::zeros(m, self.dim());
        for (j, c) in self.centers.iter().enumerate() {
            for (k, v) in poly_basis(*c, self.config.poly_degree).into_iter().enumerate() {
                out[(k, j)] = v;
            }
        }
        out
    }
}

/// Boundary data for one segment.
pub enum BcValue {
    Const(f64),
    Func(Box<dyn Fn(f64, f64) -> f64 + Send + Sync>),
    /// One value per segment node, in cloud index order.
    Nodal(Vec<f64>),
}

impl std::fmt::Debug for BcValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BcValue::Const(c) => write!(f, "Const({c})"),
            BcValue::Func(_) => write!(f, "Func(..)"),
            BcValue::Nodal(v) => write!(f, "Nodal({} values)", v.len()),
        }
    }
}

pub type BoundaryData = BTreeMap<Segment, BcValue>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    Node(usize),
    /// Interior operator collocated at boundary node `i` (ghost-layer row).
    Ghost(usize),
    SideCondition(usize),
}

#[derive(Debug, Clone)]
pub struct CollocationSystem {
    pub matrix: Matrix,
    pub rhs: Vec<f64>,
    pub row_map: Vec<RowKind>,
    pub basis: Arc<Basis>,
}

fn boundary_values(cloud: &PointCloud, bc: &BoundaryData) -> Result<Vec<f64>, RbfError> {
    let mut vals = vec![0.0; cloud.len()];
    for seg in cloud.segments_present() {
        let data = bc.get(&seg).ok_or(RbfError::MissingBoundaryData(seg))?;
        let nodes: Vec<usize> = (0..cloud.len()).filter(|&i| cloud.tags[i].segment == Some(seg)).collect();
        match data {
            BcValue::Const(c) => nodes.iter().for_each(|&i| vals[i] = *c),
            BcValue::Func(f) => nodes.iter().for_each(|&i| vals[i] = f(cloud.coords[i][0], cloud.coords[i][1])),
            BcValue::Nodal(v) => {
                if v.len() != nodes.len() {
                    return Err(RbfError::BoundaryDataLength { segment: seg, expected: nodes.len(), got: v.len() });
                }
                nodes.iter().zip(v).for_each(|(&i, &x)| vals[i] = x);
            }
        }
    }
    Ok(vals)
}

/// Assembles the global collocation system.
///
/// Rows: one per node (interior operator, identity, ∂/∂n or ∂/∂n + β), then one
/// interior-operator row per boundary node if the ghost layer is on, then the
/// polynomial side conditions. `source` gives the interior right-hand side per
/// internal node (in node order).
pub fn assemble_system(
    cloud: &PointCloud,
    config: RbfConfig,
    interior_op: LinearOp,
    bc: &BoundaryData,
    source: &[f64],
) -> Result<CollocationSystem, RbfError> {
    let n_int = cloud.n_internal();
    if source.len() != n_int {
        return Err(RbfError::SourceLength { expected: n_int, got: source.len() });
    }
    for (i, t) in cloud.tags.iter().enumerate() {
        if t.is_boundary() && t.segment.is_none() {
            return Err(RbfError::UnsegmentedBoundary(i));
        }
    }
    let bvals = boundary_values(cloud, bc)?;
    let basis = Arc::new(Basis::for_cloud(cloud, config));
    let dim = basis.dim();
    let mut matrix = Matrix::zeros(dim, dim);
    let mut rhs = vec![0.0; dim];
    let mut row_map = Vec::with_capacity(dim);
    let mut src = source.iter();
    for i in 0..cloud.len() {
        let x = cloud.coords[i];
        let t = cloud.tags[i];
        let row = match t.kind {
            NodeKind::Internal => {
                rhs[i] = *src.next().unwrap();
                basis.linear_op_row(interior_op, x)
            }
            NodeKind::Dirichlet => basis.op_row(Op::Value, x),
            NodeKind::Neumann => basis.normal_row(x, cloud.normals[i]),
            NodeKind::Robin => {
                let mut r = basis.normal_row(x, cloud.normals[i]);
                let v = basis.op_row(Op::Value, x);
                crate::linalg::axpy(t.beta.unwrap_or(0.0), &v, &mut r);
                r
            }
        };
        if t.is_boundary() {
            rhs[i] = bvals[i];
        }
        matrix.row_mut(i).copy_from_slice(&row);
        row_map.push(RowKind::Node(i));
    }
    let mut r = cloud.len();
    if config.ghost_offset.is_some() {
        for i in 0..cloud.len() {
            if cloud.tags[i].is_boundary() {
                let row = basis.linear_op_row(interior_op, cloud.coords[i]);
                matrix.row_mut(r).copy_from_slice(&row);
                row_map.push(RowKind::Ghost(i));
                r += 1;
            }
        }
    }
    let side = basis.side_condition_rows();
    for k in 0..basis.n_poly() {
        matrix.row_mut(r).copy_from_slice(side.row(k));
        row_map.push(RowKind::SideCondition(k));
        r += 1;
    }
    debug_assert_eq!(r, dim);
    Ok(CollocationSystem { matrix, rhs, row_map, basis })
}

#[derive(Debug, Clone)]
pub struct Interpolant {
    pub lambda: Vec<f64>,
    pub gamma: Vec<f64>,
    pub basis: Arc<Basis>,
    pub relative_residual: f64,
    pub warning: Option<String>,
}

pub fn solve_collocation(system: &CollocationSystem) -> Result<Interpolant, RbfError> {
    let lu = Lu::factor(&system.matrix)?;
    let s = solve_checked(&system.matrix, &lu, &system.rhs);
    Ok(Interpolant::from_coefficients(system.basis.clone(), s.x, s.relative_residual, s.warning))
}

impl Interpolant {
    pub fn from_coefficients(basis: Arc<Basis>, coef: Vec<f64>, relative_residual: f64, warning: Option<String>) -> Self {
        let nc = basis.n_centers();
        let gamma = coef[nc..].to_vec();
        let mut lambda = coef;
        lambda.truncate(nc);
        Self { lambda, gamma, basis, relative_residual, warning }
    }

    pub fn coefficients(&self) -> Vec<f64> {
        let mut c = self.lambda.clone();
        c.extend_from_slice(&self.gamma);
        c
    }

    pub fn apply(&self, op: Op, x: [f64; 2]) -> f64 {
        let row = self.basis.op_row(op, x);
        let nc = self.lambda.len();
        crate::linalg::dot(&row[..nc], &self.lambda) + crate::linalg::dot(&row[nc..], &self.gamma)
    }

    pub fn eval_field(&self, x: [f64; 2]) -> f64 {
        self.apply(Op::Value, x)
    }

    pub fn eval_gradient(&self, x: [f64; 2]) -> [f64; 2] {
        [self.apply(Op::Dx, x), self.apply(Op::Dy, x)]
    }

    /// Value plus a flag set when `x` lies outside the centres' bounding box.
    pub fn eval_field_checked(&self, x: [f64; 2]) -> (f64, bool) {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for c in &self.basis.centers {
            for d in 0..2 {
                lo[d] = lo[d].min(c[d]);
                hi[d] = hi[d].max(c[d]);
            }
        }
        let outside = (0..2).any(|d| x[d] < lo[d] || x[d] > hi[d]);
        (self.eval_field(x), outside)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pointcloud::make_unit_square_grid;
    use approx::assert_abs_diff_eq;

    fn phi_at(c: [f64; 2], x: [f64; 2]) -> f64 {
        phi_value(((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)).sqrt())
    }

    #[test]
    fn phi_values() {
        assert_eq!(phi_value(0.0), 0.0);
        assert_eq!(phi_value(2.0), 8.0);
        assert_eq!(phi_value(0.5), 0.125);
    }

    #[test]
    fn phi_derivatives_at_centre_vanish() {
        let (g, l) = phi_derivatives([0.3, 0.2], [0.3, 0.2]);
        assert_eq!(g, [0.0, 0.0]);
        assert_eq!(l, 0.0);
    }

    #[test]
    fn phi_gradient_example() {
        let (g, _) = phi_derivatives([0.0, 0.0], [3.0, 4.0]);
        assert_abs_diff_eq!(g[0], 45.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g[1], 60.0, epsilon = 1e-12);
        let h = 1e-5;
        let fx = (phi_at([0.0, 0.0], [3.0 + h, 4.0]) - phi_at([0.0, 0.0], [3.0 - h, 4.0])) / (2.0 * h);
        let fy = (phi_at([0.0, 0.0], [3.0, 4.0 + h]) - phi_at([0.0, 0.0], [3.0, 4.0 - h])) / (2.0 * h);
        assert!((fx - 45.0).abs() < 1e-5 && (fy - 60.0).abs() < 1e-5);
    }

    #[test]
    fn phi_laplacian_unit_radius() {
        let c = [0.1, -0.2];
        let x = [0.1 + 0.6, -0.2 + 0.8];
        let h = 1e-5;
        let f = |p| phi_at(c, p);
        let lap = (f([x[0] + h, x[1]]) + f([x[0] - h, x[1]]) + f([x[0], x[1] + h]) + f([x[0], x[1] - h])
            - 4.0 * f(x))
            / (h * h);
        assert_abs_diff_eq!(phi_derivatives(c, x).1, 9.0, epsilon = 1e-12);
        assert!((lap - 9.0).abs() < 1e-4, "fd laplacian {lap}");
    }

    #[test]
    fn monomial_counts() {
        assert_eq!(poly_basis([0.3, 0.7], 0), vec![1.0]);
        assert_eq!(n_monomials(1), 3);
        assert_eq!(n_monomials(2), 6);
        assert_eq!(poly_basis([2.0, 3.0], 1), vec![1.0, 2.0, 3.0]);
        assert_eq!(poly_basis([2.0, 3.0], 2), vec![1.0, 2.0, 3.0, 4.0, 6.0, 9.0]);
    }

    #[test]
    fn poly_derivatives_degree_two() {
        let (px, py, pl) = poly_derivatives([2.0, 3.0], 2);
        assert_eq!(px, vec![0.0, 1.0, 0.0, 4.0, 3.0, 0.0]);
        assert_eq!(py, vec![0.0, 0.0, 1.0, 0.0, 2.0, 6.0]);
        assert_eq!(pl, vec![0.0, 0.0, 0.0, 2.0, 0.0, 2.0]);
    }

    fn linear_bc() -> BoundaryData {
        let mut bc = BoundaryData::new();
        for s in [Segment::Top, Segment::Bottom, Segment::Left, Segment::Right] {
            bc.insert(s, BcValue::Func(Box::new(|x, y| 2.0 * x + 3.0 * y)));
        }
        bc
    }

    #[test]
    fn dimension_and_symmetry() {
        let cloud = make_unit_square_grid(2, 2, NodeKind::Dirichlet).unwrap();
        let sys = assemble_system(&cloud, RbfConfig::default(), LinearOp::LAPLACIAN, &linear_bc(), &[]).unwrap();
        assert_eq!(sys.matrix.rows(), 7);
        assert_eq!(sys.matrix.cols(), 7);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(sys.matrix[(i, j)], sys.matrix[(j, i)]);
            }
        }
    }

    #[test]
    fn linear_field_reproduction() {
        let cloud = make_unit_square_grid(6, 6, NodeKind::Dirichlet).unwrap();
        let src = vec![0.0; cloud.n_internal()];
        let sys = assemble_system(&cloud, RbfConfig::default(), LinearOp::LAPLACIAN, &linear_bc(), &src).unwrap();
        let it = solve_collocation(&sys).unwrap();
        for p in &cloud.coords {
            assert_abs_diff_eq!(it.eval_field(*p), 2.0 * p[0] + 3.0 * p[1], epsilon = 1e-10);
        }
        assert_abs_diff_eq!(it.gamma[0], 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(it.gamma[1], 2.0, epsilon = 1e-8);
        assert_abs_diff_eq!(it.gamma[2], 3.0, epsilon = 1e-8);
        assert!(it.lambda.iter().all(|l| l.abs() < 1e-8));
        let g = it.eval_gradient([0.37, 0.81]);
        assert_abs_diff_eq!(g[0], 2.0, epsilon = 1e-8);
        assert_abs_diff_eq!(g[1], 3.0, epsilon = 1e-8);
        assert!(it.relative_residual <= 1e-8);
    }

    #[test]
    fn missing_segment_data_is_named() {
        let cloud = make_unit_square_grid(3, 3, NodeKind::Dirichlet).unwrap();
        let mut bc = linear_bc();
        bc.remove(&Segment::Left);
        let err = assemble_system(&cloud, RbfConfig::default(), LinearOp::LAPLACIAN, &bc, &[0.0]).unwrap_err();
        assert!(err.to_string().contains("left"), "{err}");
    }

    #[test]
    fn duplicated_node_is_singular() {
        let mut cloud = make_unit_square_grid(4, 4, NodeKind::Dirichlet).unwrap();
        let last = cloud.len() - 1;
        cloud.coords.push(cloud.coords[last]);
        cloud.tags.push(cloud.tags[last]);
        cloud.normals.push(cloud.normals[last]);
        let src = vec![0.0; cloud.n_internal()];
        let sys = assemble_system(&cloud, RbfConfig::default(), LinearOp::LAPLACIAN, &linear_bc(), &src).unwrap();
        assert!(matches!(solve_collocation(&sys), Err(RbfError::Singular(_))));
    }

    #[test]
    fn extrapolation_flagged() {
        let cloud = make_unit_square_grid(4, 4, NodeKind::Dirichlet).unwrap();
        let src = vec![0.0; cloud.n_internal()];
        let sys = assemble_system(&cloud, RbfConfig::default(), LinearOp::LAPLACIAN, &linear_bc(), &src).unwrap();
        let it = solve_collocation(&sys).unwrap();
        assert!(!it.eval_field_checked([0.5, 0.5]).1);
        let (v, out) = it.eval_field_checked([1.5, 0.5]);
        assert!(out);
        assert_abs_diff_eq!(v, 4.5, epsilon = 1e-8);
    }
}
