//! Top-wall potential control of the Laplace equation on the unit square.
//!
//! ∇²u = 0 in Ω, u(x,0) = sin 2πx, u = c on the top wall, side walls carry the
//! trace of the analytic optimum (or zero), and
//! J(c) = ∫ (∂u/∂y(x,1) − cos 2πx)² dx.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::autodiff::{AdError, Tape, Var};
use crate::linalg::{solve_checked, Lu, Matrix};
use crate::pointcloud::{make_unit_square_grid, NodeKind, PointCloud, Segment};
use crate::rbf::{assemble_system, Basis, BcValue, BoundaryData, Interpolant, LinearOp, Op, RbfConfig};

use super::{check_control, trapezoid_weights, ProblemError};

/// c*(x) = sech(2π) sin 2πx + tanh(2π)/(2π) cos 2πx
pub fn laplace_exact_control(x: f64) -> f64 {
    let s = 1.0 / (2.0 * PI).cosh();
    s * (2.0 * PI * x).sin() + (2.0 * PI).tanh() / (2.0 * PI) * (2.0 * PI * x).cos()
}

/// Harmonic state attaining J = 0 with bottom data sin 2πx.
pub fn laplace_exact_state(x: f64, y: f64) -> f64 {
    let s = 1.0 / (2.0 * PI).cosh();
    let tp = 2.0 * PI;
    0.5 * s * (tp * x).sin() * ((tp * (y - 1.0)).exp() + (tp * (1.0 - y)).exp())
        + s / (4.0 * PI) * (tp * x).cos() * ((tp * y).exp() - (-tp * y).exp())
}

/// Data imposed on the left and right walls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SideData {
    /// Trace of the analytic optimum, sinh(2πy)·sech(2π)/(2π).
    ExactTrace,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceConfig {
    pub grid: usize,
    pub ghost_layer: bool,
    pub side_data: SideData,
}

impl Default for LaplaceConfig {
    fn default() -> Self {
        Self { grid: 30, ghost_layer: true, side_data: SideData::ExactTrace }
    }
}

pub struct LaplaceProblem {
    pub config: LaplaceConfig,
    pub cloud: PointCloud,
    pub basis: Arc<Basis>,
    pub matrix: Arc<Matrix>,
    pub lu: Arc<Lu>,
    /// Top-wall node indices sorted by x; control entry k lives at `top[k]`.
    pub top: Vec<usize>,
    pub top_x: Vec<f64>,
    pub weights: Vec<f64>,
    /// ∂/∂y operator rows at the top nodes.
    pub dy_top: Arc<Matrix>,
    /// cos 2πx at the top nodes.
    pub target: Vec<f64>,
    base_rhs: Vec<f64>,
}

impl std::fmt::Debug for LaplaceProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LaplaceProblem").field("config", &self.config).field("nodes", &self.cloud.len()).finish()
    }
}

impl LaplaceProblem {
    pub fn new(config: LaplaceConfig) -> Result<Self, ProblemError> {
        if config.grid < 3 {
            return Err(ProblemError::Invalid(format!("grid must be at least 3, got {}", config.grid)));
        }
        let cloud = make_unit_square_grid(config.grid, config.grid, NodeKind::Dirichlet)?;
        Self::from_cloud(cloud, config)
    }

    /// Builds the problem on a canonical unit-square cloud with top/bottom/left/right segments.
    pub fn from_cloud(cloud: PointCloud, config: LaplaceConfig) -> Result<Self, ProblemError> {
        let h = 1.0 / (config.grid.max(2) - 1) as f64;
        let rbf = RbfConfig { ghost_offset: config.ghost_layer.then_some(h), ..RbfConfig::default() };
        let mut bc = BoundaryData::new();
        bc.insert(Segment::Top, BcValue::Const(0.0));
        bc.insert(Segment::Bottom, BcValue::Func(Box::new(|x, _| (2.0 * PI * x).sin())));
        let side = match config.side_data {
            SideData::ExactTrace => BcValue::Func(Box::new(laplace_exact_state)),
            SideData::Zero => BcValue::Const(0.0),
        };
        bc.insert(Segment::Left, side);
        bc.insert(
            Segment::Right,
            match config.side_data {
                SideData::ExactTrace => BcValue::Func(Box::new(laplace_exact_state)),
                SideData::Zero => BcValue::Const(0.0),
            },
        );
        let source = vec![0.0; cloud.n_internal()];
        let sys = assemble_system(&cloud, rbf, LinearOp::LAPLACIAN, &bc, &source)?;
        let lu = Lu::factor(&sys.matrix).map_err(crate::rbf::RbfError::from)?;
        let top = cloud.segment_nodes(Segment::Top);
        if top.is_empty() {
            return Err(ProblemError::Invalid("cloud has no top-wall nodes".into()));
        }
        let top_x: Vec<f64> = top.iter().map(|&i| cloud.coords[i][0]).collect();
        let weights = trapezoid_weights(&top_x);
        let top_pts: Vec<[f64; 2]> = top.iter().map(|&i| cloud.coords[i]).collect();
        let dy_top = sys.basis.op_matrix(Op::Dy, &top_pts);
        let target = top_x.iter().map(|x| (2.0 * PI * x).cos()).collect();
        Ok(Self {
            config,
            basis: sys.basis.clone(),
            matrix: Arc::new(sys.matrix),
            lu: Arc::new(lu),
            top,
            top_x,
            weights,
            dy_top: Arc::new(dy_top),
            target,
            base_rhs: sys.rhs,
            cloud,
        })
    }

    pub fn n_controls(&self) -> usize {
        self.top.len()
    }

    pub fn exact_control(&self) -> Vec<f64> {
        self.top_x.iter().map(|&x| laplace_exact_control(x)).collect()
    }

    pub fn rhs(&self, c: &[f64]) -> Result<Vec<f64>, ProblemError> {
        check_control(c, self.top.len())?;
        let mut b = self.base_rhs.clone();
        for (k, &i) in self.top.iter().enumerate() {
            b[i] = c[k];
        }
        Ok(b)
    }

    /// Solves the state for control `c`.
    pub fn forward(&self, c: &[f64]) -> Result<Interpolant, ProblemError> {
        let b = self.rhs(c)?;
        let s = solve_checked(&self.matrix, &self.lu, &b);
        Ok(Interpolant::from_coefficients(self.basis.clone(), s.x, s.relative_residual, s.warning))
    }

    /// Mismatch ∂u/∂y − cos 2πx at the top nodes.
    pub fn mismatch(&self, coef: &[f64]) -> Vec<f64> {
        self.dy_top.matvec(coef).iter().zip(&self.target).map(|(a, b)| a - b).collect()
    }

    pub fn cost_from_coefficients(&self, coef: &[f64]) -> f64 {
        self.mismatch(coef).iter().zip(&self.weights).map(|(r, w)| w * r * r).sum()
    }

    pub fn cost(&self, state: &Interpolant) -> f64 {
        self.cost_from_coefficients(&state.coefficients())
    }

    pub fn cost_of(&self, c: &[f64]) -> Result<f64, ProblemError> {
        Ok(self.cost(&self.forward(c)?))
    }

    /// Records J(c) on `tape` (scatter → prefactored solve → ∂y rows → weighted sum of squares).
    pub fn record_cost(&self, tape: &mut Tape, c: Var) -> Result<Var, AdError> {
        if c.len() != self.top.len() {
            return Err(AdError::Contract(format!("control has {} values, expected {}", c.len(), self.top.len())));
        }
        let base = tape.constant_vector(self.base_rhs_without_top());
        let cs = tape.scatter(c, Arc::new(self.top.clone()), self.base_rhs.len())?;
        let b = tape.add(base, cs)?;
        let a = tape.solve_const(self.lu.clone(), b)?;
        let dy = tape.matvec_const(self.dy_top.clone(), a)?;
        let g = tape.constant_vector(self.target.clone());
        let r = tape.sub(dy, g)?;
        let r2 = tape.square(r);
        let w = tape.constant_vector(self.weights.clone());
        tape.dot(w, r2)
    }

    fn base_rhs_without_top(&self) -> Vec<f64> {
        let mut b = self.base_rhs.clone();
        for &i in &self.top {
            b[i] = 0.0;
        }
        b
    }

    /// Nodal values of the state at every cloud node.
    pub fn nodal_values(&self, state: &Interpolant) -> Vec<f64> {
        self.cloud.coords.iter().map(|p| state.eval_field(*p)).collect()
    }
}
