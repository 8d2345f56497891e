//! Steady incompressible channel flow with inflow control.
//!
//! Dimensionless equations (u·∇)u + ∇p − (1/Re)∇²u = 0, ∇·u = 0 on
//! [0,lx]×[0,ly]. Velocity: u = (c, 0) on the inlet, no-slip walls, (0, q_s)
//! on the blowing and suction slots, ∂u/∂n = 0 on the outlet. Pressure:
//! ∂p/∂n = 0 on inlet, walls and slots, p = 0 on the outlet.
//!
//! Each refinement freezes the advecting velocity and solves for the fixed
//! point of the projection step (momentum and continuity at the interior nodes)
//! as one coupled velocity-pressure collocation system.

use std::sync::Arc;

use crate::autodiff::{AdError, CustomOp, Shape, Tape, Var};
use crate::linalg::{norm_inf, Lu, Matrix};
use crate::pointcloud::{make_channel_cloud, NodeKind, PointCloud, Segment};
use crate::rbf::{Basis, Op, RbfConfig};

use super::{check_control, trapezoid_weights, ProblemError};

/// Number of consecutive growing updates treated as divergence.
pub const DIVERGENCE_STREAK: usize = 10;

pub fn target_outflow(y: f64, ly: f64) -> f64 {
    4.0 * y * (1.0 - y) / (ly * ly)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NsConfig {
    pub nodes: usize,
    pub lx: f64,
    pub ly: f64,
    pub re: f64,
    pub cross_flow: f64,
    pub refinements: usize,
    pub seed: u64,
    /// Kept for configuration compatibility; the coupled refinement has no time step.
    pub pseudo_dt: f64,
    /// Fixed-point tolerance on the velocity update.
    pub steady_tol: f64,
}

impl Default for NsConfig {
    fn default() -> Self {
        Self {
            nodes: 1385,
            lx: 1.5,
            ly: 1.0,
            re: 100.0,
            cross_flow: 0.3,
            refinements: 10,
            seed: 0,
            pseudo_dt: 1e-2,
            steady_tol: 1e-6,
        }
    }
}

/// Operator matrices shared by the forward solve, the tape op and the adjoint.
pub struct NsOperators {
    /// Nodes.
    pub n_nodes: usize,
    /// Coefficients per field (nodes + monomials).
    pub n_coef: usize,
    pub value: Matrix,
    pub dx: Matrix,
    pub dy: Matrix,
    pub lap: Matrix,
    pub normal: Matrix,
    pub interior: Vec<bool>,
    pub a0: Matrix,
}

impl NsOperators {
    pub fn system_dim(&self) -> usize {
        3 * self.n_coef
    }

    /// A0 plus frozen advection (u ∂x + v ∂y) on interior momentum rows.
    pub fn system(&self, u: &[f64], v: &[f64]) -> Matrix {
        let mut a = self.a0.clone();
        let (nn, n) = (self.n_nodes, self.n_coef);
        for i in 0..nn {
            if !self.interior[i] {
                continue;
            }
            let (dxr, dyr) = (self.dx.row(i), self.dy.row(i));
            for (row, off) in [(i, 0), (n + i, n)] {
                let r = &mut a.row_mut(row)[off..off + n];
                for j in 0..n {
                    r[j] += u[i] * dxr[j] + v[i] * dyr[j];
                }
            }
        }
        a
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub p: Vec<f64>,
    /// Coupled coefficient vector `[a_u, a_v, a_p]`.
    pub coef: Vec<f64>,
    /// RMS of ∇·u over the interior nodes after the last refinement.
    pub divergence_rms: f64,
    /// max |u_new − u_old| per refinement.
    pub updates: Vec<f64>,
    /// Divergence RMS after each refinement.
    pub divergence_history: Vec<f64>,
    pub warning: Option<String>,
}

impl FlowState {
    pub fn last_update(&self) -> f64 {
        self.updates.last().copied().unwrap_or(f64::NAN)
    }
}

pub struct NavierStokesProblem {
    pub config: NsConfig,
    pub cloud: PointCloud,
    pub basis: Arc<Basis>,
    pub ops: Arc<NsOperators>,
    /// Inlet node indices sorted by y; control entry k lives at `inlet[k]`.
    pub inlet: Vec<usize>,
    pub inlet_y: Vec<f64>,
    pub inlet_weights: Vec<f64>,
    pub outlet: Vec<usize>,
    pub outlet_y: Vec<f64>,
    pub outlet_weights: Vec<f64>,
    pub target: Vec<f64>,
    /// Velocity Dirichlet mask (inlet, walls, slots).
    pub velocity_dirichlet: Vec<bool>,
    base_rhs: Vec<f64>,
}

impl std::fmt::Debug for NavierStokesProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NavierStokesProblem").field("config", &self.config).field("nodes", &self.cloud.len()).finish()
    }
}

impl NavierStokesProblem {
    pub fn new(config: NsConfig) -> Result<Self, ProblemError> {
        let cloud = make_channel_cloud(config.lx, config.ly, config.nodes, config.seed)?;
        Self::from_cloud(cloud, config)
    }

    pub fn from_cloud(cloud: PointCloud, config: NsConfig) -> Result<Self, ProblemError> {
        if config.refinements == 0 {
            return Err(ProblemError::Invalid("refinement count must be at least 1".into()));
        }
        if !(config.re > 0.0) {
            return Err(ProblemError::Invalid(format!("Reynolds number must be positive, got {}", config.re)));
        }
        for seg in [Segment::Inlet, Segment::Outlet, Segment::Wall, Segment::Blowing, Segment::Suction] {
            if cloud.segment_nodes(seg).is_empty() {
                return Err(ProblemError::Invalid(format!("cloud has no `{seg}` nodes")));
            }
        }
        let nn = cloud.len();
        let basis = Arc::new(Basis::for_cloud(&cloud, RbfConfig::default()));
        let n = basis.dim();
        let pts = &cloud.coords;
        let value = basis.op_matrix(Op::Value, pts);
        let dx = basis.op_matrix(Op::Dx, pts);
        let dy = basis.op_matrix(Op::Dy, pts);
        let lap = basis.op_matrix(Op::Laplacian, pts);
        let mut normal = Matrix::zeros(nn, n);
        for i in 0..nn {
            let [nx, ny] = cloud.normals[i];
            let r = normal.row_mut(i);
            for j in 0..n {
                r[j] = nx * dx[(i, j)] + ny * dy[(i, j)];
            }
        }
        let interior: Vec<bool> = cloud.tags.iter().map(|t| t.kind == NodeKind::Internal).collect();
        let is_outlet = |i: usize| cloud.tags[i].segment == Some(Segment::Outlet);
        let velocity_dirichlet: Vec<bool> = (0..nn)
            .map(|i| {
                matches!(
                    cloud.tags[i].segment,
                    Some(Segment::Inlet | Segment::Wall | Segment::Blowing | Segment::Suction)
                )
            })
            .collect();
        let nu = 1.0 / config.re;
        let side = basis.side_condition_rows();
        let mut a0 = Matrix::zeros(3 * n, 3 * n);
        for i in 0..nn {
            for (blk, dp) in [(0usize, &dx), (1usize, &dy)] {
                let row = a0.row_mut(blk * n + i);
                if interior[i] {
                    for j in 0..n {
                        row[blk * n + j] = -nu * lap[(i, j)];
                        row[2 * n + j] = dp[(i, j)];
                    }
                } else if velocity_dirichlet[i] {
                    row[blk * n..blk * n + n].copy_from_slice(value.row(i));
                } else {
                    row[blk * n..blk * n + n].copy_from_slice(normal.row(i));
                }
            }
            let row = a0.row_mut(2 * n + i);
            if interior[i] {
                row[..n].copy_from_slice(dx.row(i));
                row[n..2 * n].copy_from_slice(dy.row(i));
            } else if is_outlet(i) {
                row[2 * n..].copy_from_slice(value.row(i));
            } else {
                row[2 * n..].copy_from_slice(normal.row(i));
            }
        }
        for blk in 0..3 {
            for k in 0..basis.n_poly() {
                let row = a0.row_mut(blk * n + nn + k);
                row[blk * n..blk * n + nn].copy_from_slice(&side.row(k)[..nn]);
            }
        }
        let inlet = sort_by_y(&cloud, cloud.segment_nodes(Segment::Inlet));
        let outlet = sort_by_y(&cloud, cloud.segment_nodes(Segment::Outlet));
        let inlet_y: Vec<f64> = inlet.iter().map(|&i| cloud.coords[i][1]).collect();
        let outlet_y: Vec<f64> = outlet.iter().map(|&i| cloud.coords[i][1]).collect();
        let mut base_rhs = vec![0.0; 3 * n];
        for i in 0..nn {
            if matches!(cloud.tags[i].segment, Some(Segment::Blowing | Segment::Suction)) {
                base_rhs[n + i] = config.cross_flow;
            }
        }
        Ok(Self {
            inlet_weights: trapezoid_weights(&inlet_y),
            outlet_weights: trapezoid_weights(&outlet_y),
            target: outlet_y.iter().map(|&y| target_outflow(y, config.ly)).collect(),
            inlet,
            inlet_y,
            outlet,
            outlet_y,
            velocity_dirichlet,
            base_rhs,
            ops: Arc::new(NsOperators { n_nodes: nn, n_coef: n, value, dx, dy, lap, normal, interior, a0 }),
            basis,
            cloud,
            config,
        })
    }

    pub fn n_controls(&self) -> usize {
        self.inlet.len()
    }

    pub fn nu(&self) -> f64 {
        1.0 / self.config.re
    }

    /// Target parabola sampled at the inlet nodes (the usual initial guess).
    pub fn parabolic_guess(&self) -> Vec<f64> {
        self.inlet_y.iter().map(|&y| target_outflow(y, self.config.ly)).collect()
    }

    pub fn rhs(&self, c: &[f64]) -> Result<Vec<f64>, ProblemError> {
        check_control(c, self.inlet.len())?;
        let mut b = self.base_rhs.clone();
        for (k, &i) in self.inlet.iter().enumerate() {
            b[i] = c[k];
        }
        Ok(b)
    }

    /// Initial advecting field: Dirichlet data on the boundary, zero elsewhere.
    fn initial_velocity(&self, c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let nn = self.cloud.len();
        let b = self.rhs(c).expect("validated control");
        let n = self.ops.n_coef;
        let u = (0..nn).map(|i| if self.velocity_dirichlet[i] { b[i] } else { 0.0 }).collect();
        let v = (0..nn).map(|i| if self.velocity_dirichlet[i] { b[n + i] } else { 0.0 }).collect();
        (u, v)
    }

    fn fields(&self, coef: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.ops.n_coef;
        (
            self.ops.value.matvec(&coef[..n]),
            self.ops.value.matvec(&coef[n..2 * n]),
            self.ops.value.matvec(&coef[2 * n..]),
        )
    }

    pub fn divergence_rms(&self, coef: &[f64]) -> f64 {
        let n = self.ops.n_coef;
        let du = self.ops.dx.matvec(&coef[..n]);
        let dv = self.ops.dy.matvec(&coef[n..2 * n]);
        let (mut s, mut m) = (0.0, 0usize);
        for i in 0..self.cloud.len() {
            if self.ops.interior[i] {
                s += (du[i] + dv[i]).powi(2);
                m += 1;
            }
        }
        (s / m.max(1) as f64).sqrt()
    }

    /// Runs `refinements` frozen-advection solves from the boundary-data guess.
    pub fn forward_k(&self, c: &[f64], refinements: usize) -> Result<FlowState, ProblemError> {
        let (u0, v0) = self.initial_velocity(c);
        self.forward_from(c, u0, v0, refinements)
    }

    pub fn forward(&self, c: &[f64]) -> Result<FlowState, ProblemError> {
        self.forward_k(c, self.config.refinements)
    }

    /// Refinements starting from a given advecting field.
    pub fn forward_from(&self, c: &[f64], mut u: Vec<f64>, mut v: Vec<f64>, refinements: usize) -> Result<FlowState, ProblemError> {
        let b = self.rhs(c)?;
        let mut updates = Vec::with_capacity(refinements);
        let mut divergence_history = Vec::with_capacity(refinements);
        let mut coef = Vec::new();
        let mut streak = 0;
        let mut warning = None;
        for r in 0..refinements {
            let a = self.ops.system(&u, &v);
            let lu = Lu::factor(&a)?;
            coef = lu.solve(&b);
            if coef.iter().any(|x| !x.is_finite()) {
                return Err(ProblemError::Nonconvergence { refinements: r + 1, streak, last_update: f64::NAN, divergence_rms: f64::NAN });
            }
            let res = crate::linalg::relative_residual(&a, &coef, &b);
            if res > crate::linalg::RESIDUAL_TOLERANCE {
                warning = Some(format!("refinement {}: relative residual {res:.3e}", r + 1));
            }
            let (un, vn, _) = self.fields(&coef);
            let du: Vec<f64> = un.iter().zip(&u).chain(vn.iter().zip(&v)).map(|(a, b)| a - b).collect();
            let upd = norm_inf(&du);
            if let Some(&prev) = updates.last() {
                streak = if upd > prev { streak + 1 } else { 0 };
            }
            updates.push(upd);
            divergence_history.push(self.divergence_rms(&coef));
            if streak >= DIVERGENCE_STREAK {
                return Err(ProblemError::Nonconvergence {
                    refinements: r + 1,
                    streak,
                    last_update: upd,
                    divergence_rms: self.divergence_rms(&coef),
                });
            }
            u = un;
            v = vn;
        }
        let (_, _, p) = self.fields(&coef);
        let divergence_rms = divergence_history.last().copied().unwrap_or(0.0);
        Ok(FlowState { divergence_rms, u, v, p, coef, updates, divergence_history, warning })
    }

    pub fn cost(&self, state: &FlowState) -> f64 {
        self.cost_from_fields(&state.u, &state.v)
    }

    pub fn cost_from_fields(&self, u: &[f64], v: &[f64]) -> f64 {
        let mut j = 0.0;
        for (k, &i) in self.outlet.iter().enumerate() {
            j += self.outlet_weights[k] * ((u[i] - self.target[k]).powi(2) + v[i].powi(2));
        }
        0.5 * j
    }

    pub fn cost_of(&self, c: &[f64]) -> Result<f64, ProblemError> {
        Ok(self.cost(&self.forward(c)?))
    }

    /// Net boundary flux (outflow + suction − inflow − blowing) and the inflow flux.
    pub fn mass_balance(&self, state: &FlowState) -> (f64, f64) {
        let integrate = |nodes: &[usize], along_x: bool, field: &[f64]| -> f64 {
            let mut idx = nodes.to_vec();
            let d = if along_x { 0 } else { 1 };
            idx.sort_by(|&a, &b| self.cloud.coords[a][d].partial_cmp(&self.cloud.coords[b][d]).unwrap());
            let s: Vec<f64> = idx.iter().map(|&i| self.cloud.coords[i][d]).collect();
            trapezoid_weights(&s).iter().zip(&idx).map(|(w, &i)| w * field[i]).sum()
        };
        let inflow = integrate(&self.inlet, false, &state.u);
        let outflow = integrate(&self.outlet, false, &state.u);
        let blow = integrate(&self.cloud.segment_nodes(Segment::Blowing), true, &state.v);
        let suck = integrate(&self.cloud.segment_nodes(Segment::Suction), true, &state.v);
        (outflow + suck - inflow - blow, inflow)
    }

    /// Records J(c) with every refinement unrolled on the tape.
    pub fn record_cost(&self, tape: &mut Tape, c: Var, refinements: usize) -> Result<Var, AdError> {
        let nc = self.n_controls();
        if c.len() != nc {
            return Err(AdError::Contract(format!("control has {} values, expected {nc}", c.len())));
        }
        let n = self.ops.n_coef;
        let nn = self.cloud.len();
        let cv = tape.value(c).to_vec();
        check_control(&cv, nc).map_err(AdError::from)?;
        let base = tape.constant_vector(self.base_rhs.clone());
        let cs = tape.scatter(c, Arc::new(self.inlet.clone()), 3 * n)?;
        let b = tape.add(base, cs)?;
        // Initial advecting field depends on c only through boundary nodes,
        // which never enter the advection term.
        let (u0, v0) = self.initial_velocity(&cv);
        let mut u = tape.constant_vector(u0);
        let mut v = tape.constant_vector(v0);
        let vmat = Arc::new(self.ops.value.clone());
        for _ in 0..refinements {
            let a = record_refinement(tape, self.ops.clone(), u, v, b)?;
            let au = tape.slice(a, 0, n)?;
            let av = tape.slice(a, n, n)?;
            u = tape.matvec_const(vmat.clone(), au)?;
            v = tape.matvec_const(vmat.clone(), av)?;
        }
        debug_assert_eq!(u.len(), nn);
        let out = Arc::new(self.outlet.clone());
        let uo = tape.gather(u, out.clone())?;
        let vo = tape.gather(v, out)?;
        let t = tape.constant_vector(self.target.clone());
        let du = tape.sub(uo, t)?;
        let du2 = tape.square(du);
        let vo2 = tape.square(vo);
        let s = tape.add(du2, vo2)?;
        let w = tape.constant_vector(self.outlet_weights.iter().map(|w| 0.5 * w).collect());
        tape.dot(w, s)
    }
}

fn sort_by_y(cloud: &PointCloud, mut idx: Vec<usize>) -> Vec<usize> {
    idx.sort_by(|&a, &b| cloud.coords[a][1].partial_cmp(&cloud.coords[b][1]).unwrap());
    idx
}

/// One frozen-advection solve `a = A(u, v)⁻¹ b` as a tape op.
struct RefinementSolve {
    ops: Arc<NsOperators>,
    lu: Lu,
}

impl CustomOp for RefinementSolve {
    fn name(&self) -> &str {
        "ns_refinement_solve"
    }

    fn backward(&self, _inputs: &[&[f64]], a: &[f64], abar: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let ops = &self.ops;
        let (nn, n) = (ops.n_nodes, ops.n_coef);
        let w = self.lu.solve_transpose(abar);
        let mut out = vec![None, None, None];
        if needs[0] || needs[1] {
            let (au, av) = (&a[..n], &a[n..2 * n]);
            let mut ubar = vec![0.0; nn];
            let mut vbar = vec![0.0; nn];
            for i in 0..nn {
                if !ops.interior[i] || (w[i] == 0.0 && w[n + i] == 0.0) {
                    continue;
                }
                let (dxr, dyr) = (ops.dx.row(i), ops.dy.row(i));
                let (dxu, dxv) = (crate::linalg::dot(dxr, au), crate::linalg::dot(dxr, av));
                let (dyu, dyv) = (crate::linalg::dot(dyr, au), crate::linalg::dot(dyr, av));
                ubar[i] = -(w[i] * dxu + w[n + i] * dxv);
                vbar[i] = -(w[i] * dyu + w[n + i] * dyv);
            }
            out[0] = needs[0].then_some(ubar);
            out[1] = needs[1].then_some(vbar);
        }
        if needs[2] {
            out[2] = Some(w);
        }
        out
    }
}

fn record_refinement(tape: &mut Tape, ops: Arc<NsOperators>, u: Var, v: Var, b: Var) -> Result<Var, AdError> {
    let a = ops.system(tape.value(u), tape.value(v));
    let lu = Lu::factor(&a)?;
    drop(a);
    let x = lu.solve(tape.value(b));
    let dim = x.len();
    tape.custom(Box::new(RefinementSolve { ops, lu }), &[u, v, b], x, Shape::Vector(dim))
}
