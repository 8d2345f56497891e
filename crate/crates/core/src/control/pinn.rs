//! Physics-informed networks for the two benchmarks.
//!
//! A state network u_net(x, y) and a control network c_net(s) are trained
//! together on L = L_F + L_B + ω J. Because the resulting state only satisfies
//! the PDE softly, every candidate control is re-checked by training a fresh
//! state network with the control frozen and ω = 0; the cost J of that
//! retrained state is what the ω line search compares.

use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::optim::{adam_step_in_place, AdamState, LrSchedule};
use crate::pointcloud::{make_channel_cloud, make_unit_square_grid, NodeKind, PointCloud, Segment};
use crate::problems::laplace::{laplace_exact_state, SideData};
use crate::problems::navier_stokes::target_outflow;
use crate::problems::trapezoid_weights;

use super::mlp::{column, record_forward, Channels, MlpParams, MlpVars, Normalizer};
use super::ControlError;

/// Loss terms of one evaluation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PinnLossBreakdown {
    /// Mean squared PDE residual.
    pub pde: f64,
    /// Sum over boundary conditions of the mean squared residual.
    pub boundary: f64,
    /// Individual boundary terms, in recording order.
    pub boundary_terms: Vec<(&'static str, f64)>,
    /// Objective J evaluated from the state network.
    pub cost: f64,
    pub omega: f64,
    pub total: f64,
}

impl PinnLossBreakdown {
    /// L_F + L_B.
    pub fn fit(&self) -> f64 {
        self.pde + self.boundary
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PinnConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub epochs: usize,
    /// Epochs of the scheduled phase when retraining the state with the control frozen.
    pub step2_epochs: usize,
    /// Hard cap on step-2 epochs while the boundary match is above `match_tol`.
    pub step2_max_epochs: usize,
    pub match_tol: f64,
    /// Interior collocation points per epoch; 0 or ≥ available means full batch.
    pub batch: usize,
    pub omegas: Vec<f64>,
    /// A run is admissible if its step-2 L_F + L_B is within this factor of the best.
    pub fit_factor: f64,
    pub seed: u64,
    pub parallel: bool,
}

impl PinnConfig {
    pub fn laplace_default() -> Self {
        Self {
            hidden: vec![30; 3],
            lr: 1e-3,
            epochs: 5000,
            step2_epochs: 5000,
            step2_max_epochs: 20000,
            match_tol: 1e-2,
            batch: 1000,
            omegas: vec![1e-2, 1e-1, 1.0],
            fit_factor: 10.0,
            seed: 0,
            parallel: true,
        }
    }

    pub fn ns_default() -> Self {
        Self {
            hidden: vec![50; 5],
            batch: 0,
            epochs: 10_000,
            step2_epochs: 10_000,
            step2_max_epochs: 40_000,
            omegas: (-3..=5).map(|k| 10f64.powi(k)).collect(),
            ..Self::laplace_default()
        }
    }
}

#[derive(Debug, Clone)]
enum Kind {
    Laplace {
        /// (points, values) for the fixed-data walls.
        fixed: Vec<(&'static str, Vec<Vec<f64>>, Vec<f64>)>,
        target: Vec<f64>,
    },
    NavierStokes {
        nu: f64,
        cross_flow: f64,
        walls: Vec<Vec<f64>>,
        slots: Vec<Vec<f64>>,
        outlet: Vec<Vec<f64>>,
        outlet_weights: Vec<f64>,
        target: Vec<f64>,
    },
}

/// Collocation data for one benchmark.
#[derive(Debug, Clone)]
pub struct PinnProblem {
    kind: Kind,
    pub interior: Vec<Vec<f64>>,
    /// Control-boundary points, sorted along the boundary.
    pub control_points: Vec<Vec<f64>>,
    /// Coordinate along the control boundary (x on the lid, y on the inlet).
    pub control_coord: Vec<f64>,
    pub control_weights: Vec<f64>,
    domain: Normalizer,
    control_domain: Normalizer,
}

fn pts_of(cloud: &PointCloud, idx: &[usize]) -> Vec<Vec<f64>> {
    idx.iter().map(|&i| cloud.coords[i].to_vec()).collect()
}

impl PinnProblem {
    /// Laplace lid control on a `grid × grid` node lattice.
    pub fn laplace(grid: usize, side: SideData) -> Result<Self, ControlError> {
        let cloud = make_unit_square_grid(grid, grid, NodeKind::Dirichlet).map_err(crate::problems::ProblemError::from)?;
        let interior_idx: Vec<usize> = (0..cloud.len()).filter(|&i| cloud.tags[i].kind == NodeKind::Internal).collect();
        let top = cloud.segment_nodes(Segment::Top);
        let bottom = pts_of(&cloud, &cloud.segment_nodes(Segment::Bottom));
        let mut sides = pts_of(&cloud, &cloud.segment_nodes(Segment::Left));
        sides.extend(pts_of(&cloud, &cloud.segment_nodes(Segment::Right)));
        let bottom_vals = bottom.iter().map(|p| (2.0 * PI * p[0]).sin()).collect();
        let side_vals = sides
            .iter()
            .map(|p| match side {
                SideData::ExactTrace => laplace_exact_state(p[0], p[1]),
                SideData::Zero => 0.0,
            })
            .collect();
        let control_points = pts_of(&cloud, &top);
        let control_coord: Vec<f64> = control_points.iter().map(|p| p[0]).collect();
        Ok(Self {
            kind: Kind::Laplace {
                fixed: vec![("bottom", bottom, bottom_vals), ("sides", sides, side_vals)],
                target: control_coord.iter().map(|x| (2.0 * PI * x).cos()).collect(),
            },
            interior: pts_of(&cloud, &interior_idx),
            control_weights: trapezoid_weights(&control_coord),
            control_points,
            control_coord,
            domain: Normalizer::new(vec![0.0, 0.0], vec![1.0, 1.0]),
            control_domain: Normalizer::new(vec![0.0], vec![1.0]),
        })
    }

    /// Channel inflow control on the scattered channel cloud.
    pub fn navier_stokes(nodes: usize, lx: f64, ly: f64, re: f64, cross_flow: f64, seed: u64) -> Result<Self, ControlError> {
        let cloud = make_channel_cloud(lx, ly, nodes, seed).map_err(crate::problems::ProblemError::from)?;
        Self::navier_stokes_from_cloud(&cloud, re, cross_flow)
    }

    pub fn navier_stokes_from_cloud(cloud: &PointCloud, re: f64, cross_flow: f64) -> Result<Self, ControlError> {
        let (lo, hi) = cloud.bounding_box();
        let by_y = |seg| {
            let mut idx = cloud.segment_nodes(seg);
            idx.sort_by(|&a, &b| cloud.coords[a][1].partial_cmp(&cloud.coords[b][1]).unwrap());
            idx
        };
        let inlet = by_y(Segment::Inlet);
        let outlet = by_y(Segment::Outlet);
        if inlet.is_empty() || outlet.is_empty() {
            return Err(ControlError::Contract("channel cloud needs inlet and outlet nodes".into()));
        }
        let mut slots = pts_of(cloud, &cloud.segment_nodes(Segment::Blowing));
        slots.extend(pts_of(cloud, &cloud.segment_nodes(Segment::Suction)));
        let interior_idx: Vec<usize> = (0..cloud.len()).filter(|&i| cloud.tags[i].kind == NodeKind::Internal).collect();
        let outlet_pts = pts_of(cloud, &outlet);
        let outlet_y: Vec<f64> = outlet_pts.iter().map(|p| p[1]).collect();
        let ly = hi[1] - lo[1];
        let control_points = pts_of(cloud, &inlet);
        let control_coord: Vec<f64> = control_points.iter().map(|p| p[1]).collect();
        Ok(Self {
            kind: Kind::NavierStokes {
                nu: 1.0 / re,
                cross_flow,
                walls: pts_of(cloud, &cloud.segment_nodes(Segment::Wall)),
                slots,
                outlet_weights: trapezoid_weights(&outlet_y),
                target: outlet_y.iter().map(|&y| target_outflow(y - lo[1], ly)).collect(),
                outlet: outlet_pts,
            },
            interior: pts_of(cloud, &interior_idx),
            control_weights: trapezoid_weights(&control_coord),
            control_points,
            control_coord,
            domain: Normalizer::new(lo.to_vec(), hi.to_vec()),
            control_domain: Normalizer::new(vec![lo[1]], vec![hi[1]]),
        })
    }

    pub fn is_laplace(&self) -> bool {
        matches!(self.kind, Kind::Laplace { .. })
    }

    /// Layer sizes of the state network.
    pub fn state_sizes(&self, hidden: &[usize]) -> Vec<usize> {
        let out = if self.is_laplace() { 1 } else { 3 };
        [vec![2], hidden.to_vec(), vec![out]].concat()
    }

    pub fn control_sizes(&self, hidden: &[usize]) -> Vec<usize> {
        [vec![1], hidden.to_vec(), vec![1]].concat()
    }

    /// c_net evaluated at the control-boundary points.
    pub fn control_values(&self, c: &MlpParams) -> Vec<f64> {
        let x: Vec<Vec<f64>> = self.control_coord.iter().map(|&s| vec![s]).collect();
        super::mlp::mlp_forward(c, &self.control_domain.apply(&x))
    }

    /// First output of u_net at the control-boundary points.
    pub fn state_on_control_boundary(&self, u: &MlpParams) -> Vec<f64> {
        let k = u.output_dim();
        let out = super::mlp::mlp_forward(u, &self.domain.apply(&self.control_points));
        out.iter().step_by(k).copied().collect()
    }
}

/// Which parts of the loss to record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Terms {
    pde: bool,
    fixed_boundary: bool,
}

const ALL_TERMS: Terms = Terms { pde: true, fixed_boundary: true };
/// Terms that depend on the control network.
const CONTROL_TERMS: Terms = Terms { pde: false, fixed_boundary: false };

struct Recorded {
    total: Var,
    pde: Option<Var>,
    boundary: Var,
    boundary_terms: Vec<(&'static str, Var)>,
    cost: Var,
}

fn mse(tape: &mut Tape, r: Var) -> Result<Var, ControlError> {
    let s = tape.square(r);
    Ok(tape.mean(s)?)
}

fn mse_to(tape: &mut Tape, v: Var, target: &[f64]) -> Result<Var, ControlError> {
    let t = tape.constant_vector(target.to_vec());
    let r = tape.sub(v, t)?;
    mse(tape, r)
}

fn sum_all(tape: &mut Tape, terms: &[Var]) -> Result<Var, ControlError> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

fn flatten(tape: &mut Tape, m: Var) -> Result<Var, ControlError> {
    let n = m.len();
    Ok(tape.reshape(m, crate::autodiff::Shape::Vector(n))?)
}

/// Records the loss; `batch` picks interior points (None = all).
fn record_loss(
    tape: &mut Tape,
    prob: &PinnProblem,
    u: &MlpVars,
    c: &MlpVars,
    omega: f64,
    batch: Option<&[usize]>,
    terms: Terms,
) -> Result<Recorded, ControlError> {
    let cin = {
        let x: Vec<Vec<f64>> = prob.control_coord.iter().map(|&s| vec![s]).collect();
        prob.control_domain.channels(tape, &x, false)
    };
    let cout = record_forward(tape, c, cin, false)?;
    let cval = flatten(tape, cout.value)?;
    let interior_pts: Vec<Vec<f64>> = match batch {
        Some(b) => b.iter().map(|&i| prob.interior[i].clone()).collect(),
        None => prob.interior.clone(),
    };
    let interior = |tape: &mut Tape| -> Result<Channels, ControlError> {
        let ch = prob.domain.channels(tape, &interior_pts, true);
        Ok(record_forward(tape, u, ch, true)?)
    };
    match &prob.kind {
        Kind::Laplace { fixed, target } => {
            let mut bterms = Vec::new();
            let pde = if terms.pde {
                let o = interior(tape)?;
                let lap = tape.add(o.dxx.unwrap(), o.dyy.unwrap())?;
                let lap = flatten(tape, lap)?;
                Some(mse(tape, lap)?)
            } else {
                None
            };
            if terms.fixed_boundary {
                for (name, pts, vals) in fixed {
                    let ch = prob.domain.channels(tape, pts, false);
                    let o = record_forward(tape, u, ch, false)?;
                    let v = flatten(tape, o.value)?;
                    bterms.push((*name, mse_to(tape, v, vals)?));
                }
            }
            let ch = prob.domain.channels(tape, &prob.control_points, true);
            let top = record_forward(tape, u, ch, false)?;
            let utop = flatten(tape, top.value)?;
            let r = tape.sub(utop, cval)?;
            bterms.push(("top", mse(tape, r)?));
            let dy = flatten(tape, top.dy.unwrap())?;
            let t = tape.constant_vector(target.clone());
            let m = tape.sub(dy, t)?;
            let m2 = tape.square(m);
            let w = tape.constant_vector(prob.control_weights.clone());
            let cost = tape.dot(w, m2)?;
            finish(tape, pde, bterms, cost, omega)
        }
        Kind::NavierStokes { nu, cross_flow, walls, slots, outlet, outlet_weights, target } => {
            let mut bterms = Vec::new();
            let pde = if terms.pde {
                let o = interior(tape)?;
                let col = |tape: &mut Tape, m: Option<Var>, j: usize| column(tape, m.unwrap(), j, None);
                let (uu, vv) = (column(tape, o.value, 0, None)?, column(tape, o.value, 1, None)?);
                let (ux, uy) = (col(tape, o.dx, 0)?, col(tape, o.dy, 0)?);
                let (vx, vy) = (col(tape, o.dx, 1)?, col(tape, o.dy, 1)?);
                let (px, py) = (col(tape, o.dx, 2)?, col(tape, o.dy, 2)?);
                let (uxx, uyy) = (col(tape, o.dxx, 0)?, col(tape, o.dyy, 0)?);
                let (vxx, vyy) = (col(tape, o.dxx, 1)?, col(tape, o.dyy, 1)?);
                let momentum = |tape: &mut Tape, fx: Var, fy: Var, dp: Var, fxx: Var, fyy: Var| -> Result<Var, ControlError> {
                    let a = tape.mul(uu, fx)?;
                    let b = tape.mul(vv, fy)?;
                    let l = tape.add(fxx, fyy)?;
                    let l = tape.scale(l, -nu);
                    sum_all(tape, &[a, b, dp, l])
                };
                let rx = momentum(tape, ux, uy, px, uxx, uyy)?;
                let ry = momentum(tape, vx, vy, py, vxx, vyy)?;
                let rc = tape.add(ux, vy)?;
                let terms = [mse(tape, rx)?, mse(tape, ry)?, mse(tape, rc)?];
                Some(sum_all(tape, &terms)?)
            } else {
                None
            };
            if terms.fixed_boundary {
                let zeros = |n: usize| vec![0.0; n];
                let ch = prob.domain.channels(tape, walls, false);
                let o = record_forward(tape, u, ch, false)?;
                for (j, name) in [(0, "wall_u"), (1, "wall_v")] {
                    let v = column(tape, o.value, j, None)?;
                    bterms.push((name, mse_to(tape, v, &zeros(walls.len()))?));
                }
                let ch = prob.domain.channels(tape, slots, false);
                let o = record_forward(tape, u, ch, false)?;
                let v = column(tape, o.value, 0, None)?;
                bterms.push(("slot_u", mse_to(tape, v, &zeros(slots.len()))?));
                let v = column(tape, o.value, 1, None)?;
                bterms.push(("slot_v", mse_to(tape, v, &vec![*cross_flow; slots.len()])?));
            }
            let ch = prob.domain.channels(tape, &prob.control_points, false);
            let o = record_forward(tape, u, ch, false)?;
            let uin = column(tape, o.value, 0, None)?;
            let r = tape.sub(uin, cval)?;
            bterms.push(("inlet_u", mse(tape, r)?));
            if terms.fixed_boundary {
                let vin = column(tape, o.value, 1, None)?;
                bterms.push(("inlet_v", mse(tape, vin)?));
            }
            let ch = prob.domain.channels(tape, outlet, true);
            let o = record_forward(tape, u, ch, false)?;
            let uo = column(tape, o.value, 0, None)?;
            let vo = column(tape, o.value, 1, None)?;
            if terms.fixed_boundary {
                let po = column(tape, o.value, 2, None)?;
                bterms.push(("outlet_p", mse(tape, po)?));
                let dx = o.dx.unwrap();
                for (j, name) in [(0, "outlet_dudx"), (1, "outlet_dvdx")] {
                    let d = column(tape, dx, j, None)?;
                    bterms.push((name, mse(tape, d)?));
                }
            }
            let t = tape.constant_vector(target.clone());
            let du = tape.sub(uo, t)?;
            let du2 = tape.square(du);
            let vo2 = tape.square(vo);
            let s = tape.add(du2, vo2)?;
            let w = tape.constant_vector(outlet_weights.iter().map(|w| 0.5 * w).collect());
            let cost = tape.dot(w, s)?;
            finish(tape, pde, bterms, cost, omega)
        }
    }
}

fn finish(
    tape: &mut Tape,
    pde: Option<Var>,
    bterms: Vec<(&'static str, Var)>,
    cost: Var,
    omega: f64,
) -> Result<Recorded, ControlError> {
    let vars: Vec<Var> = bterms.iter().map(|t| t.1).collect();
    let boundary = sum_all(tape, &vars)?;
    let wc = tape.scale(cost, omega);
    let mut total = tape.add(boundary, wc)?;
    if let Some(p) = pde {
        total = tape.add(total, p)?;
    }
    Ok(Recorded { total, pde, boundary, boundary_terms: bterms, cost })
}

fn breakdown(tape: &Tape, r: &Recorded, omega: f64) -> PinnLossBreakdown {
    PinnLossBreakdown {
        pde: r.pde.map_or(0.0, |p| tape.scalar_value(p)),
        boundary: tape.scalar_value(r.boundary),
        boundary_terms: r.boundary_terms.iter().map(|&(n, v)| (n, tape.scalar_value(v))).collect(),
        cost: tape.scalar_value(r.cost),
        omega,
        total: tape.scalar_value(r.total),
    }
}

/// Full-batch loss breakdown.
pub fn pinn_loss(prob: &PinnProblem, u: &MlpParams, c: &MlpParams, omega: f64) -> Result<PinnLossBreakdown, ControlError> {
    let mut tape = Tape::new();
    let uv = MlpVars::record(&mut tape, u, false);
    let cv = MlpVars::record(&mut tape, c, false);
    let r = record_loss(&mut tape, prob, &uv, &cv, omega, None, ALL_TERMS)?;
    Ok(breakdown(&tape, &r, omega))
}

struct Sampler {
    rng: ChaCha8Rng,
    n: usize,
    batch: usize,
}

impl Sampler {
    fn new(seed: u64, n: usize, batch: usize) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed), n, batch }
    }

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.batch == 0 || self.batch >= self.n {
            return None;
        }
        let mut idx = sample(&mut self.rng, self.n, self.batch).into_vec();
        idx.sort_unstable();
        Some(idx)
    }
}

fn check_finite(b: &PinnLossBreakdown, epoch: usize) -> Result<(), ControlError> {
    if b.total.is_finite() {
        Ok(())
    } else {
        Err(ControlError::NonFiniteLoss { epoch })
    }
}

/// One u-update on `u_state`; returns the breakdown before the update.
fn u_step(
    prob: &PinnProblem,
    u_state: &mut AdamState,
    u_shape: &MlpParams,
    c: &MlpParams,
    omega: f64,
    batch: Option<&[usize]>,
    rate: f64,
    epoch: usize,
) -> Result<PinnLossBreakdown, ControlError> {
    let mut u = u_shape.clone();
    u.set_flat(&u_state.params);
    let mut tape = Tape::new();
    let uv = MlpVars::record(&mut tape, &u, true);
    let cv = MlpVars::record(&mut tape, c, false);
    let r = record_loss(&mut tape, prob, &uv, &cv, omega, batch, ALL_TERMS)?;
    let b = breakdown(&tape, &r, omega);
    check_finite(&b, epoch)?;
    let g = uv.flat_gradient(&tape.backward(r.total)?);
    adam_step_in_place(u_state, &g, rate)?;
    Ok(b)
}

/// Result of joint training (step 1).
#[derive(Debug, Clone)]
pub struct Step1 {
    pub u: MlpParams,
    pub c: MlpParams,
    /// Breakdown recorded at each u-update (mini-batch estimate of L_F).
    pub history: Vec<PinnLossBreakdown>,
}

/// Joint training of u_net and c_net on L_F + L_B + ωJ.
pub fn train_step1(prob: &PinnProblem, cfg: &PinnConfig, omega: f64) -> Result<Step1, ControlError> {
    if cfg.epochs == 0 {
        return Err(ControlError::Contract("PINN needs at least one epoch".into()));
    }
    let u0 = MlpParams::init(&prob.state_sizes(&cfg.hidden), cfg.seed);
    let c0 = MlpParams::init(&prob.control_sizes(&cfg.hidden), cfg.seed.wrapping_add(1));
    let mut us = AdamState::new(u0.to_flat());
    let mut cs = AdamState::new(c0.to_flat());
    let mut u = u0;
    let mut c = c0;
    let sched = LrSchedule::new(cfg.lr, cfg.epochs);
    let mut sampler = Sampler::new(cfg.seed.wrapping_add(2), prob.interior.len(), cfg.batch);
    let mut history = Vec::with_capacity(cfg.epochs);
    for e in 0..cfg.epochs {
        let rate = sched.rate(e)?;
        let batch = sampler.next();
        history.push(u_step(prob, &mut us, &u, &c, omega, batch.as_deref(), rate, e)?);
        u.set_flat(&us.params);
        let mut tape = Tape::new();
        let uv = MlpVars::record(&mut tape, &u, false);
        let cv = MlpVars::record(&mut tape, &c, true);
        let r = record_loss(&mut tape, prob, &uv, &cv, omega, batch.as_deref(), CONTROL_TERMS)?;
        let g = cv.flat_gradient(&tape.backward(r.total)?);
        adam_step_in_place(&mut cs, &g, rate)?;
        c.set_flat(&cs.params);
    }
    Ok(Step1 { u, c, history })
}

#[derive(Debug, Clone)]
pub struct Step2 {
    pub u: MlpParams,
    pub epochs: usize,
    /// max |u_net − c_net| over the control-boundary points.
    pub mismatch: f64,
    /// Full-batch breakdown at the end (ω = 0; `cost` is J of the retrained state).
    pub loss: PinnLossBreakdown,
}

/// Trains a fresh u_net on L_F + L_B with `c` frozen until the boundary match is within `match_tol`.
pub fn train_step2(prob: &PinnProblem, cfg: &PinnConfig, c: &MlpParams) -> Result<Step2, ControlError> {
    let u0 = MlpParams::init(&prob.state_sizes(&cfg.hidden), cfg.seed.wrapping_add(3));
    let mut us = AdamState::new(u0.to_flat());
    let mut u = u0;
    let sched = LrSchedule::new(cfg.lr, cfg.step2_epochs.max(1));
    let mut sampler = Sampler::new(cfg.seed.wrapping_add(4), prob.interior.len(), cfg.batch);
    let cvals = prob.control_values(c);
    let mismatch = |u: &MlpParams| {
        prob.state_on_control_boundary(u).iter().zip(&cvals).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    };
    let mut e = 0;
    let mut m = f64::INFINITY;
    while e < cfg.step2_max_epochs.max(cfg.step2_epochs) {
        if e >= cfg.step2_epochs {
            if e % 100 == 0 {
                m = mismatch(&u);
                if m <= cfg.match_tol {
                    break;
                }
            }
        }
        let rate = if e < cfg.step2_epochs { sched.rate(e)? } else { cfg.lr / 10.0 };
        let batch = sampler.next();
        u_step(prob, &mut us, &u, c, 0.0, batch.as_deref(), rate, e)?;
        u.set_flat(&us.params);
        e += 1;
    }
    if m.is_infinite() || e > cfg.step2_epochs {
        m = mismatch(&u);
    }
    let loss = pinn_loss(prob, &u, c, 0.0)?;
    Ok(Step2 { u, epochs: e, mismatch: m, loss })
}

#[derive(Debug, Clone)]
pub struct PinnRun {
    pub omega: f64,
    pub step1: Step1,
    pub step2: Step2,
    /// Control values at the control-boundary points.
    pub control: Vec<f64>,
}

impl PinnRun {
    /// J of the retrained state.
    pub fn cost(&self) -> f64 {
        self.step2.loss.cost
    }

    pub fn matched(&self, tol: f64) -> bool {
        self.step2.mismatch <= tol
    }
}

pub fn run_pinn(prob: &PinnProblem, cfg: &PinnConfig, omega: f64) -> Result<PinnRun, ControlError> {
    let step1 = train_step1(prob, cfg, omega)?;
    let step2 = train_step2(prob, cfg, &step1.c)?;
    let control = prob.control_values(&step1.c);
    Ok(PinnRun { omega, step1, step2, control })
}

#[derive(Debug, Clone)]
pub struct LineSearch {
    pub runs: Vec<PinnRun>,
    /// Index into `runs` of the selected ω.
    pub best: usize,
}

impl LineSearch {
    pub fn best_run(&self) -> &PinnRun {
        &self.runs[self.best]
    }
}

/// Lowest J among runs whose step-2 L_F + L_B is within `fit_factor` of the best fit.
pub fn select_omega(runs: &[PinnRun], fit_factor: f64) -> Result<usize, ControlError> {
    let fits: Vec<f64> = runs.iter().map(|r| r.step2.loss.fit()).collect();
    let best_fit = fits.iter().copied().filter(|f| f.is_finite()).fold(f64::INFINITY, f64::min);
    (0..runs.len())
        .filter(|&k| fits[k].is_finite() && fits[k] <= fit_factor * best_fit && runs[k].cost().is_finite())
        .min_by(|&a, &b| runs[a].cost().total_cmp(&runs[b].cost()))
        .ok_or_else(|| ControlError::NoValidOmega(format!("fits {fits:?}")))
}

/// Runs every ω in `cfg.omegas` independently and selects one.
pub fn omega_line_search(prob: &PinnProblem, cfg: &PinnConfig) -> Result<LineSearch, ControlError> {
    if cfg.omegas.is_empty() {
        return Err(ControlError::Contract("ω list is empty".into()));
    }
    let results: Vec<Result<PinnRun, ControlError>> = if cfg.parallel && cfg.omegas.len() > 1 {
        std::thread::scope(|s| {
            let handles: Vec<_> = cfg.omegas.iter().map(|&w| s.spawn(move || run_pinn(prob, cfg, w))).collect();
            handles.into_iter().map(|h| h.join().expect("PINN worker panicked")).collect()
        })
    } else {
        cfg.omegas.iter().map(|&w| run_pinn(prob, cfg, w)).collect()
    };
    let runs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let best = select_omega(&runs, cfg.fit_factor)?;
    Ok(LineSearch { runs, best })
}

/// Supervised pre-fit of u_net to `f` = (u, u_x, u_y, u_xx, u_yy) at every collocation point.
pub fn fit_state(
    prob: &PinnProblem,
    u: &mut MlpParams,
    f: impl Fn(f64, f64) -> [f64; 5],
    epochs: usize,
    lr: f64,
) -> Result<f64, ControlError> {
    let mut pts = prob.interior.clone();
    pts.extend(prob.control_points.iter().cloned());
    let targets: Vec<[f64; 5]> = pts.iter().map(|p| f(p[0], p[1])).collect();
    let cols: [Vec<f64>; 5] = std::array::from_fn(|k| targets.iter().map(|t| t[k]).collect());
    let mut st = AdamState::new(u.to_flat());
    let sched = LrSchedule::new(lr, epochs.max(1));
    let mut last = f64::NAN;
    for e in 0..epochs {
        let mut tape = Tape::new();
        let uv = MlpVars::record(&mut tape, u, true);
        let ch = prob.domain.channels(&mut tape, &pts, true);
        let o = record_forward(&mut tape, &uv, ch, true)?;
        let chans = [Some(o.value), o.dx, o.dy, o.dxx, o.dyy];
        let mut terms = Vec::with_capacity(5);
        for (ch, target) in chans.into_iter().zip(&cols) {
            let col = column(&mut tape, ch.expect("second-order channels requested"), 0, None)?;
            terms.push(mse_to(&mut tape, col, target)?);
        }
        let l = sum_all(&mut tape, &terms)?;
        last = tape.scalar_value(l);
        if !last.is_finite() {
            return Err(ControlError::NonFiniteLoss { epoch: e });
        }
        let g = uv.flat_gradient(&tape.backward(l)?);
        adam_step_in_place(&mut st, &g, sched.rate(e)?)?;
        u.set_flat(&st.params);
    }
    Ok(last)
}
