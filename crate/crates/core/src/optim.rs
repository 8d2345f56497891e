//! Adam with a three-plateau learning-rate schedule.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("iteration {iteration}: non-finite gradient component {component}")]
    NonFiniteGradient { iteration: usize, component: usize },
    #[error("gradient length {got} does not match parameter length {expected}")]
    Length { expected: usize, got: usize },
    #[error("{0}")]
    Contract(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub params: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: Vec<f64>) -> Self {
        let n = params.len();
        Self { params, m: vec![0.0; n], v: vec![0.0; n], t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update; `t` is incremented.
pub fn adam_step(mut s: AdamState, grad: &[f64], rate: f64) -> Result<AdamState, OptimError> {
    adam_step_in_place(&mut s, grad, rate)?;
    Ok(s)
}

pub fn adam_step_in_place(s: &mut AdamState, grad: &[f64], rate: f64) -> Result<(), OptimError> {
    if grad.len() != s.params.len() {
        return Err(OptimError::Length { expected: s.params.len(), got: grad.len() });
    }
    if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
        return Err(OptimError::NonFiniteGradient { iteration: s.t, component: k });
    }
    s.t += 1;
    let bc1 = 1.0 - s.beta1.powi(s.t as i32);
    let bc2 = 1.0 - s.beta2.powi(s.t as i32);
    for i in 0..grad.len() {
        let g = grad[i];
        s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * g;
        s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * g * g;
        let mh = s.m[i] / bc1;
        let vh = s.v[i] / bc2;
        s.params[i] -= rate * mh / (vh.sqrt() + s.eps);
    }
    Ok(())
}

/// `lr0` for the first half, `lr0/10` until three quarters, `lr0/100` after.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub lr0: f64,
    pub total: usize,
}

impl LrSchedule {
    pub fn new(lr0: f64, total: usize) -> Self {
        Self { lr0, total }
    }

    pub fn rate(&self, t: usize) -> Result<f64, OptimError> {
        if t >= self.total {
            return Err(OptimError::Contract(format!("step {t} outside schedule of length {}", self.total)));
        }
        Ok(if t < self.total / 2 {
            self.lr0
        } else if t < 3 * self.total / 4 {
            self.lr0 / 10.0
        } else {
            self.lr0 / 100.0
        })
    }
}

pub fn schedule_rate(sched: &LrSchedule, t: usize) -> Result<f64, OptimError> {
    sched.rate(t)
}

#[derive(Debug, Clone, PartialEq)]
pub struct History {
    /// Cost before each update, plus the final cost (length `iters + 1` on success).
    pub costs: Vec<f64>,
    /// Rate used at each update (length `iters` on success).
    pub rates: Vec<f64>,
    pub control: Vec<f64>,
    pub error: Option<String>,
}

impl History {
    pub fn final_cost(&self) -> Option<f64> {
        self.costs.last().copied()
    }

    pub fn initial_cost(&self) -> Option<f64> {
        self.costs.first().copied()
    }
}

/// Adam descent driven by `grad_fn: c → (J, ∇J)`.
pub fn descent_loop<E: std::fmt::Display>(
    mut grad_fn: impl FnMut(&[f64]) -> Result<(f64, Vec<f64>), E>,
    c0: Vec<f64>,
    sched: LrSchedule,
    iters: usize,
) -> Result<History, OptimError> {
    if iters == 0 {
        return Err(OptimError::Contract("descent_loop needs at least one iteration".into()));
    }
    let sched = LrSchedule { total: iters, ..sched };
    let mut state = AdamState::new(c0);
    let mut hist = History { costs: Vec::with_capacity(iters + 1), rates: Vec::with_capacity(iters), control: Vec::new(), error: None };
    for t in 0..=iters {
        let (cost, grad) = match grad_fn(&state.params) {
            Ok(r) => r,
            Err(e) => {
                hist.error = Some(format!("iteration {t}: {e}"));
                break;
            }
        };
        hist.costs.push(cost);
        if t == iters {
            break;
        }
        let rate = sched.rate(t)?;
        if let Err(e) = adam_step_in_place(&mut state, &grad, rate) {
            hist.error = Some(e.to_string());
            break;
        }
        hist.rates.push(rate);
    }
    hist.control = state.params;
    Ok(hist)
}
