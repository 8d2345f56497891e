//! The two benchmark control problems.

pub mod laplace;
pub mod navier_stokes;

use thiserror::Error;

use crate::autodiff::AdError;
use crate::linalg::LinalgError;
use crate::pointcloud::CloudError;
use crate::rbf::RbfError;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Rbf(#[from] RbfError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error("control has {got} values, expected {expected}")]
    ControlLength { expected: usize, got: usize },
    #[error("non-finite control value at index {0}")]
    NonFiniteControl(usize),
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("nonconvergence after {refinements} refinements: update norm grew {streak} times in a row (last {last_update:.3e}, divergence rms {divergence_rms:.3e})")]
    Nonconvergence { refinements: usize, streak: usize, last_update: f64, divergence_rms: f64 },
}

impl From<ProblemError> for AdError {
    fn from(e: ProblemError) -> Self {
        match e {
            ProblemError::Ad(a) => a,
            other => AdError::Forward(other.to_string()),
        }
    }
}

/// Composite trapezoid weights for sorted abscissae.
pub fn trapezoid_weights(x: &[f64]) -> Vec<f64> {
    let mut w = vec![0.0; x.len()];
    for k in 1..x.len() {
        let d = 0.5 * (x[k] - x[k - 1]);
        w[k - 1] += d;
        w[k] += d;
    }
    w
}

/// Values at controlled-boundary nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlProfile {
    pub nodes: Vec<usize>,
    pub values: Vec<f64>,
}

impl ControlProfile {
    pub fn new(nodes: Vec<usize>, values: Vec<f64>) -> Result<Self, ProblemError> {
        check_control(&values, nodes.len())?;
        Ok(Self { nodes, values })
    }
}

pub(crate) fn check_control(c: &[f64], n: usize) -> Result<(), ProblemError> {
    if c.len() != n {
        return Err(ProblemError::ControlLength { expected: n, got: c.len() });
    }
    if let Some(i) = c.iter().position(|v| !v.is_finite()) {
        return Err(ProblemError::NonFiniteControl(i));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        let x = [0.0, 0.1, 0.35, 0.6, 1.0];
        let w = trapezoid_weights(&x);
        let s: f64 = w.iter().zip(&x).map(|(w, x)| w * (2.0 * x + 1.0)).sum();
        assert!((s - 2.0).abs() < 1e-14);
    }

    #[test]
    fn control_validation() {
        assert!(matches!(ControlProfile::new(vec![1, 2], vec![0.0]), Err(ProblemError::ControlLength { .. })));
        assert!(matches!(ControlProfile::new(vec![1], vec![f64::NAN]), Err(ProblemError::NonFiniteControl(0))));
    }
}
