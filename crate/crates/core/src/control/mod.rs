//! Gradient strategies for the boundary-control problems and the descent driver.

pub mod dal;
pub mod dp;
pub mod mlp;
pub mod pinn;

use thiserror::Error;

use crate::autodiff::AdError;
use crate::linalg::LinalgError;
use crate::optim::{descent_loop, History, LrSchedule, OptimError};
use crate::problems::ProblemError;

#[derive(Debug, Error)]
pub enum ControlError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Ad(#[from] AdError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("{0}")]
    Contract(String),
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("no ω passed the fit threshold: {0}")]
    NoValidOmega(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Dal,
    Dp,
    Pinn,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Dal => "dal",
            Method::Dp => "dp",
            Method::Pinn => "pinn",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "dal" => Ok(Method::Dal),
            "dp" => Ok(Method::Dp),
            "pinn" => Ok(Method::Pinn),
            other => Err(format!("unknown method `{other}` (expected dal, dp or pinn)")),
        }
    }
}

/// Adam descent with the piecewise schedule using `grad_fn` for (J, ∇J).
pub fn run_gradient_method(
    grad_fn: impl FnMut(&[f64]) -> Result<(f64, Vec<f64>), ControlError>,
    c0: Vec<f64>,
    lr0: f64,
    iterations: usize,
) -> Result<History, ControlError> {
    Ok(descent_loop(grad_fn, c0, LrSchedule::new(lr0, iterations), iterations)?)
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let d = crate::linalg::dot(a, b);
    d / (crate::linalg::norm2(a) * crate::linalg::norm2(b))
}
