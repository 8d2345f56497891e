//! Gradients by reverse-mode differentiation through the discrete solvers.

use crate::autodiff::Tape;
use crate::optim::History;
use crate::problems::laplace::LaplaceProblem;
use crate::problems::navier_stokes::NavierStokesProblem;
use crate::problems::check_control;

use super::{run_gradient_method, ControlError};

pub fn dp_gradient_laplace(p: &LaplaceProblem, c: &[f64]) -> Result<(f64, Vec<f64>), ControlError> {
    check_control(c, p.n_controls())?;
    let mut tape = Tape::new();
    let cv = tape.leaf_vector(c.to_vec());
    let j = p.record_cost(&mut tape, cv)?;
    let g = tape.backward(j)?.wrt(cv);
    Ok((tape.scalar_value(j), g))
}

/// DP gradient with `refinements` unrolled frozen-advection solves.
pub fn dp_gradient_ns(p: &NavierStokesProblem, c: &[f64], refinements: usize) -> Result<(f64, Vec<f64>), ControlError> {
    check_control(c, p.n_controls())?;
    let mut tape = Tape::new();
    let cv = tape.leaf_vector(c.to_vec());
    let j = p.record_cost(&mut tape, cv, refinements)?;
    let g = tape.backward(j)?.wrt(cv);
    Ok((tape.scalar_value(j), g))
}

pub fn run_dp_laplace(p: &LaplaceProblem, c0: Vec<f64>, lr0: f64, iterations: usize) -> Result<History, ControlError> {
    run_gradient_method(|c| dp_gradient_laplace(p, c), c0, lr0, iterations)
}

pub fn run_dp_ns(
    p: &NavierStokesProblem,
    c0: Vec<f64>,
    lr0: f64,
    iterations: usize,
    refinements: usize,
) -> Result<History, ControlError> {
    run_gradient_method(|c| dp_gradient_ns(p, c, refinements), c0, lr0, iterations)
}
