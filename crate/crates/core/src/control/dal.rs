//! Continuous-adjoint gradients: derive the adjoint PDE by hand, discretise it
//! with the same collocation machinery as the state, then read the gradient
//! off the adjoint trace on the control boundary.

use crate::linalg::{dot, Lu, Matrix};
use crate::optim::History;
use crate::pointcloud::Segment;
use crate::problems::laplace::LaplaceProblem;
use crate::problems::navier_stokes::{FlowState, NavierStokesProblem};
use crate::problems::check_control;

use super::{run_gradient_method, ControlError};

/// Human-readable description of an adjoint problem, for logs and reports.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointSpec {
    pub interior: &'static str,
    pub boundary: Vec<(Segment, &'static str)>,
    pub gradient: &'static str,
}

impl AdjointSpec {
    pub fn laplace() -> Self {
        Self {
            interior: "∇²λ = 0",
            boundary: vec![
                (Segment::Top, "λ = 2(∂u/∂y − cos 2πx)"),
                (Segment::Bottom, "λ = 0"),
                (Segment::Left, "λ = 0"),
                (Segment::Right, "λ = 0"),
            ],
            gradient: "dJ/dc = ∂λ/∂y on the top wall",
        }
    }

    pub fn navier_stokes() -> Self {
        Self {
            interior: "−(u·∇)λ + (∇u)ᵀλ − ν∇²λ + ∇q = 0, ∇·λ = 0",
            boundary: vec![
                (Segment::Inlet, "λ = 0, ∂q/∂n = 0"),
                (Segment::Wall, "λ = 0, ∂q/∂n = 0"),
                (Segment::Blowing, "λ = 0, ∂q/∂n = 0"),
                (Segment::Suction, "λ = 0, ∂q/∂n = 0"),
                (Segment::Outlet, "ν∂λ/∂n + (u·n)λ = −(u − ũ, v), q = 0"),
            ],
            gradient: "dJ/dc = −ν ∂λx/∂x + q on the inlet",
        }
    }
}

/// Adjoint coefficients for the Laplace problem at the state with coefficients `coef`.
pub fn laplace_adjoint(p: &LaplaceProblem, coef: &[f64]) -> Vec<f64> {
    let mut r = vec![0.0; p.matrix.rows()];
    for (k, m) in p.mismatch(coef).into_iter().enumerate() {
        r[p.top[k]] = 2.0 * m;
    }
    crate::linalg::solve_checked(&p.matrix, &p.lu, &r).x
}

pub fn dal_gradient_laplace(p: &LaplaceProblem, c: &[f64]) -> Result<(f64, Vec<f64>), ControlError> {
    check_control(c, p.n_controls())?;
    let state = p.forward(c)?;
    let coef = state.coefficients();
    let lambda = laplace_adjoint(p, &coef);
    let dl = p.dy_top.matvec(&lambda);
    let g = dl.iter().zip(&p.weights).map(|(d, w)| w * d).collect();
    Ok((p.cost_from_coefficients(&coef), g))
}

/// Adjoint system matrix and right-hand side linearised about `state`.
pub fn ns_adjoint_system(p: &NavierStokesProblem, state: &FlowState) -> (Matrix, Vec<f64>) {
    let ops = &*p.ops;
    let (nn, n) = (ops.n_nodes, ops.n_coef);
    let nu = p.nu();
    let au = &state.coef[..n];
    let av = &state.coef[n..2 * n];
    let (ux, uy) = (ops.dx.matvec(au), ops.dy.matvec(au));
    let (vx, vy) = (ops.dx.matvec(av), ops.dy.matvec(av));
    let (u, v) = (&state.u, &state.v);
    let mut a = Matrix::zeros(3 * n, 3 * n);
    let mut rhs = vec![0.0; 3 * n];
    let mut outlet_k = vec![usize::MAX; nn];
    for (k, &i) in p.outlet.iter().enumerate() {
        outlet_k[i] = k;
    }
    for i in 0..nn {
        let (val, dxr, dyr, lap, nrm) = (ops.value.row(i), ops.dx.row(i), ops.dy.row(i), ops.lap.row(i), ops.normal.row(i));
        if ops.interior[i] {
            // (own-block reaction, cross-block reaction, pressure derivative) per momentum block
            let blocks = [(0usize, ux[i], vx[i], dxr), (1usize, vy[i], uy[i], dyr)];
            for (blk, own, cross, dq) in blocks {
                let other = 1 - blk;
                let row = a.row_mut(blk * n + i);
                for j in 0..n {
                    row[blk * n + j] = -(u[i] * dxr[j] + v[i] * dyr[j]) - nu * lap[j] + own * val[j];
                    row[other * n + j] = cross * val[j];
                    row[2 * n + j] = dq[j];
                }
            }
            let row = a.row_mut(2 * n + i);
            row[..n].copy_from_slice(dxr);
            row[n..2 * n].copy_from_slice(dyr);
        } else if p.velocity_dirichlet[i] {
            for blk in 0..2 {
                a.row_mut(blk * n + i)[blk * n..blk * n + n].copy_from_slice(val);
            }
            a.row_mut(2 * n + i)[2 * n..].copy_from_slice(nrm);
        } else {
            let un = u[i] * p.cloud.normals[i][0] + v[i] * p.cloud.normals[i][1];
            for blk in 0..2 {
                let row = &mut a.row_mut(blk * n + i)[blk * n..blk * n + n];
                for j in 0..n {
                    row[j] = nu * nrm[j] + un * val[j];
                }
            }
            let k = outlet_k[i];
            if k != usize::MAX {
                rhs[i] = -(u[i] - p.target[k]);
                rhs[n + i] = -v[i];
                a.row_mut(2 * n + i)[2 * n..].copy_from_slice(val);
            } else {
                a.row_mut(2 * n + i)[2 * n..].copy_from_slice(nrm);
            }
        }
    }
    for blk in 0..3 {
        for k in nn..n {
            let src = ops.a0.row(blk * n + k).to_vec();
            a.row_mut(blk * n + k).copy_from_slice(&src);
        }
    }
    (a, rhs)
}

/// DAL gradient after `refinements` forward refinements.
pub fn dal_gradient_ns(p: &NavierStokesProblem, c: &[f64], refinements: usize) -> Result<(f64, Vec<f64>), ControlError> {
    check_control(c, p.n_controls())?;
    let state = p.forward_k(c, refinements)?;
    let (a, rhs) = ns_adjoint_system(p, &state);
    let lu = Lu::factor(&a)?;
    let lam = crate::linalg::solve_checked(&a, &lu, &rhs).x;
    let n = p.ops.n_coef;
    let nu = p.nu();
    let g = p
        .inlet
        .iter()
        .zip(&p.inlet_weights)
        .map(|(&i, w)| {
            let dlx = dot(p.ops.dx.row(i), &lam[..n]);
            let q = dot(p.ops.value.row(i), &lam[2 * n..]);
            w * (-nu * dlx + q)
        })
        .collect();
    Ok((p.cost(&state), g))
}

pub fn run_dal_laplace(p: &LaplaceProblem, c0: Vec<f64>, lr0: f64, iterations: usize) -> Result<History, ControlError> {
    run_gradient_method(|c| dal_gradient_laplace(p, c), c0, lr0, iterations)
}

pub fn run_dal_ns(
    p: &NavierStokesProblem,
    c0: Vec<f64>,
    lr0: f64,
    iterations: usize,
    refinements: usize,
) -> Result<History, ControlError> {
    run_gradient_method(|c| dal_gradient_ns(p, c, refinements), c0, lr0, iterations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::cosine_similarity;
    use crate::control::dp::{dp_gradient_laplace, dp_gradient_ns};
    use crate::problems::laplace::LaplaceConfig;
    use crate::problems::navier_stokes::NsConfig;

    #[test]
    fn laplace_dal_aligns_with_dp_for_rough_control() {
        let p = LaplaceProblem::new(LaplaceConfig { grid: 15, ..Default::default() }).unwrap();
        let c: Vec<f64> = (0..p.n_controls()).map(|k| ((k as f64 * 12.9898).sin() * 43758.5453).fract()).collect();
        let (j1, g1) = dal_gradient_laplace(&p, &c).unwrap();
        let (j2, g2) = dp_gradient_laplace(&p, &c).unwrap();
        assert!((j1 - j2).abs() < 1e-12 * j1.max(1.0));
        let cs = cosine_similarity(&g1, &g2);
        assert!(cs > 0.97, "cosine {cs}");
    }

    #[test]
    fn ns_dal_points_downhill_for_smooth_control() {
        let p = NavierStokesProblem::new(NsConfig { nodes: 400, re: 10.0, ..Default::default() }).unwrap();
        let c: Vec<f64> = p.inlet_y.iter().map(|y| 0.5 + 0.5 * y).collect();
        let (_, g1) = dal_gradient_ns(&p, &c, 2).unwrap();
        let (_, g2) = dp_gradient_ns(&p, &c, 2).unwrap();
        let cs = cosine_similarity(&g1, &g2);
        assert!(cs > 0.5, "cosine {cs}");
    }
}
