use proptest::prelude::*;
use rbfctl_core::autodiff::{grad_check, Shape, Tape};
use rbfctl_core::linalg::{Lu, Matrix};

/// Diagonally dominant n×n matrix from a seed vector.
fn well_conditioned(vals: &[f64], n: usize) -> Vec<f64> {
    let mut a: Vec<f64> = vals[..n * n].iter().map(|v| 0.5 * v).collect();
    for i in 0..n {
        a[i * n + i] += n as f64;
    }
    a
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn linear_solve_gradient_matches_fd(vals in prop::collection::vec(-1.0f64..1.0, 30)) {
        let mut x0 = well_conditioned(&vals, 5);
        x0.extend_from_slice(&vals[25..30]);
        let rep = grad_check(
            |t, x| {
                let a = t.slice(x, 0, 25)?;
                let a = t.reshape(a, Shape::Matrix(5, 5))?;
                let b = t.slice(x, 25, 5)?;
                let sol = t.solve(a, b)?;
                Ok(t.sum(sol))
            },
            &x0,
            1e-5,
        )
        .unwrap();
        prop_assert!(rep.max_rel_error <= 1e-6, "{}", rep.max_rel_error);
    }

    #[test]
    fn chained_solves_match_fd(vals in prop::collection::vec(-1.0f64..1.0, 36)) {
        // x = A⁻¹b, y = B⁻¹x, f = Σy, with A, B and b all differentiated.
        let mut x0 = well_conditioned(&vals, 4);
        x0.extend(well_conditioned(&vals[16..], 4));
        x0.extend_from_slice(&vals[32..36]);
        let rep = grad_check(
            |t, x| {
                let a = t.slice(x, 0, 16)?;
                let a = t.reshape(a, Shape::Matrix(4, 4))?;
                let bm = t.slice(x, 16, 16)?;
                let bm = t.reshape(bm, Shape::Matrix(4, 4))?;
                let b = t.slice(x, 32, 4)?;
                let xs = t.solve(a, b)?;
                let y = t.solve(bm, xs)?;
                Ok(t.sum(y))
            },
            &x0,
            1e-5,
        )
        .unwrap();
        prop_assert!(rep.max_rel_error <= 1e-6, "{}", rep.max_rel_error);
    }

    #[test]
    fn solve_adjoint_is_transpose_solve(vals in prop::collection::vec(-1.0f64..1.0, 42)) {
        let n = 6;
        let a = Matrix::from_row_major(n, n, well_conditioned(&vals, n)).unwrap();
        let xbar = &vals[36..42];
        let mut t = Tape::new();
        let av = t.constant_matrix(&a);
        let b = t.leaf_vector(vec![1.0; n]);
        let x = t.solve(av, b).unwrap();
        let w = t.constant_vector(xbar.to_vec());
        let f = t.dot(w, x).unwrap();
        let bbar = t.backward(f).unwrap().wrt(b);
        let expect = Lu::factor(&a).unwrap().solve_transpose(xbar);
        for (g, e) in bbar.iter().zip(&expect) {
            prop_assert!((g - e).abs() <= 1e-12 * e.abs().max(1.0));
        }
    }

    #[test]
    fn polynomial_gradients_are_exact(x in -3.0f64..3.0, y in -3.0f64..3.0) {
        // f = x³y + 2xy² − y⁴
        let mut t = Tape::new();
        let xv = t.leaf_scalar(x);
        let yv = t.leaf_scalar(y);
        let x3 = t.powf(xv, 3.0);
        let a = t.mul(x3, yv).unwrap();
        let y2 = t.square(yv);
        let b = t.mul(xv, y2).unwrap();
        let b = t.scale(b, 2.0);
        let y4 = t.powf(yv, 4.0);
        let s = t.add(a, b).unwrap();
        let f = t.sub(s, y4).unwrap();
        let g = t.backward(f).unwrap();
        let (gx, gy) = (g.wrt(xv)[0], g.wrt(yv)[0]);
        let (ex, ey) = (3.0 * x * x * y + 2.0 * y * y, x.powi(3) + 4.0 * x * y - 4.0 * y.powi(3));
        prop_assert!((gx - ex).abs() <= 1e-12 * ex.abs().max(1.0));
        prop_assert!((gy - ey).abs() <= 1e-12 * ey.abs().max(1.0));
    }
}

#[test]
fn repeated_backward_is_bitwise_identical() {
    let mut t = Tape::new();
    let x = t.leaf_vector((0..8).map(|i| (i as f64).cos()).collect());
    let s = t.sin(x);
    let e = t.exp(s);
    let m = t.mul(e, x).unwrap();
    let f = t.sumsq(m);
    let g1 = t.backward(f).unwrap().wrt(x);
    let g2 = t.backward(f).unwrap().wrt(x);
    assert_eq!(g1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), g2.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn quadratic_form_with_symmetric_matrix() {
    let a = [4.0, 1.0, 0.5, 0.0, 1.0, 3.0, 0.2, 0.1, 0.5, 0.2, 2.0, 0.3, 0.0, 0.1, 0.3, 1.0];
    let x0 = [0.3, -1.2, 0.7, 2.0];
    let mut t = Tape::new();
    let am = t.constant(a.to_vec(), Shape::Matrix(4, 4)).unwrap();
    let x = t.leaf_vector(x0.to_vec());
    let ax = t.matvec(am, x).unwrap();
    let f = t.dot(x, ax).unwrap();
    let g = t.backward(f).unwrap().wrt(x);
    for i in 0..4 {
        let expect: f64 = 2.0 * (0..4).map(|j| a[i * 4 + j] * x0[j]).sum::<f64>();
        assert!((g[i] - expect).abs() <= 1e-12 * expect.abs().max(1.0));
    }
}
