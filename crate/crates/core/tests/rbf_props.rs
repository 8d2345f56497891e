use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rbfctl_core::pointcloud::{make_channel_cloud, make_unit_square_grid, NodeKind, PointCloud, Segment};
use rbfctl_core::rbf::{
    assemble_system, phi_derivatives, phi_value, solve_collocation, BcValue, BoundaryData, Interpolant, LinearOp,
    RbfConfig,
};

/// Affine field a + b x + c y imposed through each segment's own row type.
fn affine_bc(cloud: &PointCloud, a: f64, b: f64, c: f64) -> BoundaryData {
    let mut bc = BoundaryData::new();
    for seg in cloud.segments_present() {
        let node = cloud.segment_nodes(seg)[0];
        let v = match cloud.tags[node].kind {
            NodeKind::Neumann => {
                let n = cloud.normals[node];
                BcValue::Const(b * n[0] + c * n[1])
            }
            _ => BcValue::Func(Box::new(move |x, y| a + b * x + c * y)),
        };
        bc.insert(seg, v);
    }
    bc
}

fn solve_affine(cloud: &PointCloud, a: f64, b: f64, c: f64) -> Interpolant {
    let src = vec![0.0; cloud.n_internal()];
    let sys = assemble_system(cloud, RbfConfig::default(), LinearOp::LAPLACIAN, &affine_bc(cloud, a, b, c), &src).unwrap();
    solve_collocation(&sys).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn laplacian_of_phi_matches_second_differences(r in 0.1f64..2.0, theta in 0.0f64..std::f64::consts::TAU) {
        let x = [r * theta.cos(), r * theta.sin()];
        let f = |p: [f64; 2]| phi_value((p[0] * p[0] + p[1] * p[1]).sqrt());
        // Power-of-two step balances truncation (~h²/r) against rounding (~eps/h²).
        let h = 2f64.powi(-12);
        let fd = (f([x[0] + h, x[1]]) + f([x[0] - h, x[1]]) + f([x[0], x[1] + h]) + f([x[0], x[1] - h]) - 4.0 * f(x)) / (h * h);
        let (g, lap) = phi_derivatives([0.0, 0.0], x);
        prop_assert!((lap - fd).abs() <= 1e-6, "r={r} analytic {lap} fd {fd}");
        let gx = (f([x[0] + h, x[1]]) - f([x[0] - h, x[1]])) / (2.0 * h);
        prop_assert!((g[0] - gx).abs() <= 1e-6);
    }

    #[test]
    fn affine_fields_are_reproduced_on_grids(a in -2.0f64..2.0, b in -3.0f64..3.0, c in -3.0f64..3.0, n in 3usize..9) {
        let cloud = make_unit_square_grid(n, n, NodeKind::Dirichlet).unwrap();
        let it = solve_affine(&cloud, a, b, c);
        for p in cloud.coords.iter().chain([[0.31, 0.77], [0.5, 0.05]].iter()) {
            prop_assert!((it.eval_field(*p) - (a + b * p[0] + c * p[1])).abs() <= 1e-8);
            let g = it.eval_gradient(*p);
            prop_assert!((g[0] - b).abs() <= 1e-8 && (g[1] - c).abs() <= 1e-8);
        }
        prop_assert!(it.relative_residual <= 1e-8);
    }
}

#[test]
fn affine_field_reproduced_on_scattered_channel_with_neumann_outlet() {
    let cloud = make_channel_cloud(1.5, 1.0, 300, 3).unwrap();
    assert!(!cloud.segment_nodes(Segment::Outlet).is_empty());
    let it = solve_affine(&cloud, 0.5, -1.25, 2.0);
    for p in cloud.coords.iter().chain([[0.7, 0.4], [1.49, 0.99]].iter()) {
        assert_abs_diff_eq!(it.eval_field(*p), 0.5 - 1.25 * p[0] + 2.0 * p[1], epsilon = 1e-8);
    }
    assert_abs_diff_eq!(it.gamma[0], 0.5, epsilon = 1e-8);
    assert_abs_diff_eq!(it.gamma[1], -1.25, epsilon = 1e-8);
    assert_abs_diff_eq!(it.gamma[2], 2.0, epsilon = 1e-8);
}

#[test]
fn side_conditions_hold_for_a_harmonic_field() {
    let cloud = make_unit_square_grid(9, 9, NodeKind::Dirichlet).unwrap();
    let mut bc = BoundaryData::new();
    for s in [Segment::Top, Segment::Bottom, Segment::Left, Segment::Right] {
        bc.insert(s, BcValue::Func(Box::new(|x, y| x * x - y * y + (3.0 * x).exp() * (3.0 * y).cos())));
    }
    let sys = assemble_system(&cloud, RbfConfig::default(), LinearOp::LAPLACIAN, &bc, &vec![0.0; cloud.n_internal()]).unwrap();
    let it = solve_collocation(&sys).unwrap();
    let (mut s0, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for (l, p) in it.lambda.iter().zip(&cloud.coords) {
        s0 += l;
        sx += l * p[0];
        sy += l * p[1];
    }
    let scale = it.lambda.iter().map(|l| l.abs()).sum::<f64>();
    for s in [s0, sx, sy] {
        assert!(s.abs() <= 1e-8 * scale.max(1.0), "side condition residual {s}");
    }
    for (i, p) in cloud.coords.iter().enumerate() {
        if cloud.tags[i].is_boundary() {
            let exact = p[0] * p[0] - p[1] * p[1] + (3.0 * p[0]).exp() * (3.0 * p[1]).cos();
            assert_abs_diff_eq!(it.eval_field(*p), exact, epsilon = 1e-8 * exact.abs().max(1.0));
        }
    }
}

#[test]
fn interpolant_is_invariant_under_relabelling_within_blocks() {
    let cloud = make_unit_square_grid(8, 8, NodeKind::Dirichlet).unwrap();
    let f = |x: f64, y: f64| (2.0 * x).sin() * (1.0 + y * y);
    let solve = |c: &PointCloud| {
        let mut bc = BoundaryData::new();
        for s in [Segment::Top, Segment::Bottom, Segment::Left, Segment::Right] {
            bc.insert(s, BcValue::Func(Box::new(f)));
        }
        let src: Vec<f64> = (0..c.n_internal()).map(|i| c.coords[i][0] - c.coords[i][1]).collect();
        solve_collocation(&assemble_system(c, RbfConfig::default(), LinearOp::LAPLACIAN, &bc, &src).unwrap()).unwrap()
    };
    // Reverse each kind block so the cloud stays canonical.
    let ni = cloud.n_internal();
    let mut perm: Vec<usize> = (0..ni).rev().collect();
    perm.extend((ni..cloud.len()).rev());
    let relabelled = cloud.permuted(&perm);
    assert!(relabelled.is_canonical());
    let (a, b) = (solve(&cloud), solve(&relabelled));
    for p in [[0.13, 0.52], [0.9, 0.9], [0.5, 0.5]] {
        assert_abs_diff_eq!(a.eval_field(p), b.eval_field(p), epsilon = 1e-10);
    }
}
