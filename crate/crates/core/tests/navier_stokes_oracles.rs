use rbfctl_core::problems::navier_stokes::{target_outflow, NavierStokesProblem, NsConfig};

fn channel(nodes: usize, re: f64, cross_flow: f64, refinements: usize) -> NavierStokesProblem {
    NavierStokesProblem::new(NsConfig { nodes, re, cross_flow, refinements, ..Default::default() }).unwrap()
}

fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |a, b| a.max(b.abs()))
}

#[test]
fn zero_boundary_data_gives_the_null_solution() {
    let p = channel(400, 100.0, 0.0, 3);
    let s = p.forward(&vec![0.0; p.n_controls()]).unwrap();
    assert_eq!(max_abs(&s.u), 0.0);
    assert_eq!(max_abs(&s.v), 0.0);
    assert_eq!(max_abs(&s.p), 0.0);
}

#[test]
fn low_reynolds_parabola_passes_through() {
    let p = channel(400, 10.0, 0.0, 10);
    let s = p.forward(&p.parabolic_guess()).unwrap();
    let dev = p.outlet.iter().zip(&p.target).map(|(&i, t)| (s.u[i] - t).abs()).fold(0.0, f64::max);
    assert!(dev <= 5e-2, "outflow deviation {dev}");
    assert!(p.cost(&s) >= 0.0);
}

#[test]
fn steady_state_is_divergence_free_and_a_fixed_point() {
    let p = channel(400, 100.0, 0.3, 20);
    let c = p.parabolic_guess();
    let s = p.forward(&c).unwrap();
    assert!(s.divergence_rms <= 1e-3, "divergence {}", s.divergence_rms);
    assert!(s.divergence_history.iter().all(|d| *d <= 1e-3));
    let again = p.forward_from(&c, s.u.clone(), s.v.clone(), 1).unwrap();
    assert!(again.last_update() < p.config.steady_tol, "update {}", again.last_update());
}

#[test]
fn mass_balance_on_the_800_node_cloud() {
    let p = channel(800, 100.0, 0.3, 12);
    let s = p.forward(&p.parabolic_guess()).unwrap();
    let (net, inflow) = p.mass_balance(&s);
    assert!(net.abs() < 1e-2 * inflow, "net {net} inflow {inflow}");
}

#[test]
#[ignore = "boundary mass loss on the 400-node cloud is 5.5% of the inflow"]
fn mass_balance_on_the_400_node_cloud() {
    let p = channel(400, 100.0, 0.3, 10);
    let s = p.forward(&p.parabolic_guess()).unwrap();
    let (net, inflow) = p.mass_balance(&s);
    assert!(net.abs() < 1e-2 * inflow, "net {net} inflow {inflow}");
}

#[test]
fn cost_quadrature_of_a_quiescent_outlet() {
    let p = channel(400, 100.0, 0.3, 1);
    let nn = p.cloud.len();
    let j = p.cost_from_fields(&vec![0.0; nn], &vec![0.0; nn]);
    assert!((j - 4.0 / 15.0).abs() <= 0.01 * 4.0 / 15.0, "J {j}");
    let mut u = vec![0.0; nn];
    for &i in &p.outlet {
        u[i] = target_outflow(p.cloud.coords[i][1], 1.0);
    }
    assert_eq!(p.cost_from_fields(&u, &vec![0.0; nn]), 0.0);
}

#[test]
fn forward_is_deterministic() {
    let a = channel(300, 100.0, 0.3, 4);
    let b = channel(300, 100.0, 0.3, 4);
    let c = a.parabolic_guess();
    assert_eq!(a.forward(&c).unwrap(), b.forward(&c).unwrap());
}
