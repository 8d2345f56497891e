use std::path::Path;
use std::process::{Command, Output};

use rbfctl_core::io::load_table;
use rbfctl_core::pointcloud::PointCloud;

fn rbfctl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rbfctl")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn dir_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    assert_eq!(code(&rbfctl(&["solve", "--problem", "poisson", "-o", dir_str(&out)])), 1);
    assert_eq!(code(&rbfctl(&["solve", "--no-such-flag"])), 1);
    assert_eq!(code(&rbfctl(&["control", "--problem", "laplace", "--method", "newton", "-o", dir_str(&out)])), 1);
    assert_eq!(code(&rbfctl(&["gen-cloud", "--kind", "torus", "-o", dir_str(&out.join("c.nodes"))])), 1);
    assert_eq!(code(&rbfctl(&["--help"])), 0);
}

#[test]
fn solve_creates_output_and_matches_exact_state() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("nested").join("solve");
    let o = rbfctl(&["solve", "--problem", "laplace", "--grid", "30", "--control", "exact", "-o", dir_str(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let t = load_table(&out.join("field.csv")).unwrap();
    assert_eq!(t.header, ["x", "y", "u", "u_exact"]);
    let (u, e) = (t.column("u").unwrap(), t.column("u_exact").unwrap());
    let err = u.iter().zip(&e).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err <= 5e-3, "{err}");
}

#[test]
fn verify_gradient_reports_one_row_per_control() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("vg");
    let args = ["verify-gradient", "--problem", "laplace", "--method", "dp", "--grid", "15", "-o", dir_str(&out)];
    let o = rbfctl(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let t = load_table(&out.join("gradcheck.csv")).unwrap();
    assert_eq!(t.rows.len(), 15);
    assert!(t.column("rel_error").unwrap().iter().all(|e| *e <= 1e-4));
    let mut strict = args.to_vec();
    strict.extend(["--tol", "1e-30"]);
    assert_eq!(code(&rbfctl(&strict)), 2);
}

#[test]
fn commands_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let read = |p: &Path| std::fs::read(p).unwrap();
    let mut outputs = Vec::new();
    for k in 0..2 {
        let d = tmp.path().join(format!("run{k}"));
        let cases: [(&str, Vec<&str>); 4] = [
            ("dp", vec!["control", "--problem", "laplace", "--method", "dp", "--grid", "12", "--iterations", "40"]),
            ("dal", vec!["control", "--problem", "laplace", "--method", "dal", "--grid", "12", "--iterations", "40"]),
            ("pinn", vec!["control", "--problem", "laplace", "--method", "pinn", "--grid", "8", "--epochs", "20", "--omegas", "0.1,1"]),
            ("ns", vec!["solve", "--problem", "ns", "--nodes", "150", "--refinements", "3"]),
        ];
        for (name, mut args) in cases {
            let sub = d.join(name);
            args.extend(["--seed", "3", "-o", dir_str(&sub)]);
            let o = rbfctl(&args);
            assert_eq!(code(&o), 0, "{name}: {}", String::from_utf8_lossy(&o.stderr));
        }
        let cloud = d.join("cloud.nodes");
        assert_eq!(code(&rbfctl(&["gen-cloud", "--nodes", "300", "--seed", "5", "-o", dir_str(&cloud)])), 0);
        outputs.push((
            read(&d.join("dp/history.csv")),
            read(&d.join("dal/control.csv")),
            read(&d.join("pinn/control.csv")),
            read(&d.join("ns/field.csv")),
            read(&cloud),
        ));
        assert!(PointCloud::load_nodes(&cloud).unwrap().len() > 250);
    }
    assert!(outputs[0] == outputs[1], "outputs differ between identical runs");
}

#[test]
fn bench_writes_the_documented_header_and_repeats_costs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("bench");
    let o = rbfctl(&[
        "bench", "--runs", "laplace:dp,laplace:dp", "--grid", "12", "--iterations", "30", "-o", dir_str(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let bad = rbfctl(&["bench", "--runs", "laplace:nonsense", "-o", dir_str(&tmp.path().join("bad"))]);
    assert_eq!(code(&bad), 1);
    let text = std::fs::read_to_string(out.join("bench.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "problem,method,time_s,peak_mem_bytes,steps,refinements,final_cost,status");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][6], rows[1][6]);
    assert_eq!(rows[0][7], "ok");
    assert!(rows[0][3].parse::<u64>().unwrap() > 0);
}
