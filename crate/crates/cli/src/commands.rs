use std::path::{Path, PathBuf};

use rbfctl_core::autodiff::{compare_with_fd, AdError};
use rbfctl_core::control::pinn::{omega_line_search, PinnProblem};
use rbfctl_core::control::{dal, dp, ControlError, Method};
use rbfctl_core::io::{
    control_table, field_table, grad_check_table, history_table, load_table, pinn_history_table, save_table, Table,
};
use rbfctl_core::optim::History;
use rbfctl_core::pointcloud::{make_channel_cloud, make_unit_square_grid, NodeKind};
use rbfctl_core::problems::laplace::{laplace_exact_state, LaplaceProblem};
use rbfctl_core::problems::navier_stokes::{FlowState, NavierStokesProblem};

use crate::config::{ProblemName, RunConfig};
use crate::{runtime, CliError, RunArgs};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const SUMMARY_HEADER: [&str; 9] =
    ["problem", "method", "steps", "refinements", "initial_cost", "final_cost", "control_error", "omega", "status"];

/// One-row record describing a control run.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub problem: ProblemName,
    pub method: Method,
    pub steps: usize,
    pub refinements: Option<usize>,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub control_error: Option<f64>,
    pub omega: Option<f64>,
    pub status: String,
}

fn opt_f(x: Option<f64>) -> String {
    x.map(|v| format!("{v:?}")).unwrap_or_default()
}

impl Summary {
    pub fn save(&self, dir: &Path) -> Result<(), CliError> {
        let mut w = csv::Writer::from_path(dir.join(SUMMARY_FILE)).map_err(runtime)?;
        w.write_record(SUMMARY_HEADER).map_err(runtime)?;
        w.write_record([
            self.problem.to_string(),
            self.method.to_string(),
            self.steps.to_string(),
            self.refinements.map(|k| k.to_string()).unwrap_or_default(),
            format!("{:?}", self.initial_cost),
            format!("{:?}", self.final_cost),
            opt_f(self.control_error),
            opt_f(self.omega),
            self.status.clone(),
        ])
        .map_err(runtime)?;
        w.flush().map_err(runtime)
    }

    /// Reads back the fields the bench needs: (steps, final_cost, status).
    pub fn load_brief(dir: &Path) -> Result<(usize, f64, String), String> {
        let mut r = csv::Reader::from_path(dir.join(SUMMARY_FILE)).map_err(|e| e.to_string())?;
        let rec = r.records().next().ok_or("empty summary")?.map_err(|e| e.to_string())?;
        let steps = rec[2].parse().map_err(|e| format!("steps: {e}"))?;
        let cost = rec[5].parse().map_err(|e| format!("final_cost: {e}"))?;
        Ok((steps, cost, rec[8].to_string()))
    }
}

pub fn resolve(run: &RunArgs) -> Result<RunConfig, CliError> {
    RunConfig::resolve(&run.merged()?)
}

fn prepare_output(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn save(dir: &Path, name: &str, t: &Table) -> Result<PathBuf, CliError> {
    let p = dir.join(name);
    save_table(&p, t).map_err(|e| CliError::Runtime(format!("writing {}: {e}", p.display())))?;
    Ok(p)
}

fn laplace_problem(cfg: &RunConfig) -> Result<LaplaceProblem, CliError> {
    LaplaceProblem::new(cfg.laplace).map_err(runtime)
}

fn ns_problem(cfg: &RunConfig) -> Result<NavierStokesProblem, CliError> {
    NavierStokesProblem::new(cfg.ns).map_err(runtime)
}

/// Control from a keyword or a CSV file with an `s,c` header.
fn control_from_spec(spec: &str, n: usize, exact: Option<Vec<f64>>, parabolic: Option<Vec<f64>>) -> Result<Vec<f64>, CliError> {
    let c = match spec {
        "zero" => vec![0.0; n],
        "exact" => exact.ok_or_else(|| CliError::Usage("`exact` control is only defined for laplace".into()))?,
        "parabolic" => parabolic.ok_or_else(|| CliError::Usage("`parabolic` control is only defined for navier-stokes".into()))?,
        path => {
            let t = load_table(Path::new(path)).map_err(|e| CliError::Usage(format!("control file {path}: {e}")))?;
            t.column("c").ok_or_else(|| CliError::Usage(format!("control file {path} has no `c` column")))?
        }
    };
    if c.len() != n {
        return Err(CliError::Usage(format!("control has {} values, the problem has {n} control nodes", c.len())));
    }
    Ok(c)
}

fn ns_outflow_table(p: &NavierStokesProblem, s: &FlowState) -> Table {
    let mut t = Table::new(&["y", "u", "v", "target"]);
    for (k, &i) in p.outlet.iter().enumerate() {
        t.rows.push(vec![p.outlet_y[k], s.u[i], s.v[i], p.target[k]]);
    }
    t
}

pub fn solve(run: &RunArgs, control: Option<&str>) -> Result<(), CliError> {
    let cfg = resolve(run)?;
    prepare_output(&cfg.output)?;
    match cfg.problem {
        ProblemName::Laplace => {
            let p = laplace_problem(&cfg)?;
            let c = control_from_spec(control.unwrap_or("exact"), p.n_controls(), Some(p.exact_control()), None)?;
            let state = p.forward(&c).map_err(runtime)?;
            let u = p.nodal_values(&state);
            let exact: Vec<f64> = p.cloud.coords.iter().map(|q| laplace_exact_state(q[0], q[1])).collect();
            let err = u.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            save(&cfg.output, "field.csv", &field_table(&p.cloud.coords, &["u", "u_exact"], &[&u, &exact]))?;
            println!("laplace grid {}: J = {:e}, max |u - u*| = {err:e}", cfg.laplace.grid, p.cost(&state));
            if let Some(w) = &state.warning {
                eprintln!("warning: {w}");
            }
        }
        ProblemName::NavierStokes => {
            let p = ns_problem(&cfg)?;
            let c = control_from_spec(control.unwrap_or("parabolic"), p.n_controls(), None, Some(p.parabolic_guess()))?;
            let s = p.forward(&c).map_err(runtime)?;
            save(&cfg.output, "field.csv", &field_table(&p.cloud.coords, &["u", "v", "p"], &[&s.u, &s.v, &s.p]))?;
            save(&cfg.output, "outflow.csv", &ns_outflow_table(&p, &s))?;
            let (net, inflow) = p.mass_balance(&s);
            println!(
                "navier-stokes {} nodes, Re {}, k {}: J = {:e}, divergence RMS = {:e}, net flux / inflow = {:e}",
                p.cloud.len(),
                cfg.ns.re,
                cfg.ns.refinements,
                p.cost(&s),
                s.divergence_rms,
                net / inflow
            );
            if let Some(w) = &s.warning {
                eprintln!("warning: {w}");
            }
        }
    }
    Ok(())
}

fn finish_history(cfg: &RunConfig, hist: &History, summary: &mut Summary) -> Result<(), CliError> {
    save(&cfg.output, "history.csv", &history_table(hist))?;
    summary.initial_cost = hist.initial_cost().unwrap_or(f64::NAN);
    summary.final_cost = hist.final_cost().unwrap_or(f64::NAN);
    if let Some(e) = &hist.error {
        summary.status = format!("error: {e}");
    }
    Ok(())
}

pub fn control(run: &RunArgs) -> Result<(), CliError> {
    let cfg = resolve(run)?;
    prepare_output(&cfg.output)?;
    let mut summary = Summary {
        problem: cfg.problem,
        method: cfg.method,
        steps: cfg.steps(),
        refinements: cfg.refinements(),
        initial_cost: f64::NAN,
        final_cost: f64::NAN,
        control_error: None,
        omega: None,
        status: "ok".into(),
    };
    let outcome = run_control(&cfg, &mut summary);
    if let Err(e) = &outcome {
        summary.status = format!("error: {e}");
    }
    summary.save(&cfg.output)?;
    outcome?;
    println!("{} / {}: final J = {:e} after {} steps", cfg.problem, cfg.method, summary.final_cost, summary.steps);
    if let Some(w) = summary.omega {
        println!("selected omega* = {w}");
    }
    if let Some(e) = summary.control_error {
        println!("max |c - c*| = {e:e}");
    }
    if summary.status != "ok" {
        return Err(CliError::Runtime(summary.status));
    }
    Ok(())
}

fn run_control(cfg: &RunConfig, summary: &mut Summary) -> Result<(), CliError> {
    match (cfg.problem, cfg.method) {
        (ProblemName::Laplace, Method::Dal | Method::Dp) => {
            let p = laplace_problem(cfg)?;
            let c0 = vec![0.0; p.n_controls()];
            let hist = if cfg.method == Method::Dal {
                dal::run_dal_laplace(&p, c0, cfg.lr, cfg.iterations)
            } else {
                dp::run_dp_laplace(&p, c0, cfg.lr, cfg.iterations)
            }
            .map_err(runtime)?;
            save(&cfg.output, "control.csv", &control_table(&p.top_x, &hist.control))?;
            let exact = p.exact_control();
            summary.control_error = Some(hist.control.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
            finish_history(cfg, &hist, summary)
        }
        (ProblemName::NavierStokes, Method::Dal | Method::Dp) => {
            let p = ns_problem(cfg)?;
            let k = cfg.ns.refinements;
            let c0 = p.parabolic_guess();
            let hist = if cfg.method == Method::Dal {
                dal::run_dal_ns(&p, c0, cfg.lr, cfg.iterations, k)
            } else {
                dp::run_dp_ns(&p, c0, cfg.lr, cfg.iterations, k)
            }
            .map_err(runtime)?;
            save(&cfg.output, "control.csv", &control_table(&p.inlet_y, &hist.control))?;
            if let Ok(s) = p.forward_k(&hist.control, k) {
                save(&cfg.output, "outflow.csv", &ns_outflow_table(&p, &s))?;
            }
            finish_history(cfg, &hist, summary)
        }
        (problem, Method::Pinn) => {
            let prob = match problem {
                ProblemName::Laplace => PinnProblem::laplace(cfg.laplace.grid, cfg.laplace.side_data),
                ProblemName::NavierStokes => {
                    let cloud = make_channel_cloud(cfg.ns.lx, cfg.ns.ly, cfg.ns.nodes, cfg.seed).map_err(runtime)?;
                    PinnProblem::navier_stokes_from_cloud(&cloud, cfg.ns.re, cfg.ns.cross_flow)
                }
            }
            .map_err(runtime)?;
            let ls = omega_line_search(&prob, &cfg.pinn).map_err(runtime)?;
            let mut t = Table::new(&[
                "omega",
                "step1_fit",
                "step1_cost",
                "step2_fit",
                "step2_mismatch",
                "step2_epochs",
                "cost",
                "selected",
            ]);
            for (k, r) in ls.runs.iter().enumerate() {
                let s1 = r.step1.history.last().cloned().unwrap_or_default();
                t.rows.push(vec![
                    r.omega,
                    s1.fit(),
                    s1.cost,
                    r.step2.loss.fit(),
                    r.step2.mismatch,
                    r.step2.epochs as f64,
                    r.cost(),
                    if k == ls.best { 1.0 } else { 0.0 },
                ]);
            }
            save(&cfg.output, "line_search.csv", &t)?;
            let best = ls.best_run();
            save(&cfg.output, "pinn_history.csv", &pinn_history_table(&best.step1.history))?;
            save(&cfg.output, "control.csv", &control_table(&prob.control_coord, &best.control))?;
            summary.initial_cost = best.step1.history.first().map_or(f64::NAN, |b| b.cost);
            summary.final_cost = best.cost();
            summary.omega = Some(best.omega);
            if problem == ProblemName::Laplace {
                let exact: Vec<f64> =
                    prob.control_coord.iter().map(|&x| rbfctl_core::problems::laplace::laplace_exact_control(x)).collect();
                summary.control_error =
                    Some(best.control.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
            }
            if !best.matched(cfg.pinn.match_tol) {
                eprintln!(
                    "warning: step-2 boundary mismatch {:e} exceeds {:e} after {} epochs",
                    best.step2.mismatch, cfg.pinn.match_tol, best.step2.epochs
                );
            }
            Ok(())
        }
    }
}

pub fn verify_gradient(run: &RunArgs, control: Option<&str>, h: f64, tol: Option<f64>) -> Result<(), CliError> {
    let cfg = resolve(run)?;
    if !(h.is_finite() && h > 0.0) {
        return Err(CliError::Usage(format!("--h must be positive, got {h}")));
    }
    if cfg.method == Method::Pinn {
        return Err(CliError::Usage("verify-gradient supports dal and dp".into()));
    }
    prepare_output(&cfg.output)?;
    let fd_err = |e: ControlError| AdError::Forward(e.to_string());
    let report = match cfg.problem {
        ProblemName::Laplace => {
            let p = laplace_problem(&cfg)?;
            let c = control_from_spec(control.unwrap_or("zero"), p.n_controls(), Some(p.exact_control()), None)?;
            let (_, g) = match cfg.method {
                Method::Dal => dal::dal_gradient_laplace(&p, &c),
                _ => dp::dp_gradient_laplace(&p, &c),
            }
            .map_err(runtime)?;
            compare_with_fd(|x| p.cost_of(x).map_err(|e| fd_err(e.into())), &g, &c, h).map_err(runtime)?
        }
        ProblemName::NavierStokes => {
            let p = ns_problem(&cfg)?;
            let k = cfg.ns.refinements;
            let c = control_from_spec(control.unwrap_or("parabolic"), p.n_controls(), None, Some(p.parabolic_guess()))?;
            let (_, g) = match cfg.method {
                Method::Dal => dal::dal_gradient_ns(&p, &c, k),
                _ => dp::dp_gradient_ns(&p, &c, k),
            }
            .map_err(runtime)?;
            compare_with_fd(|x| p.forward_k(x, k).map(|s| p.cost(&s)).map_err(|e| fd_err(e.into())), &g, &c, h)
                .map_err(runtime)?
        }
    };
    let tol = tol.unwrap_or(match cfg.problem {
        ProblemName::Laplace => 1e-4,
        ProblemName::NavierStokes => 1e-3,
    });
    save(&cfg.output, "gradcheck.csv", &grad_check_table(&report))?;
    println!(
        "{} / {}: {} components, max relative error {:e} (tolerance {:e})",
        cfg.problem,
        cfg.method,
        report.rows.len(),
        report.max_rel_error,
        tol
    );
    if report.max_rel_error > tol || !report.max_rel_error.is_finite() {
        return Err(CliError::Runtime(format!("gradient check failed: {:e} > {:e}", report.max_rel_error, tol)));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub fn gen_cloud(kind: &str, nx: usize, ny: usize, lx: f64, ly: f64, nodes: usize, seed: u64, out: &Path) -> Result<(), CliError> {
    let cloud = match kind {
        "square" => make_unit_square_grid(nx, ny, NodeKind::Dirichlet).map_err(|e| CliError::Usage(e.to_string()))?,
        "channel" => make_channel_cloud(lx, ly, nodes, seed).map_err(|e| CliError::Usage(e.to_string()))?,
        other => return Err(CliError::Usage(format!("unknown cloud kind `{other}` (expected square or channel)"))),
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        prepare_output(dir)?;
    }
    cloud.save_nodes(out).map_err(runtime)?;
    let c = cloud.counts();
    println!(
        "{} nodes ({} internal, {} dirichlet, {} neumann, {} robin) -> {}",
        cloud.len(),
        c.internal,
        c.dirichlet,
        c.neumann,
        c.robin,
        out.display()
    );
    Ok(())
}
