//! `rbfctl`: solve, optimise, verify and benchmark the two control benchmarks.

mod bench;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ConfigFile, ProblemName};

/// Exit code 1: bad input or configuration. Exit code 2: the run itself failed.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

pub fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Parser, Debug)]
#[command(name = "rbfctl", version, about = "Mesh-free RBF solver and boundary-control toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the forward problem for one control and export the fields.
    Solve {
        #[command(flatten)]
        run: RunArgs,
        /// `exact`, `zero`, `parabolic`, or a CSV file with columns s,c.
        #[arg(long)]
        control: Option<String>,
    },
    /// Optimise the control with DAL, DP or PINN.
    Control {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Compare a method's gradient with central finite differences.
    VerifyGradient {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        control: Option<String>,
        /// Finite-difference step.
        #[arg(long, default_value_t = 1e-5)]
        h: f64,
        /// Maximum relative error accepted (default 1e-4 for Laplace, 1e-3 for Navier-Stokes).
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Generate a point cloud and write it in node-file format.
    GenCloud(GenCloudArgs),
    /// Run a matrix of control runs in child processes and record time, memory and cost.
    Bench(bench::BenchArgs),
}

/// Options shared by every run-type command; flags override the config file.
#[derive(Args, Debug, Clone, Default)]
pub struct RunArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if absent).
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    re: Option<f64>,
    #[arg(long)]
    refinements: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    omegas: Option<Vec<f64>>,
}

impl RunArgs {
    /// Config file (if any) with the flags applied on top.
    pub fn merged(&self) -> Result<ConfigFile, CliError> {
        let mut f = match &self.config {
            Some(p) => ConfigFile::load(p)?,
            None => ConfigFile::default(),
        };
        if let Some(p) = &self.problem {
            f.problem = Some(p.parse::<ProblemName>().map_err(CliError::Usage)?);
        }
        if let Some(m) = &self.method {
            f.method = Some(m.clone());
        }
        f.seed = self.seed.or(f.seed);
        f.output = self.output.clone().or(f.output);
        f.laplace.grid = self.grid.or(f.laplace.grid);
        f.navier_stokes.nodes = self.nodes.or(f.navier_stokes.nodes);
        f.navier_stokes.re = self.re.or(f.navier_stokes.re);
        f.navier_stokes.refinements = self.refinements.or(f.navier_stokes.refinements);
        f.optim.lr = self.lr.or(f.optim.lr);
        f.optim.iterations = self.iterations.or(f.optim.iterations);
        f.pinn.epochs = self.epochs.or(f.pinn.epochs);
        if let Some(o) = &self.omegas {
            f.pinn.omegas = Some(o.clone());
        }
        Ok(f)
    }
}

#[derive(Args, Debug)]
struct GenCloudArgs {
    /// `square` or `channel`.
    #[arg(long, default_value = "channel")]
    kind: String,
    #[arg(long, default_value_t = 30)]
    nx: usize,
    #[arg(long, default_value_t = 30)]
    ny: usize,
    #[arg(long, default_value_t = 1.5)]
    lx: f64,
    #[arg(long, default_value_t = 1.0)]
    ly: f64,
    #[arg(long, default_value_t = 1385)]
    nodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Node file to write.
    #[arg(long, short)]
    output: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Solve { run, control } => commands::solve(&run, control.as_deref()),
        Command::Control { run } => commands::control(&run),
        Command::VerifyGradient { run, control, h, tol } => commands::verify_gradient(&run, control.as_deref(), h, tol),
        Command::GenCloud(a) => commands::gen_cloud(&a.kind, a.nx, a.ny, a.lx, a.ly, a.nodes, a.seed, &a.output),
        Command::Bench(a) => bench::run(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
