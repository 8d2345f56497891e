//! Run configuration: a TOML file with optional sections, overlaid by flags,
//! then resolved against per-problem and per-method defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rbfctl_core::control::pinn::PinnConfig;
use rbfctl_core::control::Method;
use rbfctl_core::problems::laplace::{LaplaceConfig, SideData};
use rbfctl_core::problems::navier_stokes::NsConfig;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemName {
    Laplace,
    #[serde(alias = "ns")]
    NavierStokes,
}

impl std::str::FromStr for ProblemName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "laplace" => Ok(Self::Laplace),
            "navier-stokes" | "ns" => Ok(Self::NavierStokes),
            other => Err(format!("unknown problem `{other}` (expected laplace or navier-stokes)")),
        }
    }
}

impl std::fmt::Display for ProblemName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Laplace => "laplace",
            Self::NavierStokes => "navier-stokes",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaplaceSection {
    pub grid: Option<usize>,
    pub ghost_layer: Option<bool>,
    /// `exact` or `zero`.
    pub side_data: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NsSection {
    pub nodes: Option<usize>,
    pub lx: Option<f64>,
    pub ly: Option<f64>,
    pub re: Option<f64>,
    pub cross_flow: Option<f64>,
    pub refinements: Option<usize>,
    pub pseudo_dt: Option<f64>,
    pub steady_tol: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimSection {
    pub lr: Option<f64>,
    pub iterations: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PinnSection {
    pub hidden: Option<Vec<usize>>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub step2_epochs: Option<usize>,
    pub step2_max_epochs: Option<usize>,
    pub match_tol: Option<f64>,
    pub batch: Option<usize>,
    pub omegas: Option<Vec<f64>>,
    pub fit_factor: Option<f64>,
    pub parallel: Option<bool>,
}

/// On-disk form; every field optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub problem: Option<ProblemName>,
    pub method: Option<String>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub laplace: LaplaceSection,
    #[serde(default)]
    pub navier_stokes: NsSection,
    #[serde(default)]
    pub optim: OptimSection,
    #[serde(default)]
    pub pinn: PinnSection,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

/// Fully resolved and validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: ProblemName,
    pub method: Method,
    pub seed: u64,
    pub output: PathBuf,
    pub laplace: LaplaceConfig,
    pub ns: NsConfig,
    pub lr: f64,
    pub iterations: usize,
    pub pinn: PinnConfig,
}

fn positive(name: &str, v: f64) -> Result<f64, CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(CliError::Usage(format!("{name} must be positive and finite, got {v}")))
    }
}

fn at_least(name: &str, v: usize, min: usize) -> Result<usize, CliError> {
    if v >= min {
        Ok(v)
    } else {
        Err(CliError::Usage(format!("{name} must be at least {min}, got {v}")))
    }
}

impl RunConfig {
    /// Resolves `file` with defaults taken from the hyperparameter tables.
    pub fn resolve(file: &ConfigFile) -> Result<Self, CliError> {
        let problem = file.problem.unwrap_or(ProblemName::Laplace);
        let method: Method = match &file.method {
            Some(m) => m.parse().map_err(CliError::Usage)?,
            None => Method::Dp,
        };
        let seed = file.seed.unwrap_or(0);
        let output = file.output.clone().unwrap_or_else(|| PathBuf::from(format!("out/{problem}-{method}")));

        let l = &file.laplace;
        let side_data = match l.side_data.as_deref().unwrap_or("exact") {
            "exact" => SideData::ExactTrace,
            "zero" => SideData::Zero,
            other => return Err(CliError::Usage(format!("laplace.side_data must be `exact` or `zero`, got `{other}`"))),
        };
        let laplace = LaplaceConfig {
            grid: at_least("laplace.grid", l.grid.unwrap_or(100), 3)?,
            ghost_layer: l.ghost_layer.unwrap_or(true),
            side_data,
        };

        let n = &file.navier_stokes;
        let d = NsConfig::default();
        let default_k = if method == Method::Dal { 3 } else { 10 };
        let ns = NsConfig {
            nodes: at_least("navier_stokes.nodes", n.nodes.unwrap_or(d.nodes), 50)?,
            lx: positive("navier_stokes.lx", n.lx.unwrap_or(d.lx))?,
            ly: positive("navier_stokes.ly", n.ly.unwrap_or(d.ly))?,
            re: positive("navier_stokes.re", n.re.unwrap_or(d.re))?,
            cross_flow: {
                let q = n.cross_flow.unwrap_or(d.cross_flow);
                if !q.is_finite() {
                    return Err(CliError::Usage("navier_stokes.cross_flow must be finite".into()));
                }
                q
            },
            refinements: at_least("navier_stokes.refinements", n.refinements.unwrap_or(default_k), 1)?,
            seed,
            pseudo_dt: positive("navier_stokes.pseudo_dt", n.pseudo_dt.unwrap_or(d.pseudo_dt))?,
            steady_tol: positive("navier_stokes.steady_tol", n.steady_tol.unwrap_or(d.steady_tol))?,
        };

        let default_lr = match (method, problem) {
            (Method::Pinn, _) => 1e-3,
            (_, ProblemName::Laplace) => 1e-2,
            (_, ProblemName::NavierStokes) => 1e-1,
        };
        let lr = positive("optim.lr", file.optim.lr.unwrap_or(default_lr))?;
        let default_iters = match problem {
            ProblemName::Laplace => 500,
            ProblemName::NavierStokes => 350,
        };
        let iterations = at_least("optim.iterations", file.optim.iterations.unwrap_or(default_iters), 1)?;

        let p = &file.pinn;
        let base = match problem {
            ProblemName::Laplace => PinnConfig::laplace_default(),
            ProblemName::NavierStokes => PinnConfig::ns_default(),
        };
        let epochs = at_least("pinn.epochs", p.epochs.unwrap_or(base.epochs), 1)?;
        let step2_epochs = at_least("pinn.step2_epochs", p.step2_epochs.unwrap_or(epochs), 1)?;
        let pinn = PinnConfig {
            hidden: p.hidden.clone().unwrap_or(base.hidden),
            lr: positive("pinn.lr", p.lr.or(file.optim.lr).unwrap_or(base.lr))?,
            epochs,
            step2_epochs,
            step2_max_epochs: p.step2_max_epochs.unwrap_or(4 * step2_epochs),
            match_tol: positive("pinn.match_tol", p.match_tol.unwrap_or(base.match_tol))?,
            batch: p.batch.unwrap_or(base.batch),
            omegas: p.omegas.clone().unwrap_or(base.omegas),
            fit_factor: positive("pinn.fit_factor", p.fit_factor.unwrap_or(base.fit_factor))?,
            seed,
            parallel: p.parallel.unwrap_or(base.parallel),
        };
        if pinn.hidden.is_empty() || pinn.hidden.contains(&0) {
            return Err(CliError::Usage("pinn.hidden must list positive layer widths".into()));
        }
        if pinn.omegas.is_empty() || pinn.omegas.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(CliError::Usage("pinn.omegas must be a non-empty list of finite, non-negative weights".into()));
        }
        if pinn.step2_max_epochs < pinn.step2_epochs {
            return Err(CliError::Usage("pinn.step2_max_epochs must be at least pinn.step2_epochs".into()));
        }
        Ok(Self { problem, method, seed, output, laplace, ns, lr, iterations, pinn })
    }

    /// Steps recorded in summaries: iterations for DAL/DP, step-1 epochs for PINN.
    pub fn steps(&self) -> usize {
        match self.method {
            Method::Pinn => self.pinn.epochs,
            _ => self.iterations,
        }
    }

    /// Refinement count if the run uses one.
    pub fn refinements(&self) -> Option<usize> {
        (self.problem == ProblemName::NavierStokes && self.method != Method::Pinn).then_some(self.ns.refinements)
    }
}
