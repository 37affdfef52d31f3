//! Run configuration: plain TOML with explicit sections, so a run directory
//! is a self-describing archival artifact.

use crate::error::{LabError, Result};
use crate::grid::GridSpec;
use crate::math::Vec3;
use crate::metric::{MetricModel, ModelKind};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub grid: GridSection,
    #[serde(default)]
    pub solver: SolverSection,
    pub functionals: FunctionalsSection,
    pub asymptotics: AsymptoticsSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// One of: euclidean, schwarzschild, bump, decay.
    pub kind: String,
    pub m: Option<f64>,
    pub center: Option<[f64; 3]>,
    pub amplitude: Option<f64>,
    pub width: Option<f64>,
    pub epsilon: Option<f64>,
    pub tau: Option<f64>,
    pub angular: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub r_min: f64,
    pub r_max: f64,
    pub n_r: usize,
    pub n_theta: usize,
    pub n_phi: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub tol: f64,
    pub max_iter: usize,
    pub normalize: bool,
    /// Use the closed-form radial oracle instead of the grid solve (radial
    /// models only).
    pub oracle: bool,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection { tol: 1e-10, max_iter: 20_000, normalize: true, oracle: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalsSection {
    /// Bump profile support margin.
    pub s0: f64,
    pub t_grid: Vec<f64>,
    pub a_grid: Vec<f64>,
    /// Coarea smearing width in units of the local level spacing.
    pub eps_mult: f64,
    /// Evaluation pairs (a, s) for the E identity check.
    pub e_pairs: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AsymptoticsSection {
    pub r_values: Vec<f64>,
    pub q: f64,
    pub p: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub directory: String,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| LabError::InvalidSpec(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid_spec().validate()?;
        self.metric_model()?;
        if !(self.solver.tol > 0.0) {
            return Err(LabError::InvalidSpec("solver.tol must be positive".into()));
        }
        let f = &self.functionals;
        if !(f.s0 > 0.0 && f.s0 < 0.5) {
            return Err(LabError::InvalidSpec("functionals.s0 must lie in (0, 1/2)".into()));
        }
        if !(f.eps_mult > 0.0) {
            return Err(LabError::InvalidSpec("functionals.eps_mult must be positive".into()));
        }
        if f.a_grid.len() < 2 {
            return Err(LabError::InvalidSpec("functionals.a_grid needs >= 2 entries".into()));
        }
        for w in f.a_grid.windows(2) {
            let ratio = w[1] / w[0];
            if !(1.5..=4.0).contains(&ratio) {
                return Err(LabError::InvalidSpec(format!(
                    "functionals.a_grid must be geometric with ratio in [1.5, 4], got {ratio}"
                )));
            }
        }
        if f.t_grid.iter().any(|&t| t <= 0.0) {
            return Err(LabError::InvalidSpec("functionals.t_grid must be positive".into()));
        }
        let a = &self.asymptotics;
        if !(1.0..1.5).contains(&a.q) {
            return Err(LabError::InvalidSpec(format!(
                "asymptotics.q must satisfy 1 <= q < 3/2, got {}",
                a.q
            )));
        }
        if a.p <= 3.0 {
            return Err(LabError::InvalidSpec(format!(
                "asymptotics.p must exceed 3, got {}",
                a.p
            )));
        }
        if a.r_values.len() < 4 {
            return Err(LabError::InvalidSpec("asymptotics.r_values needs >= 4 entries".into()));
        }
        if self.output.directory.is_empty() {
            return Err(LabError::InvalidSpec("output.directory must be set".into()));
        }
        Ok(())
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec {
            r_min: self.grid.r_min,
            r_max: self.grid.r_max,
            n_r: self.grid.n_r,
            n_theta: self.grid.n_theta,
            n_phi: self.grid.n_phi,
        }
    }

    pub fn metric_model(&self) -> Result<MetricModel> {
        let m = &self.model;
        let missing = |f: &str| {
            LabError::InvalidSpec(format!("model.{f} required for kind '{}'", m.kind))
        };
        let kind = match m.kind.as_str() {
            "euclidean" => ModelKind::Euclidean,
            "schwarzschild" => ModelKind::ConformalRadial { m: m.m.ok_or_else(|| missing("m"))? },
            "bump" => {
                let c = m.center.ok_or_else(|| missing("center"))?;
                ModelKind::ConformalBump {
                    center: Vec3::new(c[0], c[1], c[2]),
                    amplitude: m.amplitude.ok_or_else(|| missing("amplitude"))?,
                    width: m.width.ok_or_else(|| missing("width"))?,
                }
            }
            "decay" => ModelKind::DecayPerturbation {
                epsilon: m.epsilon.ok_or_else(|| missing("epsilon"))?,
                tau: m.tau.ok_or_else(|| missing("tau"))?,
                angular: m.angular.unwrap_or(0.0),
            },
            other => {
                return Err(LabError::InvalidSpec(format!("unknown model kind '{other}'")))
            }
        };
        MetricModel::new(kind)
    }

    pub fn solve_options(&self) -> crate::solver::SolveOptions {
        crate::solver::SolveOptions {
            tol: self.solver.tol,
            max_iter: self.solver.max_iter,
            normalize: self.solver.normalize,
        }
    }
}

/// A reasonable default configuration for the given model kind, used by the
/// verification suite and as a template.
pub fn example_config(kind: &str, out_dir: &str) -> RunConfig {
    RunConfig {
        model: ModelSection {
            kind: kind.to_string(),
            m: if kind == "schwarzschild" { Some(1.0) } else { None },
            center: if kind == "bump" { Some([0.5, 0.0, 0.0]) } else { None },
            amplitude: if kind == "bump" { Some(0.25) } else { None },
            width: if kind == "bump" { Some(0.5) } else { None },
            epsilon: if kind == "decay" { Some(0.05) } else { None },
            tau: if kind == "decay" { Some(0.5) } else { None },
            angular: if kind == "decay" { Some(0.3) } else { None },
        },
        grid: GridSection { r_min: 1.0 / 32.0, r_max: 1024.0, n_r: 120, n_theta: 8, n_phi: 16 },
        solver: SolverSection::default(),
        functionals: FunctionalsSection {
            s0: 0.05,
            t_grid: vec![2.0, 3.0, 4.5, 6.75, 10.0, 15.0, 22.0, 33.0],
            a_grid: vec![4.0, 8.0, 16.0, 32.0],
            eps_mult: 4.0,
            e_pairs: vec![[4.0, 1.0], [4.0, 4.0], [8.0, 2.0]],
        },
        asymptotics: AsymptoticsSection {
            r_values: vec![8.0, 16.0, 32.0, 64.0],
            q: 1.25,
            p: 4.0,
        },
        output: OutputSection { directory: out_dir.to_string() },
    }
}
