use std::path::{Path, PathBuf};

use bsdelab_core::density::PdeGrid;
use bsdelab_core::driver::DriverDescriptor;
use bsdelab_core::grid::{GridSpec, TimeGrid};
use bsdelab_core::model::ForwardModel;
use bsdelab_core::regression::RegressionSpec;
use bsdelab_core::singular::default_deltas;
use bsdelab_core::terminal::TerminalDescriptor;
use bsdelab_core::validate::{validate_model, ValidationReport};
use serde::{Deserialize, Serialize};

use crate::RunError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    Simulate,
    Solve,
    Continuity,
    Density,
    BoundCheck,
    VerifyAll,
}

impl Pipeline {
    pub fn name(&self) -> &'static str {
        match self {
            Pipeline::Simulate => "simulate",
            Pipeline::Solve => "solve",
            Pipeline::Continuity => "continuity",
            Pipeline::Density => "density",
            Pipeline::BoundCheck => "bound-check",
            Pipeline::VerifyAll => "verify-all",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub n_paths: usize,
    pub seed: u64,
    #[serde(default = "yes")]
    pub bridge_correction: bool,
    /// Keep Brownian increments so `Z` is estimated.
    #[serde(default = "yes")]
    pub store_increments: bool,
    /// Paths written to `paths.csv`.
    #[serde(default = "default_csv_paths")]
    pub csv_paths: usize,
}

fn yes() -> bool {
    true
}

fn default_csv_paths() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeConfig {
    pub grid: PdeGrid,
    /// Window `[T - window, T]` for the density bound.
    #[serde(default = "default_window")]
    pub window: f64,
    /// Triangular kernel half-width for the Monte Carlo density.
    #[serde(default = "default_bandwidth")]
    pub bandwidth: f64,
    /// Points of the density grid on `[0, T]`.
    #[serde(default = "default_density_points")]
    pub points: usize,
}

fn default_window() -> f64 {
    0.2
}

fn default_bandwidth() -> f64 {
    0.05
}

fn default_density_points() -> usize {
    101
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
    /// Cut-off times `t_n` of the decreasing upper processes for `xi_2`.
    #[serde(default)]
    pub xi2_t_n: Vec<f64>,
    /// `{tau <= T - exit_margin}` is the exit event of the `xi_2` profile.
    #[serde(default = "default_exit_margin")]
    pub exit_margin: f64,
    /// Relative slack on the a priori bound.
    #[serde(default = "default_slack")]
    pub bound_slack: f64,
    /// `ell'` of the a priori bound; the driver's `ell` when absent.
    #[serde(default)]
    pub ell_prime: Option<f64>,
}

fn default_exit_margin() -> f64 {
    0.1
}

fn default_slack() -> f64 {
    0.05
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            deltas: default_deltas(),
            xi2_t_n: Vec::new(),
            exit_margin: default_exit_margin(),
            bound_slack: default_slack(),
            ell_prime: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub model: ForwardModel,
    pub driver: DriverDescriptor,
    pub terminal: TerminalDescriptor,
    pub grid: GridSpec,
    pub mc: McConfig,
    #[serde(default)]
    pub regression: RegressionSpec,
    #[serde(default)]
    pub pde: Option<PdeConfig>,
    #[serde(default)]
    pub checks: CheckConfig,
    pub pipeline: Pipeline,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, RunError> {
        serde_json::from_str(text).map_err(|e| {
            RunError::Config(format!("line {}, column {}: {e}", e.line(), e.column()))
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, RunError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            RunError::Config(m) => RunError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn time_grid(&self) -> Result<TimeGrid, RunError> {
        TimeGrid::try_from(self.grid.clone()).map_err(|e| RunError::Config(e.to_string()))
    }

    /// Structural checks plus the model assumptions.
    pub fn validate(&self) -> Result<ValidationReport, RunError> {
        let grid = self.time_grid()?;
        if self.mc.n_paths == 0 {
            return Err(RunError::Config("mc.n_paths must be positive".into()));
        }
        self.regression.validate().map_err(|e| RunError::Config(e.to_string()))?;
        if let Some(pde) = &self.pde {
            pde.grid.validate().map_err(|e| RunError::Config(e.to_string()))?;
            if !(pde.window > 0.0 && pde.bandwidth > 0.0 && pde.points >= 3) {
                return Err(RunError::Config("pde window and bandwidth must be positive, points >= 3".into()));
            }
        }
        let c = &self.checks;
        if c.deltas.is_empty() || c.deltas.windows(2).any(|w| w[1] >= w[0]) || c.deltas.iter().any(|&d| d <= 0.0) {
            return Err(RunError::Config("checks.deltas must be positive and strictly decreasing".into()));
        }
        let report = validate_model(&self.model, &self.driver, &self.terminal, &grid);
        if !report.passed {
            let names: Vec<String> = report
                .failures()
                .map(|c| format!("{} ({})", c.name, c.note))
                .collect();
            return Err(RunError::Config(format!("model validation failed: {}", names.join("; "))));
        }
        Ok(report)
    }
}
