//! Strict experiment configuration. Every table rejects unknown keys.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use bench_hedge::models::{AffineScaling, ConstantAssets, StylizedMmmParams};
use bench_hedge::pricing::Recovery;
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: Option<ModelConfig>,
    pub grid: Option<GridConfig>,
    pub mc: Option<McConfig>,
    pub task: BTreeMap<String, toml::Value>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Stylized {
        alpha0: f64,
        beta: f64,
        r: f64,
        z0: f64,
        /// Asset coefficients; the reference pair when absent.
        assets: Option<ConstantAssets>,
    },
    RandomScaling {
        bessel_dim: f64,
        z0: f64,
        gamma0: f64,
        rho: f64,
        r: f64,
        scaling: AffineScaling,
        assets: Option<ConstantAssets>,
    },
}

impl ModelConfig {
    pub fn assets(&self) -> ConstantAssets {
        match self {
            ModelConfig::Stylized { assets, r, .. } | ModelConfig::RandomScaling { assets, r, .. } => {
                assets.unwrap_or_else(|| ConstantAssets::reference(*r))
            }
        }
    }

    pub fn stylized(&self) -> Option<StylizedMmmParams> {
        match *self {
            ModelConfig::Stylized { alpha0, beta, r, z0, .. } => Some(StylizedMmmParams { alpha0, beta, r, z0 }),
            ModelConfig::RandomScaling { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub t0: f64,
    pub t_end: f64,
    pub n_steps: usize,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub n_paths: usize,
    pub master_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Jsonl,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_directory() -> PathBuf {
    PathBuf::from("out")
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Json]
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { directory: default_directory(), formats: default_formats() }
    }
}

fn default_asset() -> usize {
    0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateTask {
    /// Channels to summarize; all when absent.
    pub channels: Option<Vec<String>>,
    /// Number of leading paths written in full.
    #[serde(default)]
    pub write_paths: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZcbTask {
    pub maturities: Vec<f64>,
    /// Valuation date; the grid start or 0.
    pub t: Option<f64>,
    /// Benchmarked savings account at `t`; `1 / z0` when absent.
    pub s_hat_0: Option<f64>,
    #[serde(default)]
    pub monte_carlo: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PutTask {
    pub strikes: Vec<f64>,
    pub maturity: f64,
    pub t: Option<f64>,
    pub s_hat_0: Option<f64>,
    #[serde(default)]
    pub monte_carlo: bool,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefaultConfig {
    pub lambda: f64,
    pub recovery: Recovery,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DefaultablePutTask {
    pub strikes: Vec<f64>,
    pub maturity: f64,
    pub default: DefaultConfig,
    pub t: Option<f64>,
    pub s_hat_0: Option<f64>,
    #[serde(default)]
    pub monte_carlo: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "target", rename_all = "snake_case", deny_unknown_fields)]
pub enum HedgeTask {
    /// Benchmarked primary account hedged with a bond.
    Asset {
        #[serde(default = "default_asset")]
        asset: usize,
        bond_maturity: f64,
        /// Step counts for a replication-error convergence study.
        #[serde(default)]
        convergence_steps: Vec<usize>,
    },
    /// Defaultable put maturing at the grid end.
    DefaultablePut { strike: f64, default: DefaultConfig },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "target", rename_all = "snake_case", deny_unknown_fields)]
pub enum GkwPayoff {
    /// Terminal benchmarked primary account.
    Asset {
        #[serde(default = "default_asset")]
        asset: usize,
    },
    /// `(K S_hat0_T - 1)^+`.
    Put { strike: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GkwTask {
    pub payoff: GkwPayoff,
    pub bond_maturity: f64,
    #[serde(default = "default_degree")]
    pub degree: usize,
    /// Random predictable perturbations of the fitted integrand.
    #[serde(default)]
    pub perturbations: usize,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
}

fn default_degree() -> usize {
    3
}

fn default_amplitude() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Supermartingale,
    Martingale,
    StrictLocalMartingale,
    NumeraireIdentity,
    Orthogonality,
}

pub const ALL_CHECKS: [Check; 5] = [
    Check::Supermartingale,
    Check::Martingale,
    Check::StrictLocalMartingale,
    Check::NumeraireIdentity,
    Check::Orthogonality,
];

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyTask {
    /// Checks to run; all that apply to the model when absent.
    pub checks: Option<Vec<Check>>,
    /// Bond maturity for the martingale and change-of-numeraire checks.
    pub bond_maturity: Option<f64>,
    #[serde(default = "default_asset")]
    pub asset: usize,
    /// Steps for the orthogonality check, which is biased at O(dt);
    /// the grid's own step count when absent.
    pub orthogonality_steps: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arithmetic {
    Exact,
    Float,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfoConfig {
    Fine,
    Coarse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeOperation {
    Doob,
    Structure,
    Decompose,
    Optimality,
    IncompleteInfo,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeLabTask {
    /// Tree file, relative to the config file.
    pub tree: PathBuf,
    #[serde(default = "default_arithmetic")]
    pub arithmetic: Arithmetic,
    #[serde(default = "default_info")]
    pub information: InfoConfig,
    /// Operations to run; all that apply to the tree when absent.
    pub operations: Option<Vec<TreeOperation>>,
    /// Claim per leaf id, overriding the one in the tree file.
    pub claim: Option<BTreeMap<String, toml::Value>>,
}

fn default_arithmetic() -> Arithmetic {
    Arithmetic::Exact
}

fn default_info() -> InfoConfig {
    InfoConfig::Fine
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        if cfg.task.len() != 1 {
            return Err(CliError::Config(format!(
                "exactly one [task.<name>] table required, found {}",
                cfg.task.len()
            )));
        }
        if cfg.output.formats.is_empty() {
            return Err(CliError::Config("output.formats must not be empty".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Ok((Self::parse(&text)?, text))
    }

    /// The settings of `name`, which must be the configured task.
    pub fn task<T: serde::de::DeserializeOwned>(&self, name: &str) -> Result<T, CliError> {
        let (key, value) = self.task.iter().next().expect("checked at parse time");
        if key != name {
            return Err(CliError::Config(format!("command is `{name}` but the config defines [task.{key}]")));
        }
        value
            .clone()
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(format!("task.{name}: {}", e.message())))
    }

    pub fn model(&self) -> Result<&ModelConfig, CliError> {
        self.model.as_ref().ok_or_else(|| CliError::Config("missing [model] section".into()))
    }

    pub fn stylized(&self, task: &str) -> Result<StylizedMmmParams, CliError> {
        let p = self
            .model()?
            .stylized()
            .ok_or_else(|| CliError::Config(format!("task `{task}` requires model variant `stylized`")))?;
        p.validate()?;
        Ok(p)
    }

    pub fn grid(&self) -> Result<GridConfig, CliError> {
        self.grid.ok_or_else(|| CliError::Config("missing [grid] section".into()))
    }

    pub fn mc(&self) -> Result<McConfig, CliError> {
        self.mc.ok_or_else(|| CliError::Config("missing [mc] section".into()))
    }

    pub fn time_grid(&self) -> Result<bench_hedge::stochastic::TimeGrid, CliError> {
        let g = self.grid()?;
        Ok(bench_hedge::stochastic::make_time_grid(g.t0, g.t_end, g.n_steps)?)
    }
}
