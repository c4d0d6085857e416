use std::path::{Path, PathBuf};

use rulrl::labeling::{CostModel, LabelConfig};
use rulrl::policy::{Conditioning, PolicyConfig};
use rulrl::rul_estimator::RulConfig;
use rulrl::sweep_report::DEFAULT_GRID_STEPS;
use rulrl::trajdata::SynthConfig;
use rulrl::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    #[default]
    Synth,
    Cmapss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    pub synth: SynthConfig,
    /// Run-to-failure file, split into training units and failing test units.
    pub train_path: Option<PathBuf>,
    /// Optional file of units stopped before failure, evaluated separately.
    pub test_path: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synth,
            synth: SynthConfig::default(),
            train_path: None,
            test_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Explicit targets; when absent the grid spans half the lowest to one and
    /// a half times the highest training return.
    pub grid: Option<Vec<f64>>,
    pub steps: usize,
    pub n_draws: usize,
    pub mode: Conditioning,
    /// Evaluate with the base costs only.
    pub zero_jitter: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            grid: None,
            steps: DEFAULT_GRID_STEPS,
            n_draws: 10,
            mode: Conditioning::Replicate,
            zero_jitter: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub k_regimes: usize,
    /// Window length, horizon, repair probability and RUL cap. Its seed is
    /// replaced by one derived from the master seed.
    pub label: LabelConfig,
    pub cost: CostModel,
    /// Train the RUL estimator, a RUL-aware policy and the estimated-RUL
    /// baseline.
    pub use_rul: bool,
    pub rul: RulConfig,
    /// `uses_rul` is set by the pipeline.
    pub policy: PolicyConfig,
    pub sweep: SweepConfig,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            k_regimes: 6,
            label: LabelConfig::default(),
            cost: CostModel::default(),
            use_rul: false,
            rul: RulConfig::default(),
            policy: PolicyConfig::default(),
            sweep: SweepConfig::default(),
            threads: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_regimes == 0 {
            return Err(Error::Config("k_regimes must be at least 1".into()));
        }
        if self.data.source == DataSource::Cmapss && self.data.train_path.is_none() {
            return Err(Error::Config("data.train_path is required for the cmapss source".into()));
        }
        if self.sweep.n_draws == 0 {
            return Err(Error::Config("sweep.n_draws must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        self.cost.validate()?;
        self.data.synth.validate()?;
        self.policy.train.validate()?;
        self.rul.train.validate()?;
        Ok(())
    }

    /// Cost model used for evaluation rollouts.
    pub fn eval_cost(&self, seed: u64) -> CostModel {
        let mut cost = CostModel {
            seed,
            ..self.cost.clone()
        };
        if self.sweep.zero_jitter {
            cost.failure_jitter = 0.0;
            cost.repair_jitter = 0.0;
            cost.profit_jitter = 0.0;
        }
        cost
    }
}
