//! Run configuration: one TOML file covering every command, plus flag overrides.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use spikedecode::pipeline::{PipelineConfig, SplitFractions, Task};
use spikedecode::synth::SynthConfig;
use spikedecode::train::TrainConfig;
use spikedecode::tuner::{HyperParams, SearchSpace};
use spikedecode::{Error, Result};

pub const RESOLVED_CONFIG_FILE: &str = "run_config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    /// Train+val shares of the trials, run in this order.
    pub train_val: Vec<f64>,
    pub seeds: Vec<u64>,
    /// Validation share of train+val.
    pub val_share: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            train_val: vec![0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2],
            seeds: vec![0],
            val_share: 0.2,
        }
    }
}

impl SweepConfig {
    /// Validation share at a given train+val share. Small training sets get a
    /// larger validation share so that every class keeps a validation trial.
    pub fn val_share_at(&self, train_val: f64) -> f64 {
        if train_val <= 0.2 + 1e-9 {
            self.val_share.max(0.4)
        } else if train_val <= 0.3 + 1e-9 {
            self.val_share.max(0.3)
        } else {
            self.val_share
        }
    }

    pub fn fractions_at(&self, train_val: f64) -> Result<SplitFractions> {
        SplitFractions::from_train_val(train_val, self.val_share_at(train_val))
    }
}

/// Everything a run depends on. Learning rates come from the task sections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Draws of the random search.
    pub search_budget: usize,
    pub synth: SynthConfig,
    pub pipeline: PipelineConfig,
    pub classification: HyperParams,
    pub phase_detection: HyperParams,
    pub train: TrainConfig,
    pub search: SearchSpace,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            search_budget: 10,
            synth: SynthConfig::default(),
            pipeline: PipelineConfig::default(),
            classification: HyperParams::default(),
            phase_detection: HyperParams {
                hidden_units: 16,
                ..HyperParams::default()
            },
            train: TrainConfig::default(),
            search: SearchSpace::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialise config: {e}")))
    }

    pub fn hyper(&self, task: Task) -> &HyperParams {
        match task {
            Task::Classification => &self.classification,
            Task::PhaseDetection => &self.phase_detection,
        }
    }

    /// One seed for generation, splitting and training.
    pub fn set_seed(&mut self, seed: u64) {
        self.synth.seed = seed;
        self.pipeline.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.pipeline.fractions.validate()?;
        self.train.validate()?;
        self.search.validate()?;
        if self.pipeline.window == 0 || !(self.pipeline.bin_width > 0.0) {
            return Err(Error::Config("window and bin width must be positive".into()));
        }
        if self.sweep.train_val.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return Err(Error::Config("sweep train_val shares must lie in (0, 1)".into()));
        }
        if self.sweep.seeds.is_empty() {
            return Err(Error::Config("sweep needs at least one seed".into()));
        }
        Ok(())
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<()> {
        let path = dir.join(RESOLVED_CONFIG_FILE);
        fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))
    }
}
