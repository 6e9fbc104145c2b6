//! Seeded random search over the architecture and optimisation grid.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ModelConfig, Regularizer};
use crate::scalar::Scalar;
use crate::seed::{derive_seed, rng_from};
use crate::train::{train, LabelledSet, TrainConfig, TrainHistory};

pub const LEADERBOARD_FILE: &str = "leaderboard.csv";

/// Candidate values per axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub n_layers: Vec<usize>,
    pub hidden_units: Vec<usize>,
    pub dropout: Vec<f64>,
    pub kernel_reg: Vec<Regularizer>,
    pub recurrent_reg: Vec<Regularizer>,
    pub initial_lr: Vec<f64>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            n_layers: vec![1, 2, 3, 4],
            hidden_units: vec![16, 32, 40, 64],
            dropout: vec![0.0, 0.2, 0.4, 0.6, 0.7, 0.8],
            kernel_reg: Regularizer::ALL.to_vec(),
            recurrent_reg: Regularizer::ALL.to_vec(),
            initial_lr: vec![1e-3, 2e-4, 1e-4],
        }
    }
}

impl SearchSpace {
    pub fn cardinality(&self) -> usize {
        self.n_layers.len()
            * self.hidden_units.len()
            * self.dropout.len()
            * self.kernel_reg.len()
            * self.recurrent_reg.len()
            * self.initial_lr.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.cardinality() == 0 {
            return Err(Error::Config("every search axis needs at least one value".into()));
        }
        Ok(())
    }

    pub fn contains(&self, hp: &HyperParams) -> bool {
        self.n_layers.contains(&hp.n_layers)
            && self.hidden_units.contains(&hp.hidden_units)
            && self.dropout.contains(&hp.dropout)
            && self.kernel_reg.contains(&hp.kernel_reg)
            && self.recurrent_reg.contains(&hp.recurrent_reg)
            && self.initial_lr.contains(&hp.initial_lr)
    }
}

/// One point of the search space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperParams {
    pub n_layers: usize,
    pub hidden_units: usize,
    pub dropout: f64,
    pub kernel_reg: Regularizer,
    pub recurrent_reg: Regularizer,
    pub initial_lr: f64,
}

impl Default for HyperParams {
    /// One layer of 40 units, no dropout or penalties.
    fn default() -> Self {
        HyperParams {
            n_layers: 1,
            hidden_units: 40,
            dropout: 0.0,
            kernel_reg: Regularizer::None,
            recurrent_reg: Regularizer::None,
            initial_lr: 1e-3,
        }
    }
}

impl HyperParams {
    pub fn model_config(&self, channels: usize, window: usize, n_classes: usize) -> ModelConfig {
        ModelConfig {
            n_layers: self.n_layers,
            hidden_units: self.hidden_units,
            dropout: self.dropout,
            kernel_reg: self.kernel_reg,
            recurrent_reg: self.recurrent_reg,
            ..ModelConfig::new(channels, window, n_classes)
        }
    }
}

fn pick<T: Clone, R: Rng>(rng: &mut R, values: &[T]) -> T {
    values[rng.random_range(0..values.len())].clone()
}

/// Independent uniform draw on every axis.
pub fn sample_config<R: Rng>(space: &SearchSpace, rng: &mut R) -> HyperParams {
    HyperParams {
        n_layers: pick(rng, &space.n_layers),
        hidden_units: pick(rng, &space.hidden_units),
        dropout: pick(rng, &space.dropout),
        kernel_reg: pick(rng, &space.kernel_reg),
        recurrent_reg: pick(rng, &space.recurrent_reg),
        initial_lr: pick(rng, &space.initial_lr),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    /// Position in the draw sequence.
    pub draw: usize,
    pub hyper: HyperParams,
    pub model: ModelConfig,
    /// Zero when training diverged.
    pub val_accuracy: f64,
    pub parameter_count: usize,
    pub seed: u64,
    pub diverged: bool,
    #[serde(skip)]
    pub history: TrainHistory,
}

/// Best first: higher validation accuracy, then fewer parameters, then
/// earlier draw.
pub fn rank(results: &mut [TrialResult]) {
    results.sort_by(|a, b| {
        b.val_accuracy
            .total_cmp(&a.val_accuracy)
            .then(a.parameter_count.cmp(&b.parameter_count))
            .then(a.draw.cmp(&b.draw))
    });
}

/// Trains `budget` sampled configurations and returns the ranked
/// leaderboard; the winner is its first entry.
pub fn random_search<T: Scalar>(
    space: &SearchSpace,
    budget: usize,
    base: &TrainConfig,
    train_set: &LabelledSet<T>,
    val_set: &LabelledSet<T>,
    n_classes: usize,
    seed: u64,
) -> Result<Vec<TrialResult>> {
    space.validate()?;
    if budget == 0 {
        return Err(Error::Config("search budget must be at least 1".into()));
    }
    let channels = train_set.batch.channels;
    let window = train_set.batch.steps;
    let mut rng = rng_from(derive_seed(seed, 0));
    let draws: Vec<HyperParams> = (0..budget).map(|_| sample_config(space, &mut rng)).collect();
    let mut results = Vec::with_capacity(budget);
    for (draw, hyper) in draws.into_iter().enumerate() {
        let model = hyper.model_config(channels, window, n_classes);
        let trial_seed = derive_seed(seed, draw as u64 + 1);
        let train_cfg = TrainConfig {
            initial_lr: hyper.initial_lr,
            seed: trial_seed,
            ..base.clone()
        };
        let (val_accuracy, history, diverged) = match train(&model, &train_cfg, train_set, val_set) {
            Ok(out) => (out.history.best_val_acc().unwrap_or(0.0), out.history, false),
            Err(Error::Divergence(msg)) => {
                log::warn!("search draw {draw} diverged: {msg}");
                (0.0, TrainHistory::default(), true)
            }
            Err(e) => return Err(e),
        };
        log::info!("search draw {draw}: val_acc {val_accuracy:.4} {hyper:?}");
        results.push(TrialResult {
            draw,
            parameter_count: model.parameter_count(),
            hyper,
            model,
            val_accuracy,
            seed: trial_seed,
            diverged,
            history,
        });
    }
    rank(&mut results);
    Ok(results)
}

pub fn leaderboard_csv(results: &[TrialResult]) -> String {
    let mut out = String::from(
        "rank,draw,n_layers,hidden_units,dropout,kernel_reg,recurrent_reg,initial_lr,val_accuracy,params,seed,diverged\n",
    );
    for (i, r) in results.iter().enumerate() {
        let h = &r.hyper;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            i + 1,
            r.draw,
            h.n_layers,
            h.hidden_units,
            h.dropout,
            h.kernel_reg,
            h.recurrent_reg,
            h.initial_lr,
            r.val_accuracy,
            r.parameter_count,
            r.seed,
            r.diverged
        );
    }
    out
}

pub fn write_leaderboard(results: &[TrialResult], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(LEADERBOARD_FILE);
    fs::write(&path, leaderboard_csv(results)).map_err(|e| Error::io(&path, e))
}
