use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Options of the training loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub initial_lr: f64,
    /// Epochs without validation-loss improvement before the rate is cut.
    pub plateau_patience: usize,
    pub lr_factor: f64,
    /// Epochs without validation-accuracy improvement before stopping.
    pub early_stop_patience: usize,
    /// Relative improvement in validation loss that resets the plateau counter.
    pub min_delta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            max_epochs: 100,
            initial_lr: 1e-3,
            plateau_patience: 10,
            lr_factor: 0.5,
            early_stop_patience: 15,
            min_delta: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be at least 1");
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return fail("initial_lr must be positive");
        }
        if !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return fail("lr_factor must lie in (0, 1)");
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return fail("patience values must be at least 1");
        }
        if !(0.0..1.0).contains(&self.min_delta) {
            return fail("min_delta must lie in [0, 1)");
        }
        Ok(())
    }
}

/// One row of `history.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// Index of the first epoch reaching the best validation accuracy.
    pub fn best_index(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, e) in self.epochs.iter().enumerate() {
            if best.is_none_or(|b| e.val_acc > self.epochs[b].val_acc) {
                best = Some(i);
            }
        }
        best
    }

    pub fn best_val_acc(&self) -> Option<f64> {
        self.best_index().map(|i| self.epochs[i].val_acc)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_acc,lr,seconds\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{},{:.3}\n",
                e.epoch, e.train_loss, e.val_loss, e.val_acc, e.lr, e.seconds
            ));
        }
        out
    }
}

/// Learning rate for the epoch after `history`.
///
/// Replays the history: the rate is multiplied by `lr_factor` once validation
/// loss has failed to improve on its best by more than `min_delta` (relative)
/// for `plateau_patience` consecutive epochs; the counter then restarts.
pub fn lr_on_plateau(history: &TrainHistory, config: &TrainConfig) -> f64 {
    let mut lr = config.initial_lr;
    let mut best = f64::INFINITY;
    let mut wait = 0;
    for e in &history.epochs {
        if best.is_infinite() || e.val_loss < best * (1.0 - config.min_delta) {
            best = e.val_loss;
            wait = 0;
        } else {
            wait += 1;
            if wait >= config.plateau_patience {
                lr *= config.lr_factor;
                wait = 0;
            }
        }
    }
    lr
}

/// True once validation accuracy has gone `early_stop_patience` epochs
/// without exceeding its best.
pub fn early_stop(history: &TrainHistory, config: &TrainConfig) -> bool {
    match history.best_index() {
        Some(b) => history.len() - 1 - b >= config.early_stop_patience,
        None => false,
    }
}
