use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::Serialize;

use super::adam::{adam_step, OptimizerState};
use super::schedule::{early_stop, lr_on_plateau, EpochRecord, TrainConfig, TrainHistory};
use crate::error::{Error, Result};
use crate::nn::{cross_entropy, save_checkpoint, BiLstmModel, ModelConfig, Mode, SequenceBatch};
use crate::pipeline::SequenceSample;
use crate::scalar::Scalar;
use crate::seed::{derive_seed, rng_from};

pub const HISTORY_FILE: &str = "history.csv";
pub const CHECKPOINT_FILE: &str = "best.blsm";
pub const RUN_CONFIG_FILE: &str = "config.json";

/// Sequences paired with integer targets.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelledSet<T> {
    pub batch: SequenceBatch<T>,
    pub labels: Vec<usize>,
}

impl<T: Scalar> LabelledSet<T> {
    pub fn from_samples(samples: &[SequenceSample], channels: usize, window: usize) -> Result<Self> {
        let batch = SequenceBatch::from_windows(channels, window, samples.iter().map(|s| s.window.as_slice()))?;
        Ok(LabelledSet {
            batch,
            labels: samples.iter().map(|s| s.target()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Copies the listed samples, in order, into a new set.
    pub fn gather(&self, indices: &[usize]) -> Self {
        let per = self.batch.channels * self.batch.steps;
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(self.batch.sample(i));
        }
        LabelledSet {
            batch: SequenceBatch {
                channels: self.batch.channels,
                steps: self.batch.steps,
                data,
            },
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Inference-mode loss (including the weight penalty), accuracy and
/// arg-max predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
}

pub fn evaluate<T: Scalar>(model: &BiLstmModel<T>, set: &LabelledSet<T>) -> Result<Evaluation> {
    let probs = model.forward(&set.batch, Mode::Infer)?;
    let loss = (cross_entropy(&probs, &set.labels) + model.penalty()).as_f64();
    let predictions: Vec<usize> = probs
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold(0, |b, (k, v)| if *v > row[b] { k } else { b })
        })
        .collect();
    let correct = predictions.iter().zip(&set.labels).filter(|(p, y)| p == y).count();
    Ok(Evaluation {
        loss,
        accuracy: if set.is_empty() { 0.0 } else { correct as f64 / set.len() as f64 },
        predictions,
    })
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    /// Weights from the epoch with the best validation accuracy.
    pub model: BiLstmModel<T>,
    pub history: TrainHistory,
    /// 1-based epoch of the returned weights.
    pub best_epoch: usize,
}

/// Mini-batch training with adaptive-moment updates, plateau rate halving and
/// early stopping on validation accuracy.
pub fn train<T: Scalar>(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train_set: &LabelledSet<T>,
    val_set: &LabelledSet<T>,
) -> Result<TrainOutcome<T>> {
    train_cfg.validate()?;
    model_cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Data("validation set is empty".into()));
    }
    let seed = train_cfg.seed;
    let mut model = BiLstmModel::<T>::new(model_cfg.clone(), derive_seed(seed, 0))?;
    let mut state = OptimizerState::new(&model.params, train_cfg.initial_lr);
    let mut history = TrainHistory::default();
    let mut best = (model.clone(), 0usize);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let shuffle_seed = derive_seed(seed, 1);
    let dropout_seed = derive_seed(seed, 2);

    for epoch in 1..=train_cfg.max_epochs {
        let started = Instant::now();
        let lr = lr_on_plateau(&history, train_cfg);
        order.shuffle(&mut rng_from(derive_seed(shuffle_seed, epoch as u64)));
        let epoch_seed = derive_seed(dropout_seed, epoch as u64);
        let mut loss_sum = 0.0;
        for (step, idx) in order.chunks(train_cfg.batch_size).enumerate() {
            let batch = train_set.gather(idx);
            let mode = Mode::Train {
                seed: derive_seed(epoch_seed, step as u64),
            };
            let (loss, grads) = model.backward(&batch.batch, &batch.labels, mode)?;
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("non-finite loss in epoch {epoch}")));
            }
            adam_step(&mut model.params, &grads, &mut state, lr)
                .map_err(|e| Error::Divergence(format!("epoch {epoch}: {e}")))?;
            loss_sum += loss.as_f64() * idx.len() as f64;
        }
        let val = evaluate(&model, val_set)?;
        if !val.loss.is_finite() {
            return Err(Error::Divergence(format!("non-finite validation loss in epoch {epoch}")));
        }
        let improved = history.best_val_acc().is_none_or(|b| val.accuracy > b);
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss: val.loss,
            val_acc: val.accuracy,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        });
        log::debug!(
            "epoch {epoch}: train_loss {:.4} val_loss {:.4} val_acc {:.4} lr {lr:e}",
            loss_sum / train_set.len() as f64,
            val.loss,
            val.accuracy
        );
        if improved {
            best = (model.clone(), epoch);
        }
        if early_stop(&history, train_cfg) {
            break;
        }
    }
    Ok(TrainOutcome {
        model: best.0,
        history,
        best_epoch: best.1,
    })
}

#[derive(Serialize)]
struct RunConfigEcho<'a> {
    model: &'a ModelConfig,
    train: &'a TrainConfig,
    best_epoch: usize,
}

/// Writes `history.csv`, `best.blsm` and `config.json` into `dir`.
pub fn save_run<T: Scalar>(outcome: &TrainOutcome<T>, train_cfg: &TrainConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(HISTORY_FILE);
    fs::write(&path, outcome.history.to_csv()).map_err(|e| Error::io(&path, e))?;
    save_checkpoint(&outcome.model, &dir.join(CHECKPOINT_FILE))?;
    let echo = RunConfigEcho {
        model: &outcome.model.config,
        train: train_cfg,
        best_epoch: outcome.best_epoch,
    };
    let path = dir.join(RUN_CONFIG_FILE);
    let json = serde_json::to_string_pretty(&echo).map_err(|e| Error::malformed(RUN_CONFIG_FILE, e.to_string()))?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}
