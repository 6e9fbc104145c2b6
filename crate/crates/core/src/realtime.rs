//! Simulated on-line decoding: bins arrive one at a time, a ring buffer keeps
//! the last W of them, and a phase model followed by a class model decides
//! at every step.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{phase_rates, ConfusionMatrix};
use crate::nn::{BiLstmModel, Mode, SequenceBatch};
use crate::pipeline::{bin_trial, BinnedTrial};
use crate::scalar::Scalar;
use crate::session::Session;

pub const STREAM_REPORT_FILE: &str = "stream_report.json";
pub const DECISIONS_FILE: &str = "decisions.csv";

pub const REST: usize = 0;
pub const GRASP: usize = 1;

/// Where in the stream a window was taken.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecodeContext {
    pub trial_id: u32,
    pub end_bin: usize,
}

/// Anything that maps one channel-major count window to a class index.
pub trait WindowDecoder {
    /// `(channels, window length)` expected by `decode`.
    fn input_dims(&self) -> (usize, usize);
    fn decode(&self, ctx: DecodeContext, window: &[u32]) -> Result<usize>;
}

impl<T: Scalar> WindowDecoder for BiLstmModel<T> {
    fn input_dims(&self) -> (usize, usize) {
        (self.config.input_channels, self.config.window_len)
    }

    fn decode(&self, _ctx: DecodeContext, window: &[u32]) -> Result<usize> {
        let batch = SequenceBatch::from_windows(self.config.input_channels, self.config.window_len, [window])?;
        let probs = self.forward(&batch, Mode::Infer)?;
        let row = &probs[0];
        Ok((0..row.len()).fold(0, |b, k| if row[k] > row[b] { k } else { b }))
    }
}

/// Last `window` bin columns of the current trial.
#[derive(Clone, Debug)]
pub struct StreamState {
    channels: usize,
    window: usize,
    buffer: VecDeque<Vec<u32>>,
    /// Bins pushed so far.
    pub bins_seen: usize,
}

impl StreamState {
    pub fn new(channels: usize, window: usize) -> Self {
        StreamState {
            channels,
            window,
            buffer: VecDeque::with_capacity(window),
            bins_seen: 0,
        }
    }

    pub fn warmed_up(&self) -> bool {
        self.bins_seen >= self.window
    }

    /// Adds one bin column; once warmed up returns the current window,
    /// channel-major.
    pub fn push(&mut self, column: Vec<u32>) -> Option<Vec<u32>> {
        debug_assert_eq!(column.len(), self.channels);
        if self.buffer.len() == self.window {
            self.buffer.pop_front();
        }
        self.buffer.push_back(column);
        self.bins_seen += 1;
        if !self.warmed_up() {
            return None;
        }
        let mut out = vec![0; self.channels * self.window];
        for (t, col) in self.buffer.iter().enumerate() {
            for (c, &v) in col.iter().enumerate() {
                out[c * self.window + t] = v;
            }
        }
        Some(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub trial_id: u32,
    pub bin: usize,
    /// True when the bin lies in the hold region.
    pub truth_grasp: bool,
    pub phase: usize,
    /// Object class, decided only on grasp steps.
    pub class: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialLatency {
    pub trial_id: u32,
    /// Bins from hold onset to the first grasp decision; `None` when grasp
    /// was never reported at or after onset.
    pub latency_bins: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamReport {
    pub window: usize,
    pub decisions: Vec<Decision>,
    /// Rows: truth rest/grasp; columns: decided rest/grasp.
    pub confusion: ConfusionMatrix,
    pub false_grasp_rate: f64,
    pub false_rest_rate: f64,
    pub latencies: Vec<TrialLatency>,
    /// Trials shorter than the window; they produce no decisions.
    pub skipped_trials: Vec<u32>,
    /// Median wall-clock time of one decode step, seconds.
    pub median_decode_seconds: f64,
}

/// Deterministic part of a stream report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamMetrics {
    pub window: usize,
    pub steps: usize,
    pub confusion: ConfusionMatrix,
    pub false_grasp_rate: f64,
    pub false_rest_rate: f64,
    pub detected_trials: usize,
    pub undetected_trials: usize,
    pub mean_latency_bins: Option<f64>,
    pub skipped_trials: usize,
}

impl StreamReport {
    pub fn metrics(&self) -> StreamMetrics {
        let detected: Vec<usize> = self.latencies.iter().filter_map(|l| l.latency_bins).collect();
        StreamMetrics {
            window: self.window,
            steps: self.decisions.len(),
            confusion: self.confusion.clone(),
            false_grasp_rate: self.false_grasp_rate,
            false_rest_rate: self.false_rest_rate,
            detected_trials: detected.len(),
            undetected_trials: self.latencies.len() - detected.len(),
            mean_latency_bins: if detected.is_empty() {
                None
            } else {
                Some(detected.iter().sum::<usize>() as f64 / detected.len() as f64)
            },
            skipped_trials: self.skipped_trials.len(),
        }
    }

    pub fn decisions_csv(&self) -> String {
        let mut out = String::from("trial_id,bin,truth,phase_decision,class_decision\n");
        let name = |g: bool| if g { "grasp" } else { "rest" };
        for d in &self.decisions {
            let class = d.class.map(|c| c.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                d.trial_id,
                d.bin,
                name(d.truth_grasp),
                name(d.phase == GRASP),
                class
            );
        }
        out
    }
}

fn check_dims(decoder: &dyn WindowDecoder, channels: usize, window: usize, what: &str) -> Result<()> {
    let dims = decoder.input_dims();
    if dims != (channels, window) {
        return Err(Error::Dimension(format!(
            "{what} expects {} channels × {} bins, stream has {channels} × {window}",
            dims.0, dims.1
        )));
    }
    Ok(())
}

/// Streams every trial bin by bin through the phase model, and through the
/// class model on steps judged to be grasp.
pub fn stream_decode(
    trials: &[BinnedTrial],
    phase_model: &dyn WindowDecoder,
    class_model: Option<&dyn WindowDecoder>,
    window: usize,
) -> Result<StreamReport> {
    if window == 0 {
        return Err(Error::Config("window length must be at least 1".into()));
    }
    let mut decisions = Vec::new();
    let mut latencies = Vec::new();
    let mut skipped = Vec::new();
    let mut times = Vec::new();
    let mut cm = ConfusionMatrix::zeros(2);
    for trial in trials {
        check_dims(phase_model, trial.channels, window, "phase model")?;
        if let Some(m) = class_model {
            check_dims(m, trial.channels, window, "class model")?;
        }
        if trial.n_bins < window {
            skipped.push(trial.trial_id);
            continue;
        }
        let region = trial.hold_region();
        let mut state = StreamState::new(trial.channels, window);
        let mut first_grasp = None;
        for bin in 0..trial.n_bins {
            let Some(w) = state.push(trial.column(bin)) else {
                continue;
            };
            let ctx = DecodeContext {
                trial_id: trial.trial_id,
                end_bin: bin,
            };
            let started = Instant::now();
            let phase = phase_model.decode(ctx, &w)?;
            if phase > GRASP {
                return Err(Error::Dimension(format!("phase model returned class {phase}")));
            }
            let class = match (phase, class_model) {
                (GRASP, Some(m)) => Some(m.decode(ctx, &w)?),
                _ => None,
            };
            times.push(started.elapsed().as_secs_f64());
            let truth_grasp = region.contains(&bin);
            cm.counts[truth_grasp as usize][phase] += 1;
            if phase == GRASP && bin >= region.start && first_grasp.is_none() {
                first_grasp = Some(bin - region.start);
            }
            decisions.push(Decision {
                trial_id: trial.trial_id,
                bin,
                truth_grasp,
                phase,
                class,
            });
        }
        latencies.push(TrialLatency {
            trial_id: trial.trial_id,
            latency_bins: first_grasp,
        });
    }
    let (false_grasp_rate, false_rest_rate) = if cm.total() == 0 {
        (0.0, 0.0)
    } else {
        phase_rates(&cm)?
    };
    times.sort_by(f64::total_cmp);
    let median_decode_seconds = match times.len() {
        0 => 0.0,
        n if n % 2 == 1 => times[n / 2],
        n => (times[n / 2 - 1] + times[n / 2]) / 2.0,
    };
    Ok(StreamReport {
        window,
        decisions,
        confusion: cm,
        false_grasp_rate,
        false_rest_rate,
        latencies,
        skipped_trials: skipped,
        median_decode_seconds,
    })
}

/// Bins every trial of `session` (optionally only those accepted by
/// `keep`) and streams them.
pub fn replay_session(
    session: &Session,
    bin_width: f64,
    phase_model: &dyn WindowDecoder,
    class_model: Option<&dyn WindowDecoder>,
    window: usize,
    keep: &dyn Fn(u32) -> bool,
) -> Result<StreamReport> {
    let binned = session
        .trials
        .iter()
        .filter(|t| keep(t.trial_id))
        .map(|t| bin_trial(t, bin_width))
        .collect::<Result<Vec<_>>>()?;
    stream_decode(&binned, phase_model, class_model, window)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ring_buffer_emits_channel_major_windows_after_warm_up() {
        let mut s = StreamState::new(2, 3);
        assert_eq!(s.push(vec![1, 10]), None);
        assert_eq!(s.push(vec![2, 20]), None);
        assert!(!s.warmed_up());
        assert_eq!(s.push(vec![3, 30]), Some(vec![1, 2, 3, 10, 20, 30]));
        assert_eq!(s.push(vec![4, 40]), Some(vec![2, 3, 4, 20, 30, 40]));
        assert_eq!(s.bins_seen, 4);
    }
}
