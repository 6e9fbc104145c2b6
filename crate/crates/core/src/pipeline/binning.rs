use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::session::{Phase, Trial};

pub const DEFAULT_BIN_WIDTH: f64 = 0.040;

/// Relative slack used when a time lands on a bin edge up to rounding error.
const EDGE_SLACK: f64 = 1e-9;

/// A trial discretised into fixed-width bins: a channels × n_bins count matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinnedTrial {
    pub trial_id: u32,
    pub object_id: u32,
    pub channels: usize,
    pub n_bins: usize,
    /// Row-major, `counts[c * n_bins + b]`.
    pub counts: Vec<u32>,
    pub phase_bins: BTreeMap<Phase, usize>,
    pub bin_width: f64,
}

impl BinnedTrial {
    #[inline]
    pub fn count(&self, channel: usize, bin: usize) -> u32 {
        self.counts[channel * self.n_bins + bin]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    /// All channels' counts at one bin.
    pub fn column(&self, bin: usize) -> Vec<u32> {
        (0..self.channels).map(|c| self.count(c, bin)).collect()
    }

    /// The `width` bins ending at `end_bin` (inclusive), channels × width row-major.
    pub fn window(&self, end_bin: usize, width: usize) -> Vec<u32> {
        debug_assert!(end_bin < self.n_bins && end_bin + 1 >= width);
        let start = end_bin + 1 - width;
        let mut out = Vec::with_capacity(self.channels * width);
        for c in 0..self.channels {
            let row = &self.counts[c * self.n_bins..(c + 1) * self.n_bins];
            out.extend_from_slice(&row[start..=end_bin]);
        }
        out
    }

    /// Bins whose windows carry the grasp/object label: from the hold mark up to
    /// (excluding) the end mark, or to the last bin when the end mark is absent.
    pub fn hold_region(&self) -> Range<usize> {
        let start = self.phase_bins.get(&Phase::Hold).copied().unwrap_or(self.n_bins);
        let end = self.phase_bins.get(&Phase::End).copied().unwrap_or(self.n_bins);
        start..end.max(start)
    }
}

/// Index of the half-open bin `[k·Δ, (k+1)·Δ)` containing `offset`.
/// Offsets within rounding error of an edge go to the right-hand bin.
pub fn bin_index(offset: f64, bin_width: f64) -> usize {
    let q = offset / bin_width;
    let r = q.round();
    let k = if (q - r).abs() <= EDGE_SLACK * r.abs().max(1.0) {
        r
    } else {
        q.floor()
    };
    k.max(0.0) as usize
}

/// Number of bins covering a duration, keeping a trailing partial bin.
pub fn bin_count(duration: f64, bin_width: f64) -> usize {
    let q = duration / bin_width;
    let r = q.round();
    if (q - r).abs() <= EDGE_SLACK * r.abs().max(1.0) {
        r as usize
    } else {
        q.ceil() as usize
    }
}

pub fn bin_trial(trial: &Trial, bin_width: f64) -> Result<BinnedTrial> {
    if !(bin_width > 0.0 && bin_width.is_finite()) {
        return Err(Error::Config(format!("bin width must be positive, got {bin_width}")));
    }
    if !(trial.t_end > trial.t_start) {
        return Err(Error::Data(format!("trial {} has empty time span", trial.trial_id)));
    }
    let n_bins = bin_count(trial.duration(), bin_width).max(1);
    let channels = trial.spikes.len();
    let mut counts = vec![0u32; channels * n_bins];
    for (c, times) in trial.spikes.iter().enumerate() {
        for &t in times {
            if t < trial.t_start || t >= trial.t_end {
                return Err(Error::SpikeOutOfBounds {
                    trial_id: trial.trial_id,
                    channel: c,
                    time: t,
                });
            }
            let b = bin_index(t - trial.t_start, bin_width).min(n_bins - 1);
            counts[c * n_bins + b] += 1;
        }
    }
    let phase_bins = trial
        .phases
        .iter()
        .map(|m| {
            let b = bin_index(m.time - trial.t_start, bin_width).min(n_bins - 1);
            (m.phase, b)
        })
        .collect();
    Ok(BinnedTrial {
        trial_id: trial.trial_id,
        object_id: trial.object_id,
        channels,
        n_bins,
        counts,
        phase_bins,
        bin_width,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::{PhaseMark, PhaseMarks};
    use proptest::prelude::*;

    fn trial(duration: f64, spikes: Vec<Vec<f64>>) -> Trial {
        Trial {
            trial_id: 3,
            object_id: 1,
            t_start: 0.0,
            t_end: duration,
            phases: PhaseMarks(vec![PhaseMark {
                phase: Phase::Hold,
                time: duration / 2.0,
            }]),
            spikes,
        }
    }

    #[test]
    fn empty_trial_gives_all_zero_matrix() {
        let b = bin_trial(&trial(0.4, vec![vec![]]), DEFAULT_BIN_WIDTH).unwrap();
        assert_eq!(b.n_bins, 10);
        assert!(b.counts.iter().all(|&c| c == 0));
    }

    #[test]
    fn hand_counted_half_open_bins() {
        let b = bin_trial(&trial(0.080, vec![vec![0.010, 0.030, 0.050]]), 0.040).unwrap();
        assert_eq!(b.counts, vec![2, 1]);
    }

    #[test]
    fn spike_on_edge_goes_right() {
        let b = bin_trial(&trial(0.2, vec![vec![0.04, 0.12]]), 0.04).unwrap();
        assert_eq!(b.column(1), vec![1]);
        assert_eq!(b.column(3), vec![1]);
    }

    #[test]
    fn partial_last_bin_is_kept() {
        let b = bin_trial(&trial(0.1, vec![vec![0.095]]), 0.04).unwrap();
        assert_eq!(b.n_bins, 3);
        assert_eq!(b.count(0, 2), 1);
    }

    #[test]
    fn phase_bins_use_floor() {
        let b = bin_trial(&trial(0.4, vec![vec![]]), 0.04).unwrap();
        assert_eq!(b.phase_bins[&Phase::Hold], 5);
    }

    #[test]
    fn rejects_bad_bin_width() {
        assert!(bin_trial(&trial(0.4, vec![vec![]]), 0.0).is_err());
    }

    proptest! {
        #[test]
        fn count_is_preserved(
            duration in 0.05f64..5.0,
            width in 0.005f64..0.2,
            fracs in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 0..40), 1..6),
        ) {
            let spikes: Vec<Vec<f64>> = fracs
                .into_iter()
                .map(|mut f| {
                    f.sort_by(f64::total_cmp);
                    f.into_iter().map(|u| u * duration).filter(|&t| t < duration).collect()
                })
                .collect();
            let t = trial(duration, spikes);
            let b = bin_trial(&t, width).unwrap();
            prop_assert_eq!(b.total() as usize, t.spike_count());
            prop_assert_eq!(b.n_bins, bin_count(duration, width));
        }
    }
}
