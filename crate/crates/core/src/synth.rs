//! Seeded synthetic recording sessions with Poisson spike trains.
//!
//! Every channel fires at a baseline rate outside the cue..hold span. From cue
//! onwards the rate carries a class signature built from a shape-group tuning
//! vector plus a smaller size tuning vector, so classes differing only in size
//! are the most alike. A subset of channels also jumps during the hold phase,
//! which makes the grasp phase detectable independently of the object.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from};
use crate::session::{CatalogEntry, ObjectCatalog, Phase, PhaseMark, PhaseMarks, Session, Trial};

pub const SYNTH_CONFIG_FILE: &str = "synth_config.json";

/// Mean duration of each trial segment, in seconds. `lead` precedes the
/// fixation mark and `tail` follows the end mark.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseDurations {
    pub lead: f64,
    pub fixation: f64,
    pub cue: f64,
    pub planning: f64,
    pub movement: f64,
    pub hold: f64,
    pub tail: f64,
}

impl PhaseDurations {
    fn as_array(&self) -> [f64; 7] {
        [
            self.lead,
            self.fixation,
            self.cue,
            self.planning,
            self.movement,
            self.hold,
            self.tail,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub session_id: String,
    pub channels: usize,
    pub n_shape_groups: usize,
    pub sizes_per_group: usize,
    pub trials_per_class: usize,
    /// Hz.
    pub baseline_rate: f64,
    /// Peak extra rate (Hz) of a channel fully tuned to a shape group.
    pub shape_gain: f64,
    /// Peak rate change (Hz) per size step.
    pub size_gain: f64,
    /// Share of the class signature expressed in cue, planning, movement, hold.
    pub phase_profile: [f64; 4],
    /// Fraction of channels that fire harder during hold, whatever the object.
    pub grasp_channel_fraction: f64,
    /// Extra rate (Hz) of those channels during hold.
    pub grasp_gain: f64,
    /// Standard deviation of the per-trial, per-channel log rate gain.
    pub trial_gain_jitter: f64,
    pub durations: PhaseDurations,
    /// Each segment lasts mean·(1 + U(−jitter, jitter)).
    pub duration_jitter: f64,
    /// Pause between consecutive trials, in seconds.
    pub inter_trial_gap: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        default_benchmark_config()
    }
}

/// 60 channels, 5 shape groups × 2 sizes, 30 trials per class, 5 Hz baseline.
/// Segment lengths put roughly ten rest windows next to every grasp window.
pub fn default_benchmark_config() -> SynthConfig {
    SynthConfig {
        session_id: "synthetic".into(),
        channels: 60,
        n_shape_groups: 5,
        sizes_per_group: 2,
        trials_per_class: 30,
        baseline_rate: 5.0,
        shape_gain: 20.0,
        size_gain: 9.0,
        phase_profile: [0.3, 0.5, 0.8, 1.0],
        grasp_channel_fraction: 0.25,
        grasp_gain: 25.0,
        trial_gain_jitter: 0.5,
        durations: PhaseDurations {
            lead: 0.3,
            fixation: 0.8,
            cue: 0.5,
            planning: 1.0,
            movement: 0.5,
            hold: 0.4,
            tail: 1.4,
        },
        duration_jitter: 0.2,
        inter_trial_gap: 0.5,
        seed: 0,
    }
}

impl SynthConfig {
    pub fn n_classes(&self) -> usize {
        self.n_shape_groups * self.sizes_per_group
    }

    pub fn n_trials(&self) -> usize {
        self.n_classes() * self.trials_per_class
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.channels == 0 || self.n_shape_groups == 0 || self.sizes_per_group == 0 {
            return fail("channels, shape groups and sizes must be positive".into());
        }
        if self.trials_per_class == 0 {
            return fail("trials_per_class must be positive".into());
        }
        let rates = [self.baseline_rate, self.shape_gain, self.size_gain, self.grasp_gain];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return fail("rates and gains must be finite and non-negative".into());
        }
        if self.phase_profile.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return fail("phase_profile entries must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.grasp_channel_fraction) {
            return fail("grasp_channel_fraction must lie in [0, 1]".into());
        }
        if !(self.trial_gain_jitter >= 0.0 && self.trial_gain_jitter.is_finite()) {
            return fail("trial_gain_jitter must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.duration_jitter) {
            return fail("duration_jitter must lie in [0, 1)".into());
        }
        if self.durations.as_array().iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return fail("phase durations must be positive".into());
        }
        if !(self.inter_trial_gap >= 0.0 && self.inter_trial_gap.is_finite()) {
            return fail("inter_trial_gap must be non-negative".into());
        }
        Ok(())
    }
}

/// Firing rate (Hz) of every (class, channel, phase) before per-trial gains.
#[derive(Clone, Debug, PartialEq)]
pub struct RateProfile {
    pub n_classes: usize,
    pub channels: usize,
    /// Index `(class * channels + channel) * 6 + phase`, phases in task order.
    pub rates: Vec<f64>,
}

impl RateProfile {
    pub fn rate(&self, class: usize, channel: usize, phase: Phase) -> f64 {
        self.rates[(class * self.channels + channel) * Phase::ALL.len() + phase_slot(phase)]
    }

    /// All rates of one class, channel-major.
    pub fn class_vector(&self, class: usize) -> &[f64] {
        let n = self.channels * Phase::ALL.len();
        &self.rates[class * n..(class + 1) * n]
    }
}

fn phase_slot(phase: Phase) -> usize {
    Phase::ALL.iter().position(|&p| p == phase).expect("known phase")
}

/// Class order is shape-major, size-minor: class = group · sizes + size.
pub fn rate_profile(cfg: &SynthConfig) -> RateProfile {
    let mut rng = rng_from(derive_seed(cfg.seed, 0));
    let ch = cfg.channels;
    // shape tuning in [0, 1], skewed so each group drives a few channels hard
    let shape: Vec<Vec<f64>> = (0..cfg.n_shape_groups)
        .map(|_| (0..ch).map(|_| rng.random::<f64>().powi(3)).collect())
        .collect();
    let size: Vec<Vec<f64>> = (0..cfg.n_shape_groups)
        .map(|_| (0..ch).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let mut order: Vec<usize> = (0..ch).collect();
    order.shuffle(&mut rng);
    let n_grasp = (cfg.grasp_channel_fraction * ch as f64).round() as usize;
    let mut grasp = vec![false; ch];
    for &c in &order[..n_grasp] {
        grasp[c] = true;
    }

    let centre = (cfg.sizes_per_group as f64 - 1.0) / 2.0;
    let mut rates = Vec::with_capacity(cfg.n_classes() * ch * 6);
    for g in 0..cfg.n_shape_groups {
        for s in 0..cfg.sizes_per_group {
            let step = s as f64 - centre;
            for c in 0..ch {
                let signature = cfg.shape_gain * shape[g][c] + cfg.size_gain * step * size[g][c];
                for phase in Phase::ALL {
                    let share = match phase {
                        Phase::Cue => cfg.phase_profile[0],
                        Phase::Planning => cfg.phase_profile[1],
                        Phase::Movement => cfg.phase_profile[2],
                        Phase::Hold => cfg.phase_profile[3],
                        Phase::Fixation | Phase::End => 0.0,
                    };
                    let mut r = cfg.baseline_rate + share * signature;
                    if phase == Phase::Hold && grasp[c] {
                        r += cfg.grasp_gain;
                    }
                    rates.push(r.max(0.0));
                }
            }
        }
    }
    RateProfile {
        n_classes: cfg.n_classes(),
        channels: ch,
        rates,
    }
}

/// Homogeneous Poisson spike times on `[start, end)`.
fn poisson_spikes<R: Rng>(rng: &mut R, rate: f64, start: f64, end: f64, out: &mut Vec<f64>) {
    if rate <= 0.0 {
        return;
    }
    let gap = Exp::new(rate).expect("positive rate");
    let mut t = start + gap.sample(rng);
    while t < end {
        out.push(t);
        t += gap.sample(rng);
    }
}

fn catalog(cfg: &SynthConfig) -> ObjectCatalog {
    let mut entries = Vec::with_capacity(cfg.n_classes());
    for g in 0..cfg.n_shape_groups {
        for s in 0..cfg.sizes_per_group {
            entries.push(CatalogEntry {
                object_id: (g * cfg.sizes_per_group + s + 1) as u32,
                shape_group: g as u32,
                size_index: s as u32,
                duplicate_of: None,
            });
        }
    }
    ObjectCatalog::new(entries)
}

/// Generates a full session. Objects are presented in blocks, each block a
/// fresh random permutation of all objects.
pub fn generate_session(cfg: &SynthConfig) -> Result<Session> {
    cfg.validate()?;
    let profile = rate_profile(cfg);
    let k = cfg.n_classes();
    let mut order_rng = rng_from(derive_seed(cfg.seed, 1));
    let mut sequence = Vec::with_capacity(cfg.n_trials());
    for _ in 0..cfg.trials_per_class {
        let mut block: Vec<usize> = (0..k).collect();
        block.shuffle(&mut order_rng);
        sequence.extend(block);
    }

    let trial_seed = derive_seed(cfg.seed, 2);
    let means = cfg.durations.as_array();
    let mut trials = Vec::with_capacity(sequence.len());
    let mut clock = 0.0;
    for (idx, &class) in sequence.iter().enumerate() {
        let mut rng = rng_from(derive_seed(trial_seed, idx as u64));
        let durations: Vec<f64> = means
            .iter()
            .map(|m| m * (1.0 + cfg.duration_jitter * rng.random_range(-1.0..1.0)))
            .collect();
        // boundaries[0] = t_start, [1..=6] = phase marks, [7] = t_end
        let mut bounds = vec![clock];
        for d in &durations {
            bounds.push(bounds.last().unwrap() + d);
        }
        let gains: Vec<f64> = (0..cfg.channels)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                (cfg.trial_gain_jitter * z - cfg.trial_gain_jitter.powi(2) / 2.0).exp()
            })
            .collect();
        let mut spikes = Vec::with_capacity(cfg.channels);
        for (c, gain) in gains.iter().enumerate() {
            let mut times = Vec::new();
            poisson_spikes(&mut rng, cfg.baseline_rate * gain, bounds[0], bounds[1], &mut times);
            for (p, phase) in Phase::ALL.into_iter().enumerate() {
                let rate = profile.rate(class, c, phase) * gain;
                poisson_spikes(&mut rng, rate, bounds[p + 1], bounds[p + 2], &mut times);
            }
            spikes.push(times);
        }
        let phases = Phase::ALL
            .into_iter()
            .enumerate()
            .map(|(p, phase)| PhaseMark {
                phase,
                time: bounds[p + 1],
            })
            .collect();
        trials.push(Trial {
            trial_id: idx as u32,
            object_id: (class + 1) as u32,
            t_start: bounds[0],
            t_end: bounds[7],
            phases: PhaseMarks::new(phases),
            spikes,
        });
        clock = bounds[7] + cfg.inter_trial_gap;
    }
    Ok(Session {
        session_id: cfg.session_id.clone(),
        channel_count: cfg.channels,
        trials,
        catalog: catalog(cfg),
    })
}

pub fn write_synth_config(cfg: &SynthConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(SYNTH_CONFIG_FILE);
    let json = serde_json::to_string_pretty(cfg).map_err(|e| Error::malformed(SYNTH_CONFIG_FILE, e.to_string()))?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}
