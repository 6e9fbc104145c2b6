use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::binning::BinnedTrial;
use super::classes::ClassMap;
use crate::error::{Error, Result};

pub const DEFAULT_WINDOW: usize = 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Rest vs. grasp for every window.
    PhaseDetection,
    /// Object class for windows ending inside the hold region.
    Classification,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::PhaseDetection => "phase_detection",
            Task::Classification => "classification",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "phase_detection" | "phase" => Ok(Task::PhaseDetection),
            "classification" | "class" => Ok(Task::Classification),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Rest,
    Grasp,
    Class(usize),
}

impl Label {
    /// Output index used by the classifier: rest = 0, grasp = 1, class = its index.
    pub fn target(self) -> usize {
        match self {
            Label::Rest => 0,
            Label::Grasp => 1,
            Label::Class(c) => c,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Rest => f.write_str("rest"),
            Label::Grasp => f.write_str("grasp"),
            Label::Class(c) => write!(f, "{c}"),
        }
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rest" => Ok(Label::Rest),
            "grasp" => Ok(Label::Grasp),
            n => n
                .parse()
                .map(Label::Class)
                .map_err(|_| Error::malformed("label", format!("bad label `{n}`"))),
        }
    }
}

/// One fixed-length window of a binned trial with its label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceSample {
    /// channels × W counts, row-major.
    pub window: Vec<u32>,
    pub label: Label,
    pub trial_id: u32,
    pub end_bin: usize,
}

impl SequenceSample {
    pub fn target(&self) -> usize {
        self.label.target()
    }
}

/// Stride-1 sliding windows over a trial.
///
/// Phase detection emits every window; classification keeps only windows whose
/// last bin lies in the hold region, and nothing for trials of dropped objects.
pub fn make_sequences(
    binned: &BinnedTrial,
    window: usize,
    class_map: &ClassMap,
    task: Task,
) -> Result<Vec<SequenceSample>> {
    if window == 0 {
        return Err(Error::Config("window length must be at least 1".into()));
    }
    if binned.n_bins < window {
        return Err(Error::Data(format!(
            "window of {window} bins exceeds trial {} length of {} bins",
            binned.trial_id, binned.n_bins
        )));
    }
    let region = binned.hold_region();
    let class = class_map.class_of(binned.object_id);
    let ends = window - 1..binned.n_bins;
    let out = match task {
        Task::PhaseDetection => ends
            .map(|end_bin| SequenceSample {
                window: binned.window(end_bin, window),
                label: if region.contains(&end_bin) {
                    Label::Grasp
                } else {
                    Label::Rest
                },
                trial_id: binned.trial_id,
                end_bin,
            })
            .collect(),
        Task::Classification => match class {
            None => Vec::new(),
            Some(c) => ends
                .filter(|b| region.contains(b))
                .map(|end_bin| SequenceSample {
                    window: binned.window(end_bin, window),
                    label: Label::Class(c),
                    trial_id: binned.trial_id,
                    end_bin,
                })
                .collect(),
        },
    };
    Ok(out)
}
