//! End-to-end pre-processing: session → binned trials → class map → trial-level
//! split → labelled windows for both learning tasks, plus the on-disk bundle.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::binning::{bin_trial, DEFAULT_BIN_WIDTH};
use super::classes::{build_class_map, ClassMap, DEFAULT_MIN_TRIALS};
use super::sequences::{make_sequences, Label, SequenceSample, Task, DEFAULT_WINDOW};
use super::split::{apportion, stratified_split, Partition, SplitAssignment, SplitFractions};
use crate::error::{Error, Result};
use crate::seed::rng_from;
use crate::session::Session;

pub const SAMPLES_FILE: &str = "samples.bin";
pub const INDEX_FILE: &str = "index.csv";
pub const DATASET_MANIFEST_FILE: &str = "manifest.json";
const SAMPLES_MAGIC: &[u8; 4] = b"SPKD";
const SAMPLES_VERSION: u32 = 1;
const INDEX_HEADER: &str = "sample_id,partition,task,label,trial_id,end_bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub bin_width: f64,
    pub window: usize,
    pub fractions: SplitFractions,
    pub min_trials: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            bin_width: DEFAULT_BIN_WIDTH,
            window: DEFAULT_WINDOW,
            fractions: SplitFractions::default(),
            min_trials: DEFAULT_MIN_TRIALS,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Partitioned<T> {
    pub train: T,
    pub val: T,
    pub test: T,
}

impl<T> Partitioned<T> {
    pub fn get(&self, p: Partition) -> &T {
        match p {
            Partition::Train => &self.train,
            Partition::Val => &self.val,
            Partition::Test => &self.test,
        }
    }

    pub fn get_mut(&mut self, p: Partition) -> &mut T {
        match p {
            Partition::Train => &mut self.train,
            Partition::Val => &mut self.val,
            Partition::Test => &mut self.test,
        }
    }
}

pub type SampleSets = Partitioned<Vec<SequenceSample>>;

#[derive(Clone, Debug, PartialEq)]
pub struct Datasets {
    pub config: PipelineConfig,
    pub channels: usize,
    pub class_map: ClassMap,
    pub split: SplitAssignment,
    /// Class index of every retained trial.
    pub trial_classes: BTreeMap<u32, usize>,
    pub phase_detection: SampleSets,
    pub classification: SampleSets,
}

impl Datasets {
    pub fn task(&self, task: Task) -> &SampleSets {
        match task {
            Task::PhaseDetection => &self.phase_detection,
            Task::Classification => &self.classification,
        }
    }

    /// Number of classifier outputs for a task.
    pub fn n_outputs(&self, task: Task) -> usize {
        match task {
            Task::PhaseDetection => 2,
            Task::Classification => self.class_map.n_classes(),
        }
    }

    pub fn manifest(&self) -> DatasetManifest {
        let mut classification: BTreeMap<usize, Partitioned<usize>> = (0..self.class_map.n_classes())
            .map(|c| (c, Partitioned::default()))
            .collect();
        let mut trials = classification.clone();
        let mut phase = BTreeMap::from([
            ("rest".to_string(), Partitioned::default()),
            ("grasp".to_string(), Partitioned::default()),
        ]);
        for p in Partition::ALL {
            for s in self.classification.get(p) {
                *classification.entry(s.target()).or_default().get_mut(p) += 1;
            }
            for s in self.phase_detection.get(p) {
                *phase.entry(s.label.to_string()).or_default().get_mut(p) += 1;
            }
        }
        for (&trial_id, &p) in &self.split.partitions {
            if let Some(&c) = self.trial_classes.get(&trial_id) {
                *trials.entry(c).or_default().get_mut(p) += 1;
            }
        }
        DatasetManifest {
            format_version: SAMPLES_VERSION,
            config: self.config.clone(),
            channels: self.channels,
            class_map: self.class_map.clone(),
            split: self.split.clone(),
            trial_classes: self.trial_classes.clone(),
            counts: DatasetCounts {
                trials_per_class: trials,
                classification,
                phase_detection: phase,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetCounts {
    /// Retained trials per class per partition.
    pub trials_per_class: BTreeMap<usize, Partitioned<usize>>,
    /// Classification windows per class per partition.
    pub classification: BTreeMap<usize, Partitioned<usize>>,
    /// Phase-detection windows per label per partition.
    pub phase_detection: BTreeMap<String, Partitioned<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub config: PipelineConfig,
    pub channels: usize,
    pub class_map: ClassMap,
    pub split: SplitAssignment,
    pub trial_classes: BTreeMap<u32, usize>,
    pub counts: DatasetCounts,
}

/// Runs the whole pre-processing chain. Windows inherit the partition of their
/// trial, so no trial contributes to more than one partition.
pub fn assemble_datasets(session: &Session, config: &PipelineConfig) -> Result<Datasets> {
    config.fractions.validate()?;
    if config.window == 0 {
        return Err(Error::Config("window length must be at least 1".into()));
    }
    let class_map = build_class_map(session, config.min_trials)?;
    let split = stratified_split(session, &class_map, config.fractions, config.seed)?;

    let mut trial_classes = BTreeMap::new();
    let mut phase_detection = SampleSets::default();
    let mut classification = SampleSets::default();
    for trial in &session.trials {
        let Some(class) = class_map.class_of(trial.object_id) else {
            continue;
        };
        let partition = split
            .partition_of(trial.trial_id)
            .ok_or_else(|| Error::Data(format!("trial {} missing from split", trial.trial_id)))?;
        trial_classes.insert(trial.trial_id, class);
        let binned = bin_trial(trial, config.bin_width)?;
        phase_detection.get_mut(partition).extend(make_sequences(
            &binned,
            config.window,
            &class_map,
            Task::PhaseDetection,
        )?);
        classification.get_mut(partition).extend(make_sequences(
            &binned,
            config.window,
            &class_map,
            Task::Classification,
        )?);
    }
    Ok(Datasets {
        config: config.clone(),
        channels: session.channel_count,
        class_map,
        split,
        trial_classes,
        phase_detection,
        classification,
    })
}

/// Re-splits pooled samples window by window, ignoring trial membership,
/// stratified by label. Overlapping windows of one trial end up on both sides
/// of the split; this exists to measure how much that inflates test scores.
pub fn sequence_level_split(sets: &SampleSets, fractions: &SplitFractions, seed: u64) -> Result<SampleSets> {
    fractions.validate()?;
    let mut by_label: BTreeMap<usize, Vec<&SequenceSample>> = BTreeMap::new();
    for p in Partition::ALL {
        for s in sets.get(p) {
            by_label.entry(s.target()).or_default().push(s);
        }
    }
    let mut rng = rng_from(seed);
    let mut out = SampleSets::default();
    for (_, mut samples) in by_label {
        samples.shuffle(&mut rng);
        let counts = apportion(samples.len(), fractions);
        let mut it = samples.into_iter();
        for p in Partition::ALL {
            out.get_mut(p).extend(it.by_ref().take(counts[p.index()]).cloned());
        }
    }
    Ok(out)
}

/// Writes `samples.bin`, `index.csv` and `manifest.json` into `dir`.
pub fn write_bundle(datasets: &Datasets, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let window = datasets.config.window;

    let bin_path = dir.join(SAMPLES_FILE);
    let idx_path = dir.join(INDEX_FILE);
    let bin = fs::File::create(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let idx = fs::File::create(&idx_path).map_err(|e| Error::io(&idx_path, e))?;
    let mut bin = BufWriter::new(bin);
    let mut idx = BufWriter::new(idx);

    let mut header = Vec::with_capacity(16);
    header.extend_from_slice(SAMPLES_MAGIC);
    header.extend_from_slice(&SAMPLES_VERSION.to_le_bytes());
    header.extend_from_slice(&(datasets.channels as u32).to_le_bytes());
    header.extend_from_slice(&(window as u32).to_le_bytes());
    bin.write_all(&header).map_err(|e| Error::io(&bin_path, e))?;
    writeln!(idx, "{INDEX_HEADER}").map_err(|e| Error::io(&idx_path, e))?;

    let mut sample_id = 0usize;
    for task in [Task::PhaseDetection, Task::Classification] {
        for p in Partition::ALL {
            for s in datasets.task(task).get(p) {
                if s.window.len() != datasets.channels * window {
                    return Err(Error::Dimension(format!(
                        "sample of trial {} has {} counts, expected {}",
                        s.trial_id,
                        s.window.len(),
                        datasets.channels * window
                    )));
                }
                for &c in &s.window {
                    bin.write_all(&c.to_le_bytes()).map_err(|e| Error::io(&bin_path, e))?;
                }
                writeln!(idx, "{sample_id},{p},{task},{},{},{}", s.label, s.trial_id, s.end_bin)
                    .map_err(|e| Error::io(&idx_path, e))?;
                sample_id += 1;
            }
        }
    }
    bin.flush().map_err(|e| Error::io(&bin_path, e))?;
    idx.flush().map_err(|e| Error::io(&idx_path, e))?;

    let path = dir.join(DATASET_MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&datasets.manifest())
        .map_err(|e| Error::malformed(DATASET_MANIFEST_FILE, e.to_string()))?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(DATASET_MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::malformed(DATASET_MANIFEST_FILE, e.to_string()))
}

/// Reads a bundle written by [`write_bundle`].
pub fn read_bundle(dir: &Path) -> Result<Datasets> {
    let manifest = read_manifest(dir)?;

    let bin_path = dir.join(SAMPLES_FILE);
    let mut bin = BufReader::new(fs::File::open(&bin_path).map_err(|e| Error::io(&bin_path, e))?);
    let mut header = [0u8; 16];
    bin.read_exact(&mut header).map_err(|e| Error::io(&bin_path, e))?;
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().expect("4 bytes"));
    if &header[..4] != SAMPLES_MAGIC {
        return Err(Error::malformed(SAMPLES_FILE, "bad magic"));
    }
    if word(4) != SAMPLES_VERSION {
        return Err(Error::malformed(SAMPLES_FILE, format!("unsupported version {}", word(4))));
    }
    let (channels, window) = (word(8) as usize, word(12) as usize);
    if channels != manifest.channels || window != manifest.config.window {
        return Err(Error::malformed(SAMPLES_FILE, "header disagrees with manifest"));
    }
    let per_sample = channels * window;

    let idx_path = dir.join(INDEX_FILE);
    let idx = BufReader::new(fs::File::open(&idx_path).map_err(|e| Error::io(&idx_path, e))?);
    let mut lines = idx.lines();
    match lines.next() {
        Some(Ok(h)) if h.trim_end() == INDEX_HEADER => {}
        _ => return Err(Error::malformed(INDEX_FILE, "missing header")),
    }

    let mut phase_detection = SampleSets::default();
    let mut classification = SampleSets::default();
    let mut buf = vec![0u8; per_sample * 4];
    for (n, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(&idx_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ctx = || format!("{INDEX_FILE}:{}", n + 2);
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 6 {
            return Err(Error::malformed(ctx(), "expected six fields"));
        }
        let num = |s: &str| -> Result<usize> {
            s.parse().map_err(|_| Error::malformed(ctx(), format!("bad number `{s}`")))
        };
        if num(f[0])? != n {
            return Err(Error::malformed(ctx(), "sample ids must be sequential"));
        }
        let partition: Partition = f[1].parse()?;
        let task: Task = f[2].parse()?;
        let label: Label = f[3].parse()?;
        bin.read_exact(&mut buf).map_err(|e| Error::io(&bin_path, e))?;
        let window = buf
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        let sample = SequenceSample {
            window,
            label,
            trial_id: num(f[4])? as u32,
            end_bin: num(f[5])?,
        };
        match task {
            Task::PhaseDetection => phase_detection.get_mut(partition).push(sample),
            Task::Classification => classification.get_mut(partition).push(sample),
        }
    }
    let mut rest = [0u8; 1];
    if bin.read(&mut rest).map_err(|e| Error::io(&bin_path, e))? != 0 {
        return Err(Error::malformed(SAMPLES_FILE, "trailing data after last sample"));
    }

    Ok(Datasets {
        config: manifest.config,
        channels,
        class_map: manifest.class_map,
        split: manifest.split,
        trial_classes: manifest.trial_classes,
        phase_detection,
        classification,
    })
}
