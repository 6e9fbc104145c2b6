use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use spikedecode::metrics::{confusion, write_report, MetricsReport, METRICS_FILE};
use spikedecode::nn::{load_checkpoint, BiLstmModel};
use spikedecode::pipeline::{
    assemble_datasets, read_bundle, read_manifest, sequence_level_split, write_bundle, ClassMap, Datasets,
    Partition, SampleSets, Task,
};
use spikedecode::realtime::{replay_session, StreamMetrics, DECISIONS_FILE, STREAM_REPORT_FILE};
use spikedecode::session::{load_session, save_session};
use spikedecode::synth::{generate_session, write_synth_config};
use spikedecode::train::{evaluate, save_run, train, LabelledSet, TrainConfig, TrainOutcome};
use spikedecode::tuner::{random_search, write_leaderboard, HyperParams};
use spikedecode::{Error, Result};

use crate::config::RunConfig;
use crate::manifest::RunManifest;

pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_RUNS_FILE: &str = "sweep_runs.csv";
pub const BEST_HYPERPARAMS_FILE: &str = "best_hyperparams.json";

type Scalar = f32;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<S: Serialize>(value: &S, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::malformed(path.display().to_string(), e.to_string()))?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

pub fn class_names(task: Task, map: &ClassMap) -> Vec<String> {
    match task {
        Task::PhaseDetection => vec!["rest".into(), "grasp".into()],
        Task::Classification => map
            .classes
            .iter()
            .map(|c| format!("g{}s{}", c.shape_group, c.size_index))
            .collect(),
    }
}

fn labelled(sets: &SampleSets, p: Partition, data: &Datasets) -> Result<LabelledSet<Scalar>> {
    let samples = sets.get(p);
    if samples.is_empty() {
        return Err(Error::Data(format!("{p} partition is empty")));
    }
    LabelledSet::from_samples(samples, data.channels, data.config.window)
}

fn report_for(task: Task, model: &BiLstmModel<Scalar>, set: &LabelledSet<Scalar>, map: &ClassMap) -> Result<MetricsReport> {
    let eval = evaluate(model, set)?;
    let cm = confusion(&eval.predictions, &set.labels, model.config.n_classes)?;
    match task {
        Task::PhaseDetection => MetricsReport::phase(cm),
        Task::Classification => MetricsReport::classification(cm, map),
    }
}

pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    create_dir(out)?;
    let session = generate_session(&cfg.synth)?;
    save_session(&session, out)?;
    write_synth_config(&cfg.synth, out)?;
    log::info!("wrote {} trials of {} channels to {}", session.trials.len(), session.channel_count, out.display());
    RunManifest::new("synth", cfg, vec![]).write(out)
}

pub fn cmd_preprocess(cfg: &RunConfig, session_dir: &Path, out: &Path) -> Result<()> {
    let session = load_session(session_dir)?;
    let data = assemble_datasets(&session, &cfg.pipeline)?;
    write_bundle(&data, out)?;
    for task in [Task::PhaseDetection, Task::Classification] {
        let sets = data.task(task);
        log::info!(
            "{task}: {} / {} / {} windows",
            sets.train.len(),
            sets.val.len(),
            sets.test.len()
        );
    }
    RunManifest::new("preprocess", cfg, vec![session_dir.to_path_buf()]).write(out)
}

/// Trains on the train partition, selects on val, and writes the run and its
/// test metrics into `out`.
fn fit_and_report(
    task: Task,
    hyper: &HyperParams,
    train_cfg: &TrainConfig,
    data: &Datasets,
    sets: &SampleSets,
    out: &Path,
) -> Result<(TrainOutcome<Scalar>, MetricsReport)> {
    let (tr, va, te) = (
        labelled(sets, Partition::Train, data)?,
        labelled(sets, Partition::Val, data)?,
        labelled(sets, Partition::Test, data)?,
    );
    let model = hyper.model_config(data.channels, data.config.window, data.n_outputs(task));
    let tc = TrainConfig {
        initial_lr: hyper.initial_lr,
        ..train_cfg.clone()
    };
    let outcome = train(&model, &tc, &tr, &va)?;
    save_run(&outcome, &tc, out)?;
    let report = report_for(task, &outcome.model, &te, &data.class_map)?;
    write_report(&report, &class_names(task, &data.class_map), out)?;
    log::info!(
        "{task}: best epoch {} of {}, test accuracy {:.4}",
        outcome.best_epoch,
        outcome.history.len(),
        report.accuracy
    );
    Ok((outcome, report))
}

fn task_sets(cfg: &RunConfig, data: &Datasets, task: Task, leaky: bool) -> Result<SampleSets> {
    let sets = data.task(task);
    if leaky {
        log::warn!("splitting windows without regard to trials; test scores will be inflated");
        sequence_level_split(sets, &data.config.fractions, cfg.pipeline.seed)
    } else {
        Ok(sets.clone())
    }
}

pub fn cmd_train(cfg: &RunConfig, data_dir: &Path, task: Task, leaky: bool, out: &Path) -> Result<()> {
    create_dir(out)?;
    let data = read_bundle(data_dir)?;
    let sets = task_sets(cfg, &data, task, leaky)?;
    fit_and_report(task, cfg.hyper(task), &cfg.train, &data, &sets, out)?;
    RunManifest::new("train", cfg, vec![data_dir.to_path_buf()]).write(out)
}

pub fn cmd_tune(cfg: &RunConfig, data_dir: &Path, task: Task, budget: usize, out: &Path) -> Result<()> {
    create_dir(out)?;
    let data = read_bundle(data_dir)?;
    let sets = data.task(task);
    let (tr, va) = (labelled(sets, Partition::Train, &data)?, labelled(sets, Partition::Val, &data)?);
    let results = random_search(&cfg.search, budget, &cfg.train, &tr, &va, data.n_outputs(task), cfg.train.seed)?;
    write_leaderboard(&results, out)?;
    let best = &results[0];
    log::info!("best draw {} with validation accuracy {:.4}", best.draw, best.val_accuracy);
    write_json(&best.hyper, &out.join(BEST_HYPERPARAMS_FILE))?;
    let tc = TrainConfig {
        seed: best.seed,
        ..cfg.train.clone()
    };
    fit_and_report(task, &best.hyper, &tc, &data, sets, out)?;
    RunManifest::new("tune", cfg, vec![data_dir.to_path_buf()])
        .note("search: seeded uniform random sampling of the search space, not Bayesian optimisation")
        .write(out)
}

pub fn cmd_eval(cfg: &RunConfig, model_path: &Path, data_dir: &Path, split: Partition, task: Task, out: &Path) -> Result<()> {
    create_dir(out)?;
    let model: BiLstmModel<Scalar> = load_checkpoint(model_path)?;
    let data = read_bundle(data_dir)?;
    if model.config.n_classes != data.n_outputs(task) {
        return Err(Error::Dimension(format!(
            "model has {} outputs, {task} data has {}",
            model.config.n_classes,
            data.n_outputs(task)
        )));
    }
    let set = labelled(data.task(task), split, &data)?;
    let report = report_for(task, &model, &set, &data.class_map)?;
    write_report(&report, &class_names(task, &data.class_map), out)?;
    log::info!("{task} on {split}: accuracy {:.4}, macro F1 {:.4}", report.accuracy, report.macro_f1);
    RunManifest::new("eval", cfg, vec![model_path.to_path_buf(), data_dir.to_path_buf()]).write(out)
}

/// Deterministic summary written as `metrics.json` by `stream`.
#[derive(Debug, Serialize)]
struct StreamSummary {
    #[serde(flatten)]
    stream: StreamMetrics,
    /// Share of correct object decisions among true grasp steps that were
    /// detected as grasp.
    class_accuracy_on_detected_grasp: Option<f64>,
}

pub fn cmd_stream(
    cfg: &RunConfig,
    session_dir: &Path,
    data_dir: &Path,
    phase_path: &Path,
    class_path: Option<&Path>,
    split: Partition,
    out: &Path,
) -> Result<()> {
    create_dir(out)?;
    let session = load_session(session_dir)?;
    let manifest = read_manifest(data_dir)?;
    let phase: BiLstmModel<Scalar> = load_checkpoint(phase_path)?;
    let class: Option<BiLstmModel<Scalar>> = class_path.map(load_checkpoint).transpose()?;
    let keep = |id: u32| manifest.split.partition_of(id) == Some(split);
    let report = replay_session(
        &session,
        manifest.config.bin_width,
        &phase,
        class.as_ref().map(|m| m as _),
        manifest.config.window,
        &keep,
    )?;
    let (mut hits, mut seen) = (0usize, 0usize);
    for d in report.decisions.iter().filter(|d| d.truth_grasp) {
        if let (Some(c), Some(&truth)) = (d.class, manifest.trial_classes.get(&d.trial_id)) {
            seen += 1;
            hits += (c == truth) as usize;
        }
    }
    let summary = StreamSummary {
        stream: report.metrics(),
        class_accuracy_on_detected_grasp: (seen > 0).then(|| hits as f64 / seen as f64),
    };
    write_json(&report, &out.join(STREAM_REPORT_FILE))?;
    let path = out.join(DECISIONS_FILE);
    fs::write(&path, report.decisions_csv()).map_err(|e| Error::io(&path, e))?;
    write_json(&summary, &out.join(METRICS_FILE))?;
    log::info!(
        "{} steps: false grasp {:.4}, false rest {:.4}, median decode {:.2e} s",
        report.decisions.len(),
        report.false_grasp_rate,
        report.false_rest_rate,
        report.median_decode_seconds
    );
    let inputs = [session_dir, data_dir, phase_path]
        .into_iter()
        .chain(class_path)
        .map(Path::to_path_buf)
        .collect::<Vec<PathBuf>>();
    RunManifest::new("stream", cfg, inputs).write(out)
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub train_val: f64,
    pub seed: u64,
    pub accuracy: f64,
    pub relaxed_accuracy: f64,
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let sd = if x.len() > 1 {
        (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (m, sd)
}

/// Classification accuracy as the training share shrinks, one retrained model
/// per share and seed.
pub fn cmd_sweep(cfg: &RunConfig, session_dir: &Path, out: &Path) -> Result<()> {
    create_dir(out)?;
    let session = load_session(session_dir)?;
    let mut rows = Vec::new();
    for &tv in &cfg.sweep.train_val {
        let fractions = cfg.sweep.fractions_at(tv)?;
        for &seed in &cfg.sweep.seeds {
            let mut run_cfg = cfg.clone();
            run_cfg.pipeline.fractions = fractions.clone();
            run_cfg.pipeline.seed = seed;
            run_cfg.train.seed = seed;
            let data = assemble_datasets(&session, &run_cfg.pipeline)?;
            let dir = out.join(format!("tv{:02}_seed{seed}", (tv * 100.0).round() as u32));
            let (_, report) = fit_and_report(
                Task::Classification,
                &run_cfg.classification,
                &run_cfg.train,
                &data,
                &data.classification,
                &dir,
            )?;
            let relaxed = report
                .relaxed_accuracy
                .ok_or_else(|| Error::Data("classification report lacks relaxed accuracy".into()))?;
            log::info!("train+val {tv}: seed {seed} accuracy {:.4} relaxed {relaxed:.4}", report.accuracy);
            rows.push(SweepRow {
                train_val: tv,
                seed,
                accuracy: report.accuracy,
                relaxed_accuracy: relaxed,
            });
        }
    }
    let path = out.join(SWEEP_RUNS_FILE);
    fs::write(&path, sweep_runs_csv(&rows)).map_err(|e| Error::io(&path, e))?;
    let path = out.join(SWEEP_FILE);
    fs::write(&path, sweep_csv(cfg, &rows)?).map_err(|e| Error::io(&path, e))?;
    RunManifest::new("sweep", cfg, vec![session_dir.to_path_buf()]).write(out)
}

fn sweep_runs_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("train_val_fraction,seed,accuracy,relaxed_accuracy\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.train_val, r.seed, r.accuracy, r.relaxed_accuracy);
    }
    out
}

fn sweep_csv(cfg: &RunConfig, rows: &[SweepRow]) -> Result<String> {
    let mut out = String::from(
        "train_val_fraction,train_fraction,val_fraction,test_fraction,seeds,accuracy,relaxed_accuracy,accuracy_sd,relaxed_accuracy_sd\n",
    );
    for &tv in &cfg.sweep.train_val {
        let f = cfg.sweep.fractions_at(tv)?;
        let at: Vec<&SweepRow> = rows.iter().filter(|r| r.train_val == tv).collect();
        let (acc, acc_sd) = mean_sd(&at.iter().map(|r| r.accuracy).collect::<Vec<_>>());
        let (rel, rel_sd) = mean_sd(&at.iter().map(|r| r.relaxed_accuracy).collect::<Vec<_>>());
        let _ = writeln!(
            out,
            "{tv},{:.4},{:.4},{:.4},{},{acc},{rel},{acc_sd},{rel_sd}",
            f.train,
            f.val,
            f.test,
            at.len()
        );
    }
    Ok(out)
}
