//! Acceptance suite: every criterion at its stated tolerance, one line each.
//! Runs without the libtest harness so the report is printed even on success.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use serde_json::Value;
use spikedecode::metrics::{accuracy, macro_f1, phase_rates, ConfusionMatrix};
use f128::f128;
use spikedecode::nn::{gradient_check, gradient_check_in, BiLstmModel, ModelConfig, Mode, Regularizer, SequenceBatch};
use spikedecode::pipeline::{
    assemble_datasets, bin_trial, make_sequences, ClassInfo, ClassMap, Label, Partition, PipelineConfig, Task,
};
use spikedecode::seed::rng_from;
use spikedecode::session::{Phase, PhaseMark, PhaseMarks, Trial};
use spikedecode::synth::{default_benchmark_config, generate_session};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn report(id: usize, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let started = Instant::now();
    let Outcome { pass, detail } = f();
    let took = started.elapsed();
    let in_time = took <= limit;
    let ok = pass && in_time;
    let timing = if in_time {
        format!("{:.1}s", took.as_secs_f64())
    } else {
        format!("{:.1}s OVER LIMIT {}s", took.as_secs_f64(), limit.as_secs())
    };
    let line = format!(
        "criterion {id:>2} {:<4} {name}: {detail} [{timing}]\n",
        if ok { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    ok
}

const PUBLISHED: [[u64; 2]; 2] = [[12824, 173], [25, 1347]];

fn published() -> ConfusionMatrix {
    ConfusionMatrix::from_rows(PUBLISHED.iter().map(|r| r.to_vec()).collect()).unwrap()
}

fn criterion_1() -> Outcome {
    let cm = published();
    let acc = accuracy(&cm).unwrap();
    let f1 = macro_f1(&cm).unwrap();
    let [[tn, fp], [fn_, tp]] = PUBLISHED.map(|r| r.map(|v| v as f64));
    let n = tn + fp + fn_ + tp;
    let f1_of = |tp: f64, fp: f64, fn_: f64| 2.0 * tp / (2.0 * tp + fp + fn_);
    let oracle_acc = (tn + tp) / n;
    let oracle_f1 = (f1_of(tp, fp, fn_) + f1_of(tn, fn_, fp)) / 2.0;
    let pass = (acc - oracle_acc).abs() <= 1e-9
        && (acc - 0.98622).abs() < 5e-6
        && (acc * 100.0).round() == 99.0
        && (f1 - oracle_f1).abs() <= 1e-12
        && (f1 - 0.9620).abs() <= 5e-4
        && (f1 * 100.0).round() == 96.0;
    outcome(pass, format!("accuracy {acc:.9}, macro-F1 {f1:.6}"))
}

fn criterion_2() -> Outcome {
    let (fg, fr) = phase_rates(&published()).unwrap();
    let pass = (fg - 173.0 / 14369.0).abs() <= 1e-9
        && (fr - 25.0 / 14369.0).abs() <= 1e-9
        && (fg - 0.01204).abs() < 5e-6
        && (fr - 0.00174).abs() < 5e-6;
    outcome(pass, format!("false grasp {fg:.9}, false rest {fr:.9}"))
}

fn criterion_3() -> Outcome {
    let mut rng = rng_from(3);
    let (mut worst, mut worst_f64) = (0.0f64, 0.0f64);
    for m in 0..20u64 {
        let mut cfg = ModelConfig::new(rng.random_range(1..=5), rng.random_range(1..=6), rng.random_range(2..=4));
        cfg.n_layers = rng.random_range(1..=2);
        cfg.hidden_units = rng.random_range(1..=4);
        cfg.kernel_reg = Regularizer::ALL[rng.random_range(0..4)];
        cfg.recurrent_reg = Regularizer::ALL[rng.random_range(0..4)];
        cfg.dropout = [0.0, 0.5][rng.random_range(0..2)];
        let model = BiLstmModel::<f64>::new(cfg.clone(), rng.random()).unwrap();
        let n = rng.random_range(1..=3);
        let len = n * cfg.input_channels * cfg.window_len;
        let data = (0..len).map(|_| rng.random_range(-1.5..1.5)).collect();
        let batch = SequenceBatch::new(cfg.input_channels, cfg.window_len, data).unwrap();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..cfg.n_classes)).collect();
        let mode = Mode::Train { seed: m };
        // BPTT stays f64; the perturbed losses are taken in f128 so the
        // reference is not limited by f64 roundoff in the loss.
        worst = worst.max(gradient_check_in::<f128>(&model, &batch, &labels, 1e-5, mode).unwrap());
        worst_f64 = worst_f64.max(gradient_check(&model, &batch, &labels, 1e-5, mode).unwrap());
    }
    outcome(
        worst <= 1e-4,
        format!("max relative error {worst:.2e} over 20 models (f64 differences: {worst_f64:.2e})"),
    )
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn criterion_4() -> Outcome {
    let mut cfg = ModelConfig::new(3, 1, 2);
    cfg.hidden_units = 1;
    let mut model = BiLstmModel::<f64>::new(cfg, 0).unwrap();
    let mut rng = rng_from(4);
    for (_, t) in model.params.tensors_mut() {
        t.iter_mut().for_each(|w| *w = rng.random_range(-0.8..0.8));
    }
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let step = |kernel: &[f64], bias: &[f64]| {
            let pre = |g: usize| bias[g] + (0..3).map(|j| x[j] * kernel[j * 4 + g]).sum::<f64>();
            let c = sigmoid(pre(0)) * pre(2).tanh();
            sigmoid(pre(3)) * c.tanh()
        };
        let p = &model.params;
        let hf = step(&p.layers[0].forward.input_kernel, &p.layers[0].forward.bias);
        let hb = step(&p.layers[0].backward.input_kernel, &p.layers[0].backward.bias);
        let k = &p.head.kernel;
        let z0 = p.head.bias[0] + hf * k[0] + hb * k[2];
        let z1 = p.head.bias[1] + hf * k[1] + hb * k[3];
        let p0 = 1.0 / (1.0 + (z1 - z0).exp());
        let probs = model.forward(&SequenceBatch::new(3, 1, x.clone()).unwrap(), Mode::Infer).unwrap();
        worst = worst.max((probs[0][0] - p0).abs()).max((probs[0][1] - (1.0 - p0)).abs());
    }
    let mut cfg = ModelConfig::new(4, 6, 5);
    cfg.hidden_units = 4;
    cfg.n_layers = 2;
    let model = BiLstmModel::<f64>::new(cfg, 9).unwrap();
    let mut sum_err = 0.0f64;
    for _ in 0..1000 {
        let data = (0..3 * 24).map(|_| rng.random_range(0.0..6.0)).collect();
        for row in model.forward(&SequenceBatch::new(4, 6, data).unwrap(), Mode::Infer).unwrap() {
            sum_err = sum_err.max((row.iter().sum::<f64>() - 1.0).abs());
        }
    }
    outcome(
        worst <= 1e-12 && sum_err <= 1e-6,
        format!("oracle deviation {worst:.1e}, softmax row-sum deviation {sum_err:.1e} over 1000 batches"),
    )
}

fn random_trial<R: Rng>(rng: &mut R, trial_id: u32) -> Trial {
    let t_start = rng.random_range(0.0..50.0);
    let t_end = t_start + rng.random_range(0.3..3.0);
    let mut cuts: Vec<f64> = (0..6).map(|_| rng.random_range(t_start + 1e-3..t_end - 1e-3)).collect();
    cuts.sort_by(f64::total_cmp);
    let spikes = (0..rng.random_range(1..4))
        .map(|_| {
            let mut t: Vec<f64> = (0..rng.random_range(0..40)).map(|_| rng.random_range(t_start..t_end)).collect();
            t.sort_by(f64::total_cmp);
            t
        })
        .collect();
    Trial {
        trial_id,
        object_id: 1,
        t_start,
        t_end,
        phases: PhaseMarks::new(
            Phase::ALL
                .into_iter()
                .zip(cuts)
                .map(|(phase, time)| PhaseMark { phase, time })
                .collect(),
        ),
        spikes,
    }
}

fn criterion_5() -> Outcome {
    let map = ClassMap {
        objects: BTreeMap::from([(1, Some(0))]),
        classes: vec![ClassInfo {
            shape_group: 0,
            size_index: 0,
            object_ids: vec![1],
            trial_count: 1,
        }],
    };
    let mut rng = rng_from(5);
    let (w, width) = (8usize, 0.04);
    let (mut count_bad, mut label_bad, mut trials) = (0, 0, 0);
    while trials < 1000 {
        let trial = random_trial(&mut rng, trials as u32);
        let b = bin_trial(&trial, width).unwrap();
        if b.n_bins < w {
            continue;
        }
        trials += 1;
        let seqs = make_sequences(&b, w, &map, Task::PhaseDetection).unwrap();
        count_bad += (seqs.len() != b.n_bins - w + 1) as usize;
        let bin_of = |p: Phase| (((trial.phases.get(p).unwrap() - trial.t_start) / width).floor() as usize).min(b.n_bins - 1);
        let (hold, end) = (bin_of(Phase::Hold), bin_of(Phase::End));
        for s in &seqs {
            let grasp = s.end_bin >= hold && s.end_bin < end;
            label_bad += (grasp != (s.label == Label::Grasp)) as usize;
        }
    }
    let session = generate_session(&default_benchmark_config()).unwrap();
    let data = assemble_datasets(&session, &PipelineConfig::default()).unwrap();
    let mut shared = 0;
    let mut missing = 0;
    for task in [Task::PhaseDetection, Task::Classification] {
        let ids: Vec<BTreeSet<u32>> = Partition::ALL
            .iter()
            .map(|&p| data.task(task).get(p).iter().map(|s| s.trial_id).collect())
            .collect();
        shared += ids[0].intersection(&ids[1]).count() + ids[0].intersection(&ids[2]).count() + ids[1].intersection(&ids[2]).count();
    }
    for p in Partition::ALL {
        let present: BTreeSet<usize> = data.classification.get(p).iter().map(|s| s.target()).collect();
        missing += data.class_map.n_classes() - present.len();
    }
    outcome(
        count_bad == 0 && label_bad == 0 && shared == 0 && missing == 0,
        format!(
            "1000 trials: {count_bad} count and {label_bad} label mismatches; {shared} shared trials, {missing} missing classes"
        ),
    )
}

fn spikedecode(dir: &Path, args: &[&str]) -> bool {
    let status = Command::new(env!("CARGO_BIN_EXE_spikedecode"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .status()
        .expect("binary runs");
    status.success()
}

fn metric(path: &Path, key: &str) -> f64 {
    let v: Value = serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap();
    v[key].as_f64().unwrap_or(f64::NAN)
}

/// Synthetic session and bundle for one seed.
fn prepare(root: &Path, seed: u64) -> bool {
    let s = seed.to_string();
    spikedecode(root, &["--seed", &s, "synth", "-o", &format!("session{seed}")])
        && spikedecode(root, &["--seed", &s, "preprocess", &format!("session{seed}"), "-o", &format!("data{seed}")])
}

fn criterion_6(root: &Path) -> Outcome {
    let ok = prepare(root, 0) && spikedecode(root, &["--seed", "0", "train", "data0", "-o", "class0"]);
    if !ok {
        return outcome(false, "command failed".into());
    }
    let m = root.join("class0/metrics.json");
    let (acc, relaxed) = (metric(&m, "accuracy"), metric(&m, "relaxed_accuracy"));
    outcome(
        acc >= 0.90 && relaxed >= acc,
        format!("test accuracy {acc:.4}, relaxed {relaxed:.4}{}", if relaxed > acc { " (strictly higher)" } else { "" }),
    )
}

fn criterion_7(root: &Path) -> Outcome {
    if !spikedecode(root, &["--seed", "0", "train", "data0", "--task", "phase", "-o", "phase0"]) {
        return outcome(false, "command failed".into());
    }
    let m = root.join("phase0/metrics.json");
    let (acc, f1) = (metric(&m, "accuracy"), metric(&m, "macro_f1"));
    outcome(acc >= 0.98 && f1 >= 0.95, format!("test accuracy {acc:.4}, macro-F1 {f1:.4}"))
}

fn criterion_8(root: &Path) -> Outcome {
    let mut gaps = Vec::new();
    for seed in 0..3u64 {
        let s = seed.to_string();
        if !(prepare(root, seed)
            && spikedecode(
                root,
                &["sweep", &format!("session{seed}"), "--train-val", "0.8,0.2", "--seeds", &s, "-o", &format!("sweep{seed}")],
            ))
        {
            return outcome(false, "command failed".into());
        }
        let csv = fs::read_to_string(root.join(format!("sweep{seed}/sweep.csv"))).unwrap();
        let acc: Vec<f64> = csv.lines().skip(1).map(|l| l.split(',').nth(5).unwrap().parse().unwrap()).collect();
        gaps.push((acc[0], acc[1]));
    }
    let hi = gaps.iter().map(|g| g.0).sum::<f64>() / 3.0;
    let lo = gaps.iter().map(|g| g.1).sum::<f64>() / 3.0;
    outcome(
        hi - lo >= 0.05,
        format!("mean accuracy {hi:.4} at 80% vs {lo:.4} at 20%, drop {:.1} points", 100.0 * (hi - lo)),
    )
}

fn criterion_9(root: &Path) -> Outcome {
    let (mut trial, mut leaky) = (0.0, 0.0);
    for seed in 0..3u64 {
        let s = seed.to_string();
        let data = format!("data{seed}");
        let (t, l) = (format!("class{seed}"), format!("leaky{seed}"));
        let ok = (root.join(&data).exists() || prepare(root, seed))
            && (root.join(&t).join("metrics.json").exists() || spikedecode(root, &["--seed", &s, "train", &data, "-o", &t]))
            && spikedecode(root, &["--seed", &s, "train", &data, "--leaky-split", "-o", &l]);
        if !ok {
            return outcome(false, "command failed".into());
        }
        trial += metric(&root.join(&t).join("metrics.json"), "accuracy") / 3.0;
        leaky += metric(&root.join(&l).join("metrics.json"), "accuracy") / 3.0;
    }
    outcome(
        leaky - trial >= 0.05,
        format!("mean test accuracy {leaky:.4} window-level vs {trial:.4} trial-level, gap {:.1} points", 100.0 * (leaky - trial)),
    )
}

fn criterion_10(root: &Path) -> Outcome {
    let config = "[synth]\ntrials_per_class = 5\nchannels = 12\n[train]\nmax_epochs = 3\n[search]\nn_layers = [1]\nhidden_units = [4, 8]\n";
    let run_all = |dir: &Path, config_path: &str| -> bool {
        let one = |args: &[&str]| {
            Command::new(env!("CARGO_BIN_EXE_spikedecode"))
                .current_dir(dir)
                .env("SPIKEDECODE_THREADS", "1")
                .env("RUST_LOG", "warn")
                .args([&["--config", config_path, "--seed", "5"][..], args].concat())
                .status()
                .map(|s| s.success())
                .unwrap_or(false)
        };
        one(&["synth", "-o", "s"])
            && one(&["preprocess", "s", "-o", "p"])
            && one(&["train", "p", "-o", "c"])
            && one(&["train", "p", "--task", "phase", "-o", "ph"])
            && one(&["eval", "--model", "c/best.blsm", "--data", "p", "-o", "e"])
            && one(&["stream", "--session", "s", "--data", "p", "--phase-model", "ph/best.blsm", "--class-model", "c/best.blsm", "-o", "st"])
            && one(&["tune", "p", "--budget", "2", "-o", "t"])
            && one(&["sweep", "s", "--train-val", "0.8,0.4", "-o", "sw"])
    };
    let (a, b) = (root.join("det_a"), root.join("det_b"));
    for d in [&a, &b] {
        fs::create_dir_all(d).unwrap();
    }
    fs::write(a.join("run.toml"), config).unwrap();
    if !run_all(&a, "run.toml") {
        return outcome(false, "first run failed".into());
    }
    // the second run takes its configuration from the first run's resolved config
    if !run_all(&b, "../det_a/s/run_config.toml") {
        return outcome(false, "second run failed".into());
    }
    let files = [
        "s/spikes.csv",
        "p/samples.bin",
        "c/metrics.json",
        "ph/metrics.json",
        "e/metrics.json",
        "st/metrics.json",
        "t/metrics.json",
        "t/leaderboard.csv",
        "sw/sweep.csv",
    ];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| fs::read(a.join(f)).ok() != fs::read(b.join(f)).ok() || !a.join(f).exists())
        .collect();
    outcome(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} artifacts bit-identical across reruns", files.len())
        } else {
            format!("differing: {differing:?}")
        },
    )
}

fn main() {
    // libtest flags such as --nocapture or a filter are accepted and ignored
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let secs = Duration::from_secs;
    let results = [
        report(1, "metric oracle on published confusion matrix", secs(1), criterion_1),
        report(2, "phase-rate oracle", secs(1), criterion_2),
        report(3, "BPTT gradient vs central differences", secs(120), criterion_3),
        report(4, "forward oracle and softmax normalisation", secs(30), criterion_4),
        report(5, "pipeline properties", secs(60), criterion_5),
        report(6, "synthetic object classification", secs(600), || criterion_6(root)),
        report(7, "synthetic phase detection", secs(600), || criterion_7(root)),
        report(8, "accuracy drop with smaller training share", secs(1800), || criterion_8(root)),
        report(9, "window-level split inflates accuracy", secs(1200), || criterion_9(root)),
        report(10, "determinism in single-threaded mode", secs(120), || criterion_10(root)),
    ];
    let passed = results.iter().filter(|&&r| r).count();
    let _ = writeln!(std::io::stderr(), "acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
