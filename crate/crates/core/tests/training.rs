use rand::Rng;
use spikedecode::nn::{BiLstmModel, ModelConfig, SequenceBatch};
use spikedecode::seed::{derive_seed, rng_from};
use spikedecode::train::{evaluate, save_run, train, LabelledSet, TrainConfig};

/// Two classes separated by a constant count offset on every channel.
fn toy_set(n: usize, seed: u64) -> LabelledSet<f32> {
    let (channels, steps) = (3, 4);
    let mut rng = rng_from(seed);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let y = i % 2;
        labels.push(y);
        for _ in 0..channels * steps {
            data.push((rng.random_range(0..3) + 3 * y) as f32);
        }
    }
    LabelledSet {
        batch: SequenceBatch::new(channels, steps, data).unwrap(),
        labels,
    }
}

fn toy_model() -> ModelConfig {
    let mut cfg = ModelConfig::new(3, 4, 2);
    cfg.hidden_units = 8;
    cfg
}

fn quick(seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        max_epochs: 20,
        initial_lr: 1e-2,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn separable_toy_set_is_learned_within_twenty_epochs() {
    let out = train(&toy_model(), &quick(3), &toy_set(200, 1), &toy_set(60, 2)).unwrap();
    assert!(out.history.len() <= 20);
    assert_eq!(out.history.best_val_acc(), Some(1.0));
}

#[test]
fn same_seed_gives_identical_history_and_weights() {
    let strip = |h: &spikedecode::train::TrainHistory| {
        h.epochs
            .iter()
            .map(|e| (e.train_loss, e.val_loss, e.val_acc, e.lr))
            .collect::<Vec<_>>()
    };
    let a = train(&toy_model(), &quick(9), &toy_set(100, 1), &toy_set(40, 2)).unwrap();
    let b = train(&toy_model(), &quick(9), &toy_set(100, 1), &toy_set(40, 2)).unwrap();
    assert_eq!(strip(&a.history), strip(&b.history));
    assert_eq!(a.model, b.model);
}

#[test]
fn returned_model_is_the_best_epoch() {
    let mut cfg = quick(4);
    cfg.initial_lr = 3e-3;
    cfg.max_epochs = 8;
    let val = toy_set(40, 6);
    let out = train(&toy_model(), &cfg, &toy_set(80, 5), &val).unwrap();
    let best = out.history.best_val_acc().unwrap();
    assert_eq!(evaluate(&out.model, &val).unwrap().accuracy, best);
    let first_best = out.history.epochs.iter().position(|e| e.val_acc == best).unwrap();
    assert_eq!(out.best_epoch, first_best + 1);
    let lrs: Vec<f64> = out.history.epochs.iter().map(|e| e.lr).collect();
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn update_size_scales_with_learning_rate() {
    let cfg = toy_model();
    let init = BiLstmModel::<f64>::new(cfg.clone(), derive_seed(7, 0)).unwrap();
    let set: LabelledSet<f64> = {
        let s = toy_set(32, 3);
        LabelledSet {
            batch: SequenceBatch::new(3, 4, s.batch.data.iter().map(|&v| v as f64).collect()).unwrap(),
            labels: s.labels,
        }
    };
    let drift = |lr: f64| {
        let tc = TrainConfig {
            batch_size: 32,
            max_epochs: 1,
            initial_lr: lr,
            seed: 7,
            ..TrainConfig::default()
        };
        let out = train(&cfg, &tc, &set, &set).unwrap();
        let a = out.model.params.to_flat();
        let b = init.params.to_flat();
        a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    };
    let small = drift(1e-9);
    let large = drift(1e-6);
    // a single step moves each weight by about lr, whatever the gradient
    assert!(small <= 1.01e-9 && small > 0.0);
    assert!((large / small - 1000.0).abs() < 1.0);
}

#[test]
fn empty_training_set_is_an_error() {
    let empty = LabelledSet::<f32> {
        batch: SequenceBatch::new(3, 4, Vec::new()).unwrap(),
        labels: Vec::new(),
    };
    assert!(train(&toy_model(), &quick(1), &empty, &toy_set(4, 1)).is_err());
}

#[test]
fn run_directory_contents() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        max_epochs: 2,
        ..quick(2)
    };
    let out = train(&toy_model(), &cfg, &toy_set(40, 1), &toy_set(10, 2)).unwrap();
    save_run(&out, &cfg, dir.path()).unwrap();
    let history = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
    assert_eq!(history.lines().next(), Some("epoch,train_loss,val_loss,val_acc,lr,seconds"));
    assert_eq!(history.lines().count(), 3);
    let back: BiLstmModel<f32> = spikedecode::nn::load_checkpoint(&dir.path().join("best.blsm")).unwrap();
    assert_eq!(back, out.model);
    assert!(dir.path().join("config.json").exists());
}
