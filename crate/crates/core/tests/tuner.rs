use rand::Rng;
use spikedecode::nn::{ModelConfig, Regularizer, SequenceBatch};
use spikedecode::seed::rng_from;
use spikedecode::train::{train, LabelledSet, TrainConfig};
use spikedecode::tuner::{leaderboard_csv, random_search, sample_config, SearchSpace};

/// Pearson chi-square statistic of observed counts against a uniform law.
fn chi_square(counts: &[usize]) -> f64 {
    let n: usize = counts.iter().sum();
    let e = n as f64 / counts.len() as f64;
    counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum()
}

fn tally<T: PartialEq>(values: &[T], draws: &[T]) -> Vec<usize> {
    values.iter().map(|v| draws.iter().filter(|d| *d == v).count()).collect()
}

#[test]
fn every_axis_is_sampled_uniformly() {
    let space = SearchSpace::default();
    let mut rng = rng_from(99);
    let draws: Vec<_> = (0..10_000).map(|_| sample_config(&space, &mut rng)).collect();
    assert!(draws.iter().all(|d| space.contains(d)));
    // 0.999 quantiles of chi-square with 2, 3 and 5 degrees of freedom
    let critical = |k: usize| match k {
        3 => 13.82,
        4 => 16.27,
        6 => 20.52,
        _ => unreachable!(),
    };
    let checks: Vec<(&str, Vec<usize>)> = vec![
        ("layers", tally(&space.n_layers, &draws.iter().map(|d| d.n_layers).collect::<Vec<_>>())),
        ("hidden", tally(&space.hidden_units, &draws.iter().map(|d| d.hidden_units).collect::<Vec<_>>())),
        ("dropout", tally(&space.dropout, &draws.iter().map(|d| d.dropout).collect::<Vec<_>>())),
        ("kernel", tally(&space.kernel_reg, &draws.iter().map(|d| d.kernel_reg).collect::<Vec<_>>())),
        ("recurrent", tally(&space.recurrent_reg, &draws.iter().map(|d| d.recurrent_reg).collect::<Vec<_>>())),
        ("lr", tally(&space.initial_lr, &draws.iter().map(|d| d.initial_lr).collect::<Vec<_>>())),
    ];
    for (axis, counts) in checks {
        assert_eq!(counts.iter().sum::<usize>(), 10_000, "{axis}");
        let stat = chi_square(&counts);
        assert!(stat < critical(counts.len()), "{axis}: chi-square {stat} for {counts:?}");
    }
}

fn toy_set(n: usize, seed: u64) -> LabelledSet<f32> {
    let (channels, steps) = (2, 3);
    let mut rng = rng_from(seed);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let y = i % 2;
        labels.push(y);
        for _ in 0..channels * steps {
            data.push((rng.random_range(0..4) + y) as f32);
        }
    }
    LabelledSet {
        batch: SequenceBatch::new(channels, steps, data).unwrap(),
        labels,
    }
}

fn two_point_space() -> SearchSpace {
    SearchSpace {
        n_layers: vec![1],
        hidden_units: vec![2, 6],
        dropout: vec![0.0],
        kernel_reg: vec![Regularizer::None],
        recurrent_reg: vec![Regularizer::None],
        initial_lr: vec![1e-2],
    }
}

fn base() -> TrainConfig {
    TrainConfig {
        batch_size: 32,
        max_epochs: 6,
        ..TrainConfig::default()
    }
}

#[test]
fn winner_matches_exhaustive_retraining() {
    let (tr, va) = (toy_set(120, 1), toy_set(40, 2));
    let results = random_search(&two_point_space(), 6, &base(), &tr, &va, 2, 17).unwrap();
    assert_eq!(results.len(), 6);
    for r in &results {
        let mut cfg = ModelConfig::new(2, 3, 2);
        cfg.hidden_units = r.hyper.hidden_units;
        assert_eq!(cfg, r.model);
        let tc = TrainConfig {
            initial_lr: r.hyper.initial_lr,
            seed: r.seed,
            ..base()
        };
        let out = train(&cfg, &tc, &tr, &va).unwrap();
        assert_eq!(out.history.best_val_acc().unwrap(), r.val_accuracy);
        assert!((0.0..=1.0).contains(&r.val_accuracy));
    }
    let best = results
        .iter()
        .map(|r| r.val_accuracy)
        .fold(f64::MIN, f64::max);
    assert_eq!(results[0].val_accuracy, best);
    for pair in results.windows(2) {
        assert!(
            pair[0].val_accuracy > pair[1].val_accuracy
                || (pair[0].val_accuracy == pair[1].val_accuracy && pair[0].parameter_count <= pair[1].parameter_count)
        );
    }
}

#[test]
fn search_is_deterministic_and_budget_is_respected() {
    let (tr, va) = (toy_set(60, 3), toy_set(20, 4));
    let a = random_search(&two_point_space(), 3, &base(), &tr, &va, 2, 5).unwrap();
    let b = random_search(&two_point_space(), 3, &base(), &tr, &va, 2, 5).unwrap();
    assert_eq!(leaderboard_csv(&a), leaderboard_csv(&b));
    let one = random_search(&two_point_space(), 1, &base(), &tr, &va, 2, 5).unwrap();
    assert_eq!(one.len(), 1);
    assert!(random_search(&two_point_space(), 0, &base(), &tr, &va, 2, 5).is_err());
}
