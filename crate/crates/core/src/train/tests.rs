use approx::assert_abs_diff_eq;
use ndarray::array;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::graph::{generate_sbm, SbmParams};

fn sbm(p_in: f64, p_out: f64, flip: f64, seed: u64) -> GraphBundle {
    let params = SbmParams {
        num_nodes: 60,
        num_classes: 3,
        p_in,
        p_out,
        num_features: 24,
        feature_flip: flip,
    };
    let bundle = generate_sbm(&params, seed).unwrap();
    make_split(
        &bundle,
        &SplitSpec {
            label_rate: 0.1,
            val_size: 15,
            test_size: 20,
            seed,
        },
    )
    .unwrap()
}

fn small_config(epochs_pretrain: usize, epochs_max: usize) -> TrainConfig {
    TrainConfig {
        model: GatConfig {
            heads: 2,
            head_dim: 4,
            ..GatConfig::default()
        },
        epochs_pretrain,
        epochs_max,
        patience: 20,
        filter_strength: Some(2),
        quota: QuotaSchedule {
            round_length: 5,
            ..QuotaSchedule::default()
        },
        seeds: vec![0],
        ..TrainConfig::default()
    }
}

#[test]
fn zero_epochs_returns_initial_params() {
    let bundle = sbm(0.3, 0.02, 0.1, 1);
    let config = small_config(0, 0);
    let (params, report) = train(&bundle, &config, 7).unwrap();
    let mut init = ChaCha8Rng::seed_from_u64(7);
    init.set_stream(0);
    let expected = ModelParams::init(&mut init, 24, 3, &config.model);
    assert_eq!(params, expected);
    assert!(report.metrics.is_empty());
    assert!(report.selection_log.is_empty());
    assert_eq!(report.epochs_run, 0);
    assert_eq!(report.best_epoch, None);
    assert!(report.test_acc.is_some());
}

#[test]
fn separable_graph_is_fit_during_pretraining() {
    let bundle = sbm(1.0, 0.0, 0.0, 3);
    let config = TrainConfig {
        patience: 1000,
        ..small_config(100, 100)
    };
    let (_, report) = train(&bundle, &config, 0).unwrap();
    assert_eq!(report.train_acc, Some(1.0));
    let first = report.metrics.first().unwrap().l_sup;
    let last = report.metrics.last().unwrap().l_sup;
    assert!(last < first, "l_sup {first} -> {last}");
    assert!(report.metrics.iter().all(|m| m.l_w2s.is_none()));
}

#[test]
fn same_seed_gives_identical_reports() {
    let bundle = sbm(0.3, 0.02, 0.1, 4);
    let config = small_config(5, 20);
    let (p1, r1) = train(&bundle, &config, 11).unwrap();
    let (p2, r2) = train(&bundle, &config, 11).unwrap();
    assert_eq!(p1, p2);
    assert_eq!(
        serde_json::to_string(&r1).unwrap(),
        serde_json::to_string(&r2).unwrap()
    );
    let (_, r3) = train(&bundle, &config, 12).unwrap();
    assert_ne!(
        serde_json::to_string(&r1).unwrap(),
        serde_json::to_string(&r3).unwrap()
    );
}

#[test]
fn stage_two_starts_after_pretraining() {
    let bundle = sbm(0.3, 0.02, 0.1, 5);
    let config = TrainConfig {
        patience: 1000,
        ..small_config(4, 16)
    };
    let (_, report) = train(&bundle, &config, 0).unwrap();
    assert_eq!(report.metrics.len(), 16);
    for m in &report.metrics {
        assert_eq!(m.l_w2s.is_some(), m.epoch > 4, "epoch {}", m.epoch);
        assert!(m.l_cor.is_some() && m.l_de.is_some());
        assert!(m.val_acc.is_some());
    }
    let refreshes: Vec<usize> = report.selection_log.iter().map(|e| e.epoch).collect();
    assert_eq!(refreshes, vec![5, 10, 15]);
    // Quota grows by one round's increment at each refresh.
    let totals: Vec<usize> = report
        .selection_log
        .iter()
        .map(|e| e.per_class_counts.iter().sum())
        .collect();
    assert!(totals.windows(2).all(|w| w[0] <= w[1]), "{totals:?}");
}

#[test]
fn disabled_terms_are_absent_from_metrics() {
    let bundle = sbm(0.3, 0.02, 0.1, 5);
    let mut config = small_config(2, 8);
    config.weights.alpha1 = 0.0;
    let (_, report) = train(&bundle, &config, 0).unwrap();
    assert!(report
        .metrics
        .iter()
        .all(|m| m.l_cor.is_none() && m.l_de.is_none()));
    config = small_config(2, 8);
    config.weights.alpha2 = 0.0;
    let (_, report) = train(&bundle, &config, 0).unwrap();
    assert!(report.metrics.iter().all(|m| m.l_w2s.is_none()));
    assert!(report.selection_log.is_empty());
}

#[test]
fn reported_accuracy_comes_from_best_validation_snapshot() {
    let bundle = sbm(0.3, 0.03, 0.15, 6);
    let config = small_config(5, 60);
    let (params, report) = train(&bundle, &config, 2).unwrap();
    let curve: Vec<f64> = report.metrics.iter().map(|m| m.val_acc.unwrap()).collect();
    let best = curve.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let first_best = curve.iter().position(|&v| v == best).unwrap() + 1;
    assert_eq!(report.best_val_acc, Some(best));
    assert_eq!(report.best_epoch, Some(first_best));

    // Replay: the returned parameters reproduce the reported numbers.
    let prepared = PreparedGraph::new(&bundle, config.filter_strength, true).unwrap();
    let val = evaluate(&params, &prepared, &prepared.split.val, &config.model).unwrap();
    let test = evaluate(&params, &prepared, &prepared.split.test, &config.model).unwrap();
    assert_eq!(Some(val), report.best_val_acc);
    assert_eq!(Some(test), report.test_acc);

    // Early stopping: training ends `patience` epochs after the best epoch
    // unless the budget runs out first.
    let stopped = report.epochs_run;
    assert!(
        stopped == 60 || stopped == (first_best + config.patience).max(5),
        "{stopped} vs {first_best}"
    );
}

#[test]
fn no_validation_set_uses_the_full_budget() {
    let mut bundle = sbm(0.3, 0.02, 0.1, 8);
    bundle.split.val.clear();
    let config = small_config(3, 12);
    let (_, report) = train(&bundle, &config, 0).unwrap();
    assert_eq!(report.epochs_run, 12);
    assert_eq!(report.best_epoch, None);
    assert!(report.metrics.iter().all(|m| m.val_acc.is_none()));
}

#[test]
fn seeds_draw_independent_masks() {
    let (a1, a2) = first_epoch_masks(100, 0.3, 0).unwrap();
    let (b1, _) = first_epoch_masks(100, 0.3, 1).unwrap();
    assert_ne!(a1, a2);
    assert_ne!(a1, b1);
    assert_eq!(first_epoch_masks(100, 0.3, 0).unwrap(), (a1, a2));
}

#[test]
fn non_finite_loss_is_reported() {
    let mut bundle = sbm(0.3, 0.02, 0.1, 9);
    let mut values = bundle.features.values().to_vec();
    values[0] = f64::NAN;
    bundle.features = bundle.features.with_values(values);
    let err = train(&bundle, &small_config(2, 5), 0).unwrap_err();
    match err {
        Error::Diverged { epoch, .. } => assert_eq!(epoch, 1),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn training_requires_labeled_nodes() {
    let mut bundle = sbm(0.3, 0.02, 0.1, 9);
    bundle.split.train.clear();
    assert!(matches!(
        train(&bundle, &small_config(1, 2), 0),
        Err(Error::Split(_))
    ));
}

#[test]
fn accuracy_examples() {
    let labels = vec![Some(0), Some(1), Some(1), Some(0), None];
    let exact = array![[0.9, 0.1], [0.2, 0.8], [0.3, 0.7], [0.6, 0.4], [0.5, 0.5]];
    assert_eq!(accuracy(exact.view(), &labels, &[0, 1, 2, 3]).unwrap(), 1.0);
    let three_of_four = array![[0.9, 0.1], [0.2, 0.8], [0.7, 0.3], [0.6, 0.4], [0.5, 0.5]];
    assert_eq!(
        accuracy(three_of_four.view(), &labels, &[0, 1, 2, 3]).unwrap(),
        0.75
    );
    // Uniform rows resolve to class 0.
    let uniform = array![[0.5, 0.5], [0.5, 0.5], [0.5, 0.5], [0.5, 0.5], [0.5, 0.5]];
    assert_eq!(accuracy(uniform.view(), &labels, &[0, 1, 2, 3]).unwrap(), 0.5);
    assert!(accuracy(exact.view(), &labels, &[]).is_err());
    assert!(accuracy(exact.view(), &labels, &[4]).is_err());
}

#[test]
fn config_validation_and_hash() {
    let config = TrainConfig::default();
    config.validate().unwrap();
    assert_eq!(config.config_hash(), TrainConfig::default().config_hash());
    assert_eq!(config.config_hash().len(), 64);
    let mut other = config.clone();
    other.weights.lambda = 2e-3;
    assert_ne!(config.config_hash(), other.config_hash());

    let bad = [
        TrainConfig {
            epochs_pretrain: 10,
            epochs_max: 5,
            ..TrainConfig::default()
        },
        TrainConfig {
            mask_rate: 1.5,
            ..TrainConfig::default()
        },
        TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        },
        TrainConfig {
            model: GatConfig {
                dropout: 1.0,
                ..GatConfig::default()
            },
            ..TrainConfig::default()
        },
        TrainConfig {
            split: Some(SplitConfig {
                label_rate: 0.0,
                val_size: 1,
                test_size: 1,
            }),
            ..TrainConfig::default()
        },
    ];
    for config in bad {
        assert!(config.validate().is_err(), "{config:?}");
    }
}

#[test]
fn partial_config_fills_defaults() {
    let config: TrainConfig = serde_json::from_str(
        r#"{"mask_rate": 0.2, "weights": {"lambda": 0.01, "alpha1": 1.0, "alpha2": 0.25}}"#,
    )
    .unwrap();
    assert_eq!(config.mask_rate, 0.2);
    assert_eq!(config.weights.alpha2, 0.25);
    assert_eq!(config.epochs_max, 1000);
    assert!(serde_json::from_str::<TrainConfig>(r#"{"mask_rat": 0.2}"#).is_err());
}

#[test]
fn experiment_aggregates_seeds_independently_of_threads() {
    let bundle = sbm(0.3, 0.02, 0.1, 10);
    let mut config = small_config(3, 10);
    config.seeds = vec![0];
    let one = run_experiment(&bundle, &config, 1).unwrap();
    assert_eq!(one.runs.len(), 1);
    assert_eq!(one.mean_test_acc, one.runs[0].test_acc);
    assert_eq!(one.std_test_acc, Some(0.0));

    config.seeds = vec![3, 1, 2];
    config.split = Some(SplitConfig {
        label_rate: 0.1,
        val_size: 15,
        test_size: 20,
    });
    let serial = run_experiment(&bundle, &config, 1).unwrap();
    let parallel = run_experiment(&bundle, &config, 3).unwrap();
    assert_eq!(
        serde_json::to_string(&serial).unwrap(),
        serde_json::to_string(&parallel).unwrap()
    );
    assert_eq!(
        serial.runs.iter().map(|r| r.seed).collect::<Vec<_>>(),
        vec![3, 1, 2]
    );
    let accs: Vec<f64> = serial.runs.iter().map(|r| r.test_acc.unwrap()).collect();
    let mean = accs.iter().sum::<f64>() / 3.0;
    assert_abs_diff_eq!(serial.mean_test_acc.unwrap(), mean, epsilon = 1e-15);
    assert_eq!(serial.parameter_count, serial.runs[0].parameter_count);
    assert_eq!(serial.params.len(), 3);
}

#[test]
fn failed_runs_are_recorded() {
    let bundle = sbm(0.3, 0.02, 0.1, 10);
    let mut config = small_config(1, 2);
    config.split = Some(SplitConfig {
        label_rate: 0.001,
        val_size: 5,
        test_size: 5,
    });
    config.seeds = vec![0, 1];
    let report = run_experiment(&bundle, &config, 2).unwrap();
    assert!(report.runs.is_empty());
    assert_eq!(report.failures.len(), 2);
    assert_eq!(report.mean_test_acc, None);
    config.seeds.clear();
    assert!(run_experiment(&bundle, &config, 1).is_err());
}

#[test]
fn ablation_runs_three_arms() {
    let bundle = sbm(0.3, 0.02, 0.1, 12);
    let config = small_config(2, 6);
    let rows = run_ablation(&bundle, &config, 1).unwrap();
    let names: Vec<&str> = rows.iter().map(|(r, _)| r.arm.as_str()).collect();
    assert_eq!(names, vec!["full", "sup+w2s", "sup+sacn"]);
    assert_eq!((rows[1].0.alpha1, rows[1].0.alpha2), (0.0, 0.5));
    assert_eq!((rows[2].0.alpha1, rows[2].0.alpha2), (1.0, 0.0));
    assert!(rows.iter().all(|(r, _)| r.runs == 1 && r.failures == 0));
}
