//! Multi-seed runs and the three-arm loss ablation.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{bundle_for_seed, train_prepared, PreparedGraph, RunReport, TrainConfig};
use crate::error::{Error, Result};
use crate::gat::ModelParams;
use crate::graph::GraphBundle;

/// A seed whose run returned an error; its siblings are unaffected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub parameter_count: usize,
    /// Successful runs in seed order.
    pub runs: Vec<RunReport>,
    pub failures: Vec<RunFailure>,
    /// Mean and population standard deviation of test accuracy over the
    /// successful runs that have a test set.
    pub mean_test_acc: Option<f64>,
    pub std_test_acc: Option<f64>,
    /// Best-validation parameters of each successful run, aligned with `runs`.
    #[serde(skip)]
    pub params: Vec<ModelParams>,
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}

fn run_seed(bundle: &GraphBundle, config: &TrainConfig, seed: u64) -> Result<(ModelParams, RunReport)> {
    let seeded = bundle_for_seed(bundle, config, seed)?;
    let prepared = PreparedGraph::new(&seeded, config.filter_strength, config.include_self_pairs)?;
    train_prepared(&prepared, config, seed)
}

/// Trains once per configured seed on up to `threads` worker threads.
/// Results are gathered in seed order, so the report does not depend on the
/// thread count.
/// What one seed produces: its best parameters and report, or the error.
type SeedOutcome = Result<(ModelParams, RunReport)>;

pub fn run_experiment(
    bundle: &GraphBundle,
    config: &TrainConfig,
    threads: usize,
) -> Result<ExperimentReport> {
    config.validate()?;
    if config.seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "an experiment needs at least one seed".into(),
        ));
    }
    let seeds = &config.seeds;
    let slots: Vec<Mutex<Option<SeedOutcome>>> = seeds.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::Relaxed);
        if i >= seeds.len() {
            break;
        }
        let outcome = run_seed(bundle, config, seeds[i]);
        *slots[i].lock().expect("result slot") = Some(outcome);
    };
    let threads = threads.clamp(1, seeds.len());
    if threads == 1 {
        worker();
    } else {
        std::thread::scope(|scope| {
            for _ in 0..threads {
                scope.spawn(worker);
            }
        });
    }

    let mut report = ExperimentReport::default();
    for (slot, &seed) in slots.into_iter().zip(seeds) {
        match slot.into_inner().expect("result slot").expect("every seed ran") {
            Ok((params, run)) => {
                report.parameter_count = run.parameter_count;
                report.params.push(params);
                report.runs.push(run);
            }
            Err(e) => report.failures.push(RunFailure {
                seed,
                error: e.to_string(),
            }),
        }
    }
    let accs: Vec<f64> = report.runs.iter().filter_map(|r| r.test_acc).collect();
    (report.mean_test_acc, report.std_test_acc) = mean_std(&accs);
    Ok(report)
}

/// Objective variants compared in the ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationArm {
    /// `ℓ_sup + α₁ℓ_sacn + α₂ℓ_w2s`.
    Full,
    /// `α₁ = 0`: `ℓ_sup + α₂ℓ_w2s`.
    SupW2s,
    /// `α₂ = 0`: `ℓ_sup + α₁ℓ_sacn`.
    SupSacn,
}

impl AblationArm {
    pub const ALL: [AblationArm; 3] = [AblationArm::Full, AblationArm::SupW2s, AblationArm::SupSacn];

    pub fn name(self) -> &'static str {
        match self {
            AblationArm::Full => "full",
            AblationArm::SupW2s => "sup+w2s",
            AblationArm::SupSacn => "sup+sacn",
        }
    }

    pub fn apply(self, config: &TrainConfig) -> TrainConfig {
        let mut out = config.clone();
        match self {
            AblationArm::Full => {}
            AblationArm::SupW2s => out.weights.alpha1 = 0.0,
            AblationArm::SupSacn => out.weights.alpha2 = 0.0,
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub arm: String,
    pub alpha1: f64,
    pub alpha2: f64,
    pub mean_test_acc: Option<f64>,
    pub std_test_acc: Option<f64>,
    pub runs: usize,
    pub failures: usize,
}

/// Runs the three arms in [`AblationArm::ALL`] order.
pub fn run_ablation(
    bundle: &GraphBundle,
    config: &TrainConfig,
    threads: usize,
) -> Result<Vec<(AblationRow, ExperimentReport)>> {
    AblationArm::ALL
        .iter()
        .map(|&arm| {
            let arm_config = arm.apply(config);
            let report = run_experiment(bundle, &arm_config, threads)?;
            let row = AblationRow {
                arm: arm.name().to_string(),
                alpha1: arm_config.weights.alpha1,
                alpha2: arm_config.weights.alpha2,
                mean_test_acc: report.mean_test_acc,
                std_test_acc: report.std_test_acc,
                runs: report.runs.len(),
                failures: report.failures.len(),
            };
            Ok((row, report))
        })
        .collect()
}
