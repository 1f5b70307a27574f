//! Two-stage training: `ℓ_one` during pretraining, then `ℓ_two` with
//! periodically refreshed class-aware pseudolabels, early stopping on
//! validation accuracy and a best-validation snapshot.

mod adam;
mod experiment;

use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::MaskPlan;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::gat::{forward_view, GatConfig, GraphContext, ModelParams, ModelVars, NodeFeatures, ViewInput};
use crate::graph::{
    default_filter_strength, make_split, renormalized_adjacency, smooth_features, GraphBundle, SparseMatrix,
    Split, SplitSpec,
};
use crate::objectives::{
    consensus_support, loss_sacn, loss_stage_one, loss_stage_two, loss_sup, loss_w2s, LossWeights,
    TargetMatrix,
};
use crate::pseudolabel::{
    argmax, available_per_class, quota_at, select_class_aware, PseudoLabelSet, QuotaSchedule,
    SelectionLogEntry,
};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use experiment::{run_ablation, run_experiment, AblationArm, AblationRow, ExperimentReport, RunFailure};

/// Split drawn afresh for every seed instead of using the bundle's own.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub label_rate: f64,
    #[serde(default = "default_val_size")]
    pub val_size: usize,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
}

fn default_val_size() -> usize {
    500
}

fn default_test_size() -> usize {
    1000
}

impl SplitConfig {
    pub fn spec(&self, seed: u64) -> SplitSpec {
        SplitSpec {
            label_rate: self.label_rate,
            val_size: self.val_size,
            test_size: self.test_size,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub model: GatConfig,
    pub epochs_pretrain: usize,
    pub epochs_max: usize,
    /// Epochs without a strict validation improvement before stopping.
    pub patience: usize,
    pub weights: LossWeights,
    /// Fraction of feature columns zeroed in each strong view.
    pub mask_rate: f64,
    /// Smoothing steps `c`; `None` picks a value from the training label rate.
    pub filter_strength: Option<usize>,
    /// Whether `ℓ_cor` pairs every node with itself (`Ã = A + I`).
    pub include_self_pairs: bool,
    pub quota: QuotaSchedule,
    pub split: Option<SplitConfig>,
    pub seeds: Vec<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            weight_decay: 5e-4,
            model: GatConfig::default(),
            epochs_pretrain: 100,
            epochs_max: 1000,
            patience: 100,
            weights: LossWeights::default(),
            mask_rate: 0.3,
            filter_strength: None,
            include_self_pairs: true,
            quota: QuotaSchedule::default(),
            split: None,
            seeds: (0..10).collect(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidArgument(msg));
        if self.epochs_pretrain > self.epochs_max {
            return invalid(format!(
                "epochs_pretrain {} exceeds epochs_max {}",
                self.epochs_pretrain, self.epochs_max
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return invalid(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.learning_rate * self.weight_decay < 1.0) {
            return invalid(format!("weight decay {} out of range", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return invalid(format!("dropout {} outside [0, 1)", self.model.dropout));
        }
        if !(0.0..=1.0).contains(&self.mask_rate) {
            return invalid(format!("mask rate {} outside [0, 1]", self.mask_rate));
        }
        if self.model.heads == 0 || self.model.head_dim == 0 {
            return invalid("heads and head_dim must be positive".into());
        }
        if let Some(split) = &self.split {
            if !(split.label_rate > 0.0 && split.label_rate <= 1.0) {
                return invalid(format!("label rate {} outside (0, 1]", split.label_rate));
            }
        }
        self.weights.validate()?;
        self.quota.validate()
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }

    /// SHA-256 of the canonical JSON form, stamped into checkpoints.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Loss values of one epoch. Terms that are not part of the objective at
/// that epoch are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub l_sup: f64,
    pub l_cor: Option<f64>,
    pub l_de: Option<f64>,
    pub l_w2s: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub filter_strength: usize,
    pub parameter_count: usize,
    pub epochs_run: usize,
    /// Epoch of the restored snapshot; `None` without a validation set.
    pub best_epoch: Option<usize>,
    pub best_val_acc: Option<f64>,
    pub train_acc: Option<f64>,
    /// Measured once, on the restored snapshot.
    pub test_acc: Option<f64>,
    pub metrics: Vec<EpochMetrics>,
    pub selection_log: Vec<SelectionLogEntry>,
    /// Kept out of serialized reports so that they stay reproducible.
    #[serde(skip)]
    pub wall_time_secs: f64,
}

/// A bundle with its features filtered and every structure the training
/// loop borrows precomputed.
#[derive(Clone, Debug)]
pub struct PreparedGraph {
    pub graph: GraphContext,
    pub support: SparseMatrix,
    /// Filtered features `Â^c X`.
    pub features: Array2<f64>,
    /// The same features as the factors `X` and `Â`.
    pub raw_features: SparseMatrix,
    pub filter: SparseMatrix,
    pub labels: Vec<Option<usize>>,
    pub split: Split,
    pub train_targets: TargetMatrix,
    pub num_classes: usize,
    pub filter_strength: usize,
}

impl PreparedGraph {
    pub fn new(
        bundle: &GraphBundle,
        filter_strength: Option<usize>,
        include_self_pairs: bool,
    ) -> Result<Self> {
        bundle.validate()?;
        let n = bundle.num_nodes();
        let strength = filter_strength
            .unwrap_or_else(|| default_filter_strength(bundle.split.train.len() as f64 / n.max(1) as f64));
        let filter = renormalized_adjacency(&bundle.adjacency);
        let features = smooth_features(bundle.features.to_dense().view(), &filter, strength)?;
        let train_classes = bundle.labels_of(&bundle.split.train)?;
        Ok(PreparedGraph {
            graph: GraphContext::new(&bundle.adjacency),
            support: consensus_support(&bundle.adjacency, include_self_pairs),
            features,
            raw_features: bundle.features.clone(),
            filter,
            labels: bundle.labels.clone(),
            split: bundle.split.clone(),
            train_targets: TargetMatrix::from_classes(&train_classes, bundle.num_classes)?,
            num_classes: bundle.num_classes,
            filter_strength: strength,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.nrows()
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    /// The feature layout the encoder should read: the factored form when
    /// `nnz(X) + c · nnz(Â)` multiply-adds per output column undercut the
    /// `n · m` of the dense filtered matrix. Both give the same projection
    /// up to rounding.
    pub fn node_features(&self) -> NodeFeatures<'_> {
        let dense_cost = self.num_nodes() * self.num_features();
        let factored_cost = self.raw_features.nnz() + self.filter_strength * self.filter.nnz();
        if factored_cost < dense_cost {
            NodeFeatures::Filtered {
                raw: &self.raw_features,
                filter: &self.filter,
                steps: self.filter_strength,
            }
        } else {
            NodeFeatures::Dense(&self.features)
        }
    }

    /// Nodes eligible for pseudolabels: everything outside the training set.
    pub fn pseudolabel_candidates(&self) -> Vec<usize> {
        let mut is_train = vec![false; self.num_nodes()];
        for &i in &self.split.train {
            is_train[i] = true;
        }
        (0..self.num_nodes()).filter(|&i| !is_train[i]).collect()
    }
}

/// Fraction of `idx` whose row argmax equals the true label. Argmax ties go
/// to the lowest class index.
pub fn accuracy(predictions: ArrayView2<'_, f64>, labels: &[Option<usize>], idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Err(Error::InvalidArgument("accuracy over an empty node set".into()));
    }
    let mut correct = 0usize;
    for &i in idx {
        let truth = labels
            .get(i)
            .copied()
            .flatten()
            .ok_or_else(|| Error::InvalidArgument(format!("node {i} has no label")))?;
        if i >= predictions.nrows() {
            return Err(Error::shape(
                "accuracy",
                format!("node {i} beyond {} rows", predictions.nrows()),
            ));
        }
        if argmax(predictions.row(i)) == truth {
            correct += 1;
        }
    }
    Ok(correct as f64 / idx.len() as f64)
}

/// Eval-mode accuracy of the weak view (no dropout, no masking).
pub fn evaluate(
    params: &ModelParams,
    prepared: &PreparedGraph,
    idx: &[usize],
    model: &GatConfig,
) -> Result<f64> {
    if idx.is_empty() {
        return Err(Error::InvalidArgument("evaluation over an empty node set".into()));
    }
    let out = params.predict_features(&prepared.graph, prepared.node_features(), model)?;
    accuracy(out.y.view(), &prepared.labels, idx)
}

/// Tape handles of every term of the objective.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveVars {
    pub sup: Var,
    pub cor: Option<Var>,
    pub de: Option<Var>,
    pub sacn: Option<Var>,
    pub w2s: Option<Var>,
    pub total: Var,
}

/// Runs the weak view and both strong views through the shared encoder and
/// assembles `ℓ_one` (no `pseudo`) or `ℓ_two`. `views` holds the weak view
/// followed by the two strong views. The consensus term is skipped entirely
/// when `α₁ = 0`.
#[allow(clippy::too_many_arguments)]
pub fn objective<'g, R: Rng + ?Sized>(
    tape: &mut Tape<'g>,
    prepared: &'g PreparedGraph,
    vars: &ModelVars,
    views: [ViewInput<'g, '_>; 3],
    pseudo: Option<&'g PseudoLabelSet>,
    weights: &LossWeights,
    model: &GatConfig,
    mut dropout_rng: Option<&mut R>,
) -> Result<ObjectiveVars> {
    let mut run = |tape: &mut Tape<'g>, x: ViewInput<'g, '_>| {
        forward_view(
            tape,
            &prepared.graph,
            x,
            vars,
            model.dropout,
            model.leaky_slope,
            dropout_rng.as_deref_mut(),
        )
    };
    let weak = run(tape, views[0])?;
    let strong1 = run(tape, views[1])?;
    let strong2 = run(tape, views[2])?;

    let sup = loss_sup(tape, weak.y, &prepared.train_targets, &prepared.split.train)?;
    let (cor, de, sacn) = if weights.alpha1 > 0.0 {
        let terms = loss_sacn(tape, strong1.z, strong2.z, &prepared.support, weights.lambda)?;
        (Some(terms.cor), Some(terms.de), Some(terms.total))
    } else {
        (None, None, None)
    };
    let sacn_or_zero = match sacn {
        Some(v) => v,
        None => tape.constant(Array2::zeros((1, 1))),
    };
    let (w2s, total) = match pseudo {
        Some(set) => {
            let w2s = loss_w2s(tape, set, strong1.y, strong2.y)?;
            let total = loss_stage_two(tape, sup, sacn_or_zero, w2s, weights)?;
            (Some(w2s), total)
        }
        None => (None, loss_stage_one(tape, sup, sacn_or_zero, weights)?),
    };
    Ok(ObjectiveVars {
        sup,
        cor,
        de,
        sacn,
        w2s,
        total,
    })
}

/// Independent generators derived from one seed.
struct Streams {
    init: ChaCha8Rng,
    mask1: ChaCha8Rng,
    mask2: ChaCha8Rng,
    dropout: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let stream = |id: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id);
            rng
        };
        Streams {
            init: stream(0),
            mask1: stream(1),
            mask2: stream(2),
            dropout: stream(3),
        }
    }
}

/// Mask plans of the two strong views at epoch 1 for `seed`.
pub fn first_epoch_masks(num_features: usize, rate: f64, seed: u64) -> Result<(MaskPlan, MaskPlan)> {
    let mut streams = Streams::new(seed);
    Ok((
        MaskPlan::sample(num_features, rate, &mut streams.mask1)?,
        MaskPlan::sample(num_features, rate, &mut streams.mask2)?,
    ))
}

fn finite(epoch: usize, term: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Diverged { epoch, term, value })
    }
}

/// Trains on the bundle's own split. See [`run_experiment`] for per-seed
/// splits.
pub fn train(bundle: &GraphBundle, config: &TrainConfig, seed: u64) -> Result<(ModelParams, RunReport)> {
    config.validate()?;
    let prepared = PreparedGraph::new(bundle, config.filter_strength, config.include_self_pairs)?;
    train_prepared(&prepared, config, seed)
}

pub fn train_prepared(
    prepared: &PreparedGraph,
    config: &TrainConfig,
    seed: u64,
) -> Result<(ModelParams, RunReport)> {
    config.validate()?;
    if prepared.split.train.is_empty() {
        return Err(Error::Split(
            "training needs at least one labeled training node".into(),
        ));
    }
    let started = Instant::now();
    let mut streams = Streams::new(seed);
    let mut params = ModelParams::init(
        &mut streams.init,
        prepared.num_features(),
        prepared.num_classes,
        &config.model,
    );
    let adam_config = config.adam();
    let mut adam = AdamState::new(params.tensors());
    let candidates = prepared.pseudolabel_candidates();
    let stage_two_start = config.epochs_pretrain + 1;

    let mut report = RunReport {
        seed,
        filter_strength: prepared.filter_strength,
        parameter_count: params.parameter_count(),
        ..RunReport::default()
    };
    let mut pseudo = PseudoLabelSet::empty(prepared.num_classes);
    let mut best: Option<(usize, f64, ModelParams)> = None;

    for epoch in 1..=config.epochs_max {
        let stage_two = epoch >= stage_two_start && config.weights.alpha2 > 0.0;
        if stage_two && (epoch - stage_two_start).is_multiple_of(config.quota.round_length) {
            let weak = params.predict_features(&prepared.graph, prepared.node_features(), &config.model)?;
            let available = available_per_class(weak.y.view(), &candidates);
            let quota = quota_at(&config.quota, epoch, stage_two_start, &available);
            pseudo = select_class_aware(weak.y.view(), &candidates, &quota)?;
            report.selection_log.push(SelectionLogEntry::new(epoch, &pseudo));
        }

        let plan1 = MaskPlan::sample(prepared.num_features(), config.mask_rate, &mut streams.mask1)?;
        let plan2 = MaskPlan::sample(prepared.num_features(), config.mask_rate, &mut streams.mask2)?;
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let features = prepared.node_features();
        let views = [
            ViewInput::Features { features, mask: None },
            ViewInput::Features {
                features,
                mask: Some(&plan1),
            },
            ViewInput::Features {
                features,
                mask: Some(&plan2),
            },
        ];
        let obj = objective(
            &mut tape,
            prepared,
            &vars,
            views,
            stage_two.then_some(&pseudo),
            &config.weights,
            &config.model,
            Some(&mut streams.dropout),
        )?;
        let value = |v: Option<Var>| v.map(|v| tape.scalar(v));
        let l_sup = finite(epoch, "l_sup", tape.scalar(obj.sup))?;
        let l_cor = value(obj.cor).map(|v| finite(epoch, "l_cor", v)).transpose()?;
        let l_de = value(obj.de).map(|v| finite(epoch, "l_de", v)).transpose()?;
        let l_w2s = value(obj.w2s).map(|v| finite(epoch, "l_w2s", v)).transpose()?;
        finite(epoch, "total", tape.scalar(obj.total))?;

        let mut grads = tape.backward(obj.total)?;
        let grads: Vec<Array2<f64>> = vars
            .all()
            .into_iter()
            .zip(params.tensors())
            .map(|(v, p)| grads.take(v).unwrap_or_else(|| Array2::zeros(p.dim())))
            .collect();
        drop(tape);
        adam_step(&mut params.tensors_mut(), &grads, &mut adam, &adam_config)?;

        let val_acc = if prepared.split.val.is_empty() {
            None
        } else {
            Some(evaluate(&params, prepared, &prepared.split.val, &config.model)?)
        };
        report.metrics.push(EpochMetrics {
            epoch,
            l_sup,
            l_cor,
            l_de,
            l_w2s,
            val_acc,
        });
        report.epochs_run = epoch;

        if let Some(acc) = val_acc {
            if best.as_ref().is_none_or(|b| acc > b.1) {
                best = Some((epoch, acc, params.clone()));
            }
        }
        if let Some((best_epoch, _, _)) = &best {
            if epoch >= config.epochs_pretrain && epoch - best_epoch >= config.patience {
                break;
            }
        }
    }

    if let Some((epoch, acc, snapshot)) = best {
        report.best_epoch = Some(epoch);
        report.best_val_acc = Some(acc);
        params = snapshot;
    }
    let measure = |idx: &[usize]| -> Result<Option<f64>> {
        if idx.is_empty() {
            Ok(None)
        } else {
            evaluate(&params, prepared, idx, &config.model).map(Some)
        }
    };
    report.train_acc = measure(&prepared.split.train)?;
    report.test_acc = measure(&prepared.split.test)?;
    report.wall_time_secs = started.elapsed().as_secs_f64();
    Ok((params, report))
}

/// The bundle a given seed trains on: a fresh split when the config asks
/// for one, the bundle's own split otherwise.
pub fn bundle_for_seed(bundle: &GraphBundle, config: &TrainConfig, seed: u64) -> Result<GraphBundle> {
    match &config.split {
        Some(split) => make_split(bundle, &split.spec(seed)),
        None => Ok(bundle.clone()),
    }
}

#[cfg(test)]
mod tests;
