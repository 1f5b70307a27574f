//! Class-aware pseudolabel selection on the clean view.
//!
//! Every class ranks its own candidates (unlabeled nodes whose argmax is that
//! class) by confidence and keeps a per-class quota, so a dominant class can
//! never crowd out a rare one.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelSet {
    /// Selected node indices, grouped by class and ranked within each class.
    pub indices: Vec<usize>,
    /// Hard one-hot targets, one row per selected node.
    pub targets: Array2<f64>,
    pub classes: Vec<usize>,
    pub confidences: Vec<f64>,
    pub per_class_counts: Vec<usize>,
}

impl PseudoLabelSet {
    pub fn empty(num_classes: usize) -> Self {
        PseudoLabelSet {
            indices: Vec::new(),
            targets: Array2::zeros((0, num_classes)),
            classes: Vec::new(),
            confidences: Vec::new(),
            per_class_counts: vec![0; num_classes],
        }
    }

    /// `u`: number of selected high-confidence predictions.
    pub fn selected_count(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.per_class_counts.len()
    }

    pub fn mean_confidence(&self) -> Option<f64> {
        if self.confidences.is_empty() {
            None
        } else {
            Some(self.confidences.iter().sum::<f64>() / self.confidences.len() as f64)
        }
    }
}

/// Growing per-class fraction of candidates admitted as pseudolabels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuotaSchedule {
    pub initial_fraction: f64,
    pub growth_per_round: f64,
    pub cap_fraction: f64,
    /// Epochs between selection refreshes.
    pub round_length: usize,
}

impl Default for QuotaSchedule {
    fn default() -> Self {
        QuotaSchedule {
            initial_fraction: 0.05,
            growth_per_round: 0.05,
            cap_fraction: 0.5,
            round_length: 50,
        }
    }
}

impl QuotaSchedule {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 <= self.initial_fraction
            && self.initial_fraction <= self.cap_fraction
            && self.cap_fraction <= 1.0
            && self.growth_per_round >= 0.0
            && self.round_length > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid quota schedule {self:?}")))
        }
    }

    /// `min(cap, initial + growth · floor((epoch - start) / round_length))`.
    pub fn fraction_at(&self, epoch: usize, start: usize) -> f64 {
        let rounds = epoch.saturating_sub(start) / self.round_length.max(1);
        (self.initial_fraction + self.growth_per_round * rounds as f64).min(self.cap_fraction)
    }
}

/// Per-class quotas: `round(fraction · available_j)`.
pub fn quota_at(
    schedule: &QuotaSchedule,
    epoch: usize,
    start: usize,
    per_class_available: &[usize],
) -> Vec<usize> {
    let fraction = schedule.fraction_at(epoch, start);
    per_class_available
        .iter()
        .map(|&a| (fraction * a as f64).round() as usize)
        .collect()
}

/// Number of `candidates` whose argmax falls in each class.
pub fn available_per_class(predictions: ArrayView2<'_, f64>, candidates: &[usize]) -> Vec<usize> {
    let mut counts = vec![0; predictions.ncols()];
    for &i in candidates {
        counts[argmax(predictions.row(i))] += 1;
    }
    counts
}

/// For every class `j`, ranks the candidates predicted as `j` by their top
/// probability and keeps the first `min(quota[j], available)`. Ties go to
/// the lower node index.
pub fn select_class_aware(
    predictions: ArrayView2<'_, f64>,
    candidates: &[usize],
    quota: &[usize],
) -> Result<PseudoLabelSet> {
    let k = predictions.ncols();
    if quota.len() != k {
        return Err(Error::shape(
            "select_class_aware",
            format!("{} quotas for {k} classes", quota.len()),
        ));
    }
    let mut buckets: Vec<Vec<(usize, f64)>> = vec![Vec::new(); k];
    for &i in candidates {
        if i >= predictions.nrows() {
            return Err(Error::shape(
                "select_class_aware",
                format!("candidate {i} beyond {} rows", predictions.nrows()),
            ));
        }
        let row = predictions.row(i);
        let c = argmax(row);
        buckets[c].push((i, row[c]));
    }

    let mut set = PseudoLabelSet::empty(k);
    for (class, mut bucket) in buckets.into_iter().enumerate() {
        bucket.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        bucket.truncate(quota[class]);
        set.per_class_counts[class] = bucket.len();
        for (i, conf) in bucket {
            set.indices.push(i);
            set.classes.push(class);
            set.confidences.push(conf);
        }
    }
    let mut targets = Array2::zeros((set.indices.len(), k));
    for (row, &c) in set.classes.iter().enumerate() {
        targets[[row, c]] = 1.0;
    }
    set.targets = targets;
    Ok(set)
}

/// One line of the selection log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionLogEntry {
    pub epoch: usize,
    pub per_class_counts: Vec<usize>,
    pub mean_confidence: Option<f64>,
}

impl SelectionLogEntry {
    pub fn new(epoch: usize, set: &PseudoLabelSet) -> Self {
        SelectionLogEntry {
            epoch,
            per_class_counts: set.per_class_counts.clone(),
            mean_confidence: set.mean_confidence(),
        }
    }
}
