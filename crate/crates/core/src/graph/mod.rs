//! Graph data model: adjacency, node features, labels and the
//! train/validation/test split.

mod filter;
mod io;
mod sbm;
mod sparse;
mod split;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use filter::{default_filter_strength, renormalized_adjacency, smooth_features};
pub use io::{load_bundle, save_bundle};
pub use sbm::{generate_sbm, SbmParams};
pub use sparse::{Adjacency, SparseMatrix};
pub use split::{make_split, SplitSpec};

/// Disjoint node index lists.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn is_empty(&self) -> bool {
        self.train.is_empty() && self.val.is_empty() && self.test.is_empty()
    }
}

/// A node-classification dataset held fully in memory.
///
/// Immutable after construction; clone to derive a bundle with a new split.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphBundle {
    pub name: String,
    pub num_classes: usize,
    pub features: SparseMatrix,
    pub adjacency: Adjacency,
    pub labels: Vec<Option<usize>>,
    pub split: Split,
}

impl GraphBundle {
    pub fn num_nodes(&self) -> usize {
        self.adjacency.num_nodes()
    }

    pub fn num_features(&self) -> usize {
        self.features.shape().1
    }

    /// `l`: size of the training set.
    pub fn num_labeled(&self) -> usize {
        self.split.train.len()
    }

    /// `u = n - l`: every node outside the training set.
    pub fn num_unlabeled(&self) -> usize {
        self.num_nodes() - self.num_labeled()
    }

    /// Nodes outside the training set, ascending.
    pub fn unlabeled_nodes(&self) -> Vec<usize> {
        let train: HashSet<usize> = self.split.train.iter().copied().collect();
        (0..self.num_nodes()).filter(|i| !train.contains(i)).collect()
    }

    pub fn labels_of(&self, idx: &[usize]) -> Result<Vec<usize>> {
        idx.iter()
            .map(|&i| self.labels[i].ok_or_else(|| Error::Split(format!("node {i} has no label"))))
            .collect()
    }

    /// Checks every structural invariant of the bundle.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        if self.features.shape().0 != n {
            return Err(Error::InvalidArgument(format!(
                "feature matrix has {} rows for {n} nodes",
                self.features.shape().0
            )));
        }
        if self.labels.len() != n {
            return Err(Error::InvalidArgument(format!(
                "{} labels for {n} nodes",
                self.labels.len()
            )));
        }
        if let Some((i, c)) = self
            .labels
            .iter()
            .enumerate()
            .find_map(|(i, l)| l.filter(|&c| c >= self.num_classes).map(|c| (i, c)))
        {
            return Err(Error::InvalidArgument(format!(
                "node {i} has class {c} but only {} classes exist",
                self.num_classes
            )));
        }
        validate_split(&self.split, n, &self.labels)
    }

    /// Relabels nodes so that old node `i` becomes node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> GraphBundle {
        let n = self.num_nodes();
        assert_eq!(perm.len(), n);
        let mut triplets = Vec::with_capacity(self.features.nnz());
        for (r, &to) in perm.iter().enumerate() {
            let (cols, vals) = self.features.row(r);
            triplets.extend(cols.iter().zip(vals).map(|(&c, &v)| (to, c, v)));
        }
        let features = SparseMatrix::from_triplets(n, self.num_features(), &triplets)
            .expect("permutation preserves validity");
        let mut labels = vec![None; n];
        for (i, l) in self.labels.iter().enumerate() {
            labels[perm[i]] = *l;
        }
        let map = |v: &[usize]| v.iter().map(|&i| perm[i]).collect::<Vec<_>>();
        GraphBundle {
            name: self.name.clone(),
            num_classes: self.num_classes,
            features,
            adjacency: self.adjacency.permuted(perm),
            labels,
            split: Split {
                train: map(&self.split.train),
                val: map(&self.split.val),
                test: map(&self.split.test),
            },
        }
    }
}

pub(crate) fn validate_split(split: &Split, n: usize, labels: &[Option<usize>]) -> Result<()> {
    let mut seen: HashSet<usize> = HashSet::new();
    for (name, list) in [
        ("train", &split.train),
        ("val", &split.val),
        ("test", &split.test),
    ] {
        for &i in list.iter() {
            if i >= n {
                return Err(Error::Split(format!(
                    "{name} index {i} out of range for {n} nodes"
                )));
            }
            if !seen.insert(i) {
                return Err(Error::Split(format!(
                    "node {i} appears twice across split lists ({name})"
                )));
            }
        }
    }
    if let Some(&i) = split.train.iter().find(|&&i| labels[i].is_none()) {
        return Err(Error::Split(format!("train node {i} has no label")));
    }
    Ok(())
}
