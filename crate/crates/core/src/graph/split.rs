use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GraphBundle, Split};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub label_rate: f64,
    pub val_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(label_rate: f64, seed: u64) -> Self {
        SplitSpec {
            label_rate,
            val_size: 500,
            test_size: 1000,
            seed,
        }
    }

    /// Labeled nodes drawn per class: `round(label_rate · n / k)`.
    pub fn per_class(&self, num_nodes: usize, num_classes: usize) -> usize {
        (self.label_rate * num_nodes as f64 / num_classes as f64).round() as usize
    }
}

/// Draws a class-balanced training set, then validation and test sets from
/// the remaining labeled nodes. Each list is returned sorted.
pub fn make_split(bundle: &GraphBundle, spec: &SplitSpec) -> Result<GraphBundle> {
    if !(0.0..=1.0).contains(&spec.label_rate) {
        return Err(Error::InvalidArgument(format!(
            "label rate {} outside [0, 1]",
            spec.label_rate
        )));
    }
    let k = bundle.num_classes;
    let per_class = spec.per_class(bundle.num_nodes(), k);
    if per_class == 0 {
        return Err(Error::Split(format!(
            "label rate {} gives no labeled node per class ({} nodes, {k} classes)",
            spec.label_rate,
            bundle.num_nodes()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, l) in bundle.labels.iter().enumerate() {
        if let Some(c) = l {
            by_class[*c].push(i);
        }
    }

    let mut train = Vec::with_capacity(per_class * k);
    let mut rest = Vec::new();
    for (class, mut nodes) in by_class.into_iter().enumerate() {
        if nodes.is_empty() {
            return Err(Error::Split(format!("class {class} has no labeled node")));
        }
        nodes.shuffle(&mut rng);
        let take = per_class.min(nodes.len());
        train.extend_from_slice(&nodes[..take]);
        rest.extend_from_slice(&nodes[take..]);
    }
    rest.sort_unstable();
    rest.shuffle(&mut rng);

    let needed = spec.val_size.saturating_add(spec.test_size);
    if needed > rest.len() {
        return Err(Error::Split(format!(
            "need {needed} validation+test nodes but only {} labeled nodes remain",
            rest.len()
        )));
    }
    let mut val = rest[..spec.val_size].to_vec();
    let mut test = rest[spec.val_size..spec.val_size + spec.test_size].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();

    let mut out = bundle.clone();
    out.split = Split { train, val, test };
    Ok(out)
}
