use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::sparse::{Adjacency, SparseMatrix};
use super::{GraphBundle, Split};
use crate::error::{Error, Result};

/// Stochastic block model with binary class-prototype features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbmParams {
    pub num_nodes: usize,
    pub num_classes: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub num_features: usize,
    /// Probability of flipping each prototype bit independently per node.
    pub feature_flip: f64,
}

/// Samples a labeled SBM graph. Node `i` belongs to class `i % k`; the
/// returned bundle carries no split.
pub fn generate_sbm(params: &SbmParams, seed: u64) -> Result<GraphBundle> {
    let SbmParams {
        num_nodes: n,
        num_classes: k,
        p_in,
        p_out,
        num_features: m,
        feature_flip,
    } = *params;
    for (name, p) in [("p_in", p_in), ("p_out", p_out), ("feature_flip", feature_flip)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("{name}={p} is not a probability")));
        }
    }
    if p_in <= p_out {
        return Err(Error::InvalidArgument(format!(
            "p_in ({p_in}) must exceed p_out ({p_out})"
        )));
    }
    if k == 0 || n < k {
        return Err(Error::InvalidArgument(format!(
            "need at least one node per class (n={n}, k={k})"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let class_of = |i: usize| i % k;

    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let p = if class_of(i) == class_of(j) { p_in } else { p_out };
            if rng.random_bool(p) {
                edges.push((i, j));
            }
        }
    }
    let adjacency = Adjacency::from_edges(n, &edges)?;

    let prototypes: Vec<Vec<bool>> = (0..k)
        .map(|_| (0..m).map(|_| rng.random_bool(0.5)).collect())
        .collect();
    let mut triplets = Vec::new();
    for i in 0..n {
        for (d, &bit) in prototypes[class_of(i)].iter().enumerate() {
            let flipped = feature_flip > 0.0 && rng.random_bool(feature_flip);
            if bit != flipped {
                triplets.push((i, d, 1.0));
            }
        }
    }
    let features = SparseMatrix::from_triplets(n, m, &triplets)?;

    Ok(GraphBundle {
        name: format!("sbm-n{n}-k{k}"),
        num_classes: k,
        features,
        adjacency,
        labels: (0..n).map(|i| Some(class_of(i))).collect(),
        split: Split::default(),
    })
}
