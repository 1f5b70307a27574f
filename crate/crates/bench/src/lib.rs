//! Shared inputs for the benchmarks: a synthetic graph with the size and
//! sparsity of the 2708-node citation benchmark.

use ndarray::Array2;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sacn::{generate_sbm, make_split, GraphBundle, SbmParams, SparseMatrix, SplitSpec};

pub const CITATION_NODES: usize = 2708;
pub const CITATION_FEATURES: usize = 1433;
pub const CITATION_CLASSES: usize = 7;
/// Average number of active binary features per node.
pub const WORDS_PER_NODE: usize = 18;

/// A sparse SBM with about four neighbors per node, bag-of-words features
/// drawn mostly from a class-specific vocabulary, and a 0.5% label split.
pub fn citation_sized() -> GraphBundle {
    let n = CITATION_NODES;
    let k = CITATION_CLASSES;
    let m = CITATION_FEATURES;
    let params = SbmParams {
        num_nodes: n,
        num_classes: k,
        p_in: 3.0 * k as f64 / n as f64,
        p_out: 1.0 / n as f64,
        num_features: m,
        feature_flip: 0.0,
    };
    let mut bundle = generate_sbm(&params, 7).expect("valid parameters");

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let vocabulary = m / k;
    let mut triplets = Vec::with_capacity(n * WORDS_PER_NODE);
    for i in 0..n {
        let class = bundle.labels[i].expect("generated nodes are labeled");
        let topical = index::sample(&mut rng, vocabulary, WORDS_PER_NODE);
        for word in topical.iter() {
            let col = if rng.random_bool(0.6) {
                class * vocabulary + word
            } else {
                rng.random_range(0..m)
            };
            triplets.push((i, col, 1.0));
        }
    }
    triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
    triplets.dedup_by_key(|&mut (r, c, _)| (r, c));
    bundle.features = SparseMatrix::from_triplets(n, m, &triplets).expect("in range");
    make_split(&bundle, &SplitSpec::new(0.005, 7)).expect("split fits")
}

pub fn random_dense(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}
