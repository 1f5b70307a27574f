use ndarray::{Array2, ArrayView2};

use super::sparse::{Adjacency, SparseMatrix};

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` where `D̃` is the degree matrix of `A + I`.
pub fn renormalized_adjacency(adjacency: &Adjacency) -> SparseMatrix {
    let tilde = adjacency.with_self_loops();
    let degree = |i: usize| (adjacency.degree(i) + 1) as f64;
    let values = tilde
        .row_of_entries()
        .iter()
        .zip(tilde.indices())
        .map(|(&r, &c)| 1.0 / (degree(r) * degree(c)).sqrt())
        .collect();
    tilde.with_values(values)
}

/// Applies the renormalized filter `strength` times: `X ← Â^c X`.
pub fn smooth_features(
    features: ArrayView2<'_, f64>,
    filter: &SparseMatrix,
    strength: usize,
) -> crate::Result<Array2<f64>> {
    let mut current = features.to_owned();
    for _ in 0..strength {
        current = filter.mul_dense(current.view())?;
    }
    Ok(current)
}

/// Filter strength used when no per-dataset table applies: lower label rates
/// get stronger smoothing.
pub fn default_filter_strength(label_rate: f64) -> usize {
    if label_rate <= 0.005 {
        15
    } else if label_rate <= 0.01 {
        8
    } else {
        3
    }
}
