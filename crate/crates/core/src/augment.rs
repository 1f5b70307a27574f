//! Strong views: whole feature dimensions are zeroed for every node while
//! the graph structure stays untouched.

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView2};
use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

/// Feature dimensions masked for one view.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskPlan {
    pub masked_dims: BTreeSet<usize>,
    pub num_features: usize,
}

impl MaskPlan {
    /// Draws exactly `round(rate · m)` distinct dimensions.
    pub fn sample<R: Rng + ?Sized>(num_features: usize, rate: f64, rng: &mut R) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!("mask rate {rate} outside [0, 1]")));
        }
        let count = (rate * num_features as f64).round() as usize;
        let masked_dims = index::sample(rng, num_features, count).into_iter().collect();
        Ok(MaskPlan {
            masked_dims,
            num_features,
        })
    }

    pub fn len(&self) -> usize {
        self.masked_dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masked_dims.is_empty()
    }

    /// `num_features × cols` matrix of ones with the masked rows zeroed.
    /// Gating the rows of `W` this way equals masking the columns of `X`:
    /// `(X ⊙ mask) W = X (gate ⊙ W)`.
    pub fn row_gate(&self, cols: usize) -> Array2<f64> {
        let mut gate = Array2::ones((self.num_features, cols));
        for &d in &self.masked_dims {
            gate.row_mut(d).fill(0.0);
        }
        gate
    }

    pub fn apply(&self, features: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = features.to_owned();
        for &d in &self.masked_dims {
            out.column_mut(d).fill(0.0);
        }
        out
    }
}

/// Masks `round(rate · m)` feature columns across all nodes.
pub fn feature_mask<R: Rng + ?Sized>(
    features: ArrayView2<'_, f64>,
    rate: f64,
    rng: &mut R,
) -> Result<(Array2<f64>, MaskPlan)> {
    let plan = MaskPlan::sample(features.ncols(), rate, rng)?;
    Ok((plan.apply(features), plan))
}
