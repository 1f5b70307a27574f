//! Loss terms, built on the tape so every one of them is differentiable.
//!
//! * `ℓ_cor  = -Σ_i Σ_j ã_ij ⟨z1_i, z2_j⟩` over the consensus support `Ã`.
//! * `ℓ_de   = ‖Z1ᵀZ1 - I‖²_F + ‖Z2ᵀZ2 - I‖²_F`.
//! * `ℓ_sacn = ℓ_cor + λ ℓ_de` on column-normalized latents.
//! * `ℓ_sup`, `ℓ_w2s`: summed cross-entropies against hard targets.
//! * `ℓ_one = ℓ_sup + α₁ ℓ_sacn`, `ℓ_two = ℓ_one + α₂ ℓ_w2s`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{Adjacency, SparseMatrix};
use crate::pseudolabel::PseudoLabelSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda: f64,
    pub alpha1: f64,
    pub alpha2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda: 1e-3,
            alpha1: 1.0,
            alpha2: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.lambda, self.alpha1, self.alpha2]
            .iter()
            .all(|w| w.is_finite() && *w >= 0.0)
        {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "loss weights must be non-negative: {self:?}"
            )))
        }
    }
}

/// One-hot rows for labeled nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetMatrix(Array2<f64>);

impl TargetMatrix {
    pub fn from_classes(classes: &[usize], num_classes: usize) -> Result<Self> {
        let mut t = Array2::zeros((classes.len(), num_classes));
        for (row, &c) in classes.iter().enumerate() {
            if c >= num_classes {
                return Err(Error::InvalidArgument(format!(
                    "class {c} out of range for {num_classes} classes"
                )));
            }
            t[[row, c]] = 1.0;
        }
        Ok(TargetMatrix(t))
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }
}

/// Node pairs that take part in the cross-view consensus term.
pub fn consensus_support(adjacency: &Adjacency, include_self_pairs: bool) -> SparseMatrix {
    if include_self_pairs {
        adjacency.with_self_loops()
    } else {
        SparseMatrix::from_dense(adjacency.to_dense().view())
    }
}

/// Column z-score (population std) scaled by `1/√n`, so that `ZᵀZ` is the
/// column correlation matrix.
pub fn normalize_latent<'g>(tape: &mut Tape<'g>, z: Var) -> Result<Var> {
    let n = tape.shape(z).0;
    if n < 2 {
        return Err(Error::shape(
            "normalize_latent",
            format!("need at least 2 rows, got {n}"),
        ));
    }
    let standardized = tape.zscore_columns(z)?;
    Ok(tape.scale(standardized, 1.0 / (n as f64).sqrt()))
}

/// `-tr(Z1ᵀ Ã Z2)`, touching only the stored pairs of `support`.
pub fn loss_cor<'g>(tape: &mut Tape<'g>, z1: Var, z2: Var, support: &'g SparseMatrix) -> Result<Var> {
    if tape.shape(z1) != tape.shape(z2) {
        return Err(Error::shape(
            "loss_cor",
            format!("{:?} vs {:?}", tape.shape(z1), tape.shape(z2)),
        ));
    }
    let neighbor_sum = tape.sparse_dense_matmul(support, z2)?;
    let z1t = tape.transpose(z1);
    let agreement = tape.trace_product(z1t, neighbor_sum)?;
    Ok(tape.scale(agreement, -1.0))
}

fn decorrelation<'g>(tape: &mut Tape<'g>, z: Var) -> Result<Var> {
    let d = tape.shape(z).1;
    let zt = tape.transpose(z);
    let gram = tape.matmul(zt, z)?;
    let eye = tape.constant(Array2::eye(d));
    let off = tape.sub(gram, eye)?;
    Ok(tape.frobenius_sq(off))
}

pub fn loss_de<'g>(tape: &mut Tape<'g>, z1: Var, z2: Var) -> Result<Var> {
    let first = decorrelation(tape, z1)?;
    let second = decorrelation(tape, z2)?;
    tape.add(first, second)
}

/// The three pieces of the consensus objective.
#[derive(Clone, Copy, Debug)]
pub struct SacnTerms {
    pub cor: Var,
    pub de: Var,
    pub total: Var,
}

/// Normalizes both latents, then `ℓ_cor + λ ℓ_de`.
pub fn loss_sacn<'g>(
    tape: &mut Tape<'g>,
    z1: Var,
    z2: Var,
    support: &'g SparseMatrix,
    lambda: f64,
) -> Result<SacnTerms> {
    let n1 = normalize_latent(tape, z1)?;
    let n2 = normalize_latent(tape, z2)?;
    let cor = loss_cor(tape, n1, n2, support)?;
    let de = loss_de(tape, n1, n2)?;
    let weighted = tape.scale(de, lambda);
    let total = tape.add(cor, weighted)?;
    Ok(SacnTerms { cor, de, total })
}

fn cross_entropy<'g>(tape: &mut Tape<'g>, y: Var, targets: &Array2<f64>, rows: &'g [usize]) -> Result<Var> {
    let picked = tape.gather_rows(y, rows)?;
    if tape.shape(picked) != targets.dim() {
        return Err(Error::shape(
            "cross_entropy",
            format!(
                "predictions {:?} vs targets {:?}",
                tape.shape(picked),
                targets.dim()
            ),
        ));
    }
    let log_y = tape.log(picked);
    let t = tape.constant(targets.clone());
    let weighted = tape.mul(log_y, t)?;
    let total = tape.sum(weighted);
    Ok(tape.scale(total, -1.0))
}

/// `-Σ_{i∈labeled} Σ_j t_ij ln y_ij`, summed over nodes.
pub fn loss_sup<'g>(
    tape: &mut Tape<'g>,
    y: Var,
    targets: &TargetMatrix,
    labeled: &'g [usize],
) -> Result<Var> {
    if labeled.is_empty() {
        return Err(Error::InvalidArgument(
            "supervised loss needs at least one labeled node".into(),
        ));
    }
    cross_entropy(tape, y, targets.as_array(), labeled)
}

/// `-Σ_i Σ_j t̂_ij (ln y1_ij + ln y2_ij)` over the selected pseudolabels. The
/// targets are constants. An empty selection contributes exactly zero.
pub fn loss_w2s<'g>(tape: &mut Tape<'g>, pseudo: &'g PseudoLabelSet, y1: Var, y2: Var) -> Result<Var> {
    if pseudo.is_empty() {
        return Ok(tape.constant(Array2::zeros((1, 1))));
    }
    let first = cross_entropy(tape, y1, &pseudo.targets, &pseudo.indices)?;
    let second = cross_entropy(tape, y2, &pseudo.targets, &pseudo.indices)?;
    tape.add(first, second)
}

/// `ℓ_sup + α₁ ℓ_sacn`.
pub fn loss_stage_one<'g>(tape: &mut Tape<'g>, sup: Var, sacn: Var, weights: &LossWeights) -> Result<Var> {
    let weighted = tape.scale(sacn, weights.alpha1);
    tape.add(sup, weighted)
}

/// `ℓ_sup + α₁ ℓ_sacn + α₂ ℓ_w2s`.
pub fn loss_stage_two<'g>(
    tape: &mut Tape<'g>,
    sup: Var,
    sacn: Var,
    w2s: Var,
    weights: &LossWeights,
) -> Result<Var> {
    let one = loss_stage_one(tape, sup, sacn, weights)?;
    let weighted = tape.scale(w2s, weights.alpha2);
    tape.add(one, weighted)
}
