//! Two-layer multi-head graph attention encoder shared by every view.
//!
//! Layer 1 runs `H` heads of width `d_h`, concatenates them, applies ELU and
//! (in training mode) dropout; its output is the latent `Z` that the
//! consensus objective sees. Layer 2 is a single head with `k` outputs whose
//! row softmax gives the soft predictions `Y`.

mod checkpoint;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::MaskPlan;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{Adjacency, SparseMatrix};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatConfig {
    pub heads: usize,
    pub head_dim: usize,
    pub leaky_slope: f64,
    /// Applied to the concatenated layer-1 output and to attention weights.
    pub dropout: f64,
}

impl Default for GatConfig {
    fn default() -> Self {
        GatConfig {
            heads: 8,
            head_dim: 6,
            leaky_slope: 0.2,
            dropout: 0.6,
        }
    }
}

/// Per-head projection `W_h` (`d_in×d_out`) and attention vector `a_h`
/// (`2·d_out×1`; the first half scores the receiving node, the second half
/// the neighbor).
#[derive(Clone, Debug, PartialEq)]
pub struct GatLayerParams {
    pub weights: Vec<Array2<f64>>,
    pub attention: Vec<Array2<f64>>,
}

impl GatLayerParams {
    fn glorot<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..limit))
    }

    pub fn init<R: Rng + ?Sized>(rng: &mut R, heads: usize, d_in: usize, d_out: usize) -> Self {
        let mut weights = Vec::with_capacity(heads);
        let mut attention = Vec::with_capacity(heads);
        for _ in 0..heads {
            weights.push(Self::glorot(rng, d_in, d_out));
            attention.push(Self::glorot(rng, 2 * d_out, 1));
        }
        GatLayerParams { weights, attention }
    }

    pub fn heads(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].nrows()
    }

    pub fn head_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(Array2::len).sum::<usize>()
            + self.attention.iter().map(Array2::len).sum::<usize>()
    }
}

/// All trainable tensors of the encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub layer1: GatLayerParams,
    pub layer2: GatLayerParams,
}

impl ModelParams {
    pub fn init<R: Rng + ?Sized>(
        rng: &mut R,
        num_features: usize,
        num_classes: usize,
        config: &GatConfig,
    ) -> Self {
        let layer1 = GatLayerParams::init(rng, config.heads, num_features, config.head_dim);
        let layer2 = GatLayerParams::init(rng, 1, config.heads * config.head_dim, num_classes);
        ModelParams { layer1, layer2 }
    }

    pub fn parameter_count(&self) -> usize {
        self.layer1.parameter_count() + self.layer2.parameter_count()
    }

    /// Tensors in a fixed order: layer-1 weights, layer-1 attention,
    /// layer-2 weights, layer-2 attention.
    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut out: Vec<&Array2<f64>> = Vec::new();
        for layer in [&self.layer1, &self.layer2] {
            out.extend(layer.weights.iter());
            out.extend(layer.attention.iter());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out: Vec<&mut Array2<f64>> = Vec::new();
        for layer in [&mut self.layer1, &mut self.layer2] {
            out.extend(layer.weights.iter_mut());
            out.extend(layer.attention.iter_mut());
        }
        out
    }

    /// Places every tensor on `tape` as a trainable leaf.
    pub fn register<'g>(&self, tape: &mut Tape<'g>) -> ModelVars {
        let mut layer = |p: &GatLayerParams| LayerVars {
            weights: p.weights.iter().map(|w| tape.param(w.clone())).collect(),
            attention: p.attention.iter().map(|a| tape.param(a.clone())).collect(),
        };
        let layer1 = layer(&self.layer1);
        let layer2 = layer(&self.layer2);
        ModelVars { layer1, layer2 }
    }

    /// Rebuilds parameters from tape values in [`ModelParams::tensors`] order.
    pub fn from_tensors(template: &ModelParams, tensors: Vec<Array2<f64>>) -> Result<Self> {
        let mut out = template.clone();
        let slots = out.tensors_mut();
        if slots.len() != tensors.len() {
            return Err(Error::shape(
                "from_tensors",
                format!("{} tensors for {} slots", tensors.len(), slots.len()),
            ));
        }
        for (slot, t) in slots.into_iter().zip(tensors) {
            if slot.dim() != t.dim() {
                return Err(Error::shape(
                    "from_tensors",
                    format!("{:?} vs {:?}", slot.dim(), t.dim()),
                ));
            }
            *slot = t;
        }
        Ok(out)
    }

    /// Eval-mode forward pass on plain arrays.
    pub fn predict(
        &self,
        graph: &GraphContext,
        features: &Array2<f64>,
        config: &GatConfig,
    ) -> Result<ViewOutputs> {
        self.predict_features(graph, NodeFeatures::Dense(features), config)
    }

    /// Eval-mode forward pass on features in either layout.
    pub fn predict_features(
        &self,
        graph: &GraphContext,
        features: NodeFeatures<'_>,
        config: &GatConfig,
    ) -> Result<ViewOutputs> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let x = ViewInput::Features { features, mask: None };
        let view = forward_view::<rand_chacha::ChaCha8Rng>(
            &mut tape,
            graph,
            x,
            &vars,
            config.dropout,
            config.leaky_slope,
            None,
        )?;
        Ok(ViewOutputs {
            z: tape.value(view.z).clone(),
            y: tape.value(view.y).clone(),
        })
    }
}

/// Tape handles mirroring [`GatLayerParams`].
#[derive(Clone, Debug)]
pub struct LayerVars {
    pub weights: Vec<Var>,
    pub attention: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct ModelVars {
    pub layer1: LayerVars,
    pub layer2: LayerVars,
}

impl ModelVars {
    /// Handles in [`ModelParams::tensors`] order.
    pub fn all(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for layer in [&self.layer1, &self.layer2] {
            out.extend(&layer.weights);
            out.extend(&layer.attention);
        }
        out
    }

    /// Rebuilds handles from a flat list in [`ModelParams::tensors`] order.
    pub fn from_flat(template: &ModelParams, vars: &[Var]) -> Self {
        let h1 = template.layer1.heads();
        let h2 = template.layer2.heads();
        assert_eq!(vars.len(), 2 * (h1 + h2));
        ModelVars {
            layer1: LayerVars {
                weights: vars[..h1].to_vec(),
                attention: vars[h1..2 * h1].to_vec(),
            },
            layer2: LayerVars {
                weights: vars[2 * h1..2 * h1 + h2].to_vec(),
                attention: vars[2 * h1 + h2..].to_vec(),
            },
        }
    }
}

/// Attention support `A + I` prepared once per graph.
#[derive(Clone, Debug)]
pub struct GraphContext {
    pattern: SparseMatrix,
    receivers: Vec<usize>,
}

impl GraphContext {
    pub fn new(adjacency: &Adjacency) -> Self {
        let pattern = adjacency.with_self_loops();
        let receivers = pattern.row_of_entries();
        GraphContext { pattern, receivers }
    }

    pub fn num_nodes(&self) -> usize {
        self.pattern.shape().0
    }

    /// `A + I` with unit values.
    pub fn pattern(&self) -> &SparseMatrix {
        &self.pattern
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadMode {
    /// Concatenate heads, then ELU.
    Concat,
    /// Average heads and return raw logits.
    Single,
}

/// One attention layer. With `train_rng` set, attention weights go through
/// dropout at `dropout`.
#[allow(clippy::too_many_arguments)]
pub fn gat_layer<'g, R: Rng + ?Sized>(
    tape: &mut Tape<'g>,
    graph: &'g GraphContext,
    input: ViewInput<'g, '_>,
    layer: &LayerVars,
    mode: HeadMode,
    leaky_slope: f64,
    dropout: f64,
    mut train_rng: Option<&mut R>,
) -> Result<Var> {
    let n = match input {
        ViewInput::Var(x) => tape.shape(x).0,
        ViewInput::Features { features, .. } => features.num_nodes(),
    };
    if n != graph.num_nodes() {
        return Err(Error::shape(
            "gat_layer",
            format!("{n} feature rows for {} nodes", graph.num_nodes()),
        ));
    }
    // One wide product `X [W_1 … W_H]` is markedly faster than H narrow
    // ones; each head then reads its own column block.
    let stacked = if layer.weights.len() == 1 {
        layer.weights[0]
    } else {
        tape.concat_columns(&layer.weights)?
    };
    let projected = match input {
        ViewInput::Var(x) => tape.matmul(x, stacked)?,
        ViewInput::Features { features, mask } => {
            let weights = match mask {
                Some(plan) if !plan.is_empty() => {
                    let gate = tape.constant(plan.row_gate(tape.shape(stacked).1));
                    tape.mul(stacked, gate)?
                }
                _ => stacked,
            };
            match features {
                NodeFeatures::Dense(x) => tape.const_matmul(x, weights)?,
                NodeFeatures::Filtered { raw, filter, steps } => {
                    tape.filtered_projection(filter, steps, raw, weights)?
                }
            }
        }
    };
    let mut outputs = Vec::with_capacity(layer.weights.len());
    let mut offset = 0;
    for (&w, &a) in layer.weights.iter().zip(&layer.attention) {
        let d_out = tape.shape(w).1;
        let h = if layer.weights.len() == 1 {
            projected
        } else {
            tape.slice_columns(projected, offset, d_out)?
        };
        offset += d_out;
        let a_self = tape.slice_rows(a, 0, d_out)?;
        let a_neigh = tape.slice_rows(a, d_out, d_out)?;
        let score_self = tape.matmul(h, a_self)?;
        let score_neigh = tape.matmul(h, a_neigh)?;
        let per_edge_self = tape.gather_rows(score_self, &graph.receivers)?;
        let per_edge_neigh = tape.gather_rows(score_neigh, graph.pattern.indices())?;
        let raw = tape.add(per_edge_self, per_edge_neigh)?;
        let scores = tape.leaky_relu(raw, leaky_slope);
        let mut alpha = tape.pattern_softmax(&graph.pattern, scores)?;
        if let Some(rng) = train_rng.as_deref_mut() {
            alpha = tape.dropout(alpha, dropout, rng)?;
        }
        outputs.push(tape.pattern_matmul(&graph.pattern, alpha, h)?);
    }
    match mode {
        HeadMode::Concat => {
            let joined = if outputs.len() == 1 {
                outputs[0]
            } else {
                tape.concat_columns(&outputs)?
            };
            Ok(tape.elu(joined))
        }
        HeadMode::Single => {
            let mut total = outputs[0];
            for &o in &outputs[1..] {
                total = tape.add(total, o)?;
            }
            Ok(if outputs.len() == 1 {
                total
            } else {
                tape.scale(total, 1.0 / outputs.len() as f64)
            })
        }
    }
}

/// Tape handles for one view.
#[derive(Clone, Copy, Debug)]
pub struct ViewVars {
    /// Latent features after concatenation, ELU and (training) dropout.
    pub z: Var,
    pub logits: Var,
    /// Row-stochastic soft predictions.
    pub y: Var,
}

/// Plain-array outputs of one view.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewOutputs {
    pub z: Array2<f64>,
    pub y: Array2<f64>,
}

/// Read-only node features in one of two equivalent layouts.
#[derive(Clone, Copy, Debug)]
pub enum NodeFeatures<'g> {
    Dense(&'g Array2<f64>),
    /// `filter^steps · raw`, kept factored: projecting through the sparse
    /// factors is far cheaper than through the dense product when the raw
    /// features are sparse.
    Filtered {
        raw: &'g SparseMatrix,
        filter: &'g SparseMatrix,
        steps: usize,
    },
}

impl NodeFeatures<'_> {
    pub fn num_nodes(&self) -> usize {
        match self {
            NodeFeatures::Dense(x) => x.nrows(),
            NodeFeatures::Filtered {
                filter, steps: 1.., ..
            } => filter.shape().0,
            NodeFeatures::Filtered { raw, .. } => raw.shape().0,
        }
    }
}

/// Input of the first attention layer.
#[derive(Clone, Copy, Debug)]
pub enum ViewInput<'g, 'm> {
    /// A feature matrix already on the tape.
    Var(Var),
    /// Borrowed node features, optionally with whole columns masked. The
    /// mask is applied to the rows of the projection instead of copying the
    /// features.
    Features {
        features: NodeFeatures<'g>,
        mask: Option<&'m MaskPlan>,
    },
}

impl From<Var> for ViewInput<'_, '_> {
    fn from(v: Var) -> Self {
        ViewInput::Var(v)
    }
}

/// Runs the shared encoder on one (possibly augmented) feature matrix.
/// `train_rng = None` selects evaluation mode: no dropout anywhere.
pub fn forward_view<'g, 'm, R: Rng + ?Sized>(
    tape: &mut Tape<'g>,
    graph: &'g GraphContext,
    x: impl Into<ViewInput<'g, 'm>>,
    params: &ModelVars,
    dropout: f64,
    leaky_slope: f64,
    mut train_rng: Option<&mut R>,
) -> Result<ViewVars> {
    let hidden = gat_layer(
        tape,
        graph,
        x.into(),
        &params.layer1,
        HeadMode::Concat,
        leaky_slope,
        dropout,
        train_rng.as_deref_mut(),
    )?;
    let z = match train_rng.as_deref_mut() {
        Some(rng) => tape.dropout(hidden, dropout, rng)?,
        None => hidden,
    };
    let logits = gat_layer(
        tape,
        graph,
        ViewInput::Var(z),
        &params.layer2,
        HeadMode::Single,
        leaky_slope,
        dropout,
        train_rng,
    )?;
    let y = tape.row_softmax(logits);
    Ok(ViewVars { z, logits, y })
}
