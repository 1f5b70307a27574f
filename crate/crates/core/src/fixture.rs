//! A built-in 6-node graph used to check every loss term end to end against
//! central finite differences.

use ndarray::array;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::augment::MaskPlan;
use crate::autodiff::{gradient_check_with_options, GradCheckOptions};
use crate::error::Result;
use crate::gat::{GatConfig, ModelParams, ModelVars};
use crate::graph::{Adjacency, GraphBundle, SparseMatrix, Split};
use crate::objectives::LossWeights;
use crate::pseudolabel::{select_class_aware, PseudoLabelSet};
use crate::train::{objective, ObjectiveVars, PreparedGraph};

/// Largest relative error accepted by the loss-term check.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Finite-difference step of the loss-term check.
pub const DEFAULT_EPS: f64 = 1e-4;
/// Gradients below this size are compared on absolute error. The fixture
/// losses are O(10), so round-off in a difference quotient is ~1e-11.
const FLOOR: f64 = 1e-6;
/// Relative disagreement of `D(eps)` and `D(eps/2)` beyond which a
/// coordinate counts as sitting on a kink.
const SMOOTHNESS_TOL: f64 = 1e-3;

/// Two triangles joined by two bridge edges, two classes, five features. No
/// two nodes share a closed neighborhood, so smoothed rows stay distinct.
pub fn six_node_bundle() -> GraphBundle {
    let edges = [(0, 1), (0, 2), (1, 2), (2, 3), (3, 4), (3, 5), (4, 5), (1, 5)];
    let features = array![
        [1.0, 0.0, 0.5, 0.0, 0.2],
        [0.8, 0.1, 0.0, 0.3, 0.0],
        [0.6, 0.0, 0.4, 0.0, 0.9],
        [0.0, 0.7, 0.0, 1.0, 0.1],
        [0.1, 0.9, 0.3, 0.0, 0.0],
        [0.0, 0.6, 0.0, 0.8, 0.4],
    ];
    GraphBundle {
        name: "six-node".into(),
        num_classes: 2,
        features: SparseMatrix::from_dense(features.view()),
        adjacency: Adjacency::from_edges(6, &edges).expect("fixture edges are valid"),
        labels: vec![Some(0), Some(0), Some(0), Some(1), Some(1), Some(1)],
        split: Split {
            train: vec![0, 3],
            val: vec![1, 4],
            test: vec![2, 5],
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TermCheck {
    pub term: &'static str,
    pub max_relative_error: f64,
    pub coordinates_checked: usize,
    pub unresolved: usize,
}

impl TermCheck {
    pub fn passed(&self) -> bool {
        self.max_relative_error < GRADCHECK_TOLERANCE
    }
}

type Pick = fn(&ObjectiveVars) -> crate::autodiff::Var;

const TERMS: [(&str, Pick); 6] = [
    ("l_cor", |o| o.cor.expect("consensus term present")),
    ("l_de", |o| o.de.expect("decorrelation term present")),
    ("l_sacn", |o| o.sacn.expect("consensus term present")),
    ("l_sup", |o| o.sup),
    ("l_w2s", |o| o.w2s.expect("pseudolabel term present")),
    ("l_two", |o| o.total),
];

/// Checks `ℓ_cor`, `ℓ_de`, `ℓ_sacn`, `ℓ_sup`, `ℓ_w2s` and `ℓ_two` with
/// respect to every model parameter, in training mode with seeded dropout.
///
/// Coordinates where the loss is not smooth within `eps` (a LeakyReLU
/// argument or a near-constant latent column right at the evaluation point)
/// are reported as `unresolved` rather than compared.
pub fn check_loss_terms(eps: f64, seed: u64) -> Result<Vec<TermCheck>> {
    let bundle = six_node_bundle();
    let prepared = PreparedGraph::new(&bundle, Some(1), true)?;
    let model = GatConfig {
        heads: 2,
        head_dim: 3,
        leaky_slope: 0.2,
        dropout: 0.6,
    };
    let weights = LossWeights {
        lambda: 0.5,
        alpha1: 1.0,
        alpha2: 0.5,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = ModelParams::init(&mut rng, prepared.num_features(), prepared.num_classes, &model);
    let plan1 = MaskPlan::sample(prepared.num_features(), 0.4, &mut rng)?;
    let plan2 = MaskPlan::sample(prepared.num_features(), 0.4, &mut rng)?;
    let views = [
        prepared.features.clone(),
        plan1.apply(prepared.features.view()),
        plan2.apply(prepared.features.view()),
    ];
    let weak = params.predict(&prepared.graph, &prepared.features, &model)?;
    let pseudo: PseudoLabelSet =
        select_class_aware(weak.y.view(), &prepared.pseudolabel_candidates(), &[1, 1])?;
    let tensors: Vec<_> = params.tensors().into_iter().cloned().collect();

    TERMS
        .iter()
        .map(|&(term, pick)| {
            let report = gradient_check_with_options(
                |tape, vars, rng| {
                    let model_vars = ModelVars::from_flat(&params, vars);
                    let inputs = [
                        tape.constant(views[0].clone()).into(),
                        tape.constant(views[1].clone()).into(),
                        tape.constant(views[2].clone()).into(),
                    ];
                    let obj = objective(
                        tape,
                        &prepared,
                        &model_vars,
                        inputs,
                        Some(&pseudo),
                        &weights,
                        &model,
                        Some(rng),
                    )?;
                    Ok(pick(&obj))
                },
                &tensors,
                &GradCheckOptions {
                    eps,
                    seed,
                    floor: FLOOR,
                    richardson: true,
                    smoothness_tol: Some(SMOOTHNESS_TOL),
                },
            )?;
            Ok(TermCheck {
                term,
                max_relative_error: report.max_relative_error,
                coordinates_checked: report.coordinates_checked,
                unresolved: report.unresolved,
            })
        })
        .collect()
}
