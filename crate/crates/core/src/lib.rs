//! Semi-supervised node classification with a structure-aware consensus
//! network: a two-layer graph attention encoder shared by one clean and two
//! feature-masked views, trained with a cross-view consensus objective and
//! class-aware pseudolabels.

pub mod augment;
pub mod autodiff;
pub mod error;
pub mod fixture;
pub mod gat;
pub mod graph;
pub mod objectives;
pub mod pseudolabel;
pub mod train;

pub use error::{Error, Result};

pub use augment::{feature_mask, MaskPlan};
pub use autodiff::{GradCheckReport, Tape, Var};
pub use gat::{load_checkpoint, save_checkpoint, GatConfig, GraphContext, ModelParams};
pub use graph::{
    generate_sbm, load_bundle, make_split, save_bundle, Adjacency, GraphBundle, SbmParams, SparseMatrix,
    Split, SplitSpec,
};
pub use objectives::LossWeights;
pub use pseudolabel::{PseudoLabelSet, QuotaSchedule, SelectionLogEntry};
pub use train::{
    evaluate, run_ablation, run_experiment, train, AblationArm, AblationRow, EpochMetrics, ExperimentReport,
    PreparedGraph, RunReport, SplitConfig, TrainConfig,
};
