//! Training schemes producing checkpoints.

pub mod bilevel;
pub mod checkpoint;
pub mod dataset;
pub mod em;
pub mod hypergrad;
pub mod score_matching;

pub use bilevel::{bilevel_train, fit_alpha_scale, validation_psnr, BilevelOptions, FitAlphaOptions};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use dataset::{PairedDataset, PatchDataset};
pub use em::{epll_em_train, EmReport};
pub use score_matching::{sm_train, EpochRow, SmOptions, TrainLog};
pub use hypergrad::{
    build_scaled_value, hypergradient, hypergradient_at, HyperResult, HypergradConfig,
    HypergradMode, LowerGraphs, LowerProblem, ScaleSpec, LOG_ALPHA, LOG_S,
};
