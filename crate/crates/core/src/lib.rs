//! Region-of-interest uncertainty for Monte-Carlo dropout segmentation.
//!
//! A prediction stack of `T` dropout iterations is reduced to a binary
//! segmentation and a percentile-spread uncertainty map ([`mc_agg`]). The map
//! is averaged over tumor, non-tumor tissue and non-tissue regions
//! ([`regions`]), and linear models fitted on those averages predict the
//! segmentation's Dice score without ground truth ([`stats`]).

pub mod error;
pub mod mc_agg;
pub mod metrics;
pub mod pipeline;
pub mod regions;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod tensor_io;

pub use error::{Error, Result};
pub use mc_agg::{
    aggregate_prediction, percentile, uncertainty_map, PredictionStack, UncertaintyMap,
};
pub use metrics::{auroc, bootstrap_ci, confusion, dice, tpr_fpr, ConfusionCounts, MetricReport};
pub use regions::{
    binarize_tissue, derive_regions, region_uncertainty, Denominator, RegionMasks,
    RegionUncertainties,
};
pub use stats::{fit_ols, predict_dice, rmse, spearman, ImageRecord, LinearModel, ModelKind};
pub use synth::{generate_cohort, generate_phantom, PhantomSpec, PhantomTruth};
pub use tensor_io::{
    read_mask, read_tensor, write_heatmap, write_mask, write_tensor, Manifest, Mask2, Tensor3,
};
