//! Per-box feature datasets and the MLP meta-classifier that separates
//! TP from FP predictions.

mod cv;
mod dataset;
mod mlp;

pub use cv::{cross_validate, CvReport, FoldAudit, FoldResult};
pub use dataset::{
    build_feature_dataset, split_groups, Feature, FeatureRow, FrameEvidence, Group, PointsBucket,
};
pub use mlp::{
    augment, normalize, train_mlp, Adam, MetaTrainConfig, Mlp, NormalizationStats, Sample,
};

use crate::autodiff::ModelError;
use crate::matching::MatchError;
use crate::metrics::MetricError;
use crate::xc::XcError;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetaError {
    #[error("frame {frame_id}: prediction {pred_index} has no attribution map for its top class")]
    MissingAttribution { frame_id: u64, pred_index: usize },
    #[error("feature column {0} is constant; cannot z-score")]
    ConstantFeature(usize),
    #[error("training set contains a single class")]
    SingleClassTrainingSet,
    #[error("need at least {needed} rows per class, have {n_pos} positives and {n_neg} negatives")]
    InsufficientRows {
        needed: usize,
        n_pos: usize,
        n_neg: usize,
    },
    #[error("empty feature subset")]
    EmptyFeatureSubset,
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("sample has {found} features, expected {expected}")]
    FeatureWidth { expected: usize, found: usize },
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Xc(#[from] XcError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Model(#[from] ModelError),
}
