//! Metrics, agreement statistics and pipeline evaluation.

mod agreement;
mod metrics;
mod report;

pub use agreement::{
    consistency_items, fleiss_kappa, human_consistency, rating_table, ConsistencyItem, ConsistencyReport,
    StratumStats,
};
pub use metrics::{
    average_precision, f1_from_confusion, iou, map_thresholds, mean_average_precision, mean_variance,
    selection_accuracy, ClassF1, ConfusionMatrix, DeltaEHistogram, F1Report, ImageBoxes, MeanVariance,
};
pub use report::{
    evaluate_pipeline, render_table, AgreementReport, ClassificationMetrics, ColorMetrics, EvalOptions,
    EvaluationReport, KappaResult, OutcomeCounts, StageMetrics,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::color::RgbColor;
use crate::properties::{FinishType, Format};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("ragged ratings: {0}")]
    RaggedRatings(String),
    #[error("all ratings fall in one category; kappa is undefined")]
    DegenerateAgreement,
    #[error("annotation {key} lacks one of the three annotator colors")]
    MissingAnnotator { key: String },
    #[error("product {0:?} has no ground truth")]
    MissingGroundTruth(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("evaluation failed: {0}")]
    Internal(String),
}

/// Human annotations for one shade. Colors hold annotators A1, A2, A3.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub product_id: String,
    pub shade_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a1: Option<RgbColor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a2: Option<RgbColor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a3: Option<RgbColor>,
    /// Per-annotator finish labels.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub finish: Vec<FinishType>,
    /// Per-annotator format labels.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub format: Vec<Format>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multi_shade: Option<bool>,
    /// Model base color, if recorded alongside the annotation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction: Option<RgbColor>,
}

impl AnnotationRecord {
    pub fn key(&self) -> String {
        format!("{}#{}", self.product_id, self.shade_index)
    }
}
