//! Predictor contracts for the extraction stages, plus the in-repo backends.
//!
//! | stage | contract |
//! |-------|----------|
//! | M1 | [`ImagePreference`] |
//! | M2 | [`FormatClassifier`] |
//! | M3 | [`ShadeDetector`] |
//! | gate | [`ShadeCountClassifier`] |
//! | M4 | [`BaseColorRegressor`] |
//! | M5 | [`FinishClassifier`] |
//! | M6 | [`ReflectiveColorRegressor`] |
//!
//! Every backend must be deterministic: identical pixels and configuration
//! give identical output.

pub mod adapter;
mod distribution;
mod image_data;
pub mod mock;
pub mod reference;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use distribution::{ClassDistribution, Label};
pub use image_data::{FsImageSource, ImageData, ImageSource, MemoryImageSource};

use crate::color::NormalizedRgb;
use crate::properties::{BoundingBox, FinishType, Format, ShadeCount};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PredictError {
    #[error("cannot decode image {uri}: {reason}")]
    Decode { uri: String, reason: String },
    #[error("mock backend has no scripted {op} response for {key:?}")]
    Unscripted { op: &'static str, key: String },
    #[error("invalid predictor output: {0}")]
    InvalidOutput(String),
    #[error("backend failure: {0}")]
    Backend(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preference {
    pub preferred: bool,
    /// Only meaningful when `preferred` is true.
    pub confidence: f64,
}

pub trait ImagePreference: Send + Sync {
    fn prefer_image(&self, candidate: &ImageData, reference: &ImageData) -> Result<Preference, PredictError>;
}

pub trait FormatClassifier: Send + Sync {
    fn classify_format(&self, image: &ImageData, title: &str) -> Result<ClassDistribution<Format>, PredictError>;
}

pub trait ShadeDetector: Send + Sync {
    /// Boxes sorted by confidence, highest first.
    fn detect_shades(&self, image: &ImageData) -> Result<Vec<BoundingBox>, PredictError>;
}

pub trait ShadeCountClassifier: Send + Sync {
    fn classify_shade_count(&self, image: &ImageData) -> Result<ClassDistribution<ShadeCount>, PredictError>;
}

pub trait FinishClassifier: Send + Sync {
    fn classify_finish(&self, crop: &ImageData) -> Result<ClassDistribution<FinishType>, PredictError>;
}

pub trait BaseColorRegressor: Send + Sync {
    fn regress_base_color(&self, crop: &ImageData) -> Result<NormalizedRgb, PredictError>;
}

pub trait ReflectiveColorRegressor: Send + Sync {
    /// Raw output; the pipeline applies the reflective scaling.
    fn regress_reflective_color(&self, crop: &ImageData) -> Result<NormalizedRgb, PredictError>;
}

/// A backend providing all seven contracts.
pub trait Backend:
    ImagePreference
    + FormatClassifier
    + ShadeDetector
    + ShadeCountClassifier
    + FinishClassifier
    + BaseColorRegressor
    + ReflectiveColorRegressor
{
    fn name(&self) -> &str;
}

/// The seven predictors the pipeline calls. Members may come from different backends.
#[derive(Clone)]
pub struct PredictorSuite {
    pub name: String,
    pub image_preference: Arc<dyn ImagePreference>,
    pub format_classifier: Arc<dyn FormatClassifier>,
    pub shade_detector: Arc<dyn ShadeDetector>,
    pub shade_count_classifier: Arc<dyn ShadeCountClassifier>,
    pub finish_classifier: Arc<dyn FinishClassifier>,
    pub base_color_regressor: Arc<dyn BaseColorRegressor>,
    pub reflective_color_regressor: Arc<dyn ReflectiveColorRegressor>,
}

impl PredictorSuite {
    pub fn from_backend<B: Backend + 'static>(backend: Arc<B>) -> Self {
        Self {
            name: backend.name().to_string(),
            image_preference: backend.clone(),
            format_classifier: backend.clone(),
            shade_detector: backend.clone(),
            shade_count_classifier: backend.clone(),
            finish_classifier: backend.clone(),
            base_color_regressor: backend.clone(),
            reflective_color_regressor: backend,
        }
    }
}

impl std::fmt::Debug for PredictorSuite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PredictorSuite").field("name", &self.name).finish_non_exhaustive()
    }
}

/// Checks a detector's output against the box invariants.
pub fn validate_boxes(boxes: &[BoundingBox]) -> Result<(), PredictError> {
    boxes
        .iter()
        .try_for_each(|b| b.validate().map_err(|e| PredictError::InvalidOutput(e.to_string())))
}

pub fn validate_rgb(c: NormalizedRgb) -> Result<NormalizedRgb, PredictError> {
    if c.is_valid() {
        Ok(c)
    } else {
        Err(PredictError::InvalidOutput(format!("color channels outside [0, 1]: {c:?}")))
    }
}
