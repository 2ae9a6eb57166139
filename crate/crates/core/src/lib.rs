//! Material property extraction for makeup catalogs: a staged pipeline of
//! pluggable predictors, dominant clothing colors from segmentation masks,
//! perceptual color matching and an evaluation suite.

pub mod catalog;
pub mod clothes;
pub mod color;
pub mod eval;
pub mod kmeans;
pub mod matchmaker;
pub mod pipeline;
pub mod predict;
pub mod properties;
pub mod synthetic;

pub use catalog::{CatalogError, CatalogStore, ImageRef, ProductRecord};
pub use color::{delta_e, scale_reflective, srgb_to_lab, LabColor, NormalizedRgb, RgbColor};
pub use pipeline::{ExtractOutcome, Extraction, Pipeline, PipelineConfig};
pub use predict::PredictorSuite;
pub use properties::{BoundingBox, Category, FinishType, Format, MaterialProperties, ShadeProperties};
