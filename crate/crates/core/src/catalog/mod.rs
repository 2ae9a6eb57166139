//! Product data model, ingestion, curator overrides and persistence.

mod keywords;
mod store;

pub use keywords::{
    eligibility_filter, eligibility_filter_with, EligibilityVerdict, KeywordConfigError,
    KeywordRules, StemRule,
};
pub use store::{
    CatalogError, CatalogStore, IngestError, IngestErrorKind, IngestReport, OverrideRevision,
    PinnedMatch, ProductView, QueryFilter, SNAPSHOT_MAGIC,
};

use serde::{Deserialize, Serialize};

use crate::properties::{Category, MaterialProperties};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub position: usize,
    /// Relative path (resolved against the catalog root) or URL.
    pub uri: String,
    pub width: u32,
    pub height: u32,
}

/// One catalog item. `images[0]` is the MAIN image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductRecord {
    pub product_id: String,
    pub title: String,
    #[serde(default)]
    pub description: String,
    pub brand: String,
    pub category: Category,
    #[serde(default)]
    pub images: Vec<ImageRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<MaterialProperties>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overrides: Option<MaterialProperties>,
}

impl ProductRecord {
    /// Structural checks applied at ingest time.
    pub fn validate(&self) -> Result<(), String> {
        if self.product_id.trim().is_empty() {
            return Err("empty product_id".into());
        }
        for (i, img) in self.images.iter().enumerate() {
            if img.position != i {
                return Err(format!("image positions not contiguous: index {i} has position {}", img.position));
            }
            if img.width == 0 || img.height == 0 {
                return Err(format!("image {i} has zero dimension"));
            }
        }
        for (name, props) in [("ground_truth", &self.ground_truth), ("overrides", &self.overrides)] {
            if let Some(p) = props {
                p.validate(self.images.len()).map_err(|e| format!("{name}: {e}"))?;
            }
        }
        Ok(())
    }
}
