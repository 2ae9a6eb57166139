//! Scripted backend for tests. Replays fixture responses keyed by image id and
//! fails on anything that was not scripted.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    Backend, BaseColorRegressor, ClassDistribution, FinishClassifier, FormatClassifier, ImageData,
    ImagePreference, Label, PredictError, Preference, ReflectiveColorRegressor, ShadeCountClassifier,
    ShadeDetector,
};
use crate::color::NormalizedRgb;
use crate::properties::{BoundingBox, FinishType, Format, ShadeCount};

/// Responses keyed by image id. `prefer_image` keys are `"{candidate}|{reference}"`.
/// Distributions may be partial; unlisted labels share the remaining mass.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockScript {
    pub prefer_image: BTreeMap<String, Preference>,
    pub classify_format: BTreeMap<String, BTreeMap<Format, f64>>,
    pub detect_shades: BTreeMap<String, Vec<BoundingBox>>,
    pub classify_shade_count: BTreeMap<String, BTreeMap<ShadeCount, f64>>,
    pub classify_finish: BTreeMap<String, BTreeMap<FinishType, f64>>,
    pub regress_base_color: BTreeMap<String, NormalizedRgb>,
    pub regress_reflective_color: BTreeMap<String, NormalizedRgb>,
}

impl MockScript {
    pub fn load(path: &Path) -> Result<Self, PredictError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PredictError::Backend(format!("reading mock script {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| PredictError::Backend(format!("parsing mock script: {e}")))
    }

    pub fn preference(mut self, candidate: &str, reference: &str, preferred: bool, confidence: f64) -> Self {
        self.prefer_image
            .insert(format!("{candidate}|{reference}"), Preference { preferred, confidence });
        self
    }

    pub fn format(mut self, image: &str, dist: &[(Format, f64)]) -> Self {
        self.classify_format.insert(image.into(), dist.iter().copied().collect());
        self
    }

    pub fn shades(mut self, image: &str, boxes: Vec<BoundingBox>) -> Self {
        self.detect_shades.insert(image.into(), boxes);
        self
    }

    pub fn shade_count(mut self, image: &str, dist: &[(ShadeCount, f64)]) -> Self {
        self.classify_shade_count.insert(image.into(), dist.iter().copied().collect());
        self
    }

    pub fn finish(mut self, crop: &str, dist: &[(FinishType, f64)]) -> Self {
        self.classify_finish.insert(crop.into(), dist.iter().copied().collect());
        self
    }

    pub fn base_color(mut self, crop: &str, c: NormalizedRgb) -> Self {
        self.regress_base_color.insert(crop.into(), c);
        self
    }

    pub fn reflective_color(mut self, crop: &str, c: NormalizedRgb) -> Self {
        self.regress_reflective_color.insert(crop.into(), c);
        self
    }
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    script: MockScript,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        Self { script }
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }
}

fn lookup<'a, T>(map: &'a BTreeMap<String, T>, op: &'static str, key: &str) -> Result<&'a T, PredictError> {
    map.get(key).ok_or_else(|| PredictError::Unscripted { op, key: key.to_string() })
}

fn dist<L: Label>(partial: &BTreeMap<L, f64>) -> Result<ClassDistribution<L>, PredictError> {
    ClassDistribution::completed(partial.iter().map(|(l, p)| (*l, *p)))
}

impl ImagePreference for MockBackend {
    fn prefer_image(&self, candidate: &ImageData, reference: &ImageData) -> Result<Preference, PredictError> {
        let key = format!("{}|{}", candidate.id, reference.id);
        lookup(&self.script.prefer_image, "prefer_image", &key).copied()
    }
}

impl FormatClassifier for MockBackend {
    fn classify_format(&self, image: &ImageData, _title: &str) -> Result<ClassDistribution<Format>, PredictError> {
        dist(lookup(&self.script.classify_format, "classify_format", &image.id)?)
    }
}

impl ShadeDetector for MockBackend {
    fn detect_shades(&self, image: &ImageData) -> Result<Vec<BoundingBox>, PredictError> {
        lookup(&self.script.detect_shades, "detect_shades", &image.id).cloned()
    }
}

impl ShadeCountClassifier for MockBackend {
    fn classify_shade_count(&self, image: &ImageData) -> Result<ClassDistribution<ShadeCount>, PredictError> {
        dist(lookup(&self.script.classify_shade_count, "classify_shade_count", &image.id)?)
    }
}

impl FinishClassifier for MockBackend {
    fn classify_finish(&self, crop: &ImageData) -> Result<ClassDistribution<FinishType>, PredictError> {
        dist(lookup(&self.script.classify_finish, "classify_finish", &crop.id)?)
    }
}

impl BaseColorRegressor for MockBackend {
    fn regress_base_color(&self, crop: &ImageData) -> Result<NormalizedRgb, PredictError> {
        lookup(&self.script.regress_base_color, "regress_base_color", &crop.id).copied()
    }
}

impl ReflectiveColorRegressor for MockBackend {
    fn regress_reflective_color(&self, crop: &ImageData) -> Result<NormalizedRgb, PredictError> {
        lookup(&self.script.regress_reflective_color, "regress_reflective_color", &crop.id).copied()
    }
}

impl Backend for MockBackend {
    fn name(&self) -> &str {
        "mock"
    }
}
