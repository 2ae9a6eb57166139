//! End-to-end material property extraction for one product.
//!
//! Stage order: eligibility filter → best image selection → format →
//! shade detection → single/multi gate → per shade {base color, finish} →
//! reflective color for glitter shades only.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::catalog::{CatalogStore, EligibilityVerdict, KeywordRules, ProductRecord};
use crate::color::scale_reflective;
use crate::predict::reference::title_format_cue;
use crate::predict::{
    validate_boxes, validate_rgb, ClassDistribution, ImageData, ImagePreference, ImageSource, PredictError,
    PredictorSuite,
};
use crate::properties::{BoundingBox, FinishType, MaterialProperties, Provenance, ShadeCount, ShadeProperties};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub keywords: KeywordRules,
    /// Detections below this confidence are dropped before gating.
    pub confidence_floor: f64,
    /// Fraction trimmed from each side of a box before cropping.
    pub crop_shrink: f64,
    /// Products with more shades are truncated to the most confident ones and flagged.
    pub max_shades: usize,
    /// Retry detection on the reference image when the best image yields nothing.
    pub retry_detection_on_main: bool,
    /// Per-stage wall-clock timings in the trace. Off keeps traces reproducible.
    pub record_timings: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            keywords: KeywordRules::default(),
            confidence_floor: 0.25,
            crop_shrink: 0.10,
            max_shades: 256,
            retry_detection_on_main: true,
            record_timings: false,
        }
    }
}

/// Trace stage names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Decode,
    Eligibility,
    BestImage,
    Format,
    ShadeDetection,
    ShadeCount,
    Gate,
    BaseColor,
    Finish,
    ReflectiveColor,
}

/// The six model stages that can be replaced by ground truth during evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelStage {
    M1,
    M2,
    M3,
    M4,
    M5,
    M6,
}

impl ModelStage {
    pub const ALL: [ModelStage; 6] =
        [ModelStage::M1, ModelStage::M2, ModelStage::M3, ModelStage::M4, ModelStage::M5, ModelStage::M6];

    pub fn describe(self) -> &'static str {
        match self {
            ModelStage::M1 => "best image selection",
            ModelStage::M2 => "format classification",
            ModelStage::M3 => "shade detection",
            ModelStage::M4 => "base color",
            ModelStage::M5 => "finish type",
            ModelStage::M6 => "reflective color",
        }
    }
}

impl fmt::Display for ModelStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for ModelStage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelStage::ALL
            .iter()
            .copied()
            .find(|m| m.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown model stage {s:?} (expected m1..m6)"))
    }
}

/// Stages fed from ground truth instead of predictors.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Substitution(pub BTreeSet<ModelStage>);

impl Substitution {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn of(stages: &[ModelStage]) -> Self {
        Self(stages.iter().copied().collect())
    }

    pub fn contains(&self, stage: ModelStage) -> bool {
        self.0.contains(&stage)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Parses `"m1,m3,m5"`; empty string is the empty set.
    pub fn parse(s: &str) -> Result<Self, String> {
        s.split(',')
            .filter(|t| !t.trim().is_empty())
            .map(ModelStage::from_str)
            .collect::<Result<BTreeSet<_>, _>>()
            .map(Self)
    }

    /// Row label in the style "NO GT" / "GT M1 + M3".
    pub fn label(&self) -> String {
        if self.0.is_empty() {
            "NO GT".into()
        } else {
            let parts: Vec<String> = self.0.iter().map(|m| m.to_string()).collect();
            format!("GT {}", parts.join(" + "))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub detail: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_us: Option<u64>,
}

/// Per-stage record of what the pipeline did, in execution order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub product_id: String,
    pub stages: Vec<StageRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureKind {
    NoDecodableImage,
    NoShadesDetected,
    MissingGroundTruth,
    PredictorError,
    UnknownProduct,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{stage:?}: {kind:?}: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub kind: FailureKind,
    pub message: String,
}

impl PipelineError {
    fn new(stage: Stage, kind: FailureKind, message: impl Into<String>) -> Self {
        Self { stage, kind, message: message.into() }
    }

    fn predictor(stage: Stage, e: PredictError) -> Self {
        Self::new(stage, FailureKind::PredictorError, e.to_string())
    }
}

/// Result of running the pipeline on one product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ExtractOutcome {
    Extracted { properties: MaterialProperties },
    FilteredOut { verdict: EligibilityVerdict },
    Failed { stage: Stage, kind: FailureKind, message: String },
}

impl ExtractOutcome {
    pub fn properties(&self) -> Option<&MaterialProperties> {
        match self {
            ExtractOutcome::Extracted { properties } => Some(properties),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    pub outcome: ExtractOutcome,
    pub trace: PipelineTrace,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageChoice {
    pub position: usize,
    /// Winning preference confidence; `None` when the reference was kept.
    pub confidence: Option<f64>,
}

/// Compares every candidate against the reference (first entry) and returns the
/// preferred candidate with the highest confidence, lowest position on ties, or
/// the reference when nothing is preferred.
pub fn select_best_image(
    images: &[(usize, ImageData)],
    m1: &dyn ImagePreference,
) -> Result<ImageChoice, PredictError> {
    let Some((ref_pos, reference)) = images.first() else {
        return Err(PredictError::Decode { uri: String::new(), reason: "no decodable image".into() });
    };
    let mut best: Option<(usize, f64)> = None;
    for (pos, candidate) in &images[1..] {
        let p = m1.prefer_image(candidate, reference)?;
        if p.preferred && best.is_none_or(|(_, c)| p.confidence > c) {
            best = Some((*pos, p.confidence));
        }
    }
    Ok(match best {
        Some((position, c)) => ImageChoice { position, confidence: Some(c) },
        None => ImageChoice { position: *ref_pos, confidence: None },
    })
}

/// Single-shade argmax keeps only the most confident box; otherwise boxes pass through.
pub fn gate_regions(count: &ClassDistribution<ShadeCount>, boxes: &[BoundingBox]) -> Vec<BoundingBox> {
    if count.argmax() == ShadeCount::Single && boxes.len() > 1 {
        let mut best = boxes[0];
        for b in &boxes[1..] {
            if b.confidence > best.confidence {
                best = *b;
            }
        }
        vec![best]
    } else {
        boxes.to_vec()
    }
}

struct Tracer {
    trace: PipelineTrace,
    timings: bool,
}

impl Tracer {
    fn record(&mut self, stage: Stage, started: Instant, detail: Value) {
        let elapsed_us = self.timings.then(|| started.elapsed().as_micros() as u64);
        self.trace.stages.push(StageRecord { stage, detail, elapsed_us });
    }
}

/// Predictors, image access and configuration bound together.
#[derive(Clone)]
pub struct Pipeline {
    pub suite: PredictorSuite,
    pub images: Arc<dyn ImageSource>,
    pub config: PipelineConfig,
}

impl Pipeline {
    pub fn new(suite: PredictorSuite, images: Arc<dyn ImageSource>, config: PipelineConfig) -> Self {
        Self { suite, images, config }
    }

    pub fn extract(&self, product: &ProductRecord) -> Extraction {
        self.extract_substituted(product, &Substitution::none())
    }

    /// Runs the pipeline with the given stages fed from `product.ground_truth`.
    pub fn extract_substituted(&self, product: &ProductRecord, substitution: &Substitution) -> Extraction {
        let mut tracer = Tracer {
            trace: PipelineTrace { product_id: product.product_id.clone(), stages: Vec::new() },
            timings: self.config.record_timings,
        };
        let outcome = match self.run(product, substitution, &mut tracer) {
            Ok(outcome) => outcome,
            Err(e) => ExtractOutcome::Failed { stage: e.stage, kind: e.kind, message: e.message },
        };
        Extraction { outcome, trace: tracer.trace }
    }

    fn run(
        &self,
        product: &ProductRecord,
        substitution: &Substitution,
        tracer: &mut Tracer,
    ) -> Result<ExtractOutcome, PipelineError> {
        let gt = if substitution.is_empty() {
            None
        } else {
            Some(product.ground_truth.as_ref().ok_or_else(|| {
                PipelineError::new(Stage::Eligibility, FailureKind::MissingGroundTruth, "substitution needs ground truth")
            })?)
        };
        let sub = |m: ModelStage| substitution.contains(m);

        let t = Instant::now();
        let verdict = self.config.keywords.check(&product.title, &product.description);
        tracer.record(Stage::Eligibility, t, json!({ "verdict": verdict }));
        if !verdict.eligible {
            return Ok(ExtractOutcome::FilteredOut { verdict });
        }

        let t = Instant::now();
        let mut decoded: Vec<(usize, ImageData)> = Vec::new();
        let mut failures = Vec::new();
        for img in &product.images {
            match self.images.load(img) {
                Ok(d) => decoded.push((img.position, d)),
                Err(e) => failures.push(json!({ "position": img.position, "error": e.to_string() })),
            }
        }
        let reference_position = decoded.first().map(|(p, _)| *p);
        tracer.record(
            Stage::Decode,
            t,
            json!({ "decoded": decoded.iter().map(|(p, _)| *p).collect::<Vec<_>>(), "failures": failures, "reference": reference_position }),
        );
        let Some(reference_position) = reference_position else {
            return Err(PipelineError::new(Stage::Decode, FailureKind::NoDecodableImage, "no image could be decoded"));
        };

        let t = Instant::now();
        let choice = if sub(ModelStage::M1) {
            let position = gt.map(|g| g.best_image_position).unwrap_or(reference_position);
            if !decoded.iter().any(|(p, _)| *p == position) {
                return Err(PipelineError::new(
                    Stage::BestImage,
                    FailureKind::NoDecodableImage,
                    format!("ground-truth best image {position} not decodable"),
                ));
            }
            ImageChoice { position, confidence: None }
        } else {
            select_best_image(&decoded, self.suite.image_preference.as_ref())
                .map_err(|e| PipelineError::predictor(Stage::BestImage, e))?
        };
        tracer.record(
            Stage::BestImage,
            t,
            json!({ "choice": choice, "reference": reference_position, "substituted": sub(ModelStage::M1) }),
        );
        let image_at = |pos: usize| &decoded.iter().find(|(p, _)| *p == pos).expect("decoded position").1;
        let mut source_position = choice.position;

        let t = Instant::now();
        let best = image_at(source_position);
        let title_cue = title_format_cue(&product.title);
        let format = match gt.filter(|_| sub(ModelStage::M2)) {
            Some(g) => {
                tracer.record(Stage::Format, t, json!({ "format": g.format, "substituted": true }));
                g.format
            }
            None => {
                let dist = self
                    .suite
                    .format_classifier
                    .classify_format(best, &product.title)
                    .map_err(|e| PipelineError::predictor(Stage::Format, e))?;
                let format = dist.argmax();
                tracer.record(
                    Stage::Format,
                    t,
                    json!({ "distribution": dist, "format": format, "title_cue": title_cue,
                            "title_disagrees": title_cue.is_some_and(|c| c != format) }),
                );
                format
            }
        };

        let boxes = if let Some(g) = gt.filter(|_| sub(ModelStage::M3)) {
            let t = Instant::now();
            let boxes: Vec<BoundingBox> =
                g.shades.iter().map(|s| BoundingBox { confidence: 1.0, ..s.region }).collect();
            tracer.record(Stage::ShadeDetection, t, json!({ "boxes": boxes, "substituted": true }));
            boxes
        } else {
            let mut boxes = self.detect(best, Stage::ShadeDetection, tracer)?;
            if boxes.is_empty() && self.config.retry_detection_on_main && source_position != reference_position {
                boxes = self.detect(image_at(reference_position), Stage::ShadeDetection, tracer)?;
                if !boxes.is_empty() {
                    source_position = reference_position;
                }
            }
            if boxes.is_empty() {
                return Err(PipelineError::new(
                    Stage::ShadeDetection,
                    FailureKind::NoShadesDetected,
                    "no shade regions above the confidence floor",
                ));
            }
            let source = image_at(source_position);
            let t = Instant::now();
            let count = self
                .suite
                .shade_count_classifier
                .classify_shade_count(source)
                .map_err(|e| PipelineError::predictor(Stage::ShadeCount, e))?;
            tracer.record(Stage::ShadeCount, t, json!({ "distribution": count, "argmax": count.argmax() }));

            let t = Instant::now();
            let mut gated = gate_regions(&count, &boxes);
            let capped = gated.len() > self.config.max_shades;
            gated.truncate(self.config.max_shades);
            tracer.record(
                Stage::Gate,
                t,
                json!({ "input": boxes.len(), "kept": gated, "exceeds_shade_cap": capped }),
            );
            gated
        };

        let source = image_at(source_position);
        let (w, h) = (source.width(), source.height());
        let mut shades = Vec::with_capacity(boxes.len());
        for (i, region) in boxes.iter().enumerate() {
            let gt_shade = gt.and_then(|g| corresponding_shade(g, i, region, sub(ModelStage::M3)));
            let rect = region.shrink(self.config.crop_shrink).to_pixels(w, h);
            let crop = source.crop(rect, format!("{}#shade{i}", source.id));

            let t = Instant::now();
            let base_color = match gt_shade.filter(|_| sub(ModelStage::M4)) {
                Some(s) => s.base_color,
                None => self
                    .suite
                    .base_color_regressor
                    .regress_base_color(&crop)
                    .and_then(validate_rgb)
                    .map_err(|e| PipelineError::predictor(Stage::BaseColor, e))?
                    .to_rgb(),
            };
            tracer.record(Stage::BaseColor, t, json!({ "shade": i, "crop": rect, "base_color": base_color }));

            let t = Instant::now();
            let finish = match gt_shade.filter(|_| sub(ModelStage::M5)) {
                Some(s) => s.finish,
                None => {
                    let dist = self
                        .suite
                        .finish_classifier
                        .classify_finish(&crop)
                        .map_err(|e| PipelineError::predictor(Stage::Finish, e))?;
                    dist.argmax()
                }
            };
            tracer.record(Stage::Finish, t, json!({ "shade": i, "finish": finish }));

            let reflective_color = if finish == FinishType::Glitter {
                let t = Instant::now();
                let gt_reflective = gt_shade.filter(|_| sub(ModelStage::M6)).and_then(|s| s.reflective_color);
                let color = match gt_reflective {
                    Some(c) => c,
                    None => {
                        let raw = self
                            .suite
                            .reflective_color_regressor
                            .regress_reflective_color(&crop)
                            .and_then(validate_rgb)
                            .map_err(|e| PipelineError::predictor(Stage::ReflectiveColor, e))?;
                        scale_reflective(raw).to_rgb()
                    }
                };
                tracer.record(Stage::ReflectiveColor, t, json!({ "shade": i, "reflective_color": color }));
                Some(color)
            } else {
                None
            };
            shades.push(ShadeProperties { region: *region, base_color, finish, reflective_color });
        }

        Ok(ExtractOutcome::Extracted {
            properties: MaterialProperties {
                format,
                shades,
                best_image_position: source_position,
                provenance: Provenance::Pipeline,
            },
        })
    }

    fn detect(&self, image: &ImageData, stage: Stage, tracer: &mut Tracer) -> Result<Vec<BoundingBox>, PipelineError> {
        let t = Instant::now();
        let mut boxes = self
            .suite
            .shade_detector
            .detect_shades(image)
            .map_err(|e| PipelineError::predictor(stage, e))?;
        validate_boxes(&boxes).map_err(|e| PipelineError::predictor(stage, e))?;
        let detected = boxes.len();
        boxes.retain(|b| b.confidence >= self.config.confidence_floor);
        // stable: equal confidences keep detector order
        boxes.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        tracer.record(
            stage,
            t,
            json!({ "image": image.id, "detected": detected, "boxes": boxes, "floor": self.config.confidence_floor }),
        );
        Ok(boxes)
    }
}

/// The ground-truth shade matching a pipeline box: same index when boxes came
/// from ground truth, otherwise the highest-IoU shade (IoU > 0).
fn corresponding_shade<'a>(
    gt: &'a MaterialProperties,
    index: usize,
    region: &BoundingBox,
    boxes_from_gt: bool,
) -> Option<&'a ShadeProperties> {
    if boxes_from_gt {
        return gt.shades.get(index);
    }
    gt.shades
        .iter()
        .map(|s| (s, s.region.iou(region)))
        .filter(|(_, iou)| *iou > 0.0)
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(s, _)| s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchProgress {
    pub done: usize,
    pub total: usize,
}

/// Extracts many products. Output is independent of `parallelism`.
pub fn extract_batch(
    store: &CatalogStore,
    ids: &[String],
    pipeline: &Pipeline,
    parallelism: usize,
) -> Result<BTreeMap<String, Extraction>, rayon::ThreadPoolBuildError> {
    extract_batch_with_progress(store, ids, pipeline, parallelism, &Substitution::none(), &|_| {})
}

pub fn extract_batch_with_progress(
    store: &CatalogStore,
    ids: &[String],
    pipeline: &Pipeline,
    parallelism: usize,
    substitution: &Substitution,
    progress: &(dyn Fn(BatchProgress) + Sync),
) -> Result<BTreeMap<String, Extraction>, rayon::ThreadPoolBuildError> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(parallelism.max(1)).build()?;
    let done = AtomicUsize::new(0);
    let total = ids.len();
    let results: Vec<(String, Extraction)> = pool.install(|| {
        ids.par_iter()
            .map(|id| {
                let extraction = match store.get(id) {
                    Some(product) => pipeline.extract_substituted(&product, substitution),
                    None => Extraction {
                        outcome: ExtractOutcome::Failed {
                            stage: Stage::Eligibility,
                            kind: FailureKind::UnknownProduct,
                            message: format!("unknown product {id:?}"),
                        },
                        trace: PipelineTrace { product_id: id.clone(), stages: Vec::new() },
                    },
                };
                let n = done.fetch_add(1, Ordering::Relaxed) + 1;
                progress(BatchProgress { done: n, total });
                (id.clone(), extraction)
            })
            .collect()
    });
    Ok(results.into_iter().collect())
}
