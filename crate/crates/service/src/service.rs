//! Operations behind both the HTTP routes and the CLI. Each returns the
//! underlying module result unchanged.

use std::collections::{BTreeMap, HashMap};
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use mpe_core::catalog::{CatalogStore, IngestReport, OverrideRevision, PinnedMatch, ProductRecord, ProductView, QueryFilter};
use mpe_core::clothes::{outfit_colors_with_threshold, GarmentRegion, OutfitColorProfile, SegmentationMask, DEFAULT_K, DEFAULT_THRESHOLD};
use mpe_core::color::RgbColor;
use mpe_core::eval::{evaluate_pipeline, AnnotationRecord, EvalOptions, EvaluationReport};
use mpe_core::matchmaker::{
    AttributeFilter, ColorSource, Harmony, IndexMode, MatchCatalog, MatchQuery, Recommendation, DEFAULT_MAX_DELTA_E,
};
use mpe_core::pipeline::{extract_batch_with_progress, ExtractOutcome, Extraction, Pipeline, PipelineConfig, Substitution};
use mpe_core::predict::{FsImageSource, ImageData, ImageSource};
use mpe_core::properties::{Category, FinishType, Format, MaterialProperties};
use serde::{Deserialize, Serialize};

use crate::backends::BackendRegistry;
use crate::config::ServiceConfig;
use crate::error::ApiError;
use crate::jobs::JobQueue;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestRequest {
    /// Raw records; ones that do not parse are reported individually.
    pub records: Vec<serde_json::Value>,
    #[serde(default)]
    pub upsert: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverrideRequest {
    pub properties: MaterialProperties,
    #[serde(default = "default_author")]
    pub author: String,
    /// Rejects the write with Conflict unless this is the latest revision.
    #[serde(default)]
    pub expected_revision: Option<u64>,
}

fn default_author() -> String {
    "curator".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverrideResponse {
    pub revision: u64,
}

/// Filters and ranking options shared by both match endpoints.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchOptions {
    #[serde(default)]
    pub category: Option<Category>,
    #[serde(default)]
    pub max_delta_e: Option<f64>,
    #[serde(default)]
    pub format: Option<Format>,
    #[serde(default)]
    pub brand: Option<String>,
    #[serde(default)]
    pub finish: Option<FinishType>,
    #[serde(default)]
    pub harmony: Option<Harmony>,
    #[serde(default)]
    pub limit: Option<usize>,
}

impl MatchOptions {
    pub fn query(&self, source: ColorSource) -> MatchQuery {
        MatchQuery {
            source,
            target_category: self.category,
            max_delta_e: self.max_delta_e.unwrap_or(DEFAULT_MAX_DELTA_E),
            attribute_filter: AttributeFilter { brand: self.brand.clone(), format: self.format, finish: self.finish },
            harmony: self.harmony.unwrap_or_default(),
            limit: self.limit,
        }
    }
}

/// Query string of `GET /match/similar`: a catalog shade or an explicit hex color.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimilarParams {
    #[serde(default)]
    pub product: Option<String>,
    #[serde(default)]
    pub shade: Option<usize>,
    #[serde(default)]
    pub color: Option<RgbColor>,
    #[serde(flatten)]
    pub options: MatchOptions,
}

fn parse_field<T: std::str::FromStr>(q: &HashMap<String, String>, key: &str) -> Result<Option<T>, ApiError>
where
    T::Err: std::fmt::Display,
{
    q.get(key)
        .filter(|v| !v.is_empty())
        .map(|v| v.parse::<T>().map_err(|e| ApiError::invalid(format!("{key}: {e}"))))
        .transpose()
}

impl SimilarParams {
    /// Parses `product, shade, color, category, max_delta_e, format, brand, finish, harmony, limit`.
    pub fn from_query(q: &HashMap<String, String>) -> Result<Self, ApiError> {
        const KNOWN: [&str; 10] =
            ["product", "shade", "color", "category", "max_delta_e", "format", "brand", "finish", "harmony", "limit"];
        if let Some(k) = q.keys().find(|k| !KNOWN.contains(&k.as_str())) {
            return Err(ApiError::invalid(format!("unknown query parameter {k:?}")));
        }
        Ok(Self {
            product: q.get("product").cloned(),
            shade: parse_field(q, "shade")?,
            color: parse_field::<String>(q, "color")?
                .map(|c| RgbColor::from_hex(&c).map_err(|e| ApiError::invalid(e.to_string())))
                .transpose()?,
            options: MatchOptions {
                category: parse_field(q, "category")?,
                max_delta_e: parse_field(q, "max_delta_e")?,
                format: parse_field(q, "format")?,
                brand: q.get("brand").cloned(),
                finish: parse_field(q, "finish")?,
                harmony: parse_field(q, "harmony")?,
                limit: parse_field(q, "limit")?,
            },
        })
    }

    pub fn source(&self) -> Result<ColorSource, ApiError> {
        match (&self.product, self.color) {
            (Some(p), None) => Ok(ColorSource::Shade { product_id: p.clone(), shade_index: self.shade.unwrap_or(0) }),
            (None, Some(c)) => Ok(ColorSource::Color { color: c }),
            _ => Err(ApiError::invalid("give exactly one of product or color")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutfitRequest {
    /// Image path relative to the image root.
    #[serde(default)]
    pub image: Option<String>,
    /// Four-plane mask path relative to the image root.
    #[serde(default)]
    pub mask: Option<String>,
    #[serde(default)]
    pub region: Option<GarmentRegion>,
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub threshold: Option<f64>,
    /// A precomputed profile instead of image + mask.
    #[serde(default)]
    pub profile: Option<OutfitColorProfile>,
    #[serde(flatten)]
    pub options: MatchOptions,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluateRequest {
    /// Stages fed from ground truth, e.g. `["M1", "M3"]`.
    #[serde(default)]
    pub substitute: Substitution,
    #[serde(default)]
    pub group_by_brand: bool,
    #[serde(default)]
    pub backend: Option<String>,
    /// Defaults to every product with ground truth.
    #[serde(default)]
    pub ids: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchExtractRequest {
    /// Defaults to every product.
    #[serde(default)]
    pub ids: Option<Vec<String>>,
    #[serde(default)]
    pub backend: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stored {
    pub stored: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobAccepted {
    pub job_id: String,
}

#[derive(Debug, thiserror::Error)]
pub enum OpenError {
    #[error(transparent)]
    Catalog(#[from] mpe_core::catalog::CatalogError),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
}

pub struct Service {
    pub store: Arc<CatalogStore>,
    pub backends: BackendRegistry,
    pub images: Arc<dyn ImageSource>,
    pub image_root: PathBuf,
    pub pipeline_config: PipelineConfig,
    pub parallelism: usize,
    pub jobs: JobQueue,
    pub token: Option<String>,
}

impl Service {
    pub fn new(store: Arc<CatalogStore>, config: &ServiceConfig) -> Result<Self, crate::config::ConfigError> {
        let image_root = config.image_root();
        Ok(Self {
            store,
            backends: BackendRegistry::new(config.backend.clone()),
            images: Arc::new(FsImageSource::new(image_root.clone())),
            image_root,
            pipeline_config: config.pipeline_config()?,
            parallelism: config.parallelism.max(1),
            jobs: JobQueue::new(config.workers),
            token: config.token.clone(),
        })
    }

    /// Opens (or creates) the catalog directory named in `config`.
    pub fn open(config: &ServiceConfig) -> Result<Self, OpenError> {
        let store = CatalogStore::open(&config.catalog)?;
        Ok(Self::new(Arc::new(store), config)?)
    }

    pub fn pipeline(&self, backend: Option<&str>) -> Result<Pipeline, ApiError> {
        let suite = self.backends.resolve(backend)?;
        Ok(Pipeline::new(suite, self.images.clone(), self.pipeline_config.clone()))
    }

    pub fn ingest(&self, req: IngestRequest) -> Result<IngestReport, ApiError> {
        let records = req
            .records
            .into_iter()
            .map(|v| serde_json::from_value::<ProductRecord>(v).map_err(|e| e.to_string()));
        Ok(self.store.ingest(records, req.upsert)?)
    }

    pub fn list(&self, filter: &QueryFilter) -> Vec<String> {
        self.store.query(filter)
    }

    pub fn product(&self, id: &str) -> Result<ProductView, ApiError> {
        self.store.view(id).ok_or_else(|| ApiError::not_found(format!("unknown product {id:?}")))
    }

    /// Runs the pipeline on one product and stores extracted properties.
    pub fn extract(&self, id: &str, backend: Option<&str>) -> Result<Extraction, ApiError> {
        let product = self.store.get(id).ok_or_else(|| ApiError::not_found(format!("unknown product {id:?}")))?;
        let extraction = self.pipeline(backend)?.extract(&product);
        if let ExtractOutcome::Extracted { properties } = &extraction.outcome {
            self.store.record_pipeline_result(id, properties.clone())?;
        }
        Ok(extraction)
    }

    pub fn extract_batch(
        &self,
        req: &BatchExtractRequest,
        progress: &(dyn Fn(usize, usize) + Sync),
    ) -> Result<BTreeMap<String, ExtractOutcome>, ApiError> {
        let pipeline = self.pipeline(req.backend.as_deref())?;
        let ids = req.ids.clone().unwrap_or_else(|| self.store.ids());
        let results = extract_batch_with_progress(
            &self.store,
            &ids,
            &pipeline,
            self.parallelism,
            &Substitution::none(),
            &|p| progress(p.done, p.total),
        )
        .map_err(|e| ApiError::backend(e.to_string()))?;
        let mut out = BTreeMap::new();
        for (id, ex) in results {
            if let ExtractOutcome::Extracted { properties } = &ex.outcome {
                self.store.record_pipeline_result(&id, properties.clone())?;
            }
            out.insert(id, ex.outcome);
        }
        Ok(out)
    }

    pub fn properties(&self, id: &str) -> Result<MaterialProperties, ApiError> {
        self.store
            .effective_properties(id)?
            .ok_or_else(|| ApiError::not_found(format!("product {id:?} has no extracted properties")))
    }

    pub fn put_override(&self, id: &str, req: OverrideRequest) -> Result<OverrideResponse, ApiError> {
        let revision = self.store.apply_override_checked(id, req.properties, &req.author, req.expected_revision)?;
        Ok(OverrideResponse { revision })
    }

    pub fn revisions(&self, id: &str) -> Result<Vec<OverrideRevision>, ApiError> {
        Ok(self.store.revisions(id)?)
    }

    fn match_catalog(&self) -> MatchCatalog {
        MatchCatalog::from_store(&self.store, IndexMode::Auto)
    }

    pub fn similar(&self, params: &SimilarParams) -> Result<Vec<Recommendation>, ApiError> {
        let query = params.options.query(params.source()?);
        if let ColorSource::Shade { product_id, .. } = &query.source {
            if self.store.get(product_id).is_none() {
                return Err(ApiError::not_found(format!("unknown product {product_id:?}")));
            }
        }
        Ok(self.match_catalog().similar_shades(&query)?)
    }

    /// Resolves a client path under the image root, refusing escapes.
    pub fn resolve_path(&self, rel: &str) -> Result<PathBuf, ApiError> {
        let p = Path::new(rel);
        if p.is_absolute() || p.components().any(|c| !matches!(c, Component::Normal(_) | Component::CurDir)) {
            return Err(ApiError::invalid(format!("path {rel:?} must be relative to the image root")));
        }
        Ok(self.image_root.join(p))
    }

    pub fn outfit_profile(&self, req: &OutfitRequest) -> Result<OutfitColorProfile, ApiError> {
        if let Some(p) = &req.profile {
            return Ok(p.clone());
        }
        let (Some(image), Some(mask)) = (&req.image, &req.mask) else {
            return Err(ApiError::invalid("give a profile, or both image and mask"));
        };
        let img = ImageData::open(&self.resolve_path(image)?, image.clone())?;
        let mask = SegmentationMask::load(&self.resolve_path(mask)?)?;
        Ok(outfit_colors_with_threshold(
            &img,
            &mask,
            req.region.unwrap_or(GarmentRegion::UpperBody),
            req.k.unwrap_or(DEFAULT_K),
            req.threshold.unwrap_or(DEFAULT_THRESHOLD),
        )?)
    }

    pub fn outfit(&self, req: &OutfitRequest) -> Result<Vec<Recommendation>, ApiError> {
        let profile = self.outfit_profile(req)?;
        let query = req.options.query(ColorSource::Profile { profile: profile.clone() });
        Ok(self.match_catalog().outfit_match(&profile, &query)?)
    }

    pub fn pin(&self, pin: PinnedMatch) -> Result<OverrideResponse, ApiError> {
        Ok(OverrideResponse { revision: self.store.pin(pin)? })
    }

    pub fn pins(&self, source: Option<&str>) -> Vec<PinnedMatch> {
        self.store.pins(source)
    }

    pub fn put_annotations(&self, records: Vec<AnnotationRecord>) -> Result<Stored, ApiError> {
        Ok(Stored { stored: self.store.put_annotations(records)? })
    }

    pub fn annotations(&self) -> Vec<AnnotationRecord> {
        self.store.annotations()
    }

    pub fn evaluate(&self, req: &EvaluateRequest) -> Result<EvaluationReport, ApiError> {
        let pipeline = self.pipeline(req.backend.as_deref())?;
        let products: Vec<ProductRecord> = match &req.ids {
            Some(ids) => ids
                .iter()
                .map(|id| self.store.get(id).ok_or_else(|| ApiError::not_found(format!("unknown product {id:?}"))))
                .collect::<Result<_, _>>()?,
            None => self.store.views().into_iter().map(|v| v.record).filter(|r| r.ground_truth.is_some()).collect(),
        };
        let options = EvalOptions {
            substitution: req.substitute.clone(),
            group_by_brand: req.group_by_brand,
            parallelism: self.parallelism,
        };
        Ok(evaluate_pipeline(&products, &pipeline, &self.store.annotations(), &options)?)
    }
}

/// Jobs hold an `Arc<Service>`, so submission lives on the shared handle.
pub fn submit_evaluate(service: &Arc<Service>, req: EvaluateRequest) -> Result<JobAccepted, ApiError> {
    // fail fast on a bad backend name
    service.backends.resolve(req.backend.as_deref())?;
    let s = service.clone();
    let job_id = service.jobs.submit("evaluate", move |_| {
        let report = s.evaluate(&req)?;
        serde_json::to_value(report).map_err(|e| ApiError::backend(e.to_string()))
    })?;
    Ok(JobAccepted { job_id })
}

pub fn submit_batch_extract(service: &Arc<Service>, req: BatchExtractRequest) -> Result<JobAccepted, ApiError> {
    service.backends.resolve(req.backend.as_deref())?;
    let s = service.clone();
    let job_id = service.jobs.submit("extract", move |handle| {
        let out = s.extract_batch(&req, &|done, total| handle.progress(done, total))?;
        serde_json::to_value(out).map_err(|e| ApiError::backend(e.to_string()))
    })?;
    Ok(JobAccepted { job_id })
}
