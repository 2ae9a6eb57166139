use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ProductRecord;
use crate::eval::AnnotationRecord;
use crate::properties::{Category, FinishType, Format, MaterialProperties, PropertyError, Provenance};

/// First line of every snapshot file.
pub const SNAPSHOT_MAGIC: &str = "MPECAT1";
const LOG_FILE: &str = "catalog.log";
const SNAPSHOT_FILE: &str = "catalog.snapshot";

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("unknown product {0:?}")]
    UnknownProduct(String),
    #[error("invalid properties: {0}")]
    InvalidProperties(#[from] PropertyError),
    #[error("stale revision: expected {expected:?}, current is {current:?}")]
    Conflict { expected: Option<u64>, current: Option<u64> },
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("catalog i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt catalog data: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum IngestErrorKind {
    DuplicateId,
    MalformedRecord,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestError {
    /// Position of the record in the input stream.
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub product_id: Option<String>,
    pub kind: IngestErrorKind,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub count: usize,
    pub errors: Vec<IngestError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverrideRevision {
    pub revision: u64,
    pub author: String,
    pub properties: MaterialProperties,
}

/// A curator-pinned association between a match source and a catalog shade.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PinnedMatch {
    pub source: String,
    pub product_id: String,
    pub shade_index: usize,
    pub author: String,
    #[serde(default)]
    pub revision: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brand: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finish: Option<FinishType>,
}

impl QueryFilter {
    pub fn matches(&self, record: &ProductRecord, effective: Option<&MaterialProperties>) -> bool {
        if self.category.is_some_and(|c| c != record.category) {
            return false;
        }
        if let Some(brand) = &self.brand {
            if !brand.eq_ignore_ascii_case(&record.brand) {
                return false;
            }
        }
        if let Some(f) = self.format {
            if effective.map(|p| p.format) != Some(f) {
                return false;
            }
        }
        if let Some(f) = self.finish {
            if !effective.is_some_and(|p| p.has_finish(f)) {
                return false;
            }
        }
        true
    }
}

/// A product together with its resolved (override-aware) properties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductView {
    pub record: ProductRecord,
    pub effective: Option<MaterialProperties>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct StoredProduct {
    record: Option<ProductRecord>,
    #[serde(default)]
    pipeline: Option<MaterialProperties>,
    #[serde(default)]
    revisions: Vec<OverrideRevision>,
}

impl StoredProduct {
    fn record(&self) -> &ProductRecord {
        self.record.as_ref().expect("stored product without record")
    }

    /// Override ≻ pipeline output ≻ absent; whole property sets, never field mixes.
    fn effective(&self) -> Option<MaterialProperties> {
        self.revisions
            .last()
            .map(|r| r.properties.clone())
            .or_else(|| self.pipeline.clone())
    }

    fn view(&self) -> ProductRecord {
        let mut rec = self.record().clone();
        rec.overrides = self.revisions.last().map(|r| r.properties.clone());
        rec
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct State {
    seq: u64,
    next_revision: u64,
    products: BTreeMap<String, StoredProduct>,
    #[serde(default)]
    pins: Vec<PinnedMatch>,
    #[serde(default)]
    annotations: BTreeMap<String, AnnotationRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Event {
    Upsert { record: ProductRecord },
    Override { product_id: String, revision: OverrideRevision },
    PipelineResult { product_id: String, properties: MaterialProperties },
    Pin { pin: PinnedMatch },
    Annotation { record: AnnotationRecord },
}

#[derive(Debug, Serialize, Deserialize)]
struct LogLine {
    seq: u64,
    event: Event,
}

fn annotation_key(product_id: &str, shade_index: usize) -> String {
    format!("{product_id}\u{1f}{shade_index}")
}

impl State {
    fn apply(&mut self, event: Event) {
        match event {
            Event::Upsert { record } => {
                let mut record = record;
                let initial_override = record.overrides.take();
                let entry = self.products.entry(record.product_id.clone()).or_default();
                entry.record = Some(record);
                if let Some(properties) = initial_override {
                    self.next_revision += 1;
                    let properties = MaterialProperties { provenance: Provenance::Override, ..properties };
                    entry.revisions.push(OverrideRevision {
                        revision: self.next_revision,
                        author: "ingest".into(),
                        properties,
                    });
                }
            }
            Event::Override { product_id, revision } => {
                self.next_revision = self.next_revision.max(revision.revision);
                if let Some(p) = self.products.get_mut(&product_id) {
                    p.revisions.push(revision);
                }
            }
            Event::PipelineResult { product_id, properties } => {
                if let Some(p) = self.products.get_mut(&product_id) {
                    p.pipeline = Some(properties);
                }
            }
            Event::Pin { pin } => {
                self.next_revision = self.next_revision.max(pin.revision);
                self.pins.push(pin);
            }
            Event::Annotation { record } => {
                self.annotations
                    .insert(annotation_key(&record.product_id, record.shade_index), record);
            }
        }
    }
}

struct Persistence {
    dir: PathBuf,
    log: BufWriter<File>,
}

/// Append-only catalog with an in-memory index.
///
/// Writes are serialized through one lock; readers observe a consistent state.
pub struct CatalogStore {
    state: RwLock<State>,
    persistence: Mutex<Option<Persistence>>,
}

impl Default for CatalogStore {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl CatalogStore {
    pub fn in_memory() -> Self {
        Self { state: RwLock::new(State::default()), persistence: Mutex::new(None) }
    }

    /// Opens (or creates) a catalog directory: snapshot first, then the log tail.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, CatalogError> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        let snapshot_path = dir.join(SNAPSHOT_FILE);
        let mut state = if snapshot_path.exists() {
            read_snapshot(File::open(&snapshot_path)?)?
        } else {
            State::default()
        };
        let log_path = dir.join(LOG_FILE);
        if log_path.exists() {
            for (n, line) in BufReader::new(File::open(&log_path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: LogLine = serde_json::from_str(&line)
                    .map_err(|e| CatalogError::Corrupt(format!("log line {}: {e}", n + 1)))?;
                if entry.seq > state.seq {
                    state.seq = entry.seq;
                    state.apply(entry.event);
                }
            }
        }
        let log = BufWriter::new(OpenOptions::new().create(true).append(true).open(&log_path)?);
        Ok(Self {
            state: RwLock::new(state),
            persistence: Mutex::new(Some(Persistence { dir, log })),
        })
    }

    fn commit(&self, events: Vec<Event>) -> Result<(), CatalogError> {
        let mut persistence = self.persistence.lock();
        self.commit_locked(&mut persistence, events)
    }

    /// Appends events while the caller holds the writer lock.
    fn commit_locked(&self, persistence: &mut Option<Persistence>, events: Vec<Event>) -> Result<(), CatalogError> {
        let mut state = self.state.write();
        if let Some(p) = persistence.as_mut() {
            for (i, event) in events.iter().enumerate() {
                let line = LogLine { seq: state.seq + 1 + i as u64, event: event.clone() };
                serde_json::to_writer(&mut p.log, &line).map_err(std::io::Error::from)?;
                p.log.write_all(b"\n")?;
            }
            p.log.flush()?;
        }
        for event in events {
            state.seq += 1;
            state.apply(event);
        }
        Ok(())
    }

    /// Ingests a stream of records. Per-record failures are collected, never fatal.
    /// With `upsert`, an identical re-ingest is accepted; a differing one replaces.
    pub fn ingest<I>(&self, records: I, upsert: bool) -> Result<IngestReport, CatalogError>
    where
        I: IntoIterator<Item = Result<ProductRecord, String>>,
    {
        let mut report = IngestReport::default();
        for (index, item) in records.into_iter().enumerate() {
            let record = match item.and_then(|r| r.validate().map(|_| r)) {
                Ok(r) => r,
                Err(message) => {
                    report.errors.push(IngestError {
                        index,
                        product_id: None,
                        kind: IngestErrorKind::MalformedRecord,
                        message,
                    });
                    continue;
                }
            };
            let mut persistence = self.persistence.lock();
            let existing = self.state.read().products.get(&record.product_id).map(StoredProduct::view);
            let exists = existing.is_some();
            if exists && !upsert {
                report.errors.push(IngestError {
                    index,
                    product_id: Some(record.product_id.clone()),
                    kind: IngestErrorKind::DuplicateId,
                    message: format!("product {:?} already exists", record.product_id),
                });
                continue;
            }
            if existing.as_ref() == Some(&record) {
                report.count += 1;
                continue;
            }
            self.commit_locked(&mut persistence, vec![Event::Upsert { record }])?;
            report.count += 1;
        }
        Ok(report)
    }

    /// Newline-delimited JSON records; blank lines are skipped.
    pub fn ingest_jsonl<R: Read>(&self, reader: R, upsert: bool) -> Result<IngestReport, CatalogError> {
        let mut items = Vec::new();
        for line in BufReader::new(reader).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            items.push(serde_json::from_str::<ProductRecord>(&line).map_err(|e| e.to_string()));
        }
        self.ingest(items, upsert)
    }

    pub fn len(&self) -> usize {
        self.state.read().products.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ids(&self) -> Vec<String> {
        self.state.read().products.keys().cloned().collect()
    }

    /// The record as ingested, with `overrides` reflecting the latest revision.
    pub fn get(&self, product_id: &str) -> Option<ProductRecord> {
        self.state.read().products.get(product_id).map(StoredProduct::view)
    }

    pub fn view(&self, product_id: &str) -> Option<ProductView> {
        let state = self.state.read();
        state.products.get(product_id).map(|p| ProductView { record: p.view(), effective: p.effective() })
    }

    /// Every product with its effective properties, ordered by id.
    pub fn views(&self) -> Vec<ProductView> {
        let state = self.state.read();
        state
            .products
            .values()
            .map(|p| ProductView { record: p.view(), effective: p.effective() })
            .collect()
    }

    pub fn effective_properties(&self, product_id: &str) -> Result<Option<MaterialProperties>, CatalogError> {
        let state = self.state.read();
        let p = state
            .products
            .get(product_id)
            .ok_or_else(|| CatalogError::UnknownProduct(product_id.to_string()))?;
        Ok(p.effective())
    }

    pub fn pipeline_properties(&self, product_id: &str) -> Option<MaterialProperties> {
        self.state.read().products.get(product_id).and_then(|p| p.pipeline.clone())
    }

    pub fn record_pipeline_result(
        &self,
        product_id: &str,
        properties: MaterialProperties,
    ) -> Result<(), CatalogError> {
        if !self.state.read().products.contains_key(product_id) {
            return Err(CatalogError::UnknownProduct(product_id.to_string()));
        }
        let properties = MaterialProperties { provenance: Provenance::Pipeline, ..properties };
        self.commit(vec![Event::PipelineResult { product_id: product_id.to_string(), properties }])
    }

    pub fn apply_override(
        &self,
        product_id: &str,
        properties: MaterialProperties,
        author: &str,
    ) -> Result<u64, CatalogError> {
        self.apply_override_checked(product_id, properties, author, None)
    }

    /// Like [`apply_override`](Self::apply_override), but rejects the write when
    /// `expected_revision` is given and is not the product's latest revision.
    pub fn apply_override_checked(
        &self,
        product_id: &str,
        properties: MaterialProperties,
        author: &str,
        expected_revision: Option<u64>,
    ) -> Result<u64, CatalogError> {
        // Holding the writer lock serializes the check with the write.
        let mut persistence = self.persistence.lock();
        let revision = {
            let state = self.state.read();
            let p = state
                .products
                .get(product_id)
                .ok_or_else(|| CatalogError::UnknownProduct(product_id.to_string()))?;
            properties.validate(p.record().images.len())?;
            let current = p.revisions.last().map(|r| r.revision);
            if expected_revision.is_some() && expected_revision != current {
                return Err(CatalogError::Conflict { expected: expected_revision, current });
            }
            state.next_revision + 1
        };
        let properties = MaterialProperties { provenance: Provenance::Override, ..properties };
        self.commit_locked(&mut persistence, vec![Event::Override {
            product_id: product_id.to_string(),
            revision: OverrideRevision { revision, author: author.to_string(), properties },
        }])?;
        Ok(revision)
    }

    pub fn revisions(&self, product_id: &str) -> Result<Vec<OverrideRevision>, CatalogError> {
        let state = self.state.read();
        state
            .products
            .get(product_id)
            .map(|p| p.revisions.clone())
            .ok_or_else(|| CatalogError::UnknownProduct(product_id.to_string()))
    }

    /// Conjunctive filter over stored attributes, ids in ascending order.
    pub fn query(&self, filter: &QueryFilter) -> Vec<String> {
        let state = self.state.read();
        state
            .products
            .iter()
            .filter(|(_, p)| filter.matches(p.record(), p.effective().as_ref()))
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn pin(&self, mut pin: PinnedMatch) -> Result<u64, CatalogError> {
        let mut persistence = self.persistence.lock();
        {
            let state = self.state.read();
            let product = state
                .products
                .get(&pin.product_id)
                .ok_or_else(|| CatalogError::UnknownProduct(pin.product_id.clone()))?;
            let shades = product.effective().map_or(0, |p| p.shades.len());
            if pin.shade_index >= shades {
                return Err(CatalogError::Invalid(format!(
                    "pinned shade {} out of range for {}",
                    pin.shade_index, pin.product_id
                )));
            }
            pin.revision = state.next_revision + 1;
        }
        let revision = pin.revision;
        self.commit_locked(&mut persistence, vec![Event::Pin { pin }])?;
        Ok(revision)
    }

    pub fn pins(&self, source: Option<&str>) -> Vec<PinnedMatch> {
        let state = self.state.read();
        state
            .pins
            .iter()
            .filter(|p| source.is_none_or(|s| p.source == s))
            .cloned()
            .collect()
    }

    pub fn put_annotations(&self, records: Vec<AnnotationRecord>) -> Result<usize, CatalogError> {
        let n = records.len();
        self.commit(records.into_iter().map(|record| Event::Annotation { record }).collect())?;
        Ok(n)
    }

    pub fn annotations(&self) -> Vec<AnnotationRecord> {
        self.state.read().annotations.values().cloned().collect()
    }

    /// Writes a full snapshot. For persistent stores the default location is
    /// used when `path` is `None`.
    pub fn write_snapshot(&self, path: Option<&Path>) -> Result<PathBuf, CatalogError> {
        let persistence = self.persistence.lock();
        let target = match (path, persistence.as_ref()) {
            (Some(p), _) => p.to_path_buf(),
            (None, Some(p)) => p.dir.join(SNAPSHOT_FILE),
            (None, None) => {
                return Err(CatalogError::Invalid("in-memory store needs an explicit snapshot path".into()))
            }
        };
        let state = self.state.read();
        let tmp = target.with_extension("tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            writeln!(w, "{SNAPSHOT_MAGIC}")?;
            serde_json::to_writer(&mut w, &*state).map_err(std::io::Error::from)?;
            w.flush()?;
        }
        std::fs::rename(&tmp, &target)?;
        Ok(target)
    }

    /// Loads a snapshot file into a fresh in-memory store.
    pub fn from_snapshot(path: &Path) -> Result<Self, CatalogError> {
        let state = read_snapshot(File::open(path)?)?;
        Ok(Self { state: RwLock::new(state), persistence: Mutex::new(None) })
    }
}

fn read_snapshot<R: Read>(reader: R) -> Result<State, CatalogError> {
    let mut reader = BufReader::new(reader);
    let mut magic = String::new();
    reader.read_line(&mut magic)?;
    if magic.trim_end() != SNAPSHOT_MAGIC {
        return Err(CatalogError::Corrupt(format!("bad snapshot header {:?}", magic.trim_end())));
    }
    serde_json::from_reader(reader).map_err(|e| CatalogError::Corrupt(e.to_string()))
}
