//! Color-distance recommendations over extracted shades.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{CatalogStore, ProductView};
use crate::clothes::OutfitColorProfile;
use crate::color::{complementary, delta_e, LabColor, RgbColor};
use crate::properties::{Category, FinishType, Format};

pub const DEFAULT_MAX_DELTA_E: f64 = 10.0;
/// Catalogs larger than this use the grid index under [`IndexMode::Auto`].
pub const GRID_INDEX_THRESHOLD: usize = 100_000;
pub const GRID_CELL: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatchError {
    #[error("unknown product {0:?}")]
    UnknownProduct(String),
    #[error("product {0:?} has no extracted properties")]
    NoExtractedProperties(String),
    #[error("product {product_id:?} has no shade {shade_index}")]
    UnknownShade { product_id: String, shade_index: usize },
    #[error("outfit profile has no colors")]
    EmptyProfile,
    #[error("invalid query: {0}")]
    InvalidQuery(String),
}

/// Maps a query color to the makeup color to search for.
pub trait HarmonyRule {
    fn target(&self, color: RgbColor) -> RgbColor;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Harmony {
    #[default]
    Exact,
    /// 180° hue rotation in HSL, lightness and saturation kept.
    Complementary,
}

impl HarmonyRule for Harmony {
    fn target(&self, color: RgbColor) -> RgbColor {
        match self {
            Harmony::Exact => color,
            Harmony::Complementary => complementary(color),
        }
    }
}

impl std::str::FromStr for Harmony {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exact" => Ok(Harmony::Exact),
            "complementary" => Ok(Harmony::Complementary),
            other => Err(format!("unknown harmony {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColorSource {
    Shade { product_id: String, shade_index: usize },
    Color { color: RgbColor },
    Profile { profile: OutfitColorProfile },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brand: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finish: Option<FinishType>,
}

impl AttributeFilter {
    pub fn is_empty(&self) -> bool {
        self.brand.is_none() && self.format.is_none() && self.finish.is_none()
    }

    fn accepts(&self, e: &ShadeEntry) -> bool {
        self.brand.as_ref().is_none_or(|b| b.eq_ignore_ascii_case(&e.brand))
            && self.format.is_none_or(|f| f == e.format)
            && self.finish.is_none_or(|f| f == e.finish)
    }

    fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(b) = &self.brand {
            out.push(format!("brand={b}"));
        }
        if let Some(f) = self.format {
            out.push(format!("format={f}"));
        }
        if let Some(f) = self.finish {
            out.push(format!("finish={f}"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchQuery {
    pub source: ColorSource,
    /// `None` searches every category.
    #[serde(default)]
    pub target_category: Option<Category>,
    #[serde(default = "default_max_delta_e")]
    pub max_delta_e: f64,
    #[serde(default)]
    pub attribute_filter: AttributeFilter,
    #[serde(default)]
    pub harmony: Harmony,
    /// `None` returns every in-limit shade.
    #[serde(default)]
    pub limit: Option<usize>,
}

fn default_max_delta_e() -> f64 {
    DEFAULT_MAX_DELTA_E
}

impl MatchQuery {
    pub fn new(source: ColorSource) -> Self {
        Self {
            source,
            target_category: None,
            max_delta_e: DEFAULT_MAX_DELTA_E,
            attribute_filter: AttributeFilter::default(),
            harmony: Harmony::Exact,
            limit: None,
        }
    }

    pub fn color(c: RgbColor) -> Self {
        Self::new(ColorSource::Color { color: c })
    }

    pub fn shade(product_id: impl Into<String>, shade_index: usize) -> Self {
        Self::new(ColorSource::Shade { product_id: product_id.into(), shade_index })
    }

    pub fn validate(&self) -> Result<(), MatchError> {
        if self.max_delta_e.is_nan() || self.max_delta_e <= 0.0 {
            return Err(MatchError::InvalidQuery(format!("max_delta_e must be > 0, got {}", self.max_delta_e)));
        }
        if self.limit == Some(0) {
            return Err(MatchError::InvalidQuery("limit must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub product_id: String,
    pub shade_index: usize,
    /// deltaE to the (harmony-mapped) query color.
    pub score: f64,
    pub matched_color: RgbColor,
    /// The harmony-mapped color this shade was scored against.
    pub target_color: RgbColor,
    pub satisfied_filters: Vec<String>,
}

/// One searchable shade.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadeEntry {
    pub product_id: String,
    pub shade_index: usize,
    pub brand: String,
    pub category: Category,
    pub format: Format,
    pub finish: FinishType,
    pub base_color: RgbColor,
    pub lab: LabColor,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexMode {
    #[default]
    Auto,
    Linear,
    Grid,
}

type Cell = (i64, i64, i64);

fn cell_of(v: f64) -> i64 {
    (v / GRID_CELL).floor() as i64
}

/// Uniform Lab-space buckets. Queries scan every cell overlapping the query
/// ball's bounding cube, so results equal a linear scan.
#[derive(Debug, Clone, Default)]
pub struct LabGridIndex {
    cells: HashMap<Cell, Vec<usize>>,
}

impl LabGridIndex {
    pub fn build(entries: &[ShadeEntry]) -> Self {
        let mut cells: HashMap<Cell, Vec<usize>> = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            cells.entry((cell_of(e.lab.l), cell_of(e.lab.a), cell_of(e.lab.b))).or_default().push(i);
        }
        Self { cells }
    }

    /// Entry indices that may lie within `radius` of `q`.
    pub fn candidates(&self, q: LabColor, radius: f64) -> Vec<usize> {
        let lo = (cell_of(q.l - radius), cell_of(q.a - radius), cell_of(q.b - radius));
        let hi = (cell_of(q.l + radius), cell_of(q.a + radius), cell_of(q.b + radius));
        let span = ((hi.0 - lo.0 + 1) * (hi.1 - lo.1 + 1)).saturating_mul(hi.2 - lo.2 + 1);
        let inside = |c: &Cell| (lo.0..=hi.0).contains(&c.0) && (lo.1..=hi.1).contains(&c.1) && (lo.2..=hi.2).contains(&c.2);
        let mut out = Vec::new();
        if span as usize > self.cells.len() {
            for (c, ids) in &self.cells {
                if inside(c) {
                    out.extend_from_slice(ids);
                }
            }
        } else {
            for l in lo.0..=hi.0 {
                for a in lo.1..=hi.1 {
                    for b in lo.2..=hi.2 {
                        if let Some(ids) = self.cells.get(&(l, a, b)) {
                            out.extend_from_slice(ids);
                        }
                    }
                }
            }
        }
        out
    }
}

/// Immutable snapshot of searchable shades.
#[derive(Debug, Clone, Default)]
pub struct MatchCatalog {
    entries: Vec<ShadeEntry>,
    index: Option<LabGridIndex>,
}

impl MatchCatalog {
    pub fn new(entries: Vec<ShadeEntry>, mode: IndexMode) -> Self {
        let use_grid = match mode {
            IndexMode::Linear => false,
            IndexMode::Grid => true,
            IndexMode::Auto => entries.len() > GRID_INDEX_THRESHOLD,
        };
        let index = use_grid.then(|| LabGridIndex::build(&entries));
        Self { entries, index }
    }

    /// Products without effective properties contribute no shades.
    pub fn from_views(views: &[ProductView], mode: IndexMode) -> Self {
        let mut entries = Vec::new();
        for v in views {
            let Some(props) = &v.effective else { continue };
            for (i, s) in props.shades.iter().enumerate() {
                entries.push(ShadeEntry {
                    product_id: v.record.product_id.clone(),
                    shade_index: i,
                    brand: v.record.brand.clone(),
                    category: v.record.category,
                    format: props.format,
                    finish: s.finish,
                    base_color: s.base_color,
                    lab: s.base_color.to_lab(),
                });
            }
        }
        Self::new(entries, mode)
    }

    pub fn from_store(store: &CatalogStore, mode: IndexMode) -> Self {
        Self::from_views(&store.views(), mode)
    }

    pub fn entries(&self) -> &[ShadeEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_indexed(&self) -> bool {
        self.index.is_some()
    }

    fn shade(&self, product_id: &str, shade_index: usize) -> Result<&ShadeEntry, MatchError> {
        let mut has_product = false;
        for e in &self.entries {
            if e.product_id == product_id {
                has_product = true;
                if e.shade_index == shade_index {
                    return Ok(e);
                }
            }
        }
        if has_product {
            Err(MatchError::UnknownShade { product_id: product_id.into(), shade_index })
        } else {
            Err(MatchError::NoExtractedProperties(product_id.into()))
        }
    }

    /// Unsorted in-limit, filter-passing candidates for one target color.
    fn scan(&self, target: RgbColor, query: &MatchQuery, exclude: Option<&str>) -> Vec<Recommendation> {
        let q = target.to_lab();
        let filters = query.attribute_filter.names();
        let consider = |e: &ShadeEntry| -> Option<Recommendation> {
            if exclude == Some(e.product_id.as_str())
                || query.target_category.is_some_and(|c| c != e.category)
                || !query.attribute_filter.accepts(e)
            {
                return None;
            }
            let score = delta_e(q, e.lab);
            (score <= query.max_delta_e).then(|| Recommendation {
                product_id: e.product_id.clone(),
                shade_index: e.shade_index,
                score,
                matched_color: e.base_color,
                target_color: target,
                satisfied_filters: filters.clone(),
            })
        };
        match &self.index {
            Some(idx) => idx.candidates(q, query.max_delta_e).into_iter().filter_map(|i| consider(&self.entries[i])).collect(),
            None => self.entries.iter().filter_map(consider).collect(),
        }
    }

    /// Ranks shades by deltaE to the query shade or color.
    pub fn similar_shades(&self, query: &MatchQuery) -> Result<Vec<Recommendation>, MatchError> {
        query.validate()?;
        let (color, exclude) = match &query.source {
            ColorSource::Shade { product_id, shade_index } => {
                (self.shade(product_id, *shade_index)?.base_color, Some(product_id.as_str()))
            }
            ColorSource::Color { color } => (*color, None),
            ColorSource::Profile { profile } => return self.outfit_match(profile, query),
        };
        let mut out = self.scan(query.harmony.target(color), query, exclude);
        sort_recommendations(&mut out);
        truncate(&mut out, query.limit);
        Ok(out)
    }

    /// Like [`Self::similar_shades`]; every structured filter must hold before ranking.
    pub fn attribute_combined(&self, query: &MatchQuery) -> Result<Vec<Recommendation>, MatchError> {
        self.similar_shades(query)
    }

    /// Each profile color is searched independently; a shade's score is its
    /// minimum deltaE over profile colors, with ties going to the heavier color.
    pub fn outfit_match(&self, profile: &OutfitColorProfile, query: &MatchQuery) -> Result<Vec<Recommendation>, MatchError> {
        query.validate()?;
        if profile.colors.is_empty() {
            return Err(MatchError::EmptyProfile);
        }
        let mut best: BTreeMap<(String, usize), (Recommendation, f64)> = BTreeMap::new();
        for wc in &profile.colors {
            for rec in self.scan(query.harmony.target(wc.color), query, None) {
                let key = (rec.product_id.clone(), rec.shade_index);
                match best.get(&key) {
                    Some((cur, w)) if cur.score < rec.score || (cur.score == rec.score && *w >= wc.weight) => {}
                    _ => {
                        best.insert(key, (rec, wc.weight));
                    }
                }
            }
        }
        let mut out: Vec<Recommendation> = best.into_values().map(|(r, _)| r).collect();
        sort_recommendations(&mut out);
        truncate(&mut out, query.limit);
        Ok(out)
    }
}

/// Ascending score, then product id, then shade index.
pub fn sort_recommendations(recs: &mut [Recommendation]) {
    recs.sort_by(|x, y| {
        x.score
            .total_cmp(&y.score)
            .then_with(|| x.product_id.cmp(&y.product_id))
            .then_with(|| x.shade_index.cmp(&y.shade_index))
    });
}

fn truncate(recs: &mut Vec<Recommendation>, limit: Option<usize>) {
    if let Some(n) = limit {
        recs.truncate(n);
    }
}
