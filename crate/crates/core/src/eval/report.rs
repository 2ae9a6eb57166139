use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::agreement::{consistency_items, fleiss_kappa, human_consistency, rating_table, ConsistencyReport};
use super::metrics::{
    f1_from_confusion, mean_average_precision, mean_variance, selection_accuracy, ConfusionMatrix,
    DeltaEHistogram, F1Report, ImageBoxes,
};
use super::{AnnotationRecord, EvalError};
use crate::catalog::ProductRecord;
use crate::color::{delta_e_rgb, RgbColor};
use crate::pipeline::{ExtractOutcome, ModelStage, Pipeline, Substitution};
use crate::predict::Label;
use crate::properties::{FinishType, Format, MaterialProperties};

/// Predicted and true shades pair up greedily by IoU at or above this.
pub const SHADE_MATCH_IOU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub substitution: Substitution,
    pub group_by_brand: bool,
    pub parallelism: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { substitution: Substitution::none(), group_by_brand: false, parallelism: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub confusion: ConfusionMatrix,
    pub f1: F1Report,
}

impl ClassificationMetrics {
    fn from_pairs<L: Label>(pairs: &[(L, L)]) -> Option<Self> {
        if pairs.is_empty() {
            return None;
        }
        let confusion = ConfusionMatrix::from_pairs(pairs);
        let f1 = f1_from_confusion(&confusion);
        Some(Self { confusion, f1 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColorMetrics {
    pub count: usize,
    pub mean_delta_e: f64,
    pub variance: f64,
    pub histogram: DeltaEHistogram,
}

impl ColorMetrics {
    fn from_values(values: &[f64]) -> Option<Self> {
        let mv = mean_variance(values)?;
        Some(Self {
            count: values.len(),
            mean_delta_e: mv.mean,
            variance: mv.variance,
            histogram: DeltaEHistogram::from_values(values.iter().copied()),
        })
    }
}

/// Per-stage scores. A metric is `None` when its stage was substituted or had no samples.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageMetrics {
    pub selection_accuracy: Option<f64>,
    pub format: Option<ClassificationMetrics>,
    pub detection_map: Option<f64>,
    pub base_color: Option<ColorMetrics>,
    pub finish: Option<ClassificationMetrics>,
    pub reflective_color: Option<ColorMetrics>,
    /// Predicted shades with no true shade at IoU ≥ 0.5.
    pub unmatched_shades: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub total: usize,
    pub extracted: usize,
    pub filtered_out: usize,
    /// Failure kind → count.
    pub failed: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaResult {
    pub items: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl KappaResult {
    fn from_labels<L: Label>(items: Vec<Vec<L>>) -> Option<Self> {
        if items.is_empty() {
            return None;
        }
        let n = items.len();
        Some(match fleiss_kappa(&rating_table(&items)) {
            Ok(v) => Self { items: n, value: Some(v), error: None },
            Err(e) => Self { items: n, value: None, error: Some(e.to_string()) },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub consistency: ConsistencyReport,
    pub finish_kappa: Option<KappaResult>,
    pub format_kappa: Option<KappaResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Row label, e.g. "NO GT" or "GT M1 + M3".
    pub mode: String,
    pub substituted: Vec<ModelStage>,
    pub outcomes: OutcomeCounts,
    pub metrics: StageMetrics,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub by_brand: BTreeMap<String, StageMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agreement: Option<AgreementReport>,
}

#[derive(Default)]
struct ProductScore {
    brand: String,
    selection: Option<(usize, usize)>,
    format: Option<(Format, Format)>,
    detection: Option<ImageBoxes>,
    base: Vec<f64>,
    finish: Vec<(FinishType, FinishType)>,
    reflective: Vec<f64>,
    unmatched: usize,
    /// true shade index → predicted base color
    predicted_colors: BTreeMap<usize, RgbColor>,
}

/// Greedy one-to-one pairing in predicted order: (predicted index, true index).
fn match_shades(pred: &MaterialProperties, gt: &MaterialProperties, by_index: bool) -> Vec<(usize, usize)> {
    if by_index {
        return (0..pred.shades.len().min(gt.shades.len())).map(|i| (i, i)).collect();
    }
    let mut used = vec![false; gt.shades.len()];
    let mut out = Vec::new();
    for (i, p) in pred.shades.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gt.shades.iter().enumerate() {
            let v = p.region.iou(&g.region);
            if !used[j] && v >= SHADE_MATCH_IOU && best.is_none_or(|(_, b)| v > b) {
                best = Some((j, v));
            }
        }
        if let Some((j, _)) = best {
            used[j] = true;
            out.push((i, j));
        }
    }
    out
}

fn score_product(
    product: &ProductRecord,
    gt: &MaterialProperties,
    outcome: &ExtractOutcome,
    sub: &Substitution,
) -> ProductScore {
    let mut s = ProductScore { brand: product.brand.clone(), ..Default::default() };
    let truth_boxes: Vec<_> = gt.shades.iter().map(|x| x.region).collect();
    let Some(pred) = outcome.properties() else {
        if matches!(outcome, ExtractOutcome::Failed { .. }) && !sub.contains(ModelStage::M3) {
            s.detection = Some(ImageBoxes { predictions: vec![], ground_truth: truth_boxes });
        }
        return s;
    };
    if !sub.contains(ModelStage::M1) {
        s.selection = Some((pred.best_image_position, gt.best_image_position));
    }
    if !sub.contains(ModelStage::M2) {
        s.format = Some((gt.format, pred.format));
    }
    if !sub.contains(ModelStage::M3) {
        s.detection = Some(ImageBoxes {
            predictions: pred.shades.iter().map(|x| x.region).collect(),
            ground_truth: truth_boxes,
        });
    }
    let pairs = match_shades(pred, gt, sub.contains(ModelStage::M3));
    s.unmatched = pred.shades.len() - pairs.len();
    for (i, j) in pairs {
        let (p, g) = (&pred.shades[i], &gt.shades[j]);
        s.predicted_colors.insert(j, p.base_color);
        if !sub.contains(ModelStage::M4) {
            s.base.push(delta_e_rgb(p.base_color, g.base_color));
        }
        if !sub.contains(ModelStage::M5) {
            s.finish.push((g.finish, p.finish));
        }
        if !sub.contains(ModelStage::M6) {
            if let (Some(pr), Some(gr)) = (p.reflective_color, g.reflective_color) {
                s.reflective.push(delta_e_rgb(pr, gr));
            }
        }
    }
    s
}

fn aggregate<'a>(scores: impl Iterator<Item = &'a ProductScore>) -> StageMetrics {
    let mut sel_model = Vec::new();
    let mut sel_human = Vec::new();
    let mut formats = Vec::new();
    let mut images = Vec::new();
    let mut base = Vec::new();
    let mut finish = Vec::new();
    let mut reflective = Vec::new();
    let mut unmatched = 0;
    for s in scores {
        if let Some((m, h)) = s.selection {
            sel_model.push(m);
            sel_human.push(h);
        }
        formats.extend(s.format);
        images.extend(s.detection.clone());
        base.extend_from_slice(&s.base);
        finish.extend_from_slice(&s.finish);
        reflective.extend_from_slice(&s.reflective);
        unmatched += s.unmatched;
    }
    StageMetrics {
        selection_accuracy: selection_accuracy(&sel_model, &sel_human).ok(),
        format: ClassificationMetrics::from_pairs(&formats),
        detection_map: (!images.is_empty()).then(|| mean_average_precision(&images)),
        base_color: ColorMetrics::from_values(&base),
        finish: ClassificationMetrics::from_pairs(&finish),
        reflective_color: ColorMetrics::from_values(&reflective),
        unmatched_shades: unmatched,
    }
}

/// Runs the pipeline over `products` (all must carry ground truth) and scores each stage.
pub fn evaluate_pipeline(
    products: &[ProductRecord],
    pipeline: &Pipeline,
    annotations: &[AnnotationRecord],
    options: &EvalOptions,
) -> Result<EvaluationReport, EvalError> {
    let mut truths = Vec::with_capacity(products.len());
    for p in products {
        truths.push(p.ground_truth.as_ref().ok_or_else(|| EvalError::MissingGroundTruth(p.product_id.clone()))?);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.parallelism.max(1))
        .build()
        .map_err(|e| EvalError::Internal(e.to_string()))?;
    let outcomes: Vec<ExtractOutcome> = pool.install(|| {
        products.par_iter().map(|p| pipeline.extract_substituted(p, &options.substitution).outcome).collect()
    });

    let mut counts = OutcomeCounts { total: products.len(), ..Default::default() };
    let mut scores = Vec::with_capacity(products.len());
    for ((p, gt), outcome) in products.iter().zip(&truths).zip(&outcomes) {
        match outcome {
            ExtractOutcome::Extracted { .. } => counts.extracted += 1,
            ExtractOutcome::FilteredOut { .. } => counts.filtered_out += 1,
            ExtractOutcome::Failed { kind, .. } => *counts.failed.entry(format!("{kind:?}")).or_default() += 1,
        }
        scores.push(score_product(p, gt, outcome, &options.substitution));
    }

    let metrics = aggregate(scores.iter());
    let mut by_brand = BTreeMap::new();
    if options.group_by_brand {
        let mut brands: Vec<&str> = scores.iter().map(|s| s.brand.as_str()).collect();
        brands.sort_unstable();
        brands.dedup();
        for b in brands {
            by_brand.insert(b.to_string(), aggregate(scores.iter().filter(|s| s.brand == b)));
        }
    }

    let agreement = if annotations.is_empty() {
        None
    } else {
        let predicted: BTreeMap<(&str, usize), RgbColor> = products
            .iter()
            .zip(&scores)
            .flat_map(|(p, s)| s.predicted_colors.iter().map(move |(j, c)| ((p.product_id.as_str(), *j), *c)))
            .collect();
        let items = consistency_items(annotations, |r| {
            predicted.get(&(r.product_id.as_str(), r.shade_index)).map(|c| c.to_lab())
        })?;
        Some(AgreementReport {
            consistency: human_consistency(&items),
            finish_kappa: KappaResult::from_labels(
                annotations.iter().filter(|a| a.finish.len() >= 2).map(|a| a.finish.clone()).collect(),
            ),
            format_kappa: KappaResult::from_labels(
                annotations.iter().filter(|a| a.format.len() >= 2).map(|a| a.format.clone()).collect(),
            ),
        })
    };

    Ok(EvaluationReport {
        mode: options.substitution.label(),
        substituted: options.substitution.0.iter().copied().collect(),
        outcomes: counts,
        metrics,
        by_brand,
        agreement,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.3}"))
}

fn row(label: &str, m: &StageMetrics) -> String {
    let pct = |i: usize| m.base_color.as_ref().map(|c| c.histogram.fractions()[i] * 100.0);
    format!(
        "{:<22} {:>8} {:>9} {:>7} {:>9} {:>6} {:>6} {:>6} {:>9} {:>9}",
        label,
        cell(m.selection_accuracy),
        cell(m.format.as_ref().map(|f| f.f1.macro_f1)),
        cell(m.detection_map),
        cell(m.base_color.as_ref().map(|c| c.mean_delta_e)),
        pct(0).map_or("NA".into(), |v| format!("{v:.1}")),
        pct(1).map_or("NA".into(), |v| format!("{v:.1}")),
        pct(2).map_or("NA".into(), |v| format!("{v:.1}")),
        cell(m.finish.as_ref().map(|f| f.f1.macro_f1)),
        cell(m.reflective_color.as_ref().map(|c| c.mean_delta_e)),
    )
}

/// Plain-text table, one row per report (and per brand when grouped).
pub fn render_table(reports: &[EvaluationReport]) -> String {
    let mut out = format!(
        "{:<22} {:>8} {:>9} {:>7} {:>9} {:>6} {:>6} {:>6} {:>9} {:>9}\n",
        "mode", "sel.acc", "format.F1", "mAP", "base.dE", "<=3%", "3-12%", ">12%", "finish.F1", "refl.dE"
    );
    for r in reports {
        out.push_str(&row(&r.mode, &r.metrics));
        out.push('\n');
        for (brand, m) in &r.by_brand {
            out.push_str(&row(&format!("  {brand}"), m));
            out.push('\n');
        }
    }
    if let Some(a) = reports.iter().find_map(|r| r.agreement.as_ref()) {
        out.push('\n');
        out.push_str(&format!("{:<8} {:>6} {:>10} {:>10} {:>10} {:>10}\n", "stratum", "n", "d_HC.mean", "d_HC.var", "d_ML.mean", "d_ML.var"));
        for (name, s) in [("single", a.consistency.single), ("multi", a.consistency.multi), ("all", a.consistency.all)] {
            out.push_str(&format!(
                "{:<8} {:>6} {:>10} {:>10} {:>10} {:>10}\n",
                name,
                s.count,
                cell(s.d_hc.map(|m| m.mean)),
                cell(s.d_hc.map(|m| m.variance)),
                cell(s.d_ml.map(|m| m.mean)),
                cell(s.d_ml.map(|m| m.variance)),
            ));
        }
        for (task, k) in [("finish", &a.finish_kappa), ("format", &a.format_kappa)] {
            if let Some(k) = k {
                let v = k.value.map_or_else(|| k.error.clone().unwrap_or_default(), |v| format!("{v:.4}"));
                out.push_str(&format!("fleiss kappa ({task}, {} items): {v}\n", k.items));
            }
        }
    }
    out
}
