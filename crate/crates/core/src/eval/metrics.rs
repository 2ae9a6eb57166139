use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::predict::Label;
use crate::properties::BoundingBox;

/// IoU thresholds 0.50, 0.55, …, 0.95.
pub fn map_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

/// Guards against IoUs like 0.6 landing a hair under the 0.60 threshold.
const IOU_EPS: f64 = 1e-12;

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    a.iou(b)
}

/// Predictions and ground truth for one image.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImageBoxes {
    pub predictions: Vec<BoundingBox>,
    pub ground_truth: Vec<BoundingBox>,
}

/// All-point interpolated AP at one IoU threshold, pooled over images.
pub fn average_precision(images: &[ImageBoxes], threshold: f64) -> f64 {
    let total_gt: usize = images.iter().map(|i| i.ground_truth.len()).sum();
    let mut preds: Vec<(usize, &BoundingBox)> =
        images.iter().enumerate().flat_map(|(i, im)| im.predictions.iter().map(move |b| (i, b))).collect();
    if total_gt == 0 {
        return if preds.is_empty() { 1.0 } else { 0.0 };
    }
    if preds.is_empty() {
        return 0.0;
    }
    preds.sort_by(|x, y| y.1.confidence.total_cmp(&x.1.confidence));

    let mut matched: Vec<Vec<bool>> = images.iter().map(|im| vec![false; im.ground_truth.len()]).collect();
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(preds.len());
    for (k, (img, p)) in preds.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in images[*img].ground_truth.iter().enumerate() {
            if matched[*img][g] {
                continue;
            }
            let v = p.iou(gt);
            if v + IOU_EPS >= threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            matched[*img][g] = true;
            tp += 1;
        }
        curve.push((tp, tp as f64 / (k + 1) as f64));
    }

    // area in true-positive units, divided once so perfect detection gives exactly 1
    let mut area = 0.0;
    let mut envelope = 0.0f64;
    let mut prev_tp = curve.last().map_or(0, |c| c.0);
    for &(tp, precision) in curve.iter().rev() {
        // walking backwards: area is added when recall drops
        if tp < prev_tp {
            area += (prev_tp - tp) as f64 * envelope;
            prev_tp = tp;
        }
        envelope = envelope.max(precision);
    }
    (area + prev_tp as f64 * envelope) / total_gt as f64
}

/// Mean AP over IoU thresholds 0.50:0.05:0.95.
pub fn mean_average_precision(images: &[ImageBoxes]) -> f64 {
    let t = map_thresholds();
    t.iter().map(|&th| average_precision(images, th)).sum::<f64>() / t.len() as f64
}

/// Rows are ground truth, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        let n = labels.len();
        Self { labels, counts: vec![vec![0; n]; n] }
    }

    pub fn for_labels<L: Label>() -> Self {
        Self::new(L::all().iter().map(|l| l.name().to_string()).collect())
    }

    pub fn from_pairs<L: Label>(pairs: &[(L, L)]) -> Self {
        let mut m = Self::for_labels::<L>();
        for (t, p) in pairs {
            m.add::<L>(*t, *p);
        }
        m
    }

    pub fn add<L: Label>(&mut self, truth: L, predicted: L) {
        let pos = |l: L| L::all().iter().position(|x| *x == l).expect("label in set");
        self.counts[pos(truth)][pos(predicted)] += 1;
    }

    pub fn from_counts(labels: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self, EvalError> {
        if counts.len() != labels.len() || counts.iter().any(|r| r.len() != labels.len()) {
            return Err(EvalError::ShapeMismatch(format!(
                "{} labels but a {}-row matrix",
                labels.len(),
                counts.len()
            )));
        }
        Ok(Self { labels, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassF1 {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Neither present in truth nor predicted; F1 is 0 and left out of the macro average.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub per_class: Vec<ClassF1>,
    pub macro_f1: f64,
}

pub fn f1_from_confusion(m: &ConfusionMatrix) -> F1Report {
    let n = m.labels.len();
    let mut per_class = Vec::with_capacity(n);
    for c in 0..n {
        let tp = m.counts[c][c] as f64;
        let truth: u64 = m.counts[c].iter().sum();
        let predicted: u64 = (0..n).map(|r| m.counts[r][c]).sum();
        let degenerate = truth == 0 && predicted == 0;
        let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let recall = if truth == 0 { 0.0 } else { tp / truth as f64 };
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        per_class.push(ClassF1 { label: m.labels[c].clone(), precision, recall, f1, degenerate });
    }
    let scored: Vec<f64> = per_class.iter().filter(|c| !c.degenerate).map(|c| c.f1).collect();
    let macro_f1 = if scored.is_empty() { 0.0 } else { scored.iter().sum::<f64>() / scored.len() as f64 };
    F1Report { per_class, macro_f1 }
}

/// Fraction of positions where the model picked what the human picked.
pub fn selection_accuracy<T: PartialEq>(model: &[T], human: &[T]) -> Result<f64, EvalError> {
    if model.len() != human.len() {
        return Err(EvalError::ShapeMismatch(format!("{} model vs {} human choices", model.len(), human.len())));
    }
    if model.is_empty() {
        return Err(EvalError::Empty("selection choices"));
    }
    let hits = model.iter().zip(human).filter(|(m, h)| m == h).count();
    Ok(hits as f64 / model.len() as f64)
}

/// Perceptual buckets: `[0,3]`, `(3,12]`, `(12,∞)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeltaEHistogram {
    pub le_3: u64,
    pub from_3_to_12: u64,
    pub over_12: u64,
}

impl DeltaEHistogram {
    pub fn from_values(values: impl IntoIterator<Item = f64>) -> Self {
        let mut h = Self::default();
        for v in values {
            h.add(v);
        }
        h
    }

    pub fn add(&mut self, v: f64) {
        if v <= 3.0 {
            self.le_3 += 1;
        } else if v <= 12.0 {
            self.from_3_to_12 += 1;
        } else {
            self.over_12 += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.le_3 + self.from_3_to_12 + self.over_12
    }

    /// Bucket shares in bucket order; zeros when empty.
    pub fn fractions(&self) -> [f64; 3] {
        let t = self.total();
        if t == 0 {
            return [0.0; 3];
        }
        [self.le_3, self.from_3_to_12, self.over_12].map(|c| c as f64 / t as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanVariance {
    pub mean: f64,
    /// Population variance.
    pub variance: f64,
}

pub fn mean_variance(values: &[f64]) -> Option<MeanVariance> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some(MeanVariance { mean, variance })
}
