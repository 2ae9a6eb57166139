use serde::{Deserialize, Serialize};

use super::metrics::{mean_variance, MeanVariance};
use super::{AnnotationRecord, EvalError};
use crate::color::{delta_e, LabColor};
use crate::predict::Label;

/// Fleiss' κ over an items × categories count table; every row must sum to
/// the same number of raters (at least 2).
pub fn fleiss_kappa(table: &[Vec<u64>]) -> Result<f64, EvalError> {
    let Some(first) = table.first() else {
        return Err(EvalError::Empty("rating table"));
    };
    let k = first.len();
    let n: u64 = first.iter().sum();
    if n < 2 {
        return Err(EvalError::RaggedRatings(format!("item 0 has {n} ratings, need at least 2")));
    }
    for (i, row) in table.iter().enumerate() {
        if row.len() != k {
            return Err(EvalError::RaggedRatings(format!("item {i} has {} categories, expected {k}", row.len())));
        }
        let s: u64 = row.iter().sum();
        if s != n {
            return Err(EvalError::RaggedRatings(format!("item {i} has {s} ratings, expected {n}")));
        }
    }
    let items = table.len() as f64;
    let nf = n as f64;
    let p_bar = table
        .iter()
        .map(|row| (row.iter().map(|&c| (c * c) as f64).sum::<f64>() - nf) / (nf * (nf - 1.0)))
        .sum::<f64>()
        / items;
    let p_e: f64 = (0..k)
        .map(|j| {
            let pj = table.iter().map(|r| r[j] as f64).sum::<f64>() / (items * nf);
            pj * pj
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-12 {
        return Err(EvalError::DegenerateAgreement);
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

/// Builds the count table from per-item rater labels.
pub fn rating_table<L: Label>(items: &[Vec<L>]) -> Vec<Vec<u64>> {
    items
        .iter()
        .map(|labels| {
            L::all().iter().map(|l| labels.iter().filter(|x| *x == l).count() as u64).collect()
        })
        .collect()
}

/// One shade's three annotator colors and the model prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyItem {
    pub annotators: [LabColor; 3],
    pub prediction: LabColor,
    pub multi_shade: Option<bool>,
}

impl ConsistencyItem {
    pub fn d_hc(&self) -> f64 {
        let [a1, a2, a3] = self.annotators;
        delta_e(a1, a2) + delta_e(a1, a3) + delta_e(a2, a3)
    }

    pub fn d_ml(&self) -> f64 {
        self.annotators.iter().map(|a| delta_e(*a, self.prediction)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratumStats {
    pub count: usize,
    pub d_hc: Option<MeanVariance>,
    pub d_ml: Option<MeanVariance>,
}

impl StratumStats {
    fn of<'a>(items: impl Iterator<Item = &'a ConsistencyItem>) -> Self {
        let (hc, ml): (Vec<f64>, Vec<f64>) = items.map(|i| (i.d_hc(), i.d_ml())).unzip();
        Self { count: hc.len(), d_hc: mean_variance(&hc), d_ml: mean_variance(&ml) }
    }
}

/// Items with unknown shade count appear only under `all`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub single: StratumStats,
    pub multi: StratumStats,
    pub all: StratumStats,
}

pub fn human_consistency(items: &[ConsistencyItem]) -> ConsistencyReport {
    ConsistencyReport {
        single: StratumStats::of(items.iter().filter(|i| i.multi_shade == Some(false))),
        multi: StratumStats::of(items.iter().filter(|i| i.multi_shade == Some(true))),
        all: StratumStats::of(items.iter()),
    }
}

/// Pairs annotation records with predictions (the record's own, else `lookup`).
/// Records without any color annotation are skipped; partially annotated ones are an error.
pub fn consistency_items(
    records: &[AnnotationRecord],
    lookup: impl Fn(&AnnotationRecord) -> Option<LabColor>,
) -> Result<Vec<ConsistencyItem>, EvalError> {
    let mut out = Vec::new();
    for r in records {
        let colors = [r.a1, r.a2, r.a3];
        if colors.iter().all(Option::is_none) {
            continue;
        }
        let [Some(a1), Some(a2), Some(a3)] = colors else {
            return Err(EvalError::MissingAnnotator { key: r.key() });
        };
        let Some(prediction) = r.prediction.map(|c| c.to_lab()).or_else(|| lookup(r)) else {
            continue;
        };
        out.push(ConsistencyItem {
            annotators: [a1.to_lab(), a2.to_lab(), a3.to_lab()],
            prediction,
            multi_shade: r.multi_shade,
        });
    }
    Ok(out)
}
