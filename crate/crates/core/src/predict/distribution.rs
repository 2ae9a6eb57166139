use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::PredictError;
use crate::properties::{FinishType, Format, PropertyError, ShadeCount};

const SUM_TOLERANCE: f64 = 1e-6;

/// A closed label set.
pub trait Label:
    Copy + Eq + Ord + fmt::Debug + fmt::Display + FromStr<Err = PropertyError> + Send + Sync + 'static
{
    fn all() -> &'static [Self];
    fn name(self) -> &'static str;
}

macro_rules! impl_label {
    ($($t:ty),+) => {$(
        impl Label for $t {
            fn all() -> &'static [Self] {
                <$t>::ALL
            }
            fn name(self) -> &'static str {
                self.as_str()
            }
        }
    )+};
}

impl_label!(Format, FinishType, ShadeCount);

/// Probability over every label of `L`, in the label set's declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistribution<L: Label> {
    probs: Vec<(L, f64)>,
}

impl<L: Label> ClassDistribution<L> {
    /// Validates a full assignment: non-negative, sums to 1 within 1e-6.
    /// Labels not listed get probability 0.
    pub fn new(pairs: impl IntoIterator<Item = (L, f64)>) -> Result<Self, PredictError> {
        let given: BTreeMap<L, f64> = pairs.into_iter().collect();
        let probs: Vec<(L, f64)> = L::all()
            .iter()
            .map(|l| (*l, given.get(l).copied().unwrap_or(0.0)))
            .collect();
        if probs.iter().any(|(_, p)| !p.is_finite() || *p < 0.0) {
            return Err(PredictError::InvalidOutput(format!("negative probability in {probs:?}")));
        }
        let sum: f64 = probs.iter().map(|(_, p)| p).sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(PredictError::InvalidOutput(format!("probabilities sum to {sum}")));
        }
        Ok(Self { probs })
    }

    /// Fills unlisted labels by splitting the remaining mass evenly.
    pub fn completed(partial: impl IntoIterator<Item = (L, f64)>) -> Result<Self, PredictError> {
        let given: BTreeMap<L, f64> = partial.into_iter().collect();
        let listed: f64 = given.values().sum();
        let missing = L::all().len() - given.len();
        let rest = if missing == 0 { 0.0 } else { ((1.0 - listed) / missing as f64).max(0.0) };
        Self::new(L::all().iter().map(|l| (*l, given.get(l).copied().unwrap_or(rest))))
    }

    /// Normalizes non-negative scores; all-zero scores become uniform.
    pub fn from_scores(scores: impl IntoIterator<Item = (L, f64)>) -> Self {
        let given: BTreeMap<L, f64> = scores.into_iter().map(|(l, s)| (l, s.max(0.0))).collect();
        let total: f64 = given.values().sum();
        let n = L::all().len() as f64;
        let probs = L::all()
            .iter()
            .map(|l| {
                let s = given.get(l).copied().unwrap_or(0.0);
                (*l, if total > 0.0 { s / total } else { 1.0 / n })
            })
            .collect();
        Self { probs }
    }

    /// One label gets `p`, the rest share `1 - p` evenly.
    pub fn peaked(label: L, p: f64) -> Self {
        Self::completed([(label, p.clamp(0.0, 1.0))]).expect("peaked distribution is valid")
    }

    pub fn prob(&self, label: L) -> f64 {
        self.probs.iter().find(|(l, _)| *l == label).map_or(0.0, |(_, p)| *p)
    }

    /// Highest probability; ties go to the lexicographically smallest label name.
    pub fn argmax(&self) -> L {
        let mut best = self.probs[0];
        for &(l, p) in &self.probs[1..] {
            if p > best.1 || (p == best.1 && l.name() < best.0.name()) {
                best = (l, p);
            }
        }
        best.0
    }

    pub fn confidence(&self) -> f64 {
        self.prob(self.argmax())
    }

    pub fn iter(&self) -> impl Iterator<Item = (L, f64)> + '_ {
        self.probs.iter().copied()
    }
}

impl<L: Label> Serialize for ClassDistribution<L> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let map: BTreeMap<&str, f64> = self.probs.iter().map(|(l, p)| (l.name(), *p)).collect();
        map.serialize(serializer)
    }
}

impl<'de, L: Label + DeserializeOwned> Deserialize<'de> for ClassDistribution<L> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let map = BTreeMap::<String, f64>::deserialize(deserializer)?;
        let mut pairs = Vec::with_capacity(map.len());
        for (k, v) in map {
            pairs.push((k.parse::<L>().map_err(serde::de::Error::custom)?, v));
        }
        ClassDistribution::new(pairs).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn completion() {
        let d = ClassDistribution::completed([(ShadeCount::Single, 0.95)]).unwrap();
        assert_eq!(d.prob(ShadeCount::Single), 0.95);
        assert!((d.prob(ShadeCount::Multi) - 0.05).abs() < 1e-12);
        assert_eq!(d.argmax(), ShadeCount::Single);

        let d = ClassDistribution::completed([(Format::Cream, 1.0)]).unwrap();
        assert_eq!(d.prob(Format::Powder), 0.0);
        assert_eq!(d.argmax(), Format::Cream);
    }

    #[test]
    fn invalid_sums_rejected() {
        assert!(ClassDistribution::new([(Format::Cream, 0.5)]).is_err());
        assert!(ClassDistribution::new([(Format::Cream, 1.5), (Format::Stick, -0.5)]).is_err());
    }

    #[test]
    fn tie_break_is_lexicographic() {
        let d = ClassDistribution::new([(ShadeCount::Single, 0.5), (ShadeCount::Multi, 0.5)]).unwrap();
        assert_eq!(d.argmax(), ShadeCount::Multi);
        let d = ClassDistribution::<FinishType>::from_scores([]);
        assert_eq!(d.argmax(), FinishType::Glitter);
    }

    #[test]
    fn serde_map_form() {
        let d = ClassDistribution::peaked(FinishType::Glitter, 0.7);
        let json = serde_json::to_string(&d).unwrap();
        assert!(json.contains("\"Glitter\":0.7"));
        let back: ClassDistribution<FinishType> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, d);
    }

    proptest! {
        #[test]
        fn scores_normalize(s in prop::array::uniform4(0.0f64..10.0)) {
            let d = ClassDistribution::from_scores(Format::ALL.iter().copied().zip(s));
            let sum: f64 = d.iter().map(|(_, p)| p).sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }
    }
}
