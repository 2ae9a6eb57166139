//! Title keyword eligibility filter.
//!
//! Titles are lower-cased and split on anything that is not alphanumeric.
//! A phrase matches a run of consecutive tokens whose concatenation equals the
//! phrase with its spaces removed, so "multi-chrome", "multi chrome" and
//! "multichrome" are the same term. The final token may carry a plural suffix.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KeywordConfigError {
    #[error("reading keyword file: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing keyword file: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EligibilityVerdict {
    pub eligible: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_keyword: Option<String>,
}

impl EligibilityVerdict {
    pub fn eligible() -> Self {
        Self { eligible: true, matched_keyword: None }
    }

    pub fn excluded(keyword: impl Into<String>) -> Self {
        Self { eligible: false, matched_keyword: Some(keyword.into()) }
    }
}

/// Token prefix rule, e.g. `iridescen` catches "iridescent" and "iridescence".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StemRule {
    pub prefix: String,
    pub keyword: String,
}

/// Exclusion vocabulary. Loaded from TOML so curators can extend it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct KeywordRules {
    /// Canonical exclusion phrases, lower case.
    pub phrases: Vec<String>,
    pub stems: Vec<StemRule>,
    /// Nouns that only exclude when adjacent to one of `anchors`.
    pub anchored_nouns: Vec<String>,
    pub anchors: Vec<String>,
    /// Also scan the description text, not only the title.
    pub scan_description: bool,
}

impl Default for KeywordRules {
    fn default() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect();
        let stem = |p: &str, k: &str| StemRule { prefix: p.into(), keyword: k.into() };
        Self {
            phrases: s(&["multichrome", "iridescence", "makeup kit", "makeup organizer", "neon"]),
            stems: vec![
                stem("iridescen", "iridescence"),
                stem("fluorescen", "fluorescent"),
                stem("florescen", "fluorescent"),
                stem("multichrom", "multichrome"),
            ],
            anchored_nouns: s(&["kit", "organizer", "bundle", "case"]),
            anchors: s(&["makeup", "eyeshadow"]),
            scan_description: false,
        }
    }
}

impl KeywordRules {
    pub fn from_toml_str(s: &str) -> Result<Self, KeywordConfigError> {
        Ok(toml::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self, KeywordConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// All phrases after expanding anchor/noun adjacency, in matching priority order.
    fn expanded_phrases(&self) -> Vec<String> {
        let mut out: Vec<String> = self.phrases.iter().map(|p| p.to_lowercase()).collect();
        for anchor in &self.anchors {
            for noun in &self.anchored_nouns {
                let p = format!("{} {}", anchor.to_lowercase(), noun.to_lowercase());
                if !out.contains(&p) {
                    out.push(p);
                }
            }
        }
        out
    }

    pub fn check(&self, title: &str, description: &str) -> EligibilityVerdict {
        let verdict = eligibility_filter_with(title, self);
        if verdict.eligible && self.scan_description {
            return eligibility_filter_with(description, self);
        }
        verdict
    }
}

fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

fn singular_forms(token: &str) -> impl Iterator<Item = &str> {
    let es = token.strip_suffix("es");
    let s = token.strip_suffix('s');
    std::iter::once(token).chain(es).chain(s)
}

fn phrase_matches_at(tokens: &[String], start: usize, compact_phrase: &str) -> bool {
    let mut joined = String::new();
    for tok in &tokens[start..] {
        let matched = singular_forms(tok).any(|form| {
            let mut candidate = joined.clone();
            candidate.push_str(form);
            candidate == compact_phrase
        });
        if matched {
            return true;
        }
        joined.push_str(tok);
        if joined.len() >= compact_phrase.len() || !compact_phrase.starts_with(&joined) {
            return false;
        }
    }
    false
}

/// Checks `title` against the exclusion list with the default variation rules.
pub fn eligibility_filter(title: &str, exclusion_list: &[String]) -> EligibilityVerdict {
    let rules = KeywordRules { phrases: exclusion_list.to_vec(), ..KeywordRules::default() };
    eligibility_filter_with(title, &rules)
}

pub fn eligibility_filter_with(text: &str, rules: &KeywordRules) -> EligibilityVerdict {
    let tokens = tokenize(text);
    let phrases: Vec<(String, String)> = rules
        .expanded_phrases()
        .into_iter()
        .map(|p| (p.replace(' ', ""), p))
        .collect();
    for start in 0..tokens.len() {
        for (compact, canonical) in &phrases {
            if phrase_matches_at(&tokens, start, compact) {
                return EligibilityVerdict::excluded(canonical.clone());
            }
        }
        for stem in &rules.stems {
            if tokens[start].starts_with(&stem.prefix.to_lowercase()) {
                return EligibilityVerdict::excluded(stem.keyword.clone());
            }
        }
    }
    EligibilityVerdict::eligible()
}
