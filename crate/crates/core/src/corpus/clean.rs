use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::ProductRecord;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CleanRules {
    /// Bounds on description length, counted in characters after whitespace
    /// normalization.
    pub min_description_chars: usize,
    pub max_description_chars: usize,
    /// Case-insensitive substrings that disqualify a description.
    pub forbidden_terms: Vec<String>,
    /// Drop records without a description.
    pub require_description: bool,
}

impl Default for CleanRules {
    fn default() -> Self {
        Self {
            min_description_chars: 10,
            max_description_chars: 2000,
            forbidden_terms: Vec::new(),
            require_description: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CleanReport {
    pub input: usize,
    pub kept: usize,
    /// Rejection count per reason.
    pub counts: BTreeMap<String, usize>,
    /// `(sku, reason)` per rejected record, in input order.
    pub rejected: Vec<(String, String)>,
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn rejection(record: &ProductRecord, rules: &CleanRules) -> Option<&'static str> {
    if record.sku.trim().is_empty() {
        return Some("empty_sku");
    }
    if record.title.is_empty() {
        return Some("empty_title");
    }
    if record.validate().is_err() {
        return Some("duplicate_attribute");
    }
    let Some(desc) = &record.description else {
        return rules.require_description.then_some("missing_description");
    };
    if desc.is_empty() {
        return Some("empty_description");
    }
    let len = desc.chars().count();
    if len < rules.min_description_chars {
        return Some("too_short");
    }
    if len > rules.max_description_chars {
        return Some("too_long");
    }
    let lower = desc.to_lowercase();
    if rules
        .forbidden_terms
        .iter()
        .any(|t| !t.is_empty() && lower.contains(&t.to_lowercase()))
    {
        return Some("forbidden_term");
    }
    None
}

/// Applies whitespace normalization and the rule set. Later records with an
/// already-kept sku are rejected as `duplicate_sku`.
pub fn clean_corpus(
    records: Vec<ProductRecord>,
    rules: &CleanRules,
) -> (Vec<ProductRecord>, CleanReport) {
    let mut report = CleanReport {
        input: records.len(),
        ..Default::default()
    };
    let mut seen = HashSet::new();
    let mut kept = Vec::new();
    for mut r in records {
        r.sku = r.sku.trim().to_owned();
        r.title = normalize_ws(&r.title);
        r.slogan = normalize_ws(&r.slogan);
        r.description = r.description.as_deref().map(normalize_ws);
        r.extra_text = r
            .extra_text
            .as_deref()
            .map(normalize_ws)
            .filter(|x| !x.is_empty());
        for a in &mut r.attrs {
            a.k = normalize_ws(&a.k);
            a.v = normalize_ws(&a.v);
        }
        let reason = rejection(&r, rules).or_else(|| seen.contains(&r.sku).then_some("duplicate_sku"));
        match reason {
            Some(why) => {
                *report.counts.entry(why.to_owned()).or_default() += 1;
                report.rejected.push((r.sku.clone(), why.to_owned()));
            }
            None => {
                seen.insert(r.sku.clone());
                kept.push(r);
            }
        }
    }
    report.kept = kept.len();
    (kept, report)
}
