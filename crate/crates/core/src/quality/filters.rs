use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::QualityError;
use crate::corpus::ProductRecord;

/// Category key used when a record's category has no entry of its own.
pub const FALLBACK_CATEGORY: &str = "*";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reason {
    pub rule: String,
    pub evidence: String,
    /// Byte range in the checked text, when the evidence has a location.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub accepted: bool,
    pub reasons: Vec<Reason>,
}

impl FilterVerdict {
    pub fn from_reasons(reasons: Vec<Reason>) -> Self {
        Self {
            accepted: reasons.is_empty(),
            reasons,
        }
    }

    pub fn accept() -> Self {
        Self::from_reasons(Vec::new())
    }

    /// Union of two verdicts; accepted only if both are.
    pub fn merge(mut self, other: FilterVerdict) -> Self {
        self.reasons.extend(other.reasons);
        Self::from_reasons(self.reasons)
    }

    pub fn has(&self, rule: &str) -> bool {
        self.reasons.iter().any(|r| r.rule == rule)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryLexicon {
    #[serde(default)]
    pub terms: Vec<String>,
    /// Term lists that must not all appear together unless the input has them all.
    #[serde(default)]
    pub forbidden_combinations: Vec<Vec<String>>,
    /// Numbers a description may state even when the input does not.
    #[serde(default)]
    pub licensed_numbers: Vec<String>,
    /// Attribute names whose values are numbers; a number stated right after
    /// such a name must equal the attribute's value.
    #[serde(default)]
    pub number_attributes: Vec<String>,
}

/// Per-category product-term dictionary and rules.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TermLexicon {
    pub categories: BTreeMap<String, CategoryLexicon>,
}

impl TermLexicon {
    pub fn validate(&self) -> Result<(), QualityError> {
        for (cat, lex) in &self.categories {
            let terms: HashSet<String> = lex.terms.iter().map(|t| t.to_lowercase()).collect();
            for rule in &lex.forbidden_combinations {
                if rule.len() < 2 {
                    return Err(QualityError::InvalidLexicon(format!(
                        "{cat}: combination {rule:?} needs at least two terms"
                    )));
                }
                if let Some(t) = rule.iter().find(|t| !terms.contains(&t.to_lowercase())) {
                    return Err(QualityError::InvalidLexicon(format!(
                        "{cat}: rule term {t:?} is not in the term list"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, QualityError> {
        let text = std::fs::read_to_string(path)?;
        let lex: Self =
            serde_json::from_str(&text).map_err(|e| QualityError::InvalidLexicon(e.to_string()))?;
        lex.validate()?;
        Ok(lex)
    }

    pub fn for_category(&self, category: &str) -> Option<&CategoryLexicon> {
        self.categories
            .get(category)
            .or_else(|| self.categories.get(FALLBACK_CATEGORY))
    }
}

/// Token with its byte span; surrounding punctuation trimmed, lowercased.
fn spans(text: &str) -> Vec<(String, (usize, usize))> {
    let mut out = Vec::new();
    let mut start = None;
    let bytes: Vec<(usize, char)> = text.char_indices().collect();
    let mut push = |s: usize, e: usize| {
        let raw = &text[s..e];
        let trimmed = raw.trim_matches(|c: char| !c.is_alphanumeric() && c != '%');
        if trimmed.is_empty() {
            return;
        }
        let off = raw.find(trimmed).expect("substring");
        out.push((trimmed.to_lowercase(), (s + off, s + off + trimmed.len())));
    };
    for &(i, c) in &bytes {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                push(s, i);
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        push(s, text.len());
    }
    out
}

/// Canonical form of a number token: thousands separators removed, decimal
/// comma turned into a point, unit suffix kept attached and lowercased.
/// Returns `None` for tokens that do not start with a digit.
pub fn normalize_number(token: &str) -> Option<String> {
    let t = token.trim().to_lowercase();
    if !t.starts_with(|c: char| c.is_ascii_digit()) {
        return None;
    }
    let split = t
        .find(|c: char| !(c.is_ascii_digit() || c == ',' || c == '.'))
        .unwrap_or(t.len());
    let (num, unit) = t.split_at(split);
    let num = num.trim_end_matches([',', '.']);
    let groups: Vec<&str> = num.split(',').collect();
    let thousands = groups.len() > 1
        && groups[1..].iter().all(|g| g.split('.').next().is_some_and(|h| h.len() == 3));
    let num = if thousands {
        num.replace(',', "")
    } else {
        num.replace(',', ".")
    };
    let num = if num.contains('.') {
        num.trim_end_matches('0').trim_end_matches('.').to_owned()
    } else {
        num
    };
    Some(format!("{num}{unit}"))
}

fn numeric_part(n: &str) -> &str {
    let end = n.find(|c: char| !(c.is_ascii_digit() || c == '.')).unwrap_or(n.len());
    &n[..end]
}

/// Every form under which the input states a number: as written, bare, and
/// joined with a following short unit word.
fn input_numbers(text: &str) -> HashSet<String> {
    let toks = spans(text);
    let mut out = HashSet::new();
    for (i, (t, _)) in toks.iter().enumerate() {
        if let Some(n) = normalize_number(t) {
            out.insert(numeric_part(&n).to_owned());
            if let Some((next, _)) = toks.get(i + 1) {
                if n == numeric_part(&n) && next.len() <= 4 && next.chars().all(char::is_alphabetic) {
                    out.insert(format!("{n}{next}"));
                }
            }
            out.insert(n);
        }
    }
    out
}

fn contains_phrase(tokens: &[(String, (usize, usize))], phrase: &str) -> Option<(usize, usize)> {
    let words: Vec<String> = phrase.split_whitespace().map(str::to_lowercase).collect();
    if words.is_empty() || words.len() > tokens.len() {
        return None;
    }
    (0..=tokens.len() - words.len())
        .find(|&i| words.iter().enumerate().all(|(k, w)| &tokens[i + k].0 == w))
        .map(|i| (tokens[i].1 .0, tokens[i + words.len() - 1].1 .1))
}

/// Rule-based number and term-combination check of a description against the
/// record it was generated from.
pub fn check_terms_numbers(description: &str, record: &ProductRecord, lexicon: &TermLexicon) -> FilterVerdict {
    let Some(lex) = lexicon.for_category(&record.category) else {
        return FilterVerdict::from_reasons(vec![Reason {
            rule: "no_lexicon".into(),
            evidence: record.category.clone(),
            span: None,
        }]);
    };
    let input = record.input_text();
    let mut allowed = input_numbers(&input);
    for n in &lex.licensed_numbers {
        if let Some(n) = normalize_number(n) {
            allowed.insert(numeric_part(&n).to_owned());
            allowed.insert(n);
        }
    }

    let desc = spans(description);
    let mut reasons = Vec::new();
    for (t, span) in &desc {
        if let Some(n) = normalize_number(t) {
            if !allowed.contains(&n) {
                reasons.push(Reason {
                    rule: "number_mismatch".into(),
                    evidence: description[span.0..span.1].to_owned(),
                    span: Some(*span),
                });
            }
        }
    }

    // A number stated right after a numeric attribute's name must be that attribute's value.
    for name in &lex.number_attributes {
        let Some(attr) = record.attrs.iter().find(|a| a.k.eq_ignore_ascii_case(name)) else {
            continue;
        };
        let Some(expected) = normalize_number(&attr.v) else {
            continue;
        };
        let name = name.to_lowercase();
        for (i, (t, _)) in desc.iter().enumerate() {
            if *t != name {
                continue;
            }
            // Look two tokens ahead, stopping at clause punctuation.
            let mut prev_end = desc[i].1 .1;
            let mut stated = None;
            for (t, s) in desc[i + 1..].iter().take(2) {
                if description[prev_end..s.0].contains([',', ';', '.', '!', '?']) {
                    break;
                }
                if let Some(n) = normalize_number(t) {
                    stated = Some((n, *s));
                    break;
                }
                prev_end = s.1;
            }
            if let Some((n, s)) = stated {
                if numeric_part(&n) != numeric_part(&expected)
                    && !reasons.iter().any(|r: &Reason| r.span == Some(s))
                {
                    reasons.push(Reason {
                        rule: "number_mismatch".into(),
                        evidence: description[s.0..s.1].to_owned(),
                        span: Some(s),
                    });
                }
            }
        }
    }

    let input_tokens = spans(&input);
    for rule in &lex.forbidden_combinations {
        let hits: Vec<Option<(usize, usize)>> = rule.iter().map(|t| contains_phrase(&desc, t)).collect();
        if hits.iter().all(Option::is_some) {
            let licensed = rule.iter().all(|t| contains_phrase(&input_tokens, t).is_some());
            if !licensed {
                let first = hits.iter().flatten().min().copied();
                reasons.push(Reason {
                    rule: "forbidden_combination".into(),
                    evidence: rule.join(" + "),
                    span: first,
                });
            }
        }
    }
    FilterVerdict::from_reasons(reasons)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Attribute;

    fn lexicon() -> TermLexicon {
        let mut categories = BTreeMap::new();
        categories.insert(
            "laptop".to_owned(),
            CategoryLexicon {
                terms: vec!["foldable".into(), "webcam".into(), "touch screen".into(), "battery".into()],
                forbidden_combinations: vec![
                    vec!["foldable".into(), "webcam".into()],
                    vec!["touch screen".into(), "foldable".into()],
                ],
                licensed_numbers: vec!["1".into()],
                number_attributes: vec!["battery".into()],
            },
        );
        TermLexicon { categories }
    }

    fn record() -> ProductRecord {
        ProductRecord {
            sku: "p1".into(),
            title: "thin laptop".into(),
            attrs: vec![
                Attribute::new("battery", "4000mAh"),
                Attribute::new("weight", "1,200 g"),
                Attribute::new("screen", "13.3 inch"),
            ],
            slogan: "work anywhere".into(),
            category: "laptop".into(),
            description: None,
            extra_text: None,
        }
    }

    #[test]
    fn injected_number_rejected() {
        let v = check_terms_numbers("a battery of 5000mAh keeps you going.", &record(), &lexicon());
        assert!(!v.accepted);
        assert_eq!(v.reasons[0].rule, "number_mismatch");
        assert_eq!(v.reasons[0].evidence, "5000mAh");
        assert_eq!(v.reasons[0].span, Some((13, 20)));
    }

    #[test]
    fn numbers_from_input_accepted() {
        for d in [
            "a 4000mAh battery.",
            "a 4000 mAh battery, 13.3 inch screen, only 1200 g.",
            "weighs 1,200 g with a 13.30 inch screen",
            "1 laptop for everything",
        ] {
            let v = check_terms_numbers(d, &record(), &lexicon());
            assert!(v.accepted, "{d}: {:?}", v.reasons);
        }
    }

    #[test]
    fn numeric_attribute_adjacency() {
        // 13.3 is in the input, but not as the battery value.
        let v = check_terms_numbers("battery 13.3 inch", &record(), &lexicon());
        assert!(v.has("number_mismatch"));
    }

    #[test]
    fn single_terms_unaffected() {
        let v = check_terms_numbers("comes with a webcam.", &record(), &lexicon());
        assert!(v.accepted);
        let v = check_terms_numbers("a foldable body with a webcam.", &record(), &lexicon());
        assert!(v.has("forbidden_combination"));
        let v = check_terms_numbers("touch screen, foldable.", &record(), &lexicon());
        assert_eq!(v.reasons[0].span, Some((0, 12)));
    }

    #[test]
    fn combination_licensed_by_input() {
        let mut r = record();
        r.extra_text = Some("foldable design with webcam".into());
        let v = check_terms_numbers("a foldable body with a webcam.", &r, &lexicon());
        assert!(v.accepted, "{:?}", v.reasons);
    }

    #[test]
    fn missing_lexicon_defers() {
        let mut r = record();
        r.category = "sofa".into();
        let v = check_terms_numbers("nice", &r, &lexicon());
        assert_eq!(v.reasons[0].rule, "no_lexicon");
        let mut lex = lexicon();
        lex.categories.insert(FALLBACK_CATEGORY.into(), CategoryLexicon::default());
        assert!(check_terms_numbers("nice", &r, &lex).accepted);
    }

    #[test]
    fn number_normalization() {
        assert_eq!(normalize_number("1,200").as_deref(), Some("1200"));
        assert_eq!(normalize_number("1,5").as_deref(), Some("1.5"));
        assert_eq!(normalize_number("4000mAh").as_deref(), Some("4000mah"));
        assert_eq!(normalize_number("13.30").as_deref(), Some("13.3"));
        assert_eq!(normalize_number("2.0kg").as_deref(), Some("2kg"));
        assert_eq!(normalize_number("mah"), None);
    }

    #[test]
    fn lexicon_rules_must_use_known_terms() {
        let mut lex = lexicon();
        assert!(lex.validate().is_ok());
        lex.categories.get_mut("laptop").unwrap().forbidden_combinations.push(vec!["foldable".into(), "stylus".into()]);
        assert!(lex.validate().is_err());
    }

    #[test]
    fn lexicon_file_format() {
        let json = r#"{"laptop": {"terms": ["foldable", "webcam"], "forbidden_combinations": [["foldable", "webcam"]], "licensed_numbers": ["2"]}}"#;
        let lex: TermLexicon = serde_json::from_str(json).unwrap();
        lex.validate().unwrap();
        assert_eq!(lex.categories["laptop"].licensed_numbers, vec!["2"]);
    }
}
