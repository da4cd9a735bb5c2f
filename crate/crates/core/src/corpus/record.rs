use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{tokenize, TokenizeMode, ATTR, EXTRA, SEP, SLOGAN, TITLE};
use super::CorpusError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub k: String,
    pub v: String,
}

impl Attribute {
    pub fn new(k: impl Into<String>, v: impl Into<String>) -> Self {
        Self {
            k: k.into(),
            v: v.into(),
        }
    }
}

/// One product: title, attribute pairs, slogan and (for training) the
/// reference description.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductRecord {
    pub sku: String,
    pub title: String,
    #[serde(default)]
    pub attrs: Vec<Attribute>,
    #[serde(default)]
    pub slogan: String,
    #[serde(default)]
    pub category: String,
    #[serde(default)]
    pub description: Option<String>,
    #[serde(default)]
    pub extra_text: Option<String>,
}

impl ProductRecord {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.sku.trim().is_empty() {
            return Err(CorpusError::InvalidRecord("empty sku".into()));
        }
        let mut names = HashSet::new();
        for a in &self.attrs {
            if !names.insert(a.k.as_str()) {
                return Err(CorpusError::InvalidRecord(format!(
                    "{}: duplicate attribute {:?}",
                    self.sku, a.k
                )));
            }
        }
        Ok(())
    }

    /// All input-side text (title, attributes, slogan, extra) in one string.
    pub fn input_text(&self) -> String {
        let mut parts = vec![self.title.clone()];
        for a in &self.attrs {
            parts.push(format!("{} {}", a.k, a.v));
        }
        parts.push(self.slogan.clone());
        if let Some(x) = &self.extra_text {
            parts.push(x.clone());
        }
        parts.join(" ")
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearizeConfig {
    pub mode: TokenizeMode,
    /// When set, attributes are emitted in a random order drawn from this seed
    /// instead of sorted by name.
    pub augment_seed: Option<u64>,
}

/// Field-marked token sequence:
/// `<title> t.. <attr> k : v <sep> k : v .. <slogan> s.. <extra> x..`.
pub fn linearize_product(
    record: &ProductRecord,
    config: &LinearizeConfig,
) -> Result<Vec<String>, CorpusError> {
    if record.title.trim().is_empty() {
        return Err(CorpusError::EmptyTitle(record.sku.clone()));
    }
    let mode = config.mode;
    let mut out = vec![TITLE.to_owned()];
    out.extend(tokenize(&record.title, mode));

    let mut attrs: Vec<&Attribute> = record.attrs.iter().collect();
    match config.augment_seed {
        Some(seed) => attrs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed)),
        None => attrs.sort_by(|a, b| a.k.cmp(&b.k)),
    }
    if !attrs.is_empty() {
        out.push(ATTR.to_owned());
        for (i, a) in attrs.iter().enumerate() {
            if i > 0 {
                out.push(SEP.to_owned());
            }
            out.extend(tokenize(&a.k, mode));
            out.push(":".to_owned());
            out.extend(tokenize(&a.v, mode));
        }
    }
    if !record.slogan.trim().is_empty() {
        out.push(SLOGAN.to_owned());
        out.extend(tokenize(&record.slogan, mode));
    }
    if let Some(extra) = record.extra_text.as_deref().filter(|x| !x.trim().is_empty()) {
        out.push(EXTRA.to_owned());
        out.extend(tokenize(extra, mode));
    }
    Ok(out)
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| CorpusError::Parse {
            line: 0,
            message: e.to_string(),
        })?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a corpus file and validates every record.
pub fn read_corpus(path: &Path) -> Result<Vec<ProductRecord>, CorpusError> {
    let records: Vec<ProductRecord> = read_jsonl(path)?;
    for r in &records {
        r.validate()?;
    }
    Ok(records)
}
