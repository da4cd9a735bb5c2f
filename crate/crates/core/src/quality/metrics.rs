use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::QualityError;
use crate::corpus::lcs_length;

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    if n == 0 || tokens.len() < n {
        return out;
    }
    for w in tokens.windows(n) {
        *out.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
    }
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Smoothing {
    None,
    /// Orders above 1 with no clipped match score `1 / (total + 1)`.
    #[default]
    AddOne,
}

/// Sufficient statistics for BLEU; sums across items give corpus BLEU.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BleuStats {
    pub matches: [usize; 4],
    pub totals: [usize; 4],
    pub cand_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn add(&mut self, other: &BleuStats) {
        for n in 0..4 {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.cand_len += other.cand_len;
        self.ref_len += other.ref_len;
    }

    pub fn score(&self, max_n: usize, smoothing: Smoothing) -> f64 {
        if self.cand_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for n in 0..max_n {
            let (m, t) = (self.matches[n], self.totals[n]);
            let p = if m > 0 {
                m as f64 / t as f64
            } else if n > 0 && smoothing == Smoothing::AddOne {
                1.0 / (t as f64 + 1.0)
            } else {
                return 0.0;
            };
            log_sum += p.ln();
        }
        let (c, r) = (self.cand_len as f64, self.ref_len as f64);
        let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
        bp * (log_sum / max_n as f64).exp()
    }
}

fn check_max_n(max_n: usize) -> Result<(), QualityError> {
    if (1..=4).contains(&max_n) {
        Ok(())
    } else {
        Err(QualityError::InvalidMaxN(max_n))
    }
}

/// Clipped n-gram statistics of one candidate against its references. The
/// reference length is the one closest to the candidate (shorter on ties).
pub fn bleu_stats<S: AsRef<str>, R: AsRef<str>>(
    candidate: &[S],
    references: &[Vec<R>],
) -> Result<BleuStats, QualityError> {
    if references.is_empty() {
        return Err(QualityError::NoReference);
    }
    let mut stats = BleuStats {
        cand_len: candidate.len(),
        ..Default::default()
    };
    for n in 1..=4 {
        let cand = ngram_counts(candidate, n);
        let refs: Vec<_> = references.iter().map(|r| ngram_counts(r, n)).collect();
        for (gram, &count) in &cand {
            let max_ref = refs.iter().map(|r| r.get(gram).copied().unwrap_or(0)).max().unwrap_or(0);
            stats.matches[n - 1] += count.min(max_ref);
        }
        stats.totals[n - 1] = candidate.len().saturating_sub(n - 1);
    }
    let c = candidate.len() as i64;
    stats.ref_len = references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| ((len as i64 - c).abs(), len))
        .expect("non-empty");
    Ok(stats)
}

/// Geometric mean of modified precisions up to `max_n`, times the brevity penalty.
pub fn bleu<S: AsRef<str>, R: AsRef<str>>(
    candidate: &[S],
    references: &[Vec<R>],
    max_n: usize,
    smoothing: Smoothing,
) -> Result<f64, QualityError> {
    check_max_n(max_n)?;
    Ok(bleu_stats(candidate, references)?.score(max_n, smoothing))
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation() || (!c.is_alphanumeric() && !c.is_whitespace())
}

/// Fixed tokenization for reproducible BLEU: lowercase, every punctuation
/// character split off as its own token.
pub fn standard_tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_whitespace() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else if is_punct(c) {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            out.push(c.to_string());
        } else {
            cur.push(c);
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// BLEU-4 with add-one smoothing over [`standard_tokenize`] output.
pub fn sacre_bleu(candidate: &str, references: &[&str]) -> Result<f64, QualityError> {
    let refs: Vec<Vec<String>> = references.iter().map(|r| standard_tokenize(r)).collect();
    bleu(&standard_tokenize(candidate), &refs, 4, Smoothing::AddOne)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RougeVariant {
    One,
    Two,
    L,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(overlap: usize, cand: usize, reference: usize) -> Self {
        if overlap == 0 || cand == 0 || reference == 0 {
            return Self::default();
        }
        let p = overlap as f64 / cand as f64;
        let r = overlap as f64 / reference as f64;
        Self {
            precision: p,
            recall: r,
            f1: 2.0 * p * r / (p + r),
        }
    }
}

pub fn rouge<S: AsRef<str>, R: AsRef<str>>(
    candidate: &[S],
    reference: &[R],
    variant: RougeVariant,
) -> Result<Prf, QualityError> {
    if reference.is_empty() {
        return Err(QualityError::NoReference);
    }
    if candidate.is_empty() {
        return Ok(Prf::default());
    }
    Ok(match variant {
        RougeVariant::One | RougeVariant::Two => {
            let n = if variant == RougeVariant::One { 1 } else { 2 };
            let c = ngram_counts(candidate, n);
            let r = ngram_counts(reference, n);
            let overlap = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
            Prf::from_counts(
                overlap,
                candidate.len().saturating_sub(n - 1),
                reference.len().saturating_sub(n - 1),
            )
        }
        RougeVariant::L => {
            let c: Vec<&str> = candidate.iter().map(AsRef::as_ref).collect();
            let r: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
            Prf::from_counts(lcs_length(&c, &r), c.len(), r.len())
        }
    })
}

/// Alignment search budget (visited nodes) before settling for the best found.
pub const METEOR_SEARCH_LIMIT: usize = 200_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeteorDetail {
    pub matches: usize,
    pub chunks: usize,
    pub score: f64,
}

struct Aligner<'a> {
    cand: Vec<&'a str>,
    reference: Vec<&'a str>,
    /// Remaining matches still owed per word type.
    quota: HashMap<&'a str, usize>,
    /// Remaining candidate occurrences per word type at or after the cursor.
    left: HashMap<&'a str, usize>,
    used: Vec<bool>,
    best: usize,
    visited: usize,
}

impl Aligner<'_> {
    /// Minimum chunk count over maximum matchings; `prev` is the reference
    /// position matched to candidate position `i - 1`.
    fn search(&mut self, i: usize, prev: Option<usize>, chunks: usize) {
        self.visited += 1;
        if chunks >= self.best || self.visited > METEOR_SEARCH_LIMIT {
            return;
        }
        if i == self.cand.len() {
            self.best = chunks;
            return;
        }
        let w = self.cand[i];
        let owed = self.quota.get(w).copied().unwrap_or(0);
        let left = self.left[w];
        *self.left.get_mut(w).expect("counted") -= 1;
        if owed > 0 {
            // Continuing the current chunk first finds good bounds early.
            let mut order: Vec<usize> = (0..self.reference.len())
                .filter(|&j| !self.used[j] && self.reference[j] == w)
                .collect();
            if let Some(p) = prev {
                if let Some(k) = order.iter().position(|&j| j == p + 1) {
                    order.remove(k);
                    order.insert(0, p + 1);
                }
            }
            for j in order {
                let extra = usize::from(prev.is_none_or(|p| p + 1 != j));
                self.used[j] = true;
                *self.quota.get_mut(w).expect("owed") -= 1;
                self.search(i + 1, Some(j), chunks + extra);
                *self.quota.get_mut(w).expect("owed") += 1;
                self.used[j] = false;
            }
        }
        // Skipping is allowed only while enough later occurrences remain.
        if owed < left {
            self.search(i + 1, None, chunks);
        }
        *self.left.get_mut(w).expect("counted") += 1;
    }
}

/// Exact-match Meteor: maximum unigram matches, fewest chunks among them,
/// `F_mean = 10PR / (R + 9P)`, penalty `0.5 (chunks / matches)^3`.
pub fn meteor_lite<S: AsRef<str>, R: AsRef<str>>(
    candidate: &[S],
    reference: &[R],
) -> Result<MeteorDetail, QualityError> {
    if reference.is_empty() {
        return Err(QualityError::NoReference);
    }
    let cand: Vec<&str> = candidate.iter().map(AsRef::as_ref).collect();
    let refr: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let mut cc: HashMap<&str, usize> = HashMap::new();
    for &w in &cand {
        *cc.entry(w).or_insert(0) += 1;
    }
    let mut rc: HashMap<&str, usize> = HashMap::new();
    for &w in &refr {
        *rc.entry(w).or_insert(0) += 1;
    }
    let quota: HashMap<&str, usize> = cc
        .iter()
        .map(|(&w, &c)| (w, c.min(rc.get(w).copied().unwrap_or(0))))
        .collect();
    let matches: usize = quota.values().sum();
    if matches == 0 {
        return Ok(MeteorDetail {
            matches: 0,
            chunks: 0,
            score: 0.0,
        });
    }
    let mut aligner = Aligner {
        used: vec![false; refr.len()],
        cand,
        reference: refr,
        quota,
        left: cc,
        best: usize::MAX,
        visited: 0,
    };
    aligner.search(0, None, 0);
    // Every match in its own chunk bounds the count if the budget ran out first.
    let chunks = aligner.best.min(matches);
    let p = matches as f64 / aligner.cand.len() as f64;
    let r = matches as f64 / aligner.reference.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / matches as f64).powi(3);
    Ok(MeteorDetail {
        matches,
        chunks,
        score: f_mean * (1.0 - penalty),
    })
}

/// Scores in the order of the offline evaluation table.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricScores {
    pub sacre_bleu: f64,
    pub rouge_1: f64,
    pub rouge_2: f64,
    pub rouge_l: f64,
    pub bleu_1: f64,
    pub bleu_2: f64,
    pub bleu_3: f64,
    pub bleu_4: f64,
    pub meteor: f64,
}

impl MetricScores {
    pub const COLUMNS: [&'static str; 9] = [
        "SacreBLEU", "ROUGE-1", "ROUGE-2", "ROUGE-L", "BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4",
        "Meteor",
    ];

    pub fn values(&self) -> [f64; 9] {
        [
            self.sacre_bleu,
            self.rouge_1,
            self.rouge_2,
            self.rouge_l,
            self.bleu_1,
            self.bleu_2,
            self.bleu_3,
            self.bleu_4,
            self.meteor,
        ]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// BLEU from pooled statistics; ROUGE and Meteor averaged over items.
    pub corpus: MetricScores,
    pub items: Vec<MetricScores>,
}

impl MetricReport {
    /// Scores whitespace-tokenized candidates against single references.
    pub fn compute(pairs: &[(String, String)]) -> Result<Self, QualityError> {
        if pairs.is_empty() {
            return Err(QualityError::NoReference);
        }
        let mut items = Vec::with_capacity(pairs.len());
        let mut raw = BleuStats::default();
        let mut sacre = BleuStats::default();
        for (cand, reference) in pairs {
            let c: Vec<&str> = cand.split_whitespace().collect();
            let r: Vec<&str> = reference.split_whitespace().collect();
            let stats = bleu_stats(&c, &[r.clone()])?;
            raw.add(&stats);
            let sc = standard_tokenize(cand);
            let sr = standard_tokenize(reference);
            sacre.add(&bleu_stats(&sc, &[sr.clone()])?);
            items.push(MetricScores {
                sacre_bleu: bleu(&sc, &[sr], 4, Smoothing::AddOne)?,
                rouge_1: rouge(&c, &r, RougeVariant::One)?.f1,
                rouge_2: rouge(&c, &r, RougeVariant::Two)?.f1,
                rouge_l: rouge(&c, &r, RougeVariant::L)?.f1,
                bleu_1: stats.score(1, Smoothing::AddOne),
                bleu_2: stats.score(2, Smoothing::AddOne),
                bleu_3: stats.score(3, Smoothing::AddOne),
                bleu_4: stats.score(4, Smoothing::AddOne),
                meteor: meteor_lite(&c, &r)?.score,
            });
        }
        let n = items.len() as f64;
        let mean = |f: fn(&MetricScores) -> f64| items.iter().map(f).sum::<f64>() / n;
        let corpus = MetricScores {
            sacre_bleu: sacre.score(4, Smoothing::AddOne),
            rouge_1: mean(|s| s.rouge_1),
            rouge_2: mean(|s| s.rouge_2),
            rouge_l: mean(|s| s.rouge_l),
            bleu_1: raw.score(1, Smoothing::AddOne),
            bleu_2: raw.score(2, Smoothing::AddOne),
            bleu_3: raw.score(3, Smoothing::AddOne),
            bleu_4: raw.score(4, Smoothing::AddOne),
            meteor: mean(|s| s.meteor),
        };
        Ok(Self { corpus, items })
    }

    /// Tab-separated table, scores ×100 with two decimals.
    pub fn to_tsv(&self, label: &str) -> String {
        let mut out = String::from("Model");
        for c in MetricScores::COLUMNS {
            out.push('\t');
            out.push_str(c);
        }
        out.push('\n');
        out.push_str(label);
        for v in self.corpus.values() {
            let _ = write!(out, "\t{:.2}", v * 100.0);
        }
        out.push('\n');
        out
    }
}
