//! Sentence re-ordering (SR) and pseudo summary generation (PSG) example builders.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{tokenize, TokenizeMode};
use super::CorpusError;

/// A document as an ordered list of non-empty tokenized sentences.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub sentences: Vec<Vec<String>>,
}

impl Document {
    pub fn new(id: impl Into<String>, sentences: Vec<Vec<String>>) -> Result<Self, CorpusError> {
        if sentences.is_empty() || sentences.iter().any(Vec::is_empty) {
            return Err(CorpusError::EmptyDocument);
        }
        Ok(Self {
            id: id.into(),
            sentences,
        })
    }

    pub fn m(&self) -> usize {
        self.sentences.len()
    }

    fn concat(&self, order: &[usize]) -> Vec<String> {
        order
            .iter()
            .flat_map(|&i| self.sentences[i].iter().cloned())
            .collect()
    }
}

const TERMINATORS: [char; 7] = ['.', '?', '!', '。', '？', '！', '．'];

/// Splits on full stops, question and exclamation marks (ASCII and fullwidth).
/// The terminator stays with its sentence; a `.` between two digits is not a
/// boundary. A trailing unterminated fragment is kept.
pub fn split_sentences(id: &str, text: &str, mode: TokenizeMode) -> Result<Document, CorpusError> {
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        current.push(c);
        let decimal_point = c == '.'
            && i > 0
            && chars[i - 1].is_ascii_digit()
            && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit());
        if TERMINATORS.contains(&c) && !decimal_point {
            push_sentence(&mut sentences, &current, mode);
            current.clear();
        }
    }
    push_sentence(&mut sentences, &current, mode);
    if sentences.is_empty() {
        return Err(CorpusError::EmptyDocument);
    }
    Document::new(id, sentences)
}

fn push_sentence(out: &mut Vec<Vec<String>>, fragment: &str, mode: TokenizeMode) {
    let has_content = fragment
        .chars()
        .any(|c| !c.is_whitespace() && !TERMINATORS.contains(&c));
    if has_content {
        out.push(tokenize(fragment.trim(), mode));
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Sr,
    Psg,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PretrainMeta {
    pub doc_id: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seed: Option<u64>,
    /// SR: 0-based sentence indices in input order.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub permutation: Option<Vec<usize>>,
    /// PSG: 0-based indices of the selected sentences.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub selected: Option<Vec<usize>>,
    /// PSG: LCS score of the chosen split.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub score: Option<usize>,
    #[serde(default)]
    pub reversed: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PretrainExample {
    pub input: Vec<String>,
    pub target: Vec<String>,
    pub objective: Objective,
    pub meta: PretrainMeta,
}

/// Shuffles the sentences with a non-identity permutation (identity draws are
/// resampled); the target is the original order.
pub fn make_sr_example(doc: &Document, seed: u64) -> Result<PretrainExample, CorpusError> {
    let m = doc.m();
    if m < 2 {
        return Err(CorpusError::TooFewSentences { m });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let identity: Vec<usize> = (0..m).collect();
    let mut perm = identity.clone();
    while perm == identity {
        perm.shuffle(&mut rng);
    }
    Ok(PretrainExample {
        input: doc.concat(&perm),
        target: doc.concat(&identity),
        objective: Objective::Sr,
        meta: PretrainMeta {
            doc_id: doc.id.clone(),
            seed: Some(seed),
            permutation: Some(perm),
            ..Default::default()
        },
    })
}

/// `max(1, round_half_up(m / 4))`.
pub fn psg_select_count(m: usize) -> usize {
    ((m + 2) / 4).max(1)
}

/// Subset-count bound under which PSG selection enumerates exhaustively.
pub const PSG_EXACT_LIMIT: u128 = 4096;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PsgConfig {
    /// `false`: selected sentences are the input, remainder the target.
    /// `true`: remainder is the input, selected sentences the target.
    pub reverse: bool,
}

/// Picks the sentence subset of size `psg_select_count(m)` maximizing the
/// token LCS between its concatenation and the remainder's. Returns the
/// sorted selection and its score.
pub fn psg_select(doc: &Document) -> (Vec<usize>, usize) {
    let m = doc.m();
    let k = psg_select_count(m);
    if binomial(m, k) <= PSG_EXACT_LIMIT {
        exact_selection(doc, k)
    } else {
        greedy_selection(doc, k)
    }
}

fn split_score(doc: &Document, selected: &[usize]) -> usize {
    let rest: Vec<usize> = (0..doc.m()).filter(|i| !selected.contains(i)).collect();
    lcs_length(&doc.concat(selected), &doc.concat(&rest))
}

fn exact_selection(doc: &Document, k: usize) -> (Vec<usize>, usize) {
    let m = doc.m();
    let mut comb: Vec<usize> = (0..k).collect();
    let mut best = (comb.clone(), split_score(doc, &comb));
    // Lexicographic k-combinations; ties keep the earliest.
    loop {
        let Some(i) = (0..k).rev().find(|&i| comb[i] < m - k + i) else {
            break;
        };
        comb[i] += 1;
        for j in i + 1..k {
            comb[j] = comb[j - 1] + 1;
        }
        let s = split_score(doc, &comb);
        if s > best.1 {
            best = (comb.clone(), s);
        }
    }
    best
}

fn greedy_selection(doc: &Document, k: usize) -> (Vec<usize>, usize) {
    let mut selected: Vec<usize> = Vec::with_capacity(k);
    let mut score = 0;
    for _ in 0..k {
        let mut best: Option<(usize, usize)> = None;
        for i in (0..doc.m()).filter(|i| !selected.contains(i)) {
            let mut trial = selected.clone();
            trial.push(i);
            trial.sort_unstable();
            let s = split_score(doc, &trial);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        let (i, s) = best.expect("k < m");
        selected.push(i);
        selected.sort_unstable();
        score = s;
    }
    (selected, score)
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return acc;
        }
    }
    acc
}

/// Builds a PSG pair. By default the selected sentences are the input and the
/// remainder is the target.
pub fn make_psg_example(doc: &Document, config: &PsgConfig) -> Result<PretrainExample, CorpusError> {
    let m = doc.m();
    if m < 2 {
        return Err(CorpusError::TooFewSentences { m });
    }
    let (selected, score) = psg_select(doc);
    let rest: Vec<usize> = (0..m).filter(|i| !selected.contains(i)).collect();
    let (short, long) = (doc.concat(&selected), doc.concat(&rest));
    let (input, target) = if config.reverse {
        (long, short)
    } else {
        (short, long)
    };
    Ok(PretrainExample {
        input,
        target,
        objective: Objective::Psg,
        meta: PretrainMeta {
            doc_id: doc.id.clone(),
            selected: Some(selected),
            score: Some(score),
            reversed: config.reverse,
            ..Default::default()
        },
    })
}

/// Classic longest-common-subsequence length, O(|a|·|b|) time, O(|b|) space.
pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}
