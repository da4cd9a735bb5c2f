use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::filters::{FilterVerdict, Reason};
use super::metrics::standard_tokenize;
use super::QualityError;

pub const FEATURE_NAMES: [&str; 7] = [
    "length",
    "type_token_ratio",
    "max_repeat_run",
    "repeated_bigram_ratio",
    "punctuation_density",
    "oov_fraction",
    "mean_sentence_length",
];

pub const FEATURE_COUNT: usize = FEATURE_NAMES.len();

/// Smallest error used when a stump classifies the weighted sample perfectly.
const MIN_EPSILON: f64 = 1e-10;

fn is_punct(tok: &str) -> bool {
    tok.chars().all(|c| !c.is_alphanumeric())
}

fn is_terminator(tok: &str) -> bool {
    matches!(tok, "." | "!" | "?" | "。" | "！" | "？")
}

/// Surface features of a text in `FEATURE_NAMES` order. The OOV fraction is 0
/// when no known-word set is given. Empty text gives all zeros.
pub fn grammar_features(text: &str, known: Option<&HashSet<String>>) -> [f64; FEATURE_COUNT] {
    let toks = standard_tokenize(text);
    if toks.is_empty() {
        return [0.0; FEATURE_COUNT];
    }
    let n = toks.len() as f64;
    let types: HashSet<&str> = toks.iter().map(String::as_str).collect();

    let mut max_run = 1usize;
    let mut run = 1usize;
    for w in toks.windows(2) {
        run = if w[0] == w[1] { run + 1 } else { 1 };
        max_run = max_run.max(run);
    }

    let bigrams: Vec<(&str, &str)> = toks.windows(2).map(|w| (w[0].as_str(), w[1].as_str())).collect();
    let repeated = if bigrams.is_empty() {
        0.0
    } else {
        let distinct: HashSet<_> = bigrams.iter().collect();
        (bigrams.len() - distinct.len()) as f64 / bigrams.len() as f64
    };

    let punct = toks.iter().filter(|t| is_punct(t)).count() as f64;
    let oov = known.map_or(0.0, |k| {
        toks.iter().filter(|t| !is_punct(t) && !k.contains(t.as_str())).count() as f64 / n
    });
    let mut sentences = toks.iter().filter(|t| is_terminator(t)).count();
    if !toks.last().is_some_and(|t| is_terminator(t)) {
        sentences += 1;
    }

    [
        n,
        types.len() as f64 / n,
        max_run as f64,
        repeated,
        punct / n,
        oov,
        n / sentences as f64,
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: usize,
    pub threshold: f64,
    /// Output for values above the threshold; the opposite below or equal.
    pub polarity: f64,
    pub alpha: f64,
}

impl Stump {
    pub fn predict(&self, x: &[f64]) -> f64 {
        if x[self.feature] > self.threshold {
            self.polarity
        } else {
            -self.polarity
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundStats {
    pub epsilon: f64,
    pub alpha: f64,
    pub train_error: f64,
    /// Running product of 2·sqrt(ε(1−ε)), an upper bound on the training error.
    pub bound: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub stumps: Vec<Stump>,
    pub rounds: Vec<RoundStats>,
}

impl Ensemble {
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.stumps.iter().map(|s| s.alpha * s.predict(x)).sum()
    }

    pub fn classify(&self, x: &[f64]) -> f64 {
        if self.margin(x) >= 0.0 {
            1.0
        } else {
            -1.0
        }
    }

    pub fn error_rate(&self, xs: &[Vec<f64>], ys: &[f64]) -> f64 {
        let wrong = xs.iter().zip(ys).filter(|(x, y)| self.classify(x) != **y).count();
        wrong as f64 / xs.len().max(1) as f64
    }
}

/// Lowest weighted-error stump. Ties keep the earliest feature, threshold and
/// positive polarity.
fn best_stump(xs: &[Vec<f64>], ys: &[f64], w: &[f64], dims: usize) -> (Stump, f64) {
    let mut best = (
        Stump {
            feature: 0,
            threshold: f64::NEG_INFINITY,
            polarity: 1.0,
            alpha: 0.0,
        },
        f64::INFINITY,
    );
    for f in 0..dims {
        let mut idx: Vec<usize> = (0..xs.len()).collect();
        idx.sort_by(|&a, &b| xs[a][f].total_cmp(&xs[b][f]));
        // Polarity +1 with the threshold below everything: every point predicted +1.
        let mut err_pos: f64 = idx.iter().filter(|&&i| ys[i] < 0.0).map(|&i| w[i]).sum();
        let mut k = 0;
        loop {
            let threshold = if k == 0 {
                xs[idx[0]][f] - 1.0
            } else {
                let lo = xs[idx[k - 1]][f];
                match idx.get(k) {
                    Some(&i) => (lo + xs[i][f]) / 2.0,
                    None => lo,
                }
            };
            for (pol, err) in [(1.0, err_pos), (-1.0, 1.0 - err_pos)] {
                if err < best.1 - 1e-15 {
                    best = (
                        Stump {
                            feature: f,
                            threshold,
                            polarity: pol,
                            alpha: 0.0,
                        },
                        err,
                    );
                }
            }
            if k == idx.len() {
                break;
            }
            // Move every point with the next distinct value below the threshold.
            let v = xs[idx[k]][f];
            while k < idx.len() && xs[idx[k]][f] == v {
                let i = idx[k];
                err_pos += if ys[i] > 0.0 { w[i] } else { -w[i] };
                k += 1;
            }
        }
    }
    // Recompute directly; the running sums drift by rounding.
    let s = &best.0;
    best.1 = xs.iter().zip(ys).zip(w).filter(|((x, y), _)| s.predict(x) != **y).map(|(_, wi)| wi).sum();
    best
}

/// Discrete AdaBoost over decision stumps with labels in {−1, +1}.
pub fn train_adaboost(xs: &[Vec<f64>], ys: &[f64], rounds: usize) -> Result<Ensemble, QualityError> {
    if rounds == 0 {
        return Err(QualityError::InvalidRounds);
    }
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(QualityError::InvalidTrainingSet("features and labels must be non-empty and aligned".into()));
    }
    let dims = xs[0].len();
    if dims == 0 || xs.iter().any(|x| x.len() != dims || x.iter().any(|v| !v.is_finite())) {
        return Err(QualityError::InvalidTrainingSet("ragged or non-finite features".into()));
    }
    if ys.iter().any(|&y| y != 1.0 && y != -1.0) {
        return Err(QualityError::InvalidTrainingSet("labels must be -1 or +1".into()));
    }
    if ys.iter().all(|&y| y == ys[0]) {
        return Err(QualityError::SingleClass);
    }

    let n = xs.len();
    let mut w = vec![1.0 / n as f64; n];
    let mut ens = Ensemble::default();
    let mut bound = 1.0;
    for _ in 0..rounds {
        let (mut stump, eps) = best_stump(xs, ys, &w, dims);
        if eps >= 0.5 {
            break;
        }
        let e = eps.max(MIN_EPSILON);
        stump.alpha = 0.5 * ((1.0 - e) / e).ln();
        bound *= 2.0 * (eps * (1.0 - eps)).sqrt();
        let perfect = eps == 0.0;
        for (i, wi) in w.iter_mut().enumerate() {
            *wi *= (-stump.alpha * ys[i] * stump.predict(&xs[i])).exp();
        }
        let z: f64 = w.iter().sum();
        for wi in &mut w {
            *wi /= z;
        }
        ens.stumps.push(stump);
        let train_error = ens.error_rate(xs, ys);
        ens.rounds.push(RoundStats {
            epsilon: eps,
            alpha: ens.stumps.last().expect("pushed").alpha,
            train_error,
            bound,
        });
        if perfect {
            break;
        }
    }
    Ok(ens)
}

/// Rejects a description whose ensemble margin falls below `threshold`.
pub fn grammar_filter(
    description: &str,
    ensemble: &Ensemble,
    threshold: f64,
    known: Option<&HashSet<String>>,
) -> FilterVerdict {
    let margin = ensemble.margin(&grammar_features(description, known));
    if margin < threshold {
        FilterVerdict::from_reasons(vec![Reason {
            rule: "grammar".into(),
            evidence: format!("margin {margin:.4} < {threshold:.4}"),
            span: None,
        }])
    } else {
        FilterVerdict::accept()
    }
}

const FILLER: [&str; 12] = [
    "this", "is", "a", "soft", "light", "coat", "made", "for", "daily", "wear", "with", "pockets",
];

/// Seeded labelled texts: well-formed template sentences (+1) and
/// degenerate generations such as stutters, loops and run-ons (−1).
pub fn synthetic_grammar_corpus(n: usize, seed: u64) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = crate::corpus::synthetic_records(n, seed);
    let mut out = Vec::with_capacity(n);
    for (i, r) in records.iter().enumerate() {
        let good = r.description.clone().expect("synthetic records have descriptions");
        if i % 2 == 0 {
            let extra = if rng.gen_bool(0.5) {
                format!(" {} .", r.slogan)
            } else {
                String::new()
            };
            out.push((format!("{good}{extra}"), 1.0));
            continue;
        }
        let toks: Vec<&str> = good.split_whitespace().collect();
        let bad = match rng.gen_range(0..4) {
            0 => {
                let w = toks[rng.gen_range(0..toks.len() - 1)];
                vec![w; rng.gen_range(4..9)].join(" ")
            }
            1 => {
                let k = rng.gen_range(1..toks.len() - 1);
                let mut t = toks.clone();
                let reps = rng.gen_range(3..6);
                for _ in 0..reps {
                    t.insert(k, toks[k]);
                }
                t.join(" ")
            }
            2 => {
                let span: Vec<&str> = toks[..3].to_vec();
                let reps = rng.gen_range(3..6);
                std::iter::repeat(span).take(reps).flatten().collect::<Vec<_>>().join(" ")
            }
            _ => {
                let len = rng.gen_range(30..50);
                (0..len).map(|_| *FILLER.choose(&mut rng).expect("non-empty")).collect::<Vec<_>>().join(" ")
            }
        };
        out.push((bad, -1.0));
    }
    out
}

/// Feature rows and labels for a labelled corpus.
pub fn featurize(corpus: &[(String, f64)], known: Option<&HashSet<String>>) -> (Vec<Vec<f64>>, Vec<f64>) {
    corpus
        .iter()
        .map(|(t, y)| (grammar_features(t, known).to_vec(), *y))
        .unzip()
}

/// Per-feature weighted vote count, handy for inspecting a trained ensemble.
pub fn feature_usage(ensemble: &Ensemble) -> HashMap<&'static str, f64> {
    let mut out = HashMap::new();
    for s in &ensemble.stumps {
        *out.entry(FEATURE_NAMES[s.feature]).or_insert(0.0) += s.alpha;
    }
    out
}
