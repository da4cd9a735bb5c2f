use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::predictor::rank;
use super::DecodeError;
use crate::corpus::{TokenId, BOS_ID, EOS_ID};

/// Source of next-token distributions for a fixed input.
pub trait NextToken {
    fn ext_size(&self) -> usize;

    /// The `k` most probable next tokens after `prefix`, probabilities
    /// descending, ties to the smaller index.
    fn top(&self, prefix: &[TokenId], k: usize) -> Result<Vec<(TokenId, f64)>, DecodeError>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam_size: usize,
    /// Maximum generated tokens, `<eos>` included.
    pub max_len: usize,
    /// Length-normalization exponent.
    pub alpha: f64,
    pub no_repeat_trigram: bool,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam_size: 4,
            max_len: 128,
            alpha: 0.7,
            no_repeat_trigram: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Starts with `<bos>`.
    pub tokens: Vec<TokenId>,
    pub logprob: f64,
    pub finished: bool,
    pub score: f64,
}

impl Hypothesis {
    fn root() -> Self {
        Self {
            tokens: vec![BOS_ID],
            logprob: 0.0,
            finished: false,
            score: 0.0,
        }
    }

    /// Generated tokens, without `<bos>` and a trailing `<eos>`.
    pub fn output(&self) -> &[TokenId] {
        let body = &self.tokens[1..];
        body.strip_suffix(&[EOS_ID]).unwrap_or(body)
    }

    pub fn generated_len(&self) -> usize {
        self.tokens.len() - 1
    }
}

fn normalized(logprob: f64, len: usize, alpha: f64) -> f64 {
    if alpha == 0.0 {
        logprob
    } else {
        logprob / (len.max(1) as f64).powf(alpha)
    }
}

fn repeats_trigram(tokens: &[TokenId], next: TokenId) -> bool {
    let n = tokens.len();
    if n < 2 {
        return false;
    }
    let tri = [tokens[n - 2], tokens[n - 1], next];
    tokens.windows(3).any(|w| w == tri)
}

/// Best-first ordering of finished hypotheses: score, then token sequence.
fn by_score(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.tokens.cmp(&b.tokens))
}

/// Beam search; returns up to `beam_size` hypotheses ranked by
/// `logprob / len^alpha`.
pub fn beam_search<P: NextToken + ?Sized>(
    predictor: &P,
    config: &BeamConfig,
) -> Result<Vec<Hypothesis>, DecodeError> {
    let b = config.beam_size;
    if b == 0 {
        return Err(DecodeError::InvalidBeam("beam_size must be at least 1".into()));
    }
    if config.max_len == 0 {
        return Err(DecodeError::InvalidBeam("max_len must be at least 1".into()));
    }
    if !config.alpha.is_finite() || config.alpha < 0.0 {
        return Err(DecodeError::InvalidBeam(format!("alpha {} must be finite and >= 0", config.alpha)));
    }
    let ext = predictor.ext_size();
    let k = if config.no_repeat_trigram { ext } else { b.min(ext) };

    let mut active = vec![Hypothesis::root()];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for step in 1..=config.max_len {
        // (logprob, parent, token)
        let mut pool: Vec<(f64, usize, TokenId)> = Vec::new();
        for (pi, hyp) in active.iter().enumerate() {
            let mut taken = 0;
            for (tok, p) in predictor.top(&hyp.tokens, k)? {
                if taken == b {
                    break;
                }
                if p <= 0.0 || (config.no_repeat_trigram && repeats_trigram(&hyp.tokens, tok)) {
                    continue;
                }
                pool.push((hyp.logprob + p.ln(), pi, tok));
                taken += 1;
            }
        }
        pool.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        pool.truncate(b);

        let mut next = Vec::with_capacity(b);
        for (lp, pi, tok) in pool {
            let mut tokens = active[pi].tokens.clone();
            tokens.push(tok);
            let done = tok == EOS_ID || step == config.max_len;
            let hyp = Hypothesis {
                score: normalized(lp, tokens.len() - 1, config.alpha),
                tokens,
                logprob: lp,
                finished: done,
            };
            if done {
                finished.push(hyp);
            } else {
                next.push(hyp);
            }
        }
        active = next;
        if active.is_empty() || finished.len() >= b {
            break;
        }
    }
    for h in &mut active {
        h.score = normalized(h.logprob, h.generated_len(), config.alpha);
    }
    let mut all = finished;
    all.extend(active.into_iter().filter(|h| h.generated_len() > 0));
    all.sort_by(by_score);
    all.truncate(b);
    Ok(all)
}

/// Argmax decoding (beam size 1, no length normalization).
pub fn greedy_decode<P: NextToken + ?Sized>(predictor: &P, max_len: usize) -> Result<Hypothesis, DecodeError> {
    if max_len == 0 {
        return Err(DecodeError::InvalidBeam("max_len must be at least 1".into()));
    }
    let mut hyp = Hypothesis::root();
    while !hyp.finished {
        let (tok, p) = predictor.top(&hyp.tokens, 1)?[0];
        hyp.tokens.push(tok);
        hyp.logprob += p.ln();
        hyp.finished = tok == EOS_ID || hyp.generated_len() == max_len;
    }
    hyp.score = hyp.logprob;
    Ok(hyp)
}

/// Same ranking as [`rank`], exposed for callers building their own tables.
pub fn sort_candidates(c: &mut [(TokenId, f64)]) {
    c.sort_by(|&a, &b| rank(a, b));
}
