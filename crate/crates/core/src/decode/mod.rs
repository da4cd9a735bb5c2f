//! Beam and greedy decoding, either monolithic or through the split
//! encoder/decoder predictor interface.
//!
//! The split interface runs the encoder once per request and then asks the
//! decoder predictor for the top-k next tokens of each live beam prefix.

mod beam;
mod predictor;

pub use beam::{beam_search, greedy_decode, sort_candidates, BeamConfig, Hypothesis, NextToken};
pub use predictor::{
    decoder_predictor, encoder_predictor, CallCounters, Candidate, EncodedSource,
    MonolithicStepper, Predictors, SplitStepper,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Model, ModelError, SourceIds};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("invalid_k: k = {k} outside 1..={max}")]
    InvalidK { k: usize, max: usize },
    #[error("invalid_beam: {0}")]
    InvalidBeam(String),
    #[error("invalid_encoding: {0}")]
    InvalidEncoding(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl DecodeError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::InvalidK { .. } => "invalid_k",
            Self::InvalidBeam(_) => "invalid_beam",
            Self::InvalidEncoding(_) => "invalid_encoding",
            Self::Model(e) => e.code(),
        }
    }
}

/// A ranked hypothesis resolved to surface tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generated {
    pub tokens: Vec<String>,
    pub logprob: f64,
    pub score: f64,
    pub finished: bool,
}

fn resolve(model: &Model, src: &SourceIds, hyps: Vec<Hypothesis>) -> Vec<Generated> {
    hyps.into_iter()
        .map(|h| Generated {
            tokens: h.output().iter().map(|&t| model.token(t, src)).collect(),
            logprob: h.logprob,
            score: h.score,
            finished: h.finished,
        })
        .collect()
}

/// The decoder can attend to at most `max_positions` prefix tokens.
fn clamp(model: &Model, config: &BeamConfig) -> BeamConfig {
    BeamConfig {
        max_len: config.max_len.min(model.config().max_positions),
        ..config.clone()
    }
}

/// Encoder predictor once, then beam search over decoder-predictor calls.
pub fn generate<S: AsRef<str>>(
    predictors: &Predictors,
    tokens: &[S],
    config: &BeamConfig,
) -> Result<Vec<Generated>, DecodeError> {
    let encoded = predictors.encode(tokens)?;
    let stepper = predictors.stepper(&encoded)?;
    let src = encoded.source_ids(predictors.model.vocab.len())?;
    let hyps = beam_search(&stepper, &clamp(predictors.model, config))?;
    Ok(resolve(predictors.model, &src, hyps))
}

/// Beam search calling the model directly, without the predictor interface.
pub fn generate_monolithic<S: AsRef<str>>(
    model: &Model,
    tokens: &[S],
    config: &BeamConfig,
) -> Result<Vec<Generated>, DecodeError> {
    let stepper = MonolithicStepper::new(model, tokens)?;
    let hyps = beam_search(&stepper, &clamp(model, config))?;
    Ok(resolve(model, stepper.source(), hyps))
}

/// Greedy decode calling the model directly.
pub fn greedy_monolithic<S: AsRef<str>>(
    model: &Model,
    tokens: &[S],
    max_len: usize,
) -> Result<Generated, DecodeError> {
    let stepper = MonolithicStepper::new(model, tokens)?;
    let h = greedy_decode(&stepper, max_len.min(model.config().max_positions))?;
    Ok(resolve(model, stepper.source(), vec![h]).remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Vocab;
    use crate::model::{ModelConfig, ModelParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64) -> Model {
        let words: Vec<String> = (0..30).map(|i| format!("t{i}")).collect();
        let vocab = Vocab::build([words], 1, 100).unwrap();
        Model::new(ModelParams::random(ModelConfig::toy(vocab.len()), seed).unwrap(), vocab).unwrap()
    }

    fn random_input(rng: &mut ChaCha8Rng) -> Vec<String> {
        let n = rng.gen_range(1..8);
        (0..n)
            .map(|_| {
                if rng.gen_bool(0.2) {
                    format!("oov{}", rng.gen_range(0..3))
                } else {
                    format!("t{}", rng.gen_range(0..30))
                }
            })
            .collect()
    }

    #[test]
    fn split_equals_monolithic_and_counts_calls() {
        let m = model(31);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = BeamConfig {
            beam_size: 3,
            max_len: 6,
            ..Default::default()
        };
        for _ in 0..20 {
            let input = random_input(&mut rng);
            let counters = CallCounters::default();
            let p = Predictors {
                model: &m,
                counters: &counters,
            };
            let split = generate(&p, &input, &cfg).unwrap();
            let mono = generate_monolithic(&m, &input, &cfg).unwrap();
            assert_eq!(split, mono);
            assert_eq!(counters.encoder_calls(), 1);
            let n = split.iter().map(|g| g.tokens.len() + 1).max().unwrap() as u64;
            assert!(counters.decoder_calls() <= n * 3);
            // Copied temporary ids resolve to source tokens.
            for g in &split {
                for t in &g.tokens {
                    assert!(m.vocab.contains(t) || input.contains(t), "{t}");
                }
            }
        }
    }

    #[test]
    fn beam_one_matches_greedy_on_model() {
        let m = model(32);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..10 {
            let input = random_input(&mut rng);
            let cfg = BeamConfig {
                beam_size: 1,
                max_len: 8,
                alpha: 0.0,
                no_repeat_trigram: false,
            };
            let beam = generate_monolithic(&m, &input, &cfg).unwrap();
            let greedy = greedy_monolithic(&m, &input, 8).unwrap();
            assert_eq!(beam[0].tokens, greedy.tokens);
            assert_eq!(beam[0].logprob, greedy.logprob);
        }
    }

    #[test]
    fn greedy_is_deterministic() {
        let m = model(33);
        let a = greedy_monolithic(&m, &["t1", "t2"], 5).unwrap();
        assert_eq!(a, greedy_monolithic(&m, &["t1", "t2"], 5).unwrap());
        assert!(a.tokens.len() <= 5);
    }
}
