use std::cmp::Ordering;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};

use serde::{Deserialize, Serialize};

use super::beam::NextToken;
use super::DecodeError;
use crate::corpus::{TokenId, UNK_ID};
use crate::model::{Model, SourceIds};
use crate::numerics::Tensor;

/// Encoder output shipped between the two predictor calls.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedSource {
    /// Extended-vocabulary ids of the source tokens.
    pub ids: Vec<TokenId>,
    /// Encoder states, one row per source token.
    pub states: Tensor,
    /// Source surface tokens, used to resolve copied out-of-vocabulary ids.
    pub surface: Vec<String>,
}

impl EncodedSource {
    /// Base/extended id view for a vocabulary of `vocab_size` tokens.
    pub fn source_ids(&self, vocab_size: usize) -> Result<SourceIds, DecodeError> {
        if self.ids.len() != self.surface.len() || self.ids.len() != self.states.rows() {
            return Err(DecodeError::InvalidEncoding(format!(
                "{} ids, {} surface tokens, {} state rows",
                self.ids.len(),
                self.surface.len(),
                self.states.rows()
            )));
        }
        let mut oov: Vec<Option<String>> = Vec::new();
        let mut base = Vec::with_capacity(self.ids.len());
        for (&id, tok) in self.ids.iter().zip(&self.surface) {
            if id < vocab_size {
                base.push(id);
                continue;
            }
            base.push(UNK_ID);
            let slot = id - vocab_size;
            if slot >= self.ids.len() {
                return Err(DecodeError::InvalidEncoding(format!("temporary id {id} out of range")));
            }
            if oov.len() <= slot {
                oov.resize(slot + 1, None);
            }
            match &oov[slot] {
                Some(prev) if prev != tok => {
                    return Err(DecodeError::InvalidEncoding(format!(
                        "temporary id {id} names both {prev:?} and {tok:?}"
                    )))
                }
                _ => oov[slot] = Some(tok.clone()),
            }
        }
        let oov = oov
            .into_iter()
            .map(|o| o.ok_or_else(|| DecodeError::InvalidEncoding("gap in temporary ids".into())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SourceIds {
            base,
            ext: self.ids.clone(),
            oov,
        })
    }
}

/// One next-token proposal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub index: TokenId,
    pub token: String,
    pub prob: f64,
}

/// Descending probability, then ascending index.
pub(crate) fn rank(a: (TokenId, f64), b: (TokenId, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// The `k` best entries of `dist` by [`rank`], without sorting the whole vector.
pub(crate) fn top_k(dist: &[f64], k: usize) -> Vec<(TokenId, f64)> {
    let mut all: Vec<(TokenId, f64)> = dist.iter().copied().enumerate().collect();
    if k < all.len() {
        all.select_nth_unstable_by(k, |&a, &b| rank(a, b));
        all.truncate(k);
    }
    all.sort_by(|&a, &b| rank(a, b));
    all
}

/// Runs the encoder once over `tokens`.
pub fn encoder_predictor<S: AsRef<str>>(model: &Model, tokens: &[S]) -> Result<EncodedSource, DecodeError> {
    let src = model.source_ids(tokens);
    let states = model.params.encode_ids(&src.base)?;
    Ok(EncodedSource {
        ids: src.ext,
        states,
        surface: tokens.iter().map(|t| t.as_ref().to_owned()).collect(),
    })
}

/// The `k` most probable next tokens after `prefix` (extended ids, starting
/// with `<bos>`), probabilities descending, ties to the smaller index.
pub fn decoder_predictor(
    model: &Model,
    encoded: &EncodedSource,
    prefix: &[TokenId],
    k: usize,
) -> Result<Vec<Candidate>, DecodeError> {
    let src = encoded.source_ids(model.vocab.len())?;
    decoder_predictor_with(model, encoded, &src, prefix, k)
}

fn decoder_predictor_with(
    model: &Model,
    encoded: &EncodedSource,
    src: &SourceIds,
    prefix: &[TokenId],
    k: usize,
) -> Result<Vec<Candidate>, DecodeError> {
    let ext_size = src.ext_size(model.vocab.len());
    if k == 0 || k > ext_size {
        return Err(DecodeError::InvalidK { k, max: ext_size });
    }
    if let Some(&bad) = prefix.iter().find(|&&t| t >= ext_size) {
        return Err(DecodeError::InvalidEncoding(format!("prefix id {bad} outside {ext_size}")));
    }
    let step = model.params.decode_step_ids(prefix, &encoded.states, src)?;
    Ok(top_k(&step.mixed_dist, k)
        .into_iter()
        .map(|(index, prob)| Candidate {
            index,
            token: model.token(index, src),
            prob,
        })
        .collect())
}

/// Invocation counts for the two predictor interfaces.
#[derive(Debug, Default)]
pub struct CallCounters {
    pub encoder: AtomicU64,
    pub decoder: AtomicU64,
}

impl CallCounters {
    pub fn encoder_calls(&self) -> u64 {
        self.encoder.load(AtomicOrdering::SeqCst)
    }

    pub fn decoder_calls(&self) -> u64 {
        self.decoder.load(AtomicOrdering::SeqCst)
    }
}

/// Counting wrapper around the two predictor calls for one model.
pub struct Predictors<'m> {
    pub model: &'m Model,
    pub counters: &'m CallCounters,
}

impl<'m> Predictors<'m> {
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<EncodedSource, DecodeError> {
        self.counters.encoder.fetch_add(1, AtomicOrdering::SeqCst);
        encoder_predictor(self.model, tokens)
    }

    pub fn decode(&self, encoded: &EncodedSource, prefix: &[TokenId], k: usize) -> Result<Vec<Candidate>, DecodeError> {
        self.counters.decoder.fetch_add(1, AtomicOrdering::SeqCst);
        decoder_predictor(self.model, encoded, prefix, k)
    }

    /// Step source for beam search that routes every step through the decoder predictor.
    pub fn stepper<'e>(&'e self, encoded: &'e EncodedSource) -> Result<SplitStepper<'e, 'm>, DecodeError> {
        let src = encoded.source_ids(self.model.vocab.len())?;
        Ok(SplitStepper {
            predictors: self,
            encoded,
            src,
        })
    }
}

pub struct SplitStepper<'e, 'm> {
    predictors: &'e Predictors<'m>,
    encoded: &'e EncodedSource,
    src: SourceIds,
}

impl NextToken for SplitStepper<'_, '_> {
    fn ext_size(&self) -> usize {
        self.src.ext_size(self.predictors.model.vocab.len())
    }

    fn top(&self, prefix: &[TokenId], k: usize) -> Result<Vec<(TokenId, f64)>, DecodeError> {
        self.predictors.counters.decoder.fetch_add(1, AtomicOrdering::SeqCst);
        Ok(decoder_predictor_with(self.predictors.model, self.encoded, &self.src, prefix, k)?
            .into_iter()
            .map(|c| (c.index, c.prob))
            .collect())
    }
}

/// Step source that calls the model directly and fully sorts each distribution.
pub struct MonolithicStepper<'m> {
    model: &'m Model,
    src: SourceIds,
    states: Tensor,
}

impl<'m> MonolithicStepper<'m> {
    pub fn new<S: AsRef<str>>(model: &'m Model, tokens: &[S]) -> Result<Self, DecodeError> {
        let src = model.source_ids(tokens);
        let states = model.params.encode_ids(&src.base)?;
        Ok(Self { model, src, states })
    }

    pub fn source(&self) -> &SourceIds {
        &self.src
    }
}

impl NextToken for MonolithicStepper<'_> {
    fn ext_size(&self) -> usize {
        self.src.ext_size(self.model.vocab.len())
    }

    fn top(&self, prefix: &[TokenId], k: usize) -> Result<Vec<(TokenId, f64)>, DecodeError> {
        let step = self.model.params.decode_step_ids(prefix, &self.states, &self.src)?;
        let mut all: Vec<(TokenId, f64)> = step.mixed_dist.into_iter().enumerate().collect();
        all.sort_by(|&a, &b| rank(a, b));
        all.truncate(k);
        Ok(all)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Vocab, BOS_ID};
    use crate::model::{ModelConfig, ModelParams};

    fn model() -> Model {
        let words: Vec<String> = (0..20).map(|i| format!("t{i}")).collect();
        let vocab = Vocab::build([words], 1, 100).unwrap();
        Model::new(ModelParams::random(ModelConfig::toy(vocab.len()), 12).unwrap(), vocab).unwrap()
    }

    #[test]
    fn encoded_shape_and_determinism() {
        let m = model();
        let toks = ["t1", "t2", "t3", "zz", "t4", "t5", "zz"];
        let a = encoder_predictor(&m, &toks).unwrap();
        assert_eq!(a.ids.len(), 7);
        assert_eq!(a.states.shape(), &[7, 16]);
        assert_eq!(a, encoder_predictor(&m, &toks).unwrap());
        let empty: [&str; 0] = [];
        assert!(encoder_predictor(&m, &empty).is_err());
        let src = a.source_ids(m.vocab.len()).unwrap();
        assert_eq!(src.oov, vec!["zz"]);
    }

    #[test]
    fn top_k_matches_full_sort() {
        let m = model();
        let enc = encoder_predictor(&m, &["t1", "qq", "t2"]).unwrap();
        let ext = m.vocab.len() + 1;
        let full = decoder_predictor(&m, &enc, &[BOS_ID], ext).unwrap();
        let total: f64 = full.iter().map(|c| c.prob).sum();
        assert!((total - 1.0).abs() < 1e-6);
        let src = enc.source_ids(m.vocab.len()).unwrap();
        let step = m.params.decode_step_ids(&[BOS_ID], &enc.states, &src).unwrap();
        let mut oracle: Vec<(usize, f64)> = step.mixed_dist.iter().copied().enumerate().collect();
        oracle.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for k in [1, 3, ext] {
            let got = decoder_predictor(&m, &enc, &[BOS_ID], k).unwrap();
            assert_eq!(got.len(), k);
            for (c, o) in got.iter().zip(&oracle) {
                assert_eq!((c.index, c.prob), *o);
            }
        }
        assert_eq!(full.iter().find(|c| c.index == m.vocab.len()).unwrap().token, "qq");
        assert!(matches!(decoder_predictor(&m, &enc, &[BOS_ID], 0), Err(DecodeError::InvalidK { .. })));
        assert!(matches!(
            decoder_predictor(&m, &enc, &[BOS_ID], ext + 1),
            Err(DecodeError::InvalidK { .. })
        ));
    }

    #[test]
    fn ties_go_to_smaller_index() {
        assert_eq!(top_k(&[0.2, 0.4, 0.2, 0.4], 3), vec![(1, 0.4), (3, 0.4), (0, 0.2)]);
    }

    #[test]
    fn encoded_source_serializes_losslessly() {
        let m = model();
        let enc = encoder_predictor(&m, &["t1", "qq", "t2"]).unwrap();
        let json = serde_json::to_string(&enc).unwrap();
        let back: EncodedSource = serde_json::from_str(&json).unwrap();
        assert_eq!(back, enc);
    }

    #[test]
    fn inconsistent_encoding_rejected() {
        let m = model();
        let mut enc = encoder_predictor(&m, &["t1", "qq", "t2"]).unwrap();
        enc.surface.pop();
        assert!(decoder_predictor(&m, &enc, &[BOS_ID], 1).is_err());
    }
}
