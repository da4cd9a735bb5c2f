//! Transformer encoder-decoder with a copy head over source positions.
//!
//! The output at each step mixes a vocabulary softmax with a copy
//! distribution taken from the last decoder layer's cross-attention:
//! `P(w) = p_gen * vocab(w) + (1 - p_gen) * sum_{i: src_i = w} copy(i)`.
//! Source tokens outside the vocabulary get temporary ids after the base
//! vocabulary so they can still be produced.

mod checkpoint;
mod forward;
mod infer;
mod params;
mod train;

pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, Precision, CHECKPOINT_VERSION};
pub use forward::SourceIds;
pub use infer::{mixed_distribution, StepOutput};
pub use params::{
    sinusoidal_positions, Attention, DecoderBlock, EncoderBlock, FeedForward, ModelParams, Norm,
    Weights,
};
pub use train::{train, TrainConfig, TrainObjective, TrainPair, TrainReport};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{TokenId, Vocab, EOS, UNK_ID};
use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("input_too_long: length {len} exceeds {max} positions")]
    InputTooLong { len: usize, max: usize },
    #[error("empty_input: sequence has no tokens")]
    EmptyInput,
    #[error("missing_bos: decoder prefix must start with <bos>")]
    MissingBos,
    #[error("empty_target: target has no tokens")]
    EmptyTarget,
    #[error("invalid_p_gen: {0} is outside [0, 1]")]
    InvalidPgen(f64),
    #[error("invalid_distribution: {0}")]
    InvalidDistribution(String),
    #[error("diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("empty_dataset: nothing to train on")]
    EmptyDataset,
    #[error("incompatible_checkpoint: {0}")]
    IncompatibleCheckpoint(String),
    #[error("vocab_mismatch: checkpoint has {checkpoint} tokens, vocabulary has {vocab}")]
    VocabMismatch { checkpoint: usize, vocab: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl ModelError {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            Self::Config(_) => "invalid_config",
            Self::InputTooLong { .. } => "input_too_long",
            Self::EmptyInput => "empty_input",
            Self::MissingBos => "missing_bos",
            Self::EmptyTarget => "empty_target",
            Self::InvalidPgen(_) => "invalid_p_gen",
            Self::InvalidDistribution(_) => "invalid_distribution",
            Self::Diverged { .. } => "diverged",
            Self::EmptyDataset => "empty_dataset",
            Self::IncompatibleCheckpoint(_) => "incompatible_checkpoint",
            Self::VocabMismatch { .. } => "vocab_mismatch",
            Self::Numerics(_) => "numerics",
            Self::Io(_) => "io",
        }
    }
}

fn default_pointer() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub ff_dim: usize,
    pub max_positions: usize,
    /// Training only; inference never drops activations.
    #[serde(default)]
    pub dropout: f64,
    /// Copy head on. When off, `p_gen` is fixed at 1.
    #[serde(default = "default_pointer")]
    pub pointer: bool,
}

impl ModelConfig {
    /// Small config used by tests and the desk-scale CLI defaults.
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 16,
            heads: 2,
            encoder_layers: 1,
            decoder_layers: 1,
            ff_dim: 32,
            max_positions: 64,
            dropout: 0.0,
            pointer: true,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let extents = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("encoder_layers", self.encoder_layers),
            ("decoder_layers", self.decoder_layers),
            ("ff_dim", self.ff_dim),
            ("max_positions", self.max_positions),
        ];
        for (name, v) in extents {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        if self.d_model % self.heads != 0 {
            return Err(ModelError::Config(format!(
                "d_model {} is not divisible by heads {}",
                self.d_model, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Parameters bundled with the vocabulary they were trained against.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub params: ModelParams,
    pub vocab: Vocab,
    /// Content fingerprint; changes whenever the parameters change.
    pub version: String,
}

impl Model {
    pub fn new(params: ModelParams, vocab: Vocab) -> Result<Self, ModelError> {
        if params.config.vocab_size != vocab.len() {
            return Err(ModelError::VocabMismatch {
                checkpoint: params.config.vocab_size,
                vocab: vocab.len(),
            });
        }
        let version = params.fingerprint();
        Ok(Self {
            params,
            vocab,
            version,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.params.config
    }

    /// Base and extended ids for a source token sequence.
    pub fn source_ids<S: AsRef<str>>(&self, tokens: &[S]) -> SourceIds {
        let v = self.vocab.len();
        let mut oov: Vec<String> = Vec::new();
        let mut base = Vec::with_capacity(tokens.len());
        let mut ext = Vec::with_capacity(tokens.len());
        for t in tokens {
            let t = t.as_ref();
            match self.vocab.get(t) {
                Some(id) => {
                    base.push(id);
                    ext.push(id);
                }
                None => {
                    let i = oov.iter().position(|o| o == t).unwrap_or_else(|| {
                        oov.push(t.to_owned());
                        oov.len() - 1
                    });
                    base.push(UNK_ID);
                    ext.push(v + i);
                }
            }
        }
        SourceIds { base, ext, oov }
    }

    /// Extended ids for target tokens: vocabulary id, else a copied source
    /// token's temporary id, else `<unk>`.
    pub fn target_ids<S: AsRef<str>>(&self, tokens: &[S], src: &SourceIds) -> Vec<TokenId> {
        let v = self.vocab.len();
        tokens
            .iter()
            .map(|t| {
                let t = t.as_ref();
                self.vocab
                    .get(t)
                    .or_else(|| src.oov.iter().position(|o| o == t).map(|i| v + i))
                    .unwrap_or(UNK_ID)
            })
            .collect()
    }

    /// Surface string of an extended id.
    pub fn token(&self, id: TokenId, src: &SourceIds) -> String {
        let v = self.vocab.len();
        if id < v {
            self.vocab.decode(id).unwrap_or_default().to_owned()
        } else {
            src.oov.get(id - v).cloned().unwrap_or_default()
        }
    }

    /// Encoder states `[S, d]` for a source token sequence.
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Result<crate::numerics::Tensor, ModelError> {
        self.params.encode_ids(&self.source_ids(tokens).base)
    }

    /// Per-token NLL of `target` given `source`; `<eos>` is appended when absent.
    pub fn sequence_nll<S: AsRef<str>, T: AsRef<str>>(
        &self,
        source: &[S],
        target: &[T],
    ) -> Result<f64, ModelError> {
        if target.is_empty() {
            return Err(ModelError::EmptyTarget);
        }
        let src = self.source_ids(source);
        let mut tgt = self.target_ids(target, &src);
        if target.last().map(|t| t.as_ref()) != Some(EOS) {
            tgt.push(crate::corpus::EOS_ID);
        }
        self.params.sequence_nll_ids(&src, &tgt)
    }

    pub(crate) fn refresh_version(&mut self) {
        self.version = self.params.fingerprint();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        let words = ["red", "dress", "silk", "slim"];
        Vocab::build([words.iter().map(|s| s.to_string()).collect::<Vec<_>>()], 1, 100).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig::toy(10).validate().is_ok());
        let mut c = ModelConfig::toy(10);
        c.heads = 3;
        assert!(matches!(c.validate(), Err(ModelError::Config(_))));
        let mut c = ModelConfig::toy(10);
        c.ff_dim = 0;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy(10);
        c.dropout = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn oov_tokens_get_temporary_ids() {
        let v = vocab();
        let m = Model::new(ModelParams::random(ModelConfig::toy(v.len()), 1).unwrap(), v).unwrap();
        let n = m.vocab.len();
        let src = m.source_ids(&["red", "zzz", "dress", "qq", "zzz"]);
        assert_eq!(src.oov, vec!["zzz", "qq"]);
        assert_eq!(src.ext[1], n);
        assert_eq!(src.ext[3], n + 1);
        assert_eq!(src.ext[4], n);
        assert_eq!(src.base[1], UNK_ID);
        let tgt = m.target_ids(&["qq", "silk", "never"], &src);
        assert_eq!(tgt[0], n + 1);
        assert_eq!(tgt[2], UNK_ID);
        assert_eq!(m.token(n + 1, &src), "qq");
        assert_eq!(m.token(tgt[1], &src), "silk");
    }

    #[test]
    fn vocab_size_must_match() {
        let v = vocab();
        let p = ModelParams::random(ModelConfig::toy(v.len() + 1), 1).unwrap();
        assert!(matches!(Model::new(p, v), Err(ModelError::VocabMismatch { .. })));
    }

    #[test]
    fn error_codes() {
        assert_eq!(ModelError::InputTooLong { len: 9, max: 8 }.code(), "input_too_long");
        assert!(ModelError::IncompatibleCheckpoint("x".into())
            .to_string()
            .starts_with("incompatible_checkpoint"));
    }
}
