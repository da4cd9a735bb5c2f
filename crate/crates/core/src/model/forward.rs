//! Transformer-pointer forward pass recorded on a [`Tape`].

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{Attention, FeedForward, Norm, Weights};
use super::{ModelConfig, ModelError, ModelParams};
use crate::corpus::{TokenId, UNK_ID};
use crate::numerics::{Tape, Tensor, Var};

/// Source token ids in both the base and the per-example extended vocabulary.
///
/// Out-of-vocabulary source tokens get temporary ids `V, V+1, ..` in order of
/// first appearance; `oov[i]` is the surface form of id `V + i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceIds {
    pub base: Vec<TokenId>,
    pub ext: Vec<TokenId>,
    pub oov: Vec<String>,
}

impl SourceIds {
    /// Source already expressed in base ids, with no OOV tokens.
    pub fn in_vocab(ids: Vec<TokenId>) -> Self {
        Self {
            ext: ids.clone(),
            base: ids,
            oov: Vec::new(),
        }
    }

    pub fn ext_size(&self, vocab_size: usize) -> usize {
        vocab_size + self.oov.len()
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }
}

/// Maps an extended id to the id fed to the embedding table.
pub(crate) fn embed_id(id: TokenId, vocab_size: usize) -> TokenId {
    if id >= vocab_size {
        UNK_ID
    } else {
        id
    }
}

pub(crate) struct Dropout {
    pub rate: f64,
    pub rng: ChaCha8Rng,
}

/// Per-forward settings.
pub(crate) struct Pass {
    pub pointer: bool,
    pub dropout: Option<Dropout>,
}

impl Pass {
    pub fn inference(pointer: bool) -> Self {
        Self {
            pointer,
            dropout: None,
        }
    }
}

pub(crate) struct DecoderVars {
    pub mixed: Var,
    pub vocab: Var,
    pub copy: Var,
    pub pgen: Var,
}

pub(crate) struct Net<'a> {
    pub cfg: &'a ModelConfig,
    pub w: Weights<Var>,
    positions: &'a Tensor,
    pass: Pass,
}

impl<'a> Net<'a> {
    /// Registers every parameter on `tape` as a borrowed leaf.
    pub fn bind(tape: &mut Tape<'a>, params: &'a ModelParams, pass: Pass) -> Self {
        let w = params.weights.map("", &mut |_, t| tape.param(t));
        Self {
            cfg: &params.config,
            w,
            positions: &params.positions,
            pass,
        }
    }

    fn add_positions(&self, tape: &mut Tape<'a>, x: Var, n: usize) -> Result<Var, ModelError> {
        let d = self.cfg.d_model;
        let pos = Tensor::new(vec![n, d], self.positions.data()[..n * d].to_vec())?;
        let pos = tape.constant(pos);
        Ok(tape.add(x, pos)?)
    }

    fn dropout(&mut self, tape: &mut Tape<'a>, x: Var) -> Result<Var, ModelError> {
        let Some(drop) = self.pass.dropout.as_mut().filter(|d| d.rate > 0.0) else {
            return Ok(x);
        };
        let keep = 1.0 - drop.rate;
        let shape = tape.value(x).shape().to_vec();
        let mask: Vec<f64> = (0..tape.value(x).numel())
            .map(|_| if drop.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mask = tape.constant(Tensor::new(shape, mask)?);
        Ok(tape.mul(x, mask)?)
    }

    fn norm(tape: &mut Tape<'a>, n: &Norm<Var>, x: Var) -> Result<Var, ModelError> {
        Ok(tape.layer_norm(x, n.gain, n.bias)?)
    }

    fn linear(tape: &mut Tape<'a>, x: Var, w: Var, b: Var) -> Result<Var, ModelError> {
        let y = tape.matmul(x, w)?;
        Ok(tape.add_row(y, b)?)
    }

    /// Multi-head attention; returns the output and each head's probability matrix.
    fn attention(
        &self,
        tape: &mut Tape<'a>,
        a: &Attention<Var>,
        query: Var,
        memory: Var,
        causal: bool,
    ) -> Result<(Var, Vec<Var>), ModelError> {
        let h = self.cfg.heads;
        let dk = self.cfg.d_model / h;
        let q = Self::linear(tape, query, a.wq, a.bq)?;
        let k = Self::linear(tape, memory, a.wk, a.bk)?;
        let v = Self::linear(tape, memory, a.wv, a.bv)?;
        let scale = 1.0 / (dk as f64).sqrt();
        let mut heads = Vec::with_capacity(h);
        let mut probs = Vec::with_capacity(h);
        for i in 0..h {
            let qh = tape.slice_cols(q, i * dk, dk)?;
            let kh = tape.slice_cols(k, i * dk, dk)?;
            let vh = tape.slice_cols(v, i * dk, dk)?;
            let scores = tape.matmul_nt(qh, kh)?;
            let scores = tape.scale(scores, scale);
            let p = tape.softmax_rows(scores, causal)?;
            heads.push(tape.matmul(p, vh)?);
            probs.push(p);
        }
        let joined = if h == 1 {
            heads[0]
        } else {
            tape.concat_cols(&heads)?
        };
        Ok((Self::linear(tape, joined, a.wo, a.bo)?, probs))
    }

    fn feed_forward(tape: &mut Tape<'a>, f: &FeedForward<Var>, x: Var) -> Result<Var, ModelError> {
        let hidden = Self::linear(tape, x, f.w1, f.b1)?;
        let hidden = tape.gelu(hidden);
        Self::linear(tape, hidden, f.w2, f.b2)
    }

    /// Encoder states `[S, d]` for base-vocabulary source ids.
    pub fn encode(&mut self, tape: &mut Tape<'a>, src: &[TokenId]) -> Result<Var, ModelError> {
        self.check_len(src.len())?;
        let x = tape.embed(self.w.embedding, src)?;
        let mut x = self.add_positions(tape, x, src.len())?;
        x = self.dropout(tape, x)?;
        for i in 0..self.w.encoder.len() {
            let blk = self.w.encoder[i].clone();
            let h = Self::norm(tape, &blk.norm1, x)?;
            let (a, _) = self.attention(tape, &blk.attn, h, h, false)?;
            let a = self.dropout(tape, a)?;
            x = tape.add(x, a)?;
            let h = Self::norm(tape, &blk.norm2, x)?;
            let f = Self::feed_forward(tape, &blk.ff, h)?;
            let f = self.dropout(tape, f)?;
            x = tape.add(x, f)?;
        }
        Self::norm(tape, &self.w.encoder_norm.clone(), x)
    }

    fn check_len(&self, n: usize) -> Result<(), ModelError> {
        if n == 0 {
            return Err(ModelError::EmptyInput);
        }
        if n > self.cfg.max_positions {
            return Err(ModelError::InputTooLong {
                len: n,
                max: self.cfg.max_positions,
            });
        }
        Ok(())
    }

    /// Teacher-forced decoder over `dec_in` (extended ids, starting with BOS).
    pub fn decode(
        &mut self,
        tape: &mut Tape<'a>,
        memory: Var,
        dec_in: &[TokenId],
        src: &SourceIds,
    ) -> Result<DecoderVars, ModelError> {
        self.check_len(dec_in.len())?;
        let v = self.cfg.vocab_size;
        let ids: Vec<TokenId> = dec_in.iter().map(|&t| embed_id(t, v)).collect();
        let prev_emb = tape.embed(self.w.embedding, &ids)?;
        let mut y = self.add_positions(tape, prev_emb, ids.len())?;
        y = self.dropout(tape, y)?;
        let mut last_cross = Vec::new();
        for i in 0..self.w.decoder.len() {
            let blk = self.w.decoder[i].clone();
            let h = Self::norm(tape, &blk.norm1, y)?;
            let (a, _) = self.attention(tape, &blk.self_attn, h, h, true)?;
            let a = self.dropout(tape, a)?;
            y = tape.add(y, a)?;
            let h = Self::norm(tape, &blk.norm2, y)?;
            let (c, probs) = self.attention(tape, &blk.cross_attn, h, memory, false)?;
            let c = self.dropout(tape, c)?;
            y = tape.add(y, c)?;
            let h = Self::norm(tape, &blk.norm3, y)?;
            let f = Self::feed_forward(tape, &blk.ff, h)?;
            let f = self.dropout(tape, f)?;
            y = tape.add(y, f)?;
            last_cross = probs;
        }
        let out = Self::norm(tape, &self.w.decoder_norm.clone(), y)?;

        let logits = Self::linear(tape, out, self.w.out_w, self.w.out_b)?;
        let vocab = tape.softmax_rows(logits, false)?;

        // Copy distribution: last-layer cross-attention summed over heads, renormalized.
        let mut copy = last_cross[0];
        for &p in &last_cross[1..] {
            copy = tape.add(copy, p)?;
        }
        let copy = tape.scale(copy, 1.0 / last_cross.len() as f64);

        let pgen = if self.pass.pointer {
            let context = tape.matmul(copy, memory)?;
            let feats = tape.concat_cols(&[context, out, prev_emb])?;
            let z = Self::linear(tape, feats, self.w.pgen_w, self.w.pgen_b)?;
            tape.sigmoid(z)
        } else {
            tape.constant(Tensor::filled(&[ids.len(), 1], 1.0))
        };
        let mixed = tape.pointer_mix(vocab, copy, pgen, &src.ext, src.ext_size(v))?;
        Ok(DecoderVars {
            mixed,
            vocab,
            copy,
            pgen,
        })
    }
}
