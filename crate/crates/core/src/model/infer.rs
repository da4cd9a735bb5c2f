use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::{Dropout, Net, Pass, SourceIds};
use super::{ModelError, ModelParams};
use crate::corpus::{TokenId, BOS_ID};
use crate::numerics::{Tape, Tensor, Var};

/// Distributions produced for the last position of a decoder prefix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOutput {
    /// Over the base vocabulary.
    pub vocab_dist: Vec<f64>,
    /// Over source positions.
    pub copy_dist: Vec<f64>,
    pub p_gen: f64,
    /// Over the extended vocabulary.
    pub mixed_dist: Vec<f64>,
}

/// `p_gen * vocab(w) + (1 - p_gen) * sum_{i: src_i = w} copy(i)` over
/// `ext_size` ids, where `src_ext[i]` is the extended id of source position `i`.
pub fn mixed_distribution(
    vocab_dist: &[f64],
    copy_dist: &[f64],
    p_gen: f64,
    src_ext: &[TokenId],
    ext_size: usize,
) -> Result<Vec<f64>, ModelError> {
    if !(0.0..=1.0).contains(&p_gen) {
        return Err(ModelError::InvalidPgen(p_gen));
    }
    if copy_dist.len() != src_ext.len() {
        return Err(ModelError::InvalidDistribution(format!(
            "{} copy weights for {} source tokens",
            copy_dist.len(),
            src_ext.len()
        )));
    }
    if ext_size < vocab_dist.len() {
        return Err(ModelError::InvalidDistribution(format!(
            "extended size {ext_size} smaller than vocabulary {}",
            vocab_dist.len()
        )));
    }
    let mut out = vec![0.0; ext_size];
    for (o, &v) in out.iter_mut().zip(vocab_dist) {
        *o = p_gen * v;
    }
    for (&id, &c) in src_ext.iter().zip(copy_dist) {
        let slot = out.get_mut(id).ok_or_else(|| {
            ModelError::InvalidDistribution(format!("source id {id} outside {ext_size}"))
        })?;
        *slot += (1.0 - p_gen) * c;
    }
    Ok(out)
}

fn last_row(tape: &Tape, v: Var) -> Vec<f64> {
    let t = tape.value(v);
    t.row(t.rows() - 1).to_vec()
}

impl ModelParams {
    fn check_ids(&self, ids: &[TokenId]) -> Result<(), ModelError> {
        let v = self.config.vocab_size;
        match ids.iter().find(|&&i| i >= v) {
            Some(&bad) => Err(ModelError::Numerics(
                crate::numerics::NumericsError::IndexOutOfRange { index: bad, len: v },
            )),
            None => Ok(()),
        }
    }

    /// Encoder states, one `d`-vector per source position. Dropout is off.
    pub fn encode_ids(&self, src: &[TokenId]) -> Result<Tensor, ModelError> {
        self.check_ids(src)?;
        let mut tape = Tape::new();
        let mut net = Net::bind(&mut tape, self, Pass::inference(self.config.pointer));
        let states = net.encode(&mut tape, src)?;
        Ok(tape.value(states).clone())
    }

    /// Output distributions for the last position of `prefix` (extended ids,
    /// starting with `<bos>`).
    pub fn decode_step_ids(
        &self,
        prefix: &[TokenId],
        states: &Tensor,
        src: &SourceIds,
    ) -> Result<StepOutput, ModelError> {
        if prefix.first() != Some(&BOS_ID) {
            return Err(ModelError::MissingBos);
        }
        if states.rows() != src.len() || states.cols() != self.config.d_model {
            return Err(ModelError::InvalidDistribution(format!(
                "encoder states {:?} do not match {} source tokens",
                states.shape(),
                src.len()
            )));
        }
        let mut tape = Tape::new();
        let mut net = Net::bind(&mut tape, self, Pass::inference(self.config.pointer));
        let memory = tape.borrowed_constant(states);
        let out = net.decode(&mut tape, memory, prefix, src)?;
        Ok(StepOutput {
            vocab_dist: last_row(&tape, out.vocab),
            copy_dist: last_row(&tape, out.copy),
            p_gen: last_row(&tape, out.pgen)[0],
            mixed_dist: last_row(&tape, out.mixed),
        })
    }

    /// Teacher-forced per-token NLL; `target` holds extended ids and ends with `<eos>`.
    pub fn sequence_nll_ids(&self, src: &SourceIds, target: &[TokenId]) -> Result<f64, ModelError> {
        let mut tape = Tape::new();
        let (loss, _) = self.record_loss(&mut tape, src, target, None)?;
        Ok(tape.value(loss).data()[0])
    }

    /// Loss and parameter gradients in [`ModelParams::named`] order.
    /// `dropout_seed` enables training-mode dropout at the configured rate.
    pub fn loss_and_gradients(
        &self,
        src: &SourceIds,
        target: &[TokenId],
        dropout_seed: Option<u64>,
    ) -> Result<(f64, Vec<Tensor>), ModelError> {
        let mut tape = Tape::new();
        let (loss, net) = self.record_loss(&mut tape, src, target, dropout_seed)?;
        let grads = tape.backward(loss)?;
        let mut out = Vec::new();
        net.w.visit("", &mut |_, &v| out.push(grads.get(v)));
        Ok((tape.value(loss).data()[0], out))
    }

    /// Mean copy-switch value over teacher-forced target positions.
    pub fn mean_p_gen(&self, src: &SourceIds, target: &[TokenId]) -> Result<f64, ModelError> {
        let mut tape = Tape::new();
        let dec_in = decoder_input(target)?;
        let mut net = Net::bind(&mut tape, self, Pass::inference(self.config.pointer));
        let memory = net.encode(&mut tape, &src.base)?;
        let out = net.decode(&mut tape, memory, &dec_in, src)?;
        let p = tape.value(out.pgen).data();
        Ok(p.iter().sum::<f64>() / p.len() as f64)
    }

    fn record_loss<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        src: &SourceIds,
        target: &[TokenId],
        dropout_seed: Option<u64>,
    ) -> Result<(Var, Net<'a>), ModelError> {
        let dec_in = decoder_input(target)?;
        self.check_ids(&src.base)?;
        let dropout = dropout_seed.map(|seed| Dropout {
            rate: self.config.dropout,
            rng: ChaCha8Rng::seed_from_u64(seed),
        });
        let pass = Pass {
            pointer: self.config.pointer,
            dropout,
        };
        let mut net = Net::bind(tape, self, pass);
        let memory = net.encode(tape, &src.base)?;
        let out = net.decode(tape, memory, &dec_in, src)?;
        let loss = tape.nll(out.mixed, target)?;
        Ok((loss, net))
    }
}

/// `<bos>` followed by all but the last target token.
fn decoder_input(target: &[TokenId]) -> Result<Vec<TokenId>, ModelError> {
    if target.is_empty() {
        return Err(ModelError::EmptyTarget);
    }
    let mut dec_in = Vec::with_capacity(target.len());
    dec_in.push(BOS_ID);
    dec_in.extend_from_slice(&target[..target.len() - 1]);
    Ok(dec_in)
}
