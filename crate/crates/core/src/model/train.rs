use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::forward::SourceIds;
use super::{Model, ModelError};
use crate::corpus::{
    linearize_product, tokenize, CorpusError, LinearizeConfig, PretrainExample, ProductRecord,
    TokenId, EOS, EOS_ID,
};
use crate::numerics::{AdamConfig, AdamState, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainObjective {
    /// Sentence re-ordering pre-training.
    Sr,
    /// Pseudo-summary pre-training.
    Psg,
    /// Both pre-training objectives interleaved.
    Mixed,
    /// Product records to descriptions.
    Finetune,
}

impl TrainObjective {
    pub fn is_pretraining(self) -> bool {
        !matches!(self, Self::Finetune)
    }
}

/// One source/target token pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainPair {
    pub source: Vec<String>,
    pub target: Vec<String>,
}

impl TrainPair {
    /// Linearized record to tokenized description; `None` without a description.
    pub fn from_record(record: &ProductRecord, config: &LinearizeConfig) -> Result<Option<Self>, CorpusError> {
        let Some(desc) = record.description.as_deref() else {
            return Ok(None);
        };
        let target = tokenize(desc, config.mode);
        if target.is_empty() {
            return Ok(None);
        }
        Ok(Some(Self {
            source: linearize_product(record, config)?,
            target,
        }))
    }
}

impl From<PretrainExample> for TrainPair {
    fn from(ex: PretrainExample) -> Self {
        Self {
            source: ex.input,
            target: ex.target,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
    /// Copy head during pre-training objectives. Fine-tuning follows the model config.
    pub pointer_in_pretraining: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 8,
            adam: AdamConfig {
                lr: 5e-3,
                ..AdamConfig::default()
            },
            clip_norm: Some(1.0),
            seed: 0,
            pointer_in_pretraining: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-token loss over each epoch's examples.
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
}

struct Encoded {
    src: SourceIds,
    tgt: Vec<TokenId>,
}

/// Mini-batch Adam on the per-token NLL. Deterministic for a given seed:
/// per-example gradients run in parallel but are summed in batch order.
pub fn train(
    model: &mut Model,
    pairs: &[TrainPair],
    objective: TrainObjective,
    config: &TrainConfig,
) -> Result<TrainReport, ModelError> {
    if pairs.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    if config.batch_size == 0 {
        return Err(ModelError::Config("batch_size must be positive".into()));
    }
    let max = model.config().max_positions;
    let mut data = Vec::with_capacity(pairs.len());
    for p in pairs {
        if p.target.is_empty() {
            return Err(ModelError::EmptyTarget);
        }
        let src = model.source_ids(&p.source);
        let mut tgt = model.target_ids(&p.target, &src);
        if p.target.last().map(String::as_str) != Some(EOS) {
            tgt.push(EOS_ID);
        }
        for len in [src.len(), tgt.len()] {
            if len == 0 {
                return Err(ModelError::EmptyInput);
            }
            if len > max {
                return Err(ModelError::InputTooLong { len, max });
            }
        }
        data.push(Encoded { src, tgt });
    }

    let saved_pointer = model.params.config.pointer;
    if objective.is_pretraining() && !config.pointer_in_pretraining {
        model.params.config.pointer = false;
    }
    let result = run(model, &data, config);
    model.params.config.pointer = saved_pointer;
    model.refresh_version();
    result
}

fn run(model: &mut Model, data: &[Encoded], config: &TrainConfig) -> Result<TrainReport, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = AdamState::new(config.adam);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let dropout = model.config().dropout > 0.0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
            let params = &model.params;
            let results: Vec<Result<(f64, Vec<Tensor>), ModelError>> = chunk
                .par_iter()
                .map(|&i| {
                    let seed = dropout.then(|| {
                        config.seed ^ ((epoch as u64) << 32) ^ (i as u64).wrapping_mul(0x9e37_79b9)
                    });
                    params.loss_and_gradients(&data[i].src, &data[i].tgt, seed)
                })
                .collect();

            let mut sum: Option<Vec<Tensor>> = None;
            let mut batch_loss = 0.0;
            for r in results {
                let (loss, grads) = r?;
                if !loss.is_finite() {
                    return Err(ModelError::Diverged { epoch, batch });
                }
                batch_loss += loss;
                match sum.as_mut() {
                    None => sum = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            for (x, y) in a.data_mut().iter_mut().zip(g.data()) {
                                *x += y;
                            }
                        }
                    }
                }
            }
            epoch_total += batch_loss;

            let mut grads = sum.expect("non-empty batch");
            let scale = 1.0 / chunk.len() as f64;
            let mut norm_sq = 0.0;
            for g in &mut grads {
                for x in g.data_mut() {
                    *x *= scale;
                    norm_sq += *x * *x;
                }
            }
            if !norm_sq.is_finite() {
                return Err(ModelError::Diverged { epoch, batch });
            }
            if let Some(clip) = config.clip_norm {
                let norm = norm_sq.sqrt();
                if norm > clip {
                    let s = clip / norm;
                    for g in &mut grads {
                        for x in g.data_mut() {
                            *x *= s;
                        }
                    }
                }
            }
            adam.step(&mut model.params.tensors_mut(), &grads)?;
            if !model.params.all_finite() {
                return Err(ModelError::Diverged { epoch, batch });
            }
        }
        epoch_losses.push(epoch_total / data.len() as f64);
    }
    Ok(TrainReport {
        epoch_losses,
        steps: adam.step_count(),
    })
}
