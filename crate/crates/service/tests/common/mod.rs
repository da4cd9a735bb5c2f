#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use apcg_core::corpus::{synthetic_records, LinearizeConfig, ProductRecord, Vocab};
use apcg_core::model::{train, Model, ModelConfig, ModelParams, TrainConfig, TrainObjective, TrainPair};
use apcg_core::numerics::AdamConfig;
use apcg_service::screening::ManualClock;
use apcg_service::{record_pairs, Service, ServiceConfig};
use chrono::{TimeZone, Utc};

pub fn train_config(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 8,
        adam: AdamConfig {
            lr: 1e-2,
            ..AdamConfig::default()
        },
        clip_norm: Some(1.0),
        seed,
        pointer_in_pretraining: true,
    }
}

pub fn vocab_for(pairs: &[TrainPair]) -> Vocab {
    Vocab::build(pairs.iter().flat_map(|p| [p.source.clone(), p.target.clone()]), 1, 1000).unwrap()
}

pub fn model_for(pairs: &[TrainPair], epochs: usize, seed: u64) -> Model {
    let vocab = vocab_for(pairs);
    let mut model = Model::new(ModelParams::random(ModelConfig::toy(vocab.len()), seed).unwrap(), vocab).unwrap();
    train(&mut model, pairs, TrainObjective::Finetune, &train_config(epochs, seed)).unwrap();
    model
}

/// Seeded records and a toy model that has memorized their descriptions.
pub fn memorized(n: usize, seed: u64) -> (Vec<ProductRecord>, Model) {
    let records = synthetic_records(n, seed);
    let pairs = record_pairs(&records, &LinearizeConfig::default()).unwrap();
    let model = model_for(&pairs, 30, 5);
    (records, model)
}

pub fn clock() -> Arc<ManualClock> {
    Arc::new(ManualClock::new(Utc.with_ymd_and_hms(2024, 5, 1, 10, 0, 0).unwrap()))
}

pub fn service(dir: &Path, records: &[ProductRecord], model: Option<Model>, clock: Arc<ManualClock>) -> Service {
    let s = Service::with_journal(&dir.join("journal"), ServiceConfig::default(), clock).unwrap();
    s.add_records(records.iter().cloned());
    if let Some(m) = model {
        s.swap_model(m);
    }
    s
}
