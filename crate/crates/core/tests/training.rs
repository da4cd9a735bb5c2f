use apcg_core::corpus::{
    make_psg_example, make_sr_example, split_sentences, synthetic_records, LinearizeConfig,
    PsgConfig, TokenizeMode, Vocab, EOS_ID,
};
use apcg_core::decode::{generate_monolithic, greedy_monolithic, BeamConfig};
use apcg_core::model::{
    train, Model, ModelConfig, ModelParams, TrainConfig, TrainObjective, TrainPair,
};
use apcg_core::numerics::AdamConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(epochs: usize, seed: u64) -> TrainConfig {
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

fn record_pairs(n: usize, seed: u64) -> Vec<TrainPair> {
    synthetic_records(n, seed)
        .iter()
        .filter_map(|r| TrainPair::from_record(r, &LinearizeConfig::default()).unwrap())
        .collect()
}

fn fresh_model(pairs: &[TrainPair], seed: u64) -> Model {
    let vocab = Vocab::build(
        pairs.iter().flat_map(|p| [p.source.clone(), p.target.clone()]),
        1,
        1000,
    )
    .unwrap();
    let params = ModelParams::random(ModelConfig::toy(vocab.len()), seed).unwrap();
    Model::new(params, vocab).unwrap()
}

fn exact_matches(model: &Model, pairs: &[TrainPair]) -> usize {
    pairs
        .iter()
        .filter(|p| greedy_monolithic(model, &p.source, 40).unwrap().tokens == p.target)
        .count()
}

#[test]
fn memorizes_record_descriptions() {
    let pairs = record_pairs(32, 1);
    assert_eq!(pairs.len(), 32);
    let mut a = fresh_model(&pairs, 1);
    let mut b = fresh_model(&pairs, 1);
    let ra = train(&mut a, &pairs, TrainObjective::Finetune, &config(40, 5)).unwrap();
    let rb = train(&mut b, &pairs, TrainObjective::Finetune, &config(40, 5)).unwrap();
    assert_eq!(ra, rb);
    let hits = exact_matches(&a, &pairs);
    assert!(hits * 10 >= 32 * 9, "{hits}/32");
    // Beam search reproduces a memorized pair too.
    let top = &generate_monolithic(&a, &pairs[0].source, &BeamConfig::default()).unwrap()[0];
    assert_eq!(top.tokens, pairs[0].target);
}

#[test]
fn copy_task_drives_p_gen_down() {
    let words: Vec<String> = (0..40).map(|i| format!("w{i}")).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pairs: Vec<TrainPair> = (0..32)
        .map(|_| {
            let n = rng.gen_range(4..9);
            let s: Vec<String> = (0..n).map(|_| words[rng.gen_range(0..40)].clone()).collect();
            TrainPair {
                source: s.clone(),
                target: s,
            }
        })
        .collect();
    let vocab = Vocab::build([words], 1, 1000).unwrap();
    let mut model =
        Model::new(ModelParams::random(ModelConfig::toy(vocab.len()), 1).unwrap(), vocab).unwrap();
    let mean = |m: &Model| {
        pairs
            .iter()
            .map(|p| {
                let s = m.source_ids(&p.source);
                let mut t = m.target_ids(&p.target, &s);
                t.push(EOS_ID);
                m.params.mean_p_gen(&s, &t).unwrap()
            })
            .sum::<f64>()
            / pairs.len() as f64
    };
    let before = mean(&model);
    let report = train(&mut model, &pairs, TrainObjective::Finetune, &config(20, 2)).unwrap();
    let after = mean(&model);
    for w in report.epoch_losses[..5].windows(2) {
        assert!(w[1] < w[0], "{:?}", report.epoch_losses);
    }
    assert!(after < 0.5, "mean p_gen {before:.3} -> {after:.3}");
    assert!(after < before, "mean p_gen {before:.3} -> {after:.3}");
}

#[test]
fn out_of_vocabulary_values_are_copied() {
    // Train on copy pairs where some tokens never enter the vocabulary.
    let known: Vec<String> = (0..20).map(|i| format!("k{i}")).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut pairs = Vec::new();
    for i in 0..48 {
        let mut s: Vec<String> = (0..4).map(|_| known[rng.gen_range(0..20)].clone()).collect();
        s.insert(rng.gen_range(0..5), format!("rare{i}"));
        pairs.push(TrainPair {
            source: s.clone(),
            target: s,
        });
    }
    let vocab = Vocab::build([known.clone()], 1, 1000).unwrap();
    let mut model =
        Model::new(ModelParams::random(ModelConfig::toy(vocab.len()), 4).unwrap(), vocab).unwrap();
    train(&mut model, &pairs, TrainObjective::Finetune, &config(60, 9)).unwrap();
    let unseen: Vec<String> = ["k1", "k3", "novelword", "k2", "k5"].map(String::from).to_vec();
    let out = greedy_monolithic(&model, &unseen, 10).unwrap();
    assert!(out.tokens.contains(&"novelword".to_string()), "{:?}", out.tokens);
}

#[test]
fn pretraining_objectives_train() {
    let docs = [
        "the coat is warm. it has two pockets. the hood is removable. wash at 30 degrees.",
        "a light dress. the fabric is silk. it fits slim. made for summer days.",
        "these shoes are soft. the sole is rubber. they run true to size. great for walking.",
    ];
    let mut sr = Vec::new();
    let mut psg = Vec::new();
    for (i, d) in docs.iter().enumerate() {
        let doc = split_sentences(&format!("d{i}"), d, TokenizeMode::Whitespace).unwrap();
        for s in 0..4 {
            sr.push(TrainPair::from(make_sr_example(&doc, s).unwrap()));
        }
        psg.push(TrainPair::from(make_psg_example(&doc, &PsgConfig::default()).unwrap()));
    }
    let all: Vec<TrainPair> = sr.iter().chain(&psg).cloned().collect();
    let mut model = fresh_model(&all, 2);
    let no_pointer = TrainConfig {
        pointer_in_pretraining: false,
        ..config(6, 1)
    };
    let r1 = train(&mut model, &sr, TrainObjective::Sr, &no_pointer).unwrap();
    let r2 = train(&mut model, &psg, TrainObjective::Psg, &config(6, 1)).unwrap();
    assert!(r1.epoch_losses.last().unwrap() < &r1.epoch_losses[0]);
    assert!(r2.epoch_losses.iter().all(|l| l.is_finite()));
    assert!(model.config().pointer);
}
