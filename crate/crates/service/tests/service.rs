mod common;

use std::collections::HashMap;

use apcg_core::corpus::{synthetic_records, LinearizeConfig};
use apcg_core::model::{load_checkpoint, save_checkpoint, Precision, TrainPair};
use apcg_core::quality::{featurize, synthetic_grammar_corpus, train_adaboost};
use apcg_service::screening::{Provenance, ScreeningState, Verdict};
use apcg_service::{record_pairs, GenerateRequest, Service};
use common::{clock, memorized, model_for, service, train_config};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn cache_hit_skips_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let (records, model) = memorized(12, 2);
    let s = service(dir.path(), &records, Some(model), clock());
    let sku = records[0].sku.clone();

    let first = s.generate(&GenerateRequest::sku(&sku)).unwrap();
    assert_eq!(first.provenance, Provenance::Model);
    assert!(first.verdict.accepted, "{:?}", first.verdict);
    assert_eq!(first.text, records[0].description.clone().unwrap());
    assert!(!first.candidates.is_empty());
    assert_eq!(s.board().queue_position(&first.id), Some(1));
    assert!(s.description(&sku).is_none());

    s.review(&first.id, Verdict::Approve, None).unwrap();
    let calls = s.model_invocations();
    let second = s.generate(&GenerateRequest::sku(&sku)).unwrap();
    assert_eq!(second.provenance, Provenance::Cache);
    assert_eq!(s.model_invocations(), calls);
    assert_eq!(second.text, first.text);
    assert_eq!(s.stats().cache_hits, 1);
}

#[test]
fn request_errors() {
    let dir = tempfile::tempdir().unwrap();
    let records = synthetic_records(3, 1);
    let s = service(dir.path(), &records, None, clock());
    let err = s.generate(&GenerateRequest::sku("missing")).unwrap_err();
    assert_eq!(err.code(), "unknown_product");
    let err = s.generate(&GenerateRequest::sku(&records[0].sku)).unwrap_err();
    assert_eq!(err.code(), "model_unavailable");
    let err = s.generate(&GenerateRequest::default()).unwrap_err();
    assert_eq!(err.code(), "invalid_request");
    assert_eq!(s.health().status, "no_model");
}

#[test]
fn inline_record_goes_to_the_model_and_joins_the_catalog() {
    let dir = tempfile::tempdir().unwrap();
    let (records, model) = memorized(12, 2);
    let s = service(dir.path(), &records[..6], Some(model), clock());
    let fresh = records[8].clone();
    let a = s.generate(&GenerateRequest::record(fresh.clone())).unwrap();
    assert_eq!(a.provenance, Provenance::Model);
    assert!(s.record(&fresh.sku).is_some());
}

#[test]
fn edited_approval_is_what_the_store_returns() {
    let dir = tempfile::tempdir().unwrap();
    let (records, model) = memorized(12, 2);
    let s = service(dir.path(), &records, Some(model), clock());
    let a = s.generate(&GenerateRequest::sku(&records[1].sku)).unwrap();
    let edited = format!("{} edited", a.text);
    let out = s.review(&a.id, Verdict::Approve, Some(edited.clone())).unwrap();
    assert_eq!(out.acceptance_rate_today, Some(1.0));
    let stored = s.description(&records[1].sku).unwrap();
    assert_eq!(stored.final_text(), edited);
    assert_eq!(stored.state, ScreeningState::Approved);
    let cached = s.generate(&GenerateRequest::sku(&records[1].sku)).unwrap();
    assert_eq!(cached.final_text(), edited);
    assert_eq!(s.review(&a.id, Verdict::Reject, None).unwrap_err().code(), "already_reviewed");
}

#[test]
fn store_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let (records, model) = memorized(12, 2);
    let version = model.version.clone();
    {
        let s = service(dir.path(), &records, Some(model.clone()), clock());
        let a = s.generate(&GenerateRequest::sku(&records[2].sku)).unwrap();
        s.review(&a.id, Verdict::Approve, None).unwrap();
    }
    let s = service(dir.path(), &records, Some(model), clock());
    let a = s.description(&records[2].sku).unwrap();
    assert_eq!(a.model_version, version);
    let calls = s.model_invocations();
    assert_eq!(s.generate(&GenerateRequest::sku(&records[2].sku)).unwrap().provenance, Provenance::Cache);
    assert_eq!(s.model_invocations(), calls);
}

#[test]
fn batch_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (records, model) = memorized(12, 2);
    let s = service(dir.path(), &records, Some(model), clock());
    let skus: Vec<String> = records[..10].iter().map(|r| r.sku.clone()).collect();
    let all = s.batch_generate(&skus, None).unwrap();
    assert_eq!(all.enqueued, 10, "{all:?}");
    assert!(all.reconciles());

    let mut with_unknown = skus.clone();
    with_unknown[4] = "no-such-sku".into();
    let out = s.batch_generate(&with_unknown, None).unwrap();
    assert_eq!(out.errored, 1);
    assert_eq!(out.errors, vec![("no-such-sku".to_owned(), "unknown_product".to_owned())]);
    assert_eq!(out.enqueued, 9);
    assert!(s.batch_generate(&[], None).is_err());
}

#[test]
fn batch_counts_reconcile_on_random_mixes() {
    let dir = tempfile::tempdir().unwrap();
    let (records, model) = memorized(12, 2);
    let s = service(dir.path(), &records, Some(model), clock());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for round in 0..5 {
        let skus: Vec<String> = (0..rng.gen_range(1..12))
            .map(|i| {
                if rng.gen_bool(0.2) {
                    format!("unknown-{round}-{i}")
                } else {
                    records[rng.gen_range(0..records.len())].sku.clone()
                }
            })
            .collect();
        let out = s.batch_generate(&skus, Some(2)).unwrap();
        assert!(out.reconciles(), "{out:?}");
        assert_eq!(out.errored, skus.iter().filter(|k| k.starts_with("unknown")).count());
        // Approve some of what was queued so later rounds see cache hits.
        for a in s.pending(3) {
            s.review(&a.id, Verdict::Approve, None).unwrap();
        }
    }
    assert!(s.stats().cache_hits > 0);
}

fn planted_pairs(records: &[apcg_core::corpus::ProductRecord]) -> Vec<TrainPair> {
    record_pairs(records, &LinearizeConfig::default())
        .unwrap()
        .into_iter()
        .map(|mut p| {
            for t in &mut p.target {
                if t.chars().all(|c| c.is_ascii_digit()) {
                    *t = "999".into();
                }
            }
            p
        })
        .collect()
}

#[test]
fn planted_number_is_flagged_and_not_cached() {
    let dir = tempfile::tempdir().unwrap();
    let records = synthetic_records(12, 6);
    let model = model_for(&planted_pairs(&records), 30, 3);
    let ckpt = dir.path().join("planted.apcg");
    save_checkpoint(&model, &ckpt, Precision::F64).unwrap();
    let s = service(dir.path(), &records, Some(load_checkpoint(&ckpt).unwrap()), clock());

    let a = s.generate(&GenerateRequest::sku(&records[0].sku)).unwrap();
    assert!(a.text.contains("999"), "{}", a.text);
    assert!(!a.verdict.accepted);
    assert_eq!(a.verdict.reasons[0].rule, "number_mismatch");
    assert_eq!(a.verdict.reasons[0].evidence, "999");
    assert_eq!(s.board().queue_position(&a.id), None);
    assert_eq!(s.submit(&a.id).unwrap_err().code(), "not_eligible");
    assert_eq!(s.review(&a.id, Verdict::Approve, None).unwrap_err().code(), "not_eligible");
    let again = s.generate(&GenerateRequest::sku(&records[0].sku)).unwrap();
    assert_eq!(again.provenance, Provenance::Model);
    assert!(s.description(&records[0].sku).is_none());
}

#[test]
fn grammar_filter_rejects_degenerate_output() {
    let dir = tempfile::tempdir().unwrap();
    let records = synthetic_records(8, 7);
    let stutter: Vec<TrainPair> = record_pairs(&records, &LinearizeConfig::default())
        .unwrap()
        .into_iter()
        .map(|mut p| {
            p.target = vec![p.target[1].clone(); 6];
            p
        })
        .collect();
    let model = model_for(&stutter, 30, 2);
    let (xs, ys) = featurize(&synthetic_grammar_corpus(300, 1), None);
    let mut s = service(dir.path(), &records, Some(model), clock());
    s.set_grammar(Some(train_adaboost(&xs, &ys, 20).unwrap()));
    let a = s.generate(&GenerateRequest::sku(&records[0].sku)).unwrap();
    assert!(a.verdict.has("grammar"), "{} {:?}", a.text, a.verdict);
}

#[test]
fn retrain_installs_a_new_version_and_invalidates_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let (records, model) = memorized(12, 2);
    let s = service(dir.path(), &records, Some(model), clock());
    let sku = records[3].sku.clone();
    let a = s.generate(&GenerateRequest::sku(&sku)).unwrap();
    s.review(&a.id, Verdict::Approve, None).unwrap();
    let old = s.current_model().unwrap();

    let pairs = record_pairs(&records, &LinearizeConfig::default()).unwrap();
    let version = s.retrain(&pairs, &train_config(1, 9)).unwrap();
    assert_ne!(version, old.version);
    // A request holding the old model still sees it.
    assert_eq!(old.version, a.model_version);
    let b = s.generate(&GenerateRequest::sku(&sku)).unwrap();
    assert_eq!(b.provenance, Provenance::Model);
    assert_eq!(b.model_version, version);
}

/// Random generate/review interleavings: a cached answer always carries the
/// most recently approved text for its key.
#[test]
fn cache_returns_latest_approval() {
    let dir = tempfile::tempdir().unwrap();
    let (records, model) = memorized(6, 2);
    let s: Service = service(dir.path(), &records, Some(model), clock());
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut approved: HashMap<String, String> = HashMap::new();
    let mut open: Vec<String> = Vec::new();
    for step in 0..120 {
        let sku = records[rng.gen_range(0..3)].sku.clone();
        if rng.gen_bool(0.5) || open.is_empty() {
            let a = s.generate(&GenerateRequest::sku(&sku)).unwrap();
            match a.provenance {
                Provenance::Cache => assert_eq!(Some(a.final_text()), approved.get(&sku).map(String::as_str)),
                Provenance::Model => {
                    assert!(!approved.contains_key(&sku));
                    open.push(a.id);
                }
            }
        } else {
            let id = open.swap_remove(rng.gen_range(0..open.len()));
            let a = s.board().get(&id).unwrap();
            let edit = rng.gen_bool(0.5).then(|| format!("{} v{step}", a.text));
            if rng.gen_bool(0.7) {
                let out = s.review(&id, Verdict::Approve, edit).unwrap();
                approved.insert(a.sku.clone(), out.artifact.final_text().to_owned());
            } else {
                s.review(&id, Verdict::Reject, None).unwrap();
            }
        }
    }
    assert!(!approved.is_empty());
}
