mod common;

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::sync::Arc;

use apcg_core::corpus::{linearize_product, LinearizeConfig, BOS_ID};
use apcg_core::decode::{decoder_predictor, encoder_predictor};
use apcg_service::http::{router, AppState};
use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use common::{clock, memorized, service};
use parking_lot::Mutex;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app(dir: &std::path::Path, n: usize) -> (Router, Arc<apcg_service::Service>, Vec<apcg_core::corpus::ProductRecord>) {
    let (records, model) = memorized(n, 2);
    let s = Arc::new(service(dir, &records, Some(model), clock()));
    let r = router(AppState {
        service: s.clone(),
        data: None,
    });
    (r, s, records)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, v)
}

#[tokio::test]
async fn screening_flow_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _, records) = app(dir.path(), 12);

    let (st, health) = call(&app, "GET", "/v1/healthz", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(health["status"], "ok");

    let mut ids = vec![];
    for r in &records[..5] {
        let (st, a) = call(&app, "POST", "/v1/generate", Some(json!({"sku": r.sku, "beam_size": 2}))).await;
        assert_eq!(st, StatusCode::OK, "{a}");
        assert_eq!(a["provenance"], "model");
        assert_eq!(a["state"], "pending");
        assert!(a["latency_ms"].as_f64().unwrap() >= 0.0);
        assert!(a["candidates"].as_array().unwrap().len() <= 2);
        ids.push(a["id"].as_str().unwrap().to_owned());
    }
    let (_, pending) = call(&app, "GET", "/v1/screening/pending?limit=3", None).await;
    assert_eq!(pending["items"].as_array().unwrap().len(), 3);

    let (st, sub) = call(&app, "POST", &format!("/v1/screening/{}/submit", ids[1]), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(sub["position"], 2);

    for id in &ids[..4] {
        let (st, _) = call(&app, "POST", &format!("/v1/screening/{id}/verdict"), Some(json!({"verdict": "approve"}))).await;
        assert_eq!(st, StatusCode::OK);
    }
    let (st, out) = call(
        &app,
        "POST",
        &format!("/v1/screening/{}/verdict", ids[4]),
        Some(json!({"verdict": "reject"})),
    )
    .await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(out["acceptance_rate_today"], 0.8);
    assert_eq!(out["artifact"]["state"], "rejected");

    let (st, err) = call(&app, "POST", &format!("/v1/screening/{}/verdict", ids[0]), Some(json!({"verdict": "reject"}))).await;
    assert_eq!(st, StatusCode::CONFLICT);
    assert_eq!(err["error"]["code"], "already_reviewed");

    let (st, d) = call(&app, "GET", &format!("/v1/descriptions/{}", records[0].sku), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(d["state"], "approved");
    let (st, _) = call(&app, "GET", &format!("/v1/descriptions/{}", records[4].sku), None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);

    let (_, cached) = call(&app, "POST", "/v1/generate", Some(json!({"sku": records[0].sku}))).await;
    assert_eq!(cached["provenance"], "cache");

    let (_, stats) = call(&app, "GET", "/v1/stats", None).await;
    assert_eq!(stats["acceptance_rate_today"], 0.8);
    assert_eq!(stats["cache_hits"], 1);
    assert_eq!(stats["requests"], 6);
    assert!((stats["cache_hit_rate"].as_f64().unwrap() - 1.0 / 6.0).abs() < 1e-12);
    assert_eq!(stats["ctr"], Value::Null);
}

#[tokio::test]
async fn events_and_rates() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _, _) = app(dir.path(), 4);
    let mut records = vec![];
    for i in 0..20 {
        records.push(json!({"timestamp": format!("2024-05-01T10:00:{i:02}Z"), "sku": "s1", "event": "pv", "bucket": "b"}));
    }
    records.push(json!({"timestamp": "2024-05-01T10:01:00Z", "sku": "s1", "event": "click", "bucket": "b"}));
    records.push(json!({"timestamp": "2024-05-01T10:01:01Z", "sku": "s1", "event": "click", "bucket": "b"}));
    records.push(json!({"timestamp": "2024-05-01T10:01:02Z", "sku": "s1", "event": "purchase", "bucket": "b"}));
    let (st, v) = call(&app, "POST", "/v1/events", Some(json!({ "records": records }))).await;
    assert_eq!(st, StatusCode::OK, "{v}");
    assert_eq!(v["appended"], 23);
    let (_, stats) = call(&app, "GET", "/v1/stats", None).await;
    assert_eq!(stats["ctr"], 0.1);
    assert_eq!(stats["cvr"], 0.5);
    assert_eq!(stats["buckets"]["b"]["counts"]["pv"], 20);

    let stale = json!({"records": [{"timestamp": "2024-05-01T09:00:00Z", "sku": "s1", "event": "pv"}]});
    let (st, v) = call(&app, "POST", "/v1/events", Some(stale)).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["code"], "non_monotone_timestamp");
}

#[tokio::test]
async fn request_errors_are_json() {
    let dir = tempfile::tempdir().unwrap();
    let (app, _, _) = app(dir.path(), 4);
    let (st, v) = call(&app, "POST", "/v1/generate", Some(json!({"sku": "nope"}))).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert_eq!(v["error"]["code"], "unknown_product");
    let (st, v) = call(&app, "POST", "/v1/generate", Some(json!({"sku": 5}))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["code"], "invalid_request");
    let (st, v) = call(&app, "POST", "/v1/screening/zzz/verdict", Some(json!({"verdict": "approve"}))).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert_eq!(v["error"]["code"], "not_found");
    let (st, v) = call(&app, "POST", "/v1/admin/reload", None).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["code"], "invalid_request");

    let empty = Arc::new(service(dir.path(), &[], None, clock()));
    let app = router(AppState {
        service: empty,
        data: None,
    });
    let rec = apcg_core::corpus::synthetic_records(1, 1).remove(0);
    let (st, v) = call(&app, "POST", "/v1/generate", Some(json!({ "record": rec }))).await;
    assert_eq!(st, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(v["error"]["code"], "model_unavailable");
}

#[tokio::test]
async fn predictor_endpoints_match_in_process_calls() {
    let dir = tempfile::tempdir().unwrap();
    let (app, svc, records) = app(dir.path(), 6);
    let model = svc.current_model().unwrap();
    let mut tokens = linearize_product(&records[0], &LinearizeConfig::default()).unwrap();
    tokens.push("unseenword".into());

    let (st, enc) = call(&app, "POST", "/v1/predict/encode", Some(json!({ "tokens": tokens }))).await;
    assert_eq!(st, StatusCode::OK, "{enc}");
    let local = encoder_predictor(&model, &tokens).unwrap();
    let wire: apcg_core::decode::EncodedSource = serde_json::from_value(enc.clone()).unwrap();
    assert_eq!(wire, local);

    let body = json!({"encoded": enc, "prefix": [BOS_ID], "k": 5});
    let (st, dec) = call(&app, "POST", "/v1/predict/decode", Some(body)).await;
    assert_eq!(st, StatusCode::OK, "{dec}");
    let expected = decoder_predictor(&model, &local, &[BOS_ID], 5).unwrap();
    assert_eq!(dec["candidates"], serde_json::to_value(expected).unwrap());

    let bad = json!({"encoded": enc, "prefix": [BOS_ID], "k": 0});
    let (st, v) = call(&app, "POST", "/v1/predict/decode", Some(bad)).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_eq!(v["error"]["code"], "invalid_k");
    assert_eq!(svc.counters().encoder_calls(), 1);
}

/// Eight clients generating, approving and reading at once: every stored
/// artifact read is approved, on the live model, with a text some approval wrote.
#[tokio::test(flavor = "multi_thread", worker_threads = 8)]
async fn concurrent_clients_see_whole_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (app, svc, records) = app(dir.path(), 8);
    let version = svc.current_model().unwrap().version.clone();
    let approved: Arc<Mutex<HashMap<String, HashSet<String>>>> = Arc::default();
    let skus: Vec<String> = records.iter().take(4).map(|r| r.sku.clone()).collect();

    let mut tasks = vec![];
    for client in 0..8usize {
        let app = app.clone();
        let approved = approved.clone();
        let skus = skus.clone();
        let version = version.clone();
        tasks.push(tokio::spawn(async move {
            let mut conflicts = 0;
            for step in 0..12usize {
                let sku = &skus[(client + step) % skus.len()];
                let (st, a) = call(&app, "POST", "/v1/generate", Some(json!({"sku": sku, "beam_size": 2}))).await;
                assert_eq!(st, StatusCode::OK);
                if a["provenance"] == "cache" {
                    assert_eq!(a["state"], "approved");
                }
                if a["provenance"] == "model" && step % 3 == 0 {
                    let id = a["id"].as_str().unwrap();
                    let edit = format!("{} c{client} s{step}", a["text"].as_str().unwrap());
                    // Record the text before the verdict can become visible.
                    approved.lock().entry(sku.clone()).or_default().insert(edit.clone());
                    let (st, v) = call(
                        &app,
                        "POST",
                        &format!("/v1/screening/{id}/verdict"),
                        Some(json!({"verdict": "approve", "edited_text": edit})),
                    )
                    .await;
                    if st == StatusCode::CONFLICT {
                        conflicts += 1;
                    } else {
                        assert_eq!(st, StatusCode::OK, "{v}");
                    }
                }
                // Race on another client's queued artifact.
                let (_, pending) = call(&app, "GET", "/v1/screening/pending?limit=1", None).await;
                if let Some(p) = pending["items"].as_array().and_then(|a| a.first()) {
                    let id = p["id"].as_str().unwrap();
                    let (st, _) = call(&app, "POST", &format!("/v1/screening/{id}/verdict"), Some(json!({"verdict": "reject"}))).await;
                    assert!(st == StatusCode::OK || st == StatusCode::CONFLICT, "{st}");
                }
                let (st, d) = call(&app, "GET", &format!("/v1/descriptions/{sku}"), None).await;
                if st == StatusCode::OK {
                    assert_eq!(d["state"], "approved");
                    assert_eq!(d["model_version"], version.as_str());
                    let text = d["edited_text"].as_str().unwrap_or_else(|| d["text"].as_str().unwrap()).to_owned();
                    assert!(approved.lock()[sku].contains(&text), "{text}");
                } else {
                    assert_eq!(st, StatusCode::NOT_FOUND);
                }
            }
            conflicts
        }));
    }
    for t in tasks {
        t.await.unwrap();
    }
    let audit = svc.board().audit().entries();
    let mut seen = HashSet::new();
    assert!(audit.iter().all(|e| seen.insert(e.artifact_id.clone())), "one transition per artifact");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn serves_over_tcp() {
    let dir = tempfile::tempdir().unwrap();
    let (_, svc, records) = app(dir.path(), 4);
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let server = tokio::spawn(apcg_service::http::serve(
        AppState {
            service: svc,
            data: None,
        },
        listener,
    ));
    let sku = records[0].sku.clone();
    let body = tokio::task::spawn_blocking(move || {
        let mut s = std::net::TcpStream::connect(addr).unwrap();
        let payload = json!({ "sku": sku }).to_string();
        write!(
            s,
            "POST /v1/generate HTTP/1.1\r\nHost: x\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
            payload.len(),
            payload
        )
        .unwrap();
        let mut resp = String::new();
        s.read_to_string(&mut resp).unwrap();
        resp
    })
    .await
    .unwrap();
    assert!(body.starts_with("HTTP/1.1 200"), "{body}");
    assert!(body.contains("\"provenance\":\"model\""));
    server.abort();
}
