use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use serde_json::{json, Value};
use tower::ServiceExt;

use oed_core::annotate::{RetrainMode, StubRetrainer};
use oed_core::corpus::{parse_dataset, save_dataset, Partition};
use oed_core::synth::keyword_corpus;
use oed_server::{router, AppState, ServerConfig};

struct Harness {
    app: Router,
    _dir: tempfile::TempDir,
    dataset: String,
}

fn harness(n: usize, retrain_every: usize) -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("queue.jsonl");
    save_dataset(&path, &keyword_corpus(n, 3, 7, 21, "q", Partition::Trainval)).unwrap();
    let mut config = ServerConfig::new(Arc::new(StubRetrainer::default()));
    config.retrain_every = retrain_every;
    config.retrain_mode = RetrainMode::Inline;
    Harness {
        app: router(AppState::new(config)),
        dataset: path.to_string_lossy().into_owned(),
        _dir: dir,
    }
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    (status, to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec())
}

async fn call_json(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call(app, method, uri, body).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

async fn create(h: &Harness, extra: Value) -> String {
    let mut body = json!({ "dataset": h.dataset });
    body.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
    let (status, v) = call_json(&h.app, Method::POST, "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED, "{v}");
    v["id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn assisted_session_gains_suggestions_after_retrain() {
    let h = harness(6, 3);
    let id = create(&h, json!({})).await;
    for i in 0..4 {
        let (status, task) = call_json(&h.app, Method::GET, &format!("/sessions/{id}/next"), None).await;
        assert_eq!(status, StatusCode::OK);
        let n = task["tokens"].as_array().unwrap().len();
        if i < 3 {
            assert!(task.get("suggestions").is_none(), "cold start must not suggest");
        } else {
            assert_eq!(task["suggestions"].as_array().unwrap().len(), n);
        }
        let sub = json!({ "token": task["token"], "labels": vec![1; n], "reviewer": "ann" });
        let (status, resp) = call_json(&h.app, Method::POST, &format!("/sessions/{id}/submit"), Some(sub)).await;
        assert_eq!(status, StatusCode::OK);
        let want = if i == 2 { "retrain_started" } else { "committed" };
        assert_eq!(resp["outcome"], want);
    }
    let (_, st) = call_json(&h.app, Method::GET, &format!("/sessions/{id}/status"), None).await;
    assert_eq!(st["labeled"], 4);
    assert_eq!(st["retrains_completed"], 1);
    assert_eq!(st["until_next_retrain"], 2);
}

#[tokio::test]
async fn blind_session_never_sends_probabilities() {
    let h = harness(5, 2);
    let id = create(&h, json!({ "mode": "blind" })).await;
    loop {
        let (status, bytes) = call(&h.app, Method::GET, &format!("/sessions/{id}/next"), None).await;
        assert_eq!(status, StatusCode::OK);
        let text = String::from_utf8(bytes).unwrap();
        assert!(!text.contains("suggestions"), "{text}");
        let task: Value = serde_json::from_str(&text).unwrap();
        if task.get("status").is_some() {
            assert_eq!(task["status"], "complete");
            break;
        }
        let n = task["tokens"].as_array().unwrap().len();
        let sub = json!({ "token": task["token"], "labels": vec![0; n], "reviewer": "r" });
        let (_, bytes) = call(&h.app, Method::POST, &format!("/sessions/{id}/submit"), Some(sub)).await;
        assert!(!String::from_utf8(bytes).unwrap().contains("suggestions"));
    }
    let (_, st) = call_json(&h.app, Method::GET, &format!("/sessions/{id}/status"), None).await;
    assert_eq!(st["complete"], true);
    assert_eq!(st["has_model"], true);
}

#[tokio::test]
async fn errors_are_structured() {
    let h = harness(3, 50);
    let (status, v) = call_json(&h.app, Method::GET, "/sessions/nope/next", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["error"], "unknown_session");
    assert!(v["message"].is_string());

    let (status, v) = call_json(&h.app, Method::POST, "/sessions", Some(json!({ "dataset": "/no/such.jsonl" }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "invalid_dataset");

    let (status, v) = call_json(&h.app, Method::POST, "/sessions", Some(json!({ "path": 1 }))).await;
    assert!(status.is_client_error());
    assert_eq!(v["error"], "bad_request");

    let id = create(&h, json!({})).await;
    let (status, v) = call_json(&h.app, Method::GET, &format!("/sessions/{id}/export"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(v["error"], "nothing_to_export");

    let (_, task) = call_json(&h.app, Method::GET, &format!("/sessions/{id}/next"), None).await;
    let n = task["tokens"].as_array().unwrap().len();
    let uri = format!("/sessions/{id}/submit");
    let bad = json!({ "token": task["token"], "labels": vec![0; n + 1], "reviewer": "r" });
    let (status, v) = call_json(&h.app, Method::POST, &uri, Some(bad)).await;
    assert_eq!((status, v["error"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("label_length")));
    let good = json!({ "token": task["token"], "labels": vec![0; n], "reviewer": "r" });
    assert_eq!(call(&h.app, Method::POST, &uri, Some(good.clone())).await.0, StatusCode::OK);
    let (status, v) = call_json(&h.app, Method::POST, &uri, Some(good)).await;
    assert_eq!((status, v["error"].as_str()), (StatusCode::CONFLICT, Some("token_replay")));
}

#[tokio::test]
async fn consensus_over_http_and_export_round_trip() {
    let h = harness(2, 50);
    let id = create(&h, json!({ "reviewers_required": 2 })).await;
    let next = format!("/sessions/{id}/next");
    let submit = format!("/sessions/{id}/submit");
    let mut committed = 0;
    while committed < 2 {
        let (_, a) = call_json(&h.app, Method::GET, &next, None).await;
        let (_, b) = call_json(&h.app, Method::GET, &next, None).await;
        assert_eq!(a["sentence_id"], b["sentence_id"]);
        let n = a["tokens"].as_array().unwrap().len();
        let (_, r) = call_json(&h.app, Method::POST, &submit, Some(json!({ "token": a["token"], "labels": vec![1; n], "reviewer": "x" }))).await;
        assert_eq!(r["outcome"], "awaiting_consensus");
        let (_, r) = call_json(&h.app, Method::POST, &submit, Some(json!({ "token": b["token"], "labels": vec![1; n], "reviewer": "y" }))).await;
        assert_eq!(r["outcome"], "committed");
        committed += 1;
    }
    let (status, body) = call(&h.app, Method::GET, &format!("/sessions/{id}/export"), None).await;
    assert_eq!(status, StatusCode::OK);
    let back = parse_dataset(body.as_slice(), Partition::Trainval).unwrap();
    assert_eq!(back.len(), 2);
    assert!(back.sentences.iter().all(|s| s.labels().iter().all(|&b| b == 1)));
}
