use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use imgdial_core::vision::DatasetConfig;
use imgdial_service::{router, AppState, ServiceConfig, World};
use serde_json::{json, Value};
use tower::ServiceExt;

fn app_with(config: ServiceConfig) -> axum::Router {
    router(AppState::new(Arc::new(World::standard(DatasetConfig::default().seed)), config))
}

fn app() -> axum::Router {
    app_with(ServiceConfig::default())
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
    (status, value)
}

#[tokio::test]
async fn create_rule_session() {
    let app = app();
    let (status, body) = call(&app, "POST", "/sessions", Some(json!({"policy": "rule", "seed": 3}))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["goal"]["intent"], "adjust");
    assert_eq!(body["turn"], 0);
    assert_eq!(body["transcript"].as_array().unwrap().len(), 0);
    assert!(body["image"].as_str().unwrap().starts_with("iVBOR"));
}

#[tokio::test]
async fn event_round_trip_and_snapshot() {
    let app = app();
    let (_, created) = call(&app, "POST", "/sessions", Some(json!({"policy": "rule", "seed": 3}))).await;
    let id = created["id"].as_str().unwrap().to_string();
    let g = &created["goal"];
    let value = g["adjust_value"].as_i64().unwrap();
    let verb = if value < 0 { "decrease" } else { "increase" };
    let text = format!("{verb} the {}'s {} by {}", g["object"].as_str().unwrap(), g["attribute"].as_str().unwrap(), value.abs());
    let (status, turn) =
        call(&app, "POST", &format!("/sessions/{id}/event"), Some(json!({"type": "utterance", "text": text}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(turn["turn"], 1);
    assert!(turn["prompt"].is_string());
    assert!(turn["action"]["act"].is_string());

    let (status, snap) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(snap["transcript"].as_array().unwrap().len(), 2);
    let (_, again) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(snap, again);
}

#[tokio::test]
async fn bad_inputs() {
    let app = app();
    let (_, created) = call(&app, "POST", "/sessions", Some(json!({"policy": "rule"}))).await;
    let id = created["id"].as_str().unwrap();
    let (status, body) = call(&app, "POST", &format!("/sessions/{id}/event"), Some(json!({"type": "click", "x": -1, "y": 5}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("outside"));

    let (status, _) = call(&app, "GET", "/sessions/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "POST", "/sessions", Some(json!({"policy": "dqn"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, body) =
        call(&app, "POST", "/sessions", Some(json!({"policy": "dqn", "checkpoint": "/definitely/missing.bin"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].is_string());
}

#[tokio::test]
async fn finished_session_rejects_events_then_delete() {
    let app = app();
    let (_, created) = call(&app, "POST", "/sessions", Some(json!({"policy": "rule", "seed": 8}))).await;
    let id = created["id"].as_str().unwrap();
    let uri = format!("/sessions/{id}/event");
    for _ in 0..10 {
        let (status, _) = call(&app, "POST", &uri, Some(json!({"type": "utterance", "text": "hmm"}))).await;
        assert_eq!(status, StatusCode::OK);
    }
    let (status, _) = call(&app, "POST", &uri, Some(json!({"type": "utterance", "text": "hmm"}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (_, snap) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(snap["done"], true);
    assert_eq!(snap["turn"], 10);

    let (status, _) = call(&app, "DELETE", &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (status, _) = call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn serves_static_ui() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<html>ui</html>").unwrap();
    let app = app_with(ServiceConfig { static_dir: Some(dir.path().to_path_buf()), ..ServiceConfig::default() });
    let resp = app.oneshot(Request::builder().uri("/index.html").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(&bytes[..], b"<html>ui</html>");
}
