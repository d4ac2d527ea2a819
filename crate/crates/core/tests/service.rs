mod common;

use std::time::Duration;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use common::tiny_model;
use http_body_util::BodyExt;
use nerfedit::data::ServiceConfig;
use nerfedit::invert::InversionConfig;
use nerfedit::nerf::CameraPose;
use nerfedit::service::{router, ServiceState, SharedState, DEFAULT_CHECKPOINT};
use serde_json::{json, Value};
use tower::ServiceExt;

fn quick_inversion() -> InversionConfig {
    InversionConfig { rounds: 1, pose_steps: 1, shape_steps: 1, appearance_steps: 1, grid_azimuths: 2, grid_elevations: 1, ..InversionConfig::default() }
}

fn state_with(config: ServiceConfig) -> SharedState {
    ServiceState::new(vec![(DEFAULT_CHECKPOINT.to_string(), tiny_model(1))], quick_inversion(), config).unwrap()
}

fn app() -> Router {
    router(state_with(ServiceConfig::default()))
}

async fn send(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>, Option<String>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let ctype = resp.headers().get(header::CONTENT_TYPE).map(|v| v.to_str().unwrap().to_string());
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes, ctype)
}

async fn json_call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b, _) = send(app, method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn new_session(app: &Router, seed: u64) -> String {
    let (s, v) = json_call(app, "POST", "/sessions", Some(json!({"init": {"kind": "sampled", "seed": seed}}))).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    v["id"].as_str().unwrap().to_string()
}

async fn frame(app: &Router, id: &str, res: usize) -> Vec<u8> {
    let (s, b, ctype) = send(app, "GET", &format!("/sessions/{id}/render?res={res}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ctype.as_deref(), Some("image/png"));
    b
}

#[tokio::test]
async fn health_lists_checkpoints() {
    let app = app();
    let (s, v) = json_call(&app, "GET", "/healthz", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["checkpoints"], json!([DEFAULT_CHECKPOINT]));
}

#[tokio::test]
async fn sessions_are_created_fetched_and_missing_ones_are_404() {
    let app = app();
    let id = new_session(&app, 3).await;
    let (s, v) = json_call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["id"], json!(id));
    assert_eq!(v["codes"], v["initial_codes"]);
    assert_eq!(json_call(&app, "GET", "/sessions/s999999", None).await.0, StatusCode::NOT_FOUND);
    let (s, _) = json_call(&app, "POST", "/sessions", Some(json!({"checkpoint": "nope"}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = json_call(&app, "POST", "/sessions", Some(json!({"init": {"kind": "provided", "codes": {"shape": [0.0], "appearance": [0.0]}}}))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn zero_scale_edit_leaves_the_frame_byte_identical() {
    let app = app();
    let id = new_session(&app, 4).await;
    let before = frame(&app, &id, 16).await;
    let (s, v) = json_call(&app, "POST", &format!("/sessions/{id}/edit"), Some(json!({"prompt": "a blue chair", "channel": "both", "scale": 0.0, "resolution": 16}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(B64.decode(v["image_base64"].as_str().unwrap()).unwrap(), before);
    assert_eq!(frame(&app, &id, 16).await, before);
    assert_eq!(v["session"]["history"].as_array().unwrap().len(), 1);
}

#[tokio::test]
async fn text_and_exemplar_edits_change_codes_and_replay() {
    let app = app();
    let id = new_session(&app, 5).await;
    let (_, start) = json_call(&app, "GET", &format!("/sessions/{id}"), None).await;
    let (s, v) = json_call(&app, "POST", &format!("/sessions/{id}/edit"), Some(json!({"prompt": "a red chair", "channel": "appearance", "resolution": 8}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["codes"]["shape"], start["codes"]["shape"]);
    assert_ne!(v["codes"]["appearance"], start["codes"]["appearance"]);

    let exemplar = B64.encode(nerfedit::raster::Image::filled(8, 8, [0.1, 0.2, 0.9]).encode_png().unwrap());
    let (s, v) = json_call(&app, "POST", &format!("/sessions/{id}/edit"), Some(json!({"exemplar": exemplar, "channel": "shape", "scale": 0.5, "resolution": 8}))).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let history = v["session"]["history"].as_array().unwrap();
    assert_eq!(history.len(), 2);
    assert!(history[1]["target"]["exemplar"]["sha256"].is_string());
    let session: nerfedit::service::Session = serde_json::from_value(v["session"].clone()).unwrap();
    assert_eq!(session.replay().unwrap(), session.codes);
}

#[tokio::test]
async fn malformed_edits_are_rejected() {
    let app = app();
    let id = new_session(&app, 6).await;
    let uri = format!("/sessions/{id}/edit");
    let both = json!({"prompt": "a red chair", "exemplar": "AAAA", "channel": "both"});
    assert_eq!(json_call(&app, "POST", &uri, Some(both)).await.0, StatusCode::BAD_REQUEST);
    let neither = json!({"channel": "both"});
    assert_eq!(json_call(&app, "POST", &uri, Some(neither)).await.0, StatusCode::BAD_REQUEST);
    let bad_channel = json!({"prompt": "a red chair", "channel": "colour"});
    assert_eq!(json_call(&app, "POST", &uri, Some(bad_channel)).await.0, StatusCode::BAD_REQUEST);
    let bad_image = json!({"exemplar": "bm90IGFuIGltYWdl", "channel": "both"});
    assert_eq!(json_call(&app, "POST", &uri, Some(bad_image)).await.0, StatusCode::BAD_REQUEST);
    let huge = json!({"prompt": "a red chair", "channel": "both", "resolution": 100000});
    assert_eq!(json_call(&app, "POST", &uri, Some(huge)).await.0, StatusCode::BAD_REQUEST);
    let (s, b, _) = send(&app, "POST", &uri, None).await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{}", String::from_utf8_lossy(&b));
}

#[tokio::test]
async fn render_supports_formats_and_rejects_bad_poses() {
    let app = app();
    let id = new_session(&app, 7).await;
    let png = frame(&app, &id, 8).await;
    let (s, v) = json_call(&app, "GET", &format!("/sessions/{id}/render?res=8&format=base64"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(B64.decode(v["image_base64"].as_str().unwrap()).unwrap(), png);
    let rotated = send(&app, "GET", &format!("/sessions/{id}/render?res=8&az=2.0&el=0.3"), None).await;
    assert_eq!(rotated.0, StatusCode::OK);
    assert_ne!(rotated.1, png);
    assert_eq!(send(&app, "GET", &format!("/sessions/{id}/render?el=-0.8"), None).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(send(&app, "GET", &format!("/sessions/{id}/render?format=gif"), None).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(send(&app, "GET", &format!("/sessions/{id}/render?res=0"), None).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn interpolation_endpoints_reproduce_the_source_frames() {
    let app = app();
    let a = new_session(&app, 8).await;
    let b = new_session(&app, 9).await;
    let fa = frame(&app, &a, 8).await;
    let (_, sb) = json_call(&app, "GET", &format!("/sessions/{b}"), None).await;
    let uri = format!("/sessions/{a}/interpolate");
    let (s, v0) = json_call(&app, "POST", &uri, Some(json!({"other": b, "ratio": 0.0, "resolution": 8}))).await;
    assert_eq!(s, StatusCode::OK, "{v0}");
    assert_eq!(B64.decode(v0["image_base64"].as_str().unwrap()).unwrap(), fa);
    let (_, v1) = json_call(&app, "POST", &uri, Some(json!({"other": b, "ratio": 1.0, "resolution": 8}))).await;
    assert_eq!(v1["codes"], sb["codes"]);
    assert_eq!(v1["session"]["history"].as_array().unwrap().len(), 0);

    let (_, committed) = json_call(&app, "POST", &uri, Some(json!({"other": b, "ratio": 0.25, "commit": true, "resolution": 8}))).await;
    assert_eq!(committed["session"]["codes"], committed["codes"]);
    assert_eq!(committed["session"]["history"][0]["kind"], json!("interpolate"));
    assert_eq!(json_call(&app, "POST", &uri, Some(json!({"other": b, "ratio": 1.5}))).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(json_call(&app, "POST", &uri, Some(json!({"other": "s424242", "ratio": 0.5}))).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_edits_on_one_session_are_all_recorded() {
    let app = app();
    let id = new_session(&app, 10).await;
    let mut handles = Vec::new();
    for i in 0..6 {
        let app = app.clone();
        let uri = format!("/sessions/{id}/edit");
        handles.push(tokio::spawn(async move {
            json_call(&app, "POST", &uri, Some(json!({"prompt": "a green chair", "channel": "appearance", "scale": 0.1 * i as f64, "resolution": 4}))).await.0
        }));
    }
    for h in handles {
        assert_eq!(h.await.unwrap(), StatusCode::OK);
    }
    let (_, v) = json_call(&app, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(v["history"].as_array().unwrap().len(), 6);
    let session: nerfedit::service::Session = serde_json::from_value(v).unwrap();
    assert_eq!(session.replay().unwrap(), session.codes);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn inversion_jobs_run_in_the_background_and_open_a_session() {
    let app = app();
    let model = tiny_model(1);
    let target = model.render(&common::sample_codes(6, 2), &CameraPose::new(0.4, 0.5, 1.5).unwrap(), 8).unwrap();
    let body = json!({"image_base64": B64.encode(target.encode_png().unwrap())});
    let (s, v) = json_call(&app, "POST", "/inversions", Some(body)).await;
    assert_eq!(s, StatusCode::ACCEPTED, "{v}");
    let job = v["job"].as_str().unwrap().to_string();
    assert_eq!(v["total_steps"], json!(3));
    let mut status = v;
    for _ in 0..200 {
        status = json_call(&app, "GET", &format!("/inversions/{job}"), None).await.1;
        if status["status"] == json!("succeeded") || status["status"] == json!("failed") {
            break;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    assert_eq!(status["status"], json!("succeeded"), "{status}");
    assert_eq!(status["iteration"], json!(3));
    assert!(status["psnr"].as_f64().unwrap().is_finite());
    let session = status["session"].as_str().unwrap();
    assert_eq!(json_call(&app, "GET", &format!("/sessions/{session}"), None).await.0, StatusCode::OK);
}

#[tokio::test]
async fn corrupt_uploads_fail_immediately() {
    let app = app();
    let (s, v) = json_call(&app, "POST", "/inversions", Some(json!({"image_base64": "bm90IGFuIGltYWdl"}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["status"], json!("failed"));
    let job = v["job"].as_str().unwrap();
    let (s, polled) = json_call(&app, "GET", &format!("/inversions/{job}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(polled["status"], json!("failed"));
    let (s, b, _) = send(&app, "POST", "/inversions", None).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{}", String::from_utf8_lossy(&b));
    assert_eq!(json_call(&app, "GET", "/inversions/j999999", None).await.0, StatusCode::NOT_FOUND);
    let png = nerfedit::raster::Image::filled(8, 8, [1.0; 3]).encode_png().unwrap();
    let body = json!({"image_base64": B64.encode(png), "checkpoint": "nope"});
    assert_eq!(json_call(&app, "POST", "/inversions", Some(body)).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn sessions_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let config = ServiceConfig { sessions_dir: Some(dir.path().to_string_lossy().into_owned()), ..ServiceConfig::default() };
    let first = router(state_with(config.clone()));
    let id = new_session(&first, 11).await;
    let (_, edited) = json_call(&first, "POST", &format!("/sessions/{id}/edit"), Some(json!({"prompt": "a red chair", "channel": "both", "resolution": 4}))).await;

    let second = router(state_with(config));
    let (s, v) = json_call(&second, "GET", &format!("/sessions/{id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["codes"], edited["codes"]);
    let fresh = new_session(&second, 12).await;
    assert_ne!(fresh, id);
}

#[tokio::test]
async fn edits_need_trained_mappers() {
    let mut model = tiny_model(1);
    model.checkpoint.mappers = None;
    let state = ServiceState::new(vec![(DEFAULT_CHECKPOINT.to_string(), model)], quick_inversion(), ServiceConfig::default()).unwrap();
    let app = router(state);
    let id = new_session(&app, 1).await;
    let (s, _) = json_call(&app, "POST", &format!("/sessions/{id}/edit"), Some(json!({"prompt": "a red chair", "channel": "both"}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}
