mod common;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use common::*;
use http_body_util::BodyExt;
use neurop::data::{encode_png, load_image_bytes};
use neurop::pipeline::downsample_long_edge;
use neurop_cli::server::{router, AppState, SessionView, Settings};
use serde_json::Value;
use tower::ServiceExt;

const BOUNDARY: &str = "XBOUNDARYX";

fn app(settings: Settings) -> Router {
    router(AppState::new(random_model(21), settings))
}

fn multipart(png: &[u8]) -> Vec<u8> {
    let mut body = format!(
        "--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"image\"; filename=\"a.png\"\r\nContent-Type: image/png\r\n\r\n"
    )
    .into_bytes();
    body.extend_from_slice(png);
    body.extend_from_slice(format!("\r\n--{BOUNDARY}--\r\n").as_bytes());
    body
}

async fn send(
    app: &Router,
    method: Method,
    uri: &str,
    body: Vec<u8>,
    content_type: &str,
) -> (StatusCode, Vec<u8>) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", content_type)
        .body(Body::from(body))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (
        status,
        resp.into_body()
            .collect()
            .await
            .unwrap()
            .to_bytes()
            .to_vec(),
    )
}

async fn open(app: &Router, png: &[u8], query: &str) -> SessionView {
    let ct = format!("multipart/form-data; boundary={BOUNDARY}");
    let (status, body) = send(
        app,
        Method::POST,
        &format!("/sessions{query}"),
        multipart(png),
        &ct,
    )
    .await;
    assert_eq!(
        status,
        StatusCode::CREATED,
        "{}",
        String::from_utf8_lossy(&body)
    );
    serde_json::from_slice(&body).unwrap()
}

async fn patch(app: &Router, id: &str, body: &str) -> (StatusCode, Vec<u8>) {
    send(
        app,
        Method::PATCH,
        &format!("/sessions/{id}/strengths"),
        body.into(),
        "application/json",
    )
    .await
}

async fn patch_ok(app: &Router, id: &str, body: &str) -> SessionView {
    let (status, bytes) = patch(app, id, body).await;
    assert_eq!(
        status,
        StatusCode::OK,
        "{}",
        String::from_utf8_lossy(&bytes)
    );
    serde_json::from_slice(&bytes).unwrap()
}

fn error_of(body: &[u8]) -> String {
    let v: Value = serde_json::from_slice(body).unwrap();
    v["error"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn session_lifecycle() {
    let app = app(Settings {
        preview_edge: 32,
        ..Settings::default()
    });
    let img = test_image(48, 80, 3);
    let png = encode_png(&img).unwrap();
    let model = random_model(21);

    let s = open(&app, &png, "?intermediates=true").await;
    let expected = model.retouch(&img).unwrap().strengths;
    assert_eq!(s.predicted_strengths, expected);
    assert_eq!(s.strengths, expected);
    assert_eq!(
        (s.width, s.height, s.preview_width, s.preview_height),
        (80, 48, 32, 19)
    );
    assert_eq!(s.intermediates.as_ref().unwrap().len(), 3);
    assert_eq!(s.counters.recomputed_ops, 3);
    let preview = load_image_bytes(&BASE64.decode(&s.preview).unwrap()).unwrap();
    assert_eq!(preview.shape(), &[3, 19, 32]);

    let (status, body) = send(
        &app,
        Method::GET,
        &format!("/sessions/{}", s.id),
        vec![],
        "text/plain",
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let got: SessionView = serde_json::from_slice(&body).unwrap();
    assert_eq!(got.preview, s.preview);
    assert!(got.intermediates.is_none());

    // Unchanged strengths: identical preview, nothing recomputed.
    let same = patch_ok(&app, &s.id, &serde_json::to_string(&s.strengths).unwrap()).await;
    assert_eq!(same.preview, s.preview);
    assert_eq!(same.counters.recomputed_ops, 3);
    assert_eq!(same.counters.cache_hits, 3);

    // Only the last operator changes: one recomputation, two cache hits.
    let mut v = s.strengths.clone();
    v[2] = 0.5;
    let last = patch_ok(
        &app,
        &s.id,
        &serde_json::json!({ "strengths": v }).to_string(),
    )
    .await;
    assert_eq!(last.counters.recomputed_ops, 4);
    assert_eq!(last.counters.cache_hits, 5);
    assert_ne!(last.preview, s.preview);

    // Changing the first reruns all three.
    let first = patch_ok(&app, &s.id, "[0.25, -3.5, 9]").await;
    assert_eq!(first.strengths, vec![0.25, -2.0, 2.0]);
    assert_eq!(first.counters.recomputed_ops, 7);
    let small = downsample_long_edge(&img, 32).unwrap();
    let replay = model
        .retouch_with_strengths(&small, &[0.25, -2.0, 2.0])
        .unwrap();
    assert_eq!(
        BASE64.decode(&first.preview).unwrap(),
        encode_png(&replay).unwrap()
    );

    let (status, full) = send(
        &app,
        Method::GET,
        &format!("/sessions/{}/full", s.id),
        vec![],
        "text/plain",
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let expected = model
        .retouch_with_strengths(&img, &[0.25, -2.0, 2.0])
        .unwrap();
    assert_eq!(full, encode_png(&expected).unwrap());

    let (status, _) = send(
        &app,
        Method::DELETE,
        &format!("/sessions/{}", s.id),
        vec![],
        "text/plain",
    )
    .await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (status, body) = send(
        &app,
        Method::GET,
        &format!("/sessions/{}", s.id),
        vec![],
        "text/plain",
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(error_of(&body).contains(&s.id));
    let (status, _) = send(
        &app,
        Method::DELETE,
        &format!("/sessions/{}", s.id),
        vec![],
        "text/plain",
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn malformed_requests() {
    let app = app(Settings::default());
    let png = encode_png(&test_image(16, 16, 0)).unwrap();
    let s = open(&app, &png, "").await;

    let (status, body) = patch(&app, &s.id, "[0.1, 0.2]").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error_of(&body), "strengths: expected 3 values, got 2");
    let (status, body) = patch(&app, &s.id, "[0.1, \"a\", 0.2]").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(error_of(&body).starts_with("strengths[1]"));
    let (status, body) = patch(&app, &s.id, "{\"values\": [1, 2, 3]}").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(error_of(&body), "strengths: missing");
    let (status, _) = patch(&app, &s.id, "not json").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    for id in ["00000000-0000-0000-0000-000000000000", "nonsense"] {
        let (status, _) = patch(&app, id, "[0, 0, 0]").await;
        assert_eq!(status, StatusCode::NOT_FOUND);
        let (status, _) = send(
            &app,
            Method::GET,
            &format!("/sessions/{id}/full"),
            vec![],
            "text/plain",
        )
        .await;
        assert_eq!(status, StatusCode::NOT_FOUND);
    }

    let ct = format!("multipart/form-data; boundary={BOUNDARY}");
    let (status, body) = send(
        &app,
        Method::POST,
        "/sessions",
        multipart(b"not an image"),
        &ct,
    )
    .await;
    assert_eq!(
        status,
        StatusCode::BAD_REQUEST,
        "{}",
        String::from_utf8_lossy(&body)
    );
}

#[tokio::test]
async fn oversized_upload_is_rejected() {
    let app = app(Settings {
        max_upload_bytes: 4096,
        ..Settings::default()
    });
    let big = encode_png(&test_image(200, 200, 1)).unwrap();
    assert!(big.len() > 4096);
    let ct = format!("multipart/form-data; boundary={BOUNDARY}");
    let (status, _) = send(&app, Method::POST, "/sessions", multipart(&big), &ct).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
    let small = encode_png(&test_image(16, 16, 1)).unwrap();
    open(&app, &small, "").await;
    let tiny = encode_png(&test_image(2, 2, 1)).unwrap();
    let (status, body) = send(&app, Method::POST, "/sessions", multipart(&tiny), &ct).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(error_of(&body).contains("does not fit"));
}

#[tokio::test]
async fn sessions_are_independent_under_concurrency() {
    let app = app(Settings {
        preview_edge: 24,
        ..Settings::default()
    });
    let mut handles = Vec::new();
    for i in 0..6 {
        let app = app.clone();
        handles.push(tokio::spawn(async move {
            let img = test_image(30, 30 + i, i);
            let s = open(&app, &encode_png(&img).unwrap(), "").await;
            let v = [0.1 * i as f32, -0.2, 0.3];
            let r = patch_ok(&app, &s.id, &serde_json::to_string(&v).unwrap()).await;
            let small = downsample_long_edge(&img, 24).unwrap();
            let expected = random_model(21).retouch_with_strengths(&small, &v).unwrap();
            assert_eq!(
                BASE64.decode(&r.preview).unwrap(),
                encode_png(&expected).unwrap()
            );
            s.id
        }));
    }
    let mut ids = Vec::new();
    for h in handles {
        ids.push(h.await.unwrap());
    }
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 6);
}

#[tokio::test]
async fn full_render_matches_cli_infer() {
    let dir = tempfile::tempdir().unwrap();
    let model = random_model(21);
    let weights = dir.path().join("w.bin");
    write_weights(&weights, &model);
    let img = test_image(37, 52, 4);
    let png = encode_png(&img).unwrap();
    let input = dir.path().join("in.png");
    std::fs::write(&input, &png).unwrap();

    let app = app(Settings::default());
    let s = open(&app, &png, "").await;
    patch_ok(&app, &s.id, "[0.2, -0.1, 0.4]").await;
    let (_, full) = send(
        &app,
        Method::GET,
        &format!("/sessions/{}/full", s.id),
        vec![],
        "text/plain",
    )
    .await;

    let out = dir.path().join("out.png");
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_neurop"))
        .args([
            "--weights",
            weights.to_str().unwrap(),
            "infer",
            input.to_str().unwrap(),
        ])
        .args([
            "--out",
            out.to_str().unwrap(),
            "--strengths",
            "0.2,-0.1,0.4",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(std::fs::read(&out).unwrap(), full);
}
