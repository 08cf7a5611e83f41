//! HTTP API for interactive slider editing.
//!
//! The model is loaded once and shared read-only. Each session sits behind
//! its own mutex, so edits to one session apply in order while different
//! sessions render in parallel on the blocking pool.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use neurop::data::{encode_png, load_image_bytes};
use neurop::numerics::Tensor;
use neurop::pipeline::RetouchModel;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use uuid::Uuid;

use crate::session::{CounterSnapshot, Session, DEFAULT_PREVIEW_EDGE};

#[derive(Clone, Copy, Debug)]
pub struct Settings {
    pub preview_edge: usize,
    pub max_upload_bytes: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            preview_edge: DEFAULT_PREVIEW_EDGE,
            max_upload_bytes: 64 * 1024 * 1024,
        }
    }
}

type SessionMap = RwLock<HashMap<Uuid, Arc<Mutex<Session>>>>;

#[derive(Clone)]
pub struct AppState {
    model: Arc<RetouchModel<f32>>,
    sessions: Arc<SessionMap>,
    settings: Settings,
}

impl AppState {
    pub fn new(model: RetouchModel<f32>, settings: Settings) -> Self {
        AppState {
            model: Arc::new(model),
            sessions: Arc::default(),
            settings,
        }
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        let id = Uuid::parse_str(id).map_err(|_| ApiError::not_found(id))?;
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(&id.to_string()))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("no session {id}"))
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(serde_json::json!({ "error": self.message })),
        )
            .into_response()
    }
}

#[derive(Debug, Default, Deserialize)]
pub struct ViewQuery {
    /// Include the per-operator preview strip.
    #[serde(default)]
    pub intermediates: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub strengths: Vec<f32>,
    pub predicted_strengths: Vec<f32>,
    pub width: usize,
    pub height: usize,
    pub preview_width: usize,
    pub preview_height: usize,
    /// Base64 PNG of the clamped preview.
    pub preview: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intermediates: Option<Vec<String>>,
    pub counters: CounterSnapshot,
}

fn png_base64(img: &Tensor<f32>) -> Result<String, ApiError> {
    Ok(BASE64.encode(encode_png(img).map_err(ApiError::internal)?))
}

fn view(id: Uuid, s: &Session, intermediates: bool) -> Result<SessionView, ApiError> {
    let shape = s.original().shape();
    let (ph, pw) = s.preview_dims();
    let intermediates = if intermediates {
        Some(
            s.intermediate_previews()
                .iter()
                .map(png_base64)
                .collect::<Result<_, _>>()?,
        )
    } else {
        None
    };
    Ok(SessionView {
        id: id.to_string(),
        strengths: s.strengths().to_vec(),
        predicted_strengths: s.predicted().to_vec(),
        width: shape[2],
        height: shape[1],
        preview_width: pw,
        preview_height: ph,
        preview: png_base64(&s.preview())?,
        intermediates,
        counters: s.counters.snapshot(),
    })
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(ApiError::internal)?
}

async fn create_session(
    State(app): State<AppState>,
    Query(q): Query<ViewQuery>,
    mut multipart: Multipart,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let mut upload = None;
    while let Some(field) = multipart
        .next_field()
        .await
        .map_err(|e| ApiError::new(e.status(), e.body_text()))?
    {
        let is_image = field.name() == Some("image") || field.file_name().is_some();
        let bytes = field
            .bytes()
            .await
            .map_err(|e| ApiError::new(e.status(), e.body_text()))?;
        if is_image && upload.is_none() {
            upload = Some(bytes);
        }
    }
    let bytes =
        upload.ok_or_else(|| ApiError::bad_request("multipart field \"image\" is missing"))?;
    let session = blocking(move || {
        let img = load_image_bytes(&bytes).map_err(|e| ApiError::bad_request(e.to_string()))?;
        let id = Uuid::new_v4();
        let s = Session::open(&app.model, img, app.settings.preview_edge).map_err(|e| match e {
            // e.g. an image too small for the predictor's convolutions
            neurop::Error::InvalidArgument(_) | neurop::Error::ShapeMismatch { .. } => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string())
            }
            other => ApiError::internal(other),
        })?;
        let v = view(id, &s, q.intermediates)?;
        app.sessions
            .write()
            .expect("session map poisoned")
            .insert(id, Arc::new(Mutex::new(s)));
        Ok(v)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(session)))
}

async fn get_session(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ViewQuery>,
) -> Result<Json<SessionView>, ApiError> {
    let s = app.session(&id)?;
    let uuid = Uuid::parse_str(&id).expect("checked by lookup");
    let v =
        blocking(move || view(uuid, &s.lock().expect("session poisoned"), q.intermediates)).await?;
    Ok(Json(v))
}

/// Accepts `[v1, …, vK]` or `{"strengths": [v1, …, vK]}`.
pub fn parse_strengths(body: &[u8], k: usize) -> Result<Vec<f32>, String> {
    let value: Value =
        serde_json::from_slice(body).map_err(|e| format!("body is not JSON: {e}"))?;
    let (arr, field) = match &value {
        Value::Array(a) => (a, "strengths"),
        Value::Object(o) => match o.get("strengths") {
            Some(Value::Array(a)) => (a, "strengths"),
            Some(_) => return Err("strengths: expected an array of numbers".into()),
            None => return Err("strengths: missing".into()),
        },
        _ => return Err("strengths: expected an array of numbers".into()),
    };
    if arr.len() != k {
        return Err(format!("{field}: expected {k} values, got {}", arr.len()));
    }
    arr.iter()
        .enumerate()
        .map(|(i, v)| match v.as_f64() {
            Some(x) if x.is_finite() => Ok(x as f32),
            _ => Err(format!("{field}[{i}]: expected a finite number, got {v}")),
        })
        .collect()
}

async fn patch_strengths(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ViewQuery>,
    body: Bytes,
) -> Result<Json<SessionView>, ApiError> {
    let s = app.session(&id)?;
    let uuid = Uuid::parse_str(&id).expect("checked by lookup");
    let values = parse_strengths(&body, app.model.num_ops()).map_err(ApiError::bad_request)?;
    let v = blocking(move || {
        let mut s = s.lock().expect("session poisoned");
        s.set_strengths(&app.model, &values)
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        view(uuid, &s, q.intermediates)
    })
    .await?;
    Ok(Json(v))
}

async fn full_render(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let s = app.session(&id)?;
    let png = blocking(move || {
        let s = s.lock().expect("session poisoned");
        let out = s.render_full(&app.model).map_err(ApiError::internal)?;
        encode_png(&out).map_err(ApiError::internal)
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn delete_session(
    State(app): State<AppState>,
    Path(id): Path<String>,
) -> Result<StatusCode, ApiError> {
    let uuid = Uuid::parse_str(&id).map_err(|_| ApiError::not_found(&id))?;
    match app
        .sessions
        .write()
        .expect("session map poisoned")
        .remove(&uuid)
    {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ApiError::not_found(&id)),
    }
}

pub fn router(state: AppState) -> Router {
    let limit = state.settings.max_upload_bytes;
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/strengths", patch(patch_strengths))
        .route("/sessions/{id}/full", get(full_render))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

pub async fn serve(
    model: RetouchModel<f32>,
    settings: Settings,
    addr: impl tokio::net::ToSocketAddrs,
) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(AppState::new(model, settings)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
