//! JSON-over-HTTP redressing service.
//!
//! * `POST /api/session` → `{session_id}`
//! * `POST /api/generate` `{image, segmap, caption, seed?, session_id?, attributes?}`
//!   → `{shape_map, image, seed, session_id, generation_id}`
//! * `POST /api/interpolate` `{generation_id_a, generation_id_b, mode, steps}` → `[png, ...]`
//! * `GET /api/history?session_id=` → generation summaries in creation order
//!
//! PNGs travel base64-encoded; `segmap` and `shape_map` are palette PNGs.

pub mod store;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use redress_core::checkpoint::Checkpoint;
use redress_core::pipeline::{interpolation_walk, Pipeline, PipelineOutput, Seeds, WalkMode};
use redress_core::pngio::{decode_labels, decode_rgb, encode_labels, encode_rgb};
use redress_core::training::Stage;
use redress_core::types::{argmax_labels, Attributes, PersonRecord};
use store::{Generation, SessionStore};

pub const MAX_BODY: usize = 8 * 1024 * 1024;
pub const MAX_CAPTION: usize = 200;
pub const MAX_STEPS: usize = 64;

#[derive(Clone)]
pub struct AppState {
    /// `None` when checkpoints failed to load; inference then answers 503.
    pub pipeline: Option<Arc<Pipeline>>,
    pub store: Arc<SessionStore>,
}

pub struct ServeOptions {
    pub port: u16,
    pub checkpoints: PathBuf,
    pub store: PathBuf,
}

/// Loads `shape.ckpt` and `image.ckpt` from `dir`.
pub fn load_pipeline(dir: &Path) -> redress_core::Result<Pipeline> {
    Pipeline::new(
        Checkpoint::load_stage(&dir.join("shape.ckpt"), Stage::Shape)?,
        Checkpoint::load_stage(&dir.join("image.ckpt"), Stage::Image)?,
    )
}

pub fn serve_blocking(opts: ServeOptions) -> anyhow::Result<()> {
    let pipeline = match load_pipeline(&opts.checkpoints) {
        Ok(p) => Some(Arc::new(p)),
        Err(e) => {
            log::error!("checkpoints not loaded ({e}); inference endpoints will answer 503");
            None
        }
    };
    let state = AppState {
        pipeline,
        store: Arc::new(SessionStore::open(&opts.store)?),
    };
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let addr = SocketAddr::from(([0, 0, 0, 0], opts.port));
        let listener = tokio::net::TcpListener::bind(addr).await?;
        log::info!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(state)).await?;
        Ok(())
    })
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/session", post(new_session))
        .route("/api/generate", post(generate))
        .route("/api/interpolate", post(interpolate))
        .route("/api/history", get(history))
        .layer(DefaultBodyLimit::max(MAX_BODY))
        .with_state(state)
}

/// Error response: status plus `{"error": message}`.
#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl ApiError {
    fn bad(msg: impl Into<String>) -> Self {
        ApiError(StatusCode::BAD_REQUEST, msg.into())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

fn internal(e: impl std::fmt::Display) -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

fn fresh_id(prefix: &str) -> String {
    format!("{prefix}{:016x}", rand::random::<u64>())
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    if body.len() > MAX_BODY {
        return Err(ApiError(StatusCode::PAYLOAD_TOO_LARGE, "payload exceeds 8 MiB".into()));
    }
    serde_json::from_slice(body).map_err(|e| ApiError::bad(format!("malformed request: {e}")))
}

fn pipeline(state: &AppState) -> Result<Arc<Pipeline>, ApiError> {
    state
        .pipeline
        .clone()
        .ok_or_else(|| ApiError(StatusCode::SERVICE_UNAVAILABLE, "checkpoints not loaded".into()))
}

async fn new_session(State(state): State<AppState>) -> Result<Json<serde_json::Value>, ApiError> {
    let id = fresh_id("s");
    state.store.create_session(&id, now_ms()).map_err(internal)?;
    Ok(Json(json!({ "session_id": id })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub image: String,
    pub segmap: String,
    pub caption: String,
    pub seed: Option<u64>,
    pub session_id: Option<String>,
    #[serde(default)]
    pub attributes: Attributes,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub shape_map: String,
    pub image: String,
    pub seed: u64,
    pub session_id: String,
    pub generation_id: String,
}

fn decode_b64(field: &str, s: &str) -> Result<Vec<u8>, ApiError> {
    B64.decode(s.trim()).map_err(|e| ApiError::bad(format!("`{field}` is not base64: {e}")))
}

fn source_record(image: &str, segmap: &str, caption: &str, attributes: Attributes) -> Result<PersonRecord, ApiError> {
    let img = decode_rgb(&decode_b64("image", image)?).map_err(|e| ApiError::bad(format!("`image`: {e}")))?;
    let map = decode_labels(&decode_b64("segmap", segmap)?, Path::new("segmap"))
        .map_err(|e| ApiError::bad(format!("`segmap`: {e}")))?;
    PersonRecord::new(img, map, caption, attributes).map_err(|e| ApiError::bad(e.to_string()))
}

fn encode_output(out: &PipelineOutput) -> Result<(String, String), ApiError> {
    let map = encode_labels(&argmax_labels(&out.shape_map)).map_err(internal)?;
    let img = encode_rgb(&out.image).map_err(internal)?;
    Ok((B64.encode(map), B64.encode(img)))
}

fn inputs_hash(image: &str, segmap: &str, attributes: &Attributes) -> String {
    let mut h = Sha256::new();
    h.update(image.trim().as_bytes());
    h.update([0u8]);
    h.update(segmap.trim().as_bytes());
    h.update(attributes.as_flags().map(|f| f as u8));
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

async fn generate(State(state): State<AppState>, body: Bytes) -> Result<Json<GenerateResponse>, ApiError> {
    let req: GenerateRequest = parse_body(&body)?;
    let chars = req.caption.chars().count();
    if chars == 0 || chars > MAX_CAPTION || req.caption.trim().is_empty() {
        return Err(ApiError::bad(format!("`caption` must be 1-{MAX_CAPTION} characters")));
    }
    let pipe = pipeline(&state)?;
    let session_id = match req.session_id.clone() {
        Some(id) if state.store.has_session(&id) => id,
        Some(id) => return Err(ApiError(StatusCode::NOT_FOUND, format!("unknown session `{id}`"))),
        None => {
            let id = fresh_id("s");
            state.store.create_session(&id, now_ms()).map_err(internal)?;
            id
        }
    };
    // drawn seeds stay within the integers JSON clients represent exactly
    let seed = req.seed.unwrap_or_else(|| rand::random::<u64>() >> 11);
    let source = source_record(&req.image, &req.segmap, &req.caption, req.attributes)?;
    let caption = req.caption.clone();
    let out = tokio::task::spawn_blocking(move || pipe.infer(&source, &caption, Seeds::from_seed(seed)))
        .await
        .map_err(internal)?
        .map_err(|e| ApiError::bad(e.to_string()))?;
    let (shape_map, image) = encode_output(&out)?;
    let generation_id = fresh_id("g");
    state
        .store
        .add(Generation {
            session_id: session_id.clone(),
            generation_id: generation_id.clone(),
            created: now_ms(),
            inputs_hash: inputs_hash(&req.image, &req.segmap, &req.attributes),
            caption: req.caption,
            seed,
            attributes: req.attributes,
            input_image: req.image,
            input_segmap: req.segmap,
            shape_map: shape_map.clone(),
            image: image.clone(),
        })
        .map_err(internal)?;
    Ok(Json(GenerateResponse {
        shape_map,
        image,
        seed,
        session_id,
        generation_id,
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpolateRequest {
    pub generation_id_a: String,
    pub generation_id_b: String,
    pub mode: WalkMode,
    pub steps: usize,
}

async fn interpolate(State(state): State<AppState>, body: Bytes) -> Result<Json<Vec<String>>, ApiError> {
    let req: InterpolateRequest = parse_body(&body)?;
    if !(1..=MAX_STEPS).contains(&req.steps) {
        return Err(ApiError::bad(format!("`steps` must be 1-{MAX_STEPS}")));
    }
    let pipe = pipeline(&state)?;
    let find = |id: &str| {
        state
            .store
            .get(id)
            .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown generation `{id}`")))
    };
    let (a, b) = (find(&req.generation_id_a)?, find(&req.generation_id_b)?);
    let ra = source_record(&a.input_image, &a.input_segmap, &a.caption, a.attributes)?;
    let rb = source_record(&b.input_image, &b.input_segmap, &b.caption, b.attributes)?;
    let frames = tokio::task::spawn_blocking(move || {
        let ia = pipe.inputs(&ra, &a.caption, Seeds::from_seed(a.seed))?;
        let ib = pipe.inputs(&rb, &b.caption, Seeds::from_seed(b.seed))?;
        interpolation_walk(&pipe, &ia, &ib, req.mode, req.steps)
    })
    .await
    .map_err(internal)?
    .map_err(|e| ApiError::bad(e.to_string()))?;
    frames
        .iter()
        .map(|f| encode_output(f).map(|(_, img)| img))
        .collect::<Result<_, _>>()
        .map(Json)
}

#[derive(Debug, Deserialize)]
pub struct HistoryQuery {
    pub session_id: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct HistoryEntry {
    pub generation_id: String,
    pub created: u64,
    pub caption: String,
    pub seed: u64,
    pub thumbnail: String,
    pub shape_map: String,
}

async fn history(
    State(state): State<AppState>,
    Query(q): Query<HistoryQuery>,
) -> Result<Json<Vec<HistoryEntry>>, ApiError> {
    let gens = state
        .store
        .history(&q.session_id)
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown session `{}`", q.session_id)))?;
    Ok(Json(
        gens.into_iter()
            .map(|g| HistoryEntry {
                generation_id: g.generation_id,
                created: g.created,
                caption: g.caption,
                seed: g.seed,
                thumbnail: g.image,
                shape_map: g.shape_map,
            })
            .collect(),
    ))
}
