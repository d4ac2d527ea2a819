//! HTTP editing service: sessions over loaded checkpoints, edits, renders,
//! interpolation and background inversion jobs.

mod jobs;
mod session;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use jobs::{JobState, JobStatus};
pub use session::{HistoryEntry, Session};

use crate::data::ServiceConfig;
use crate::edit::{EditTarget, Model};
use crate::error::{Error, Result};
use crate::invert::InversionConfig;
use crate::mappers::{interpolate_codes, Channel};
use crate::nerf::{CameraPose, Codes};
use crate::raster::Image;
use jobs::{InversionWorker, JobTable};

pub const DEFAULT_CHECKPOINT: &str = "default";
const DEFAULT_RESOLUTION: usize = 64;

/// How a new session's codes are chosen.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SessionInit {
    Sampled { seed: u64 },
    Provided { codes: Codes },
}

impl Default for SessionInit {
    fn default() -> Self {
        SessionInit::Sampled { seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PoseSpec {
    pub azimuth: f64,
    pub elevation: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub checkpoint: Option<String>,
    #[serde(default)]
    pub init: SessionInit,
    pub pose: Option<PoseSpec>,
}

/// Exactly one of `prompt` and `exemplar` (base64 PNG) must be given.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EditRequest {
    pub prompt: Option<String>,
    pub exemplar: Option<String>,
    pub channel: Channel,
    #[serde(default = "unit_scale")]
    pub scale: f64,
    pub resolution: Option<usize>,
}

fn unit_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpolateRequest {
    /// Session whose codes are the `ratio = 1` endpoint.
    pub other: String,
    pub ratio: f64,
    /// Store the interpolated codes in the session instead of only rendering them.
    #[serde(default)]
    pub commit: bool,
    pub resolution: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RenderQuery {
    pub az: Option<f64>,
    pub el: Option<f64>,
    pub res: Option<usize>,
    /// `png` (default) or `base64`.
    pub format: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameResponse {
    pub session: Session,
    pub codes: Codes,
    pub image_base64: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InversionUpload {
    pub image_base64: String,
    pub checkpoint: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct InversionQuery {
    pub checkpoint: Option<String>,
}

/// Everything the handlers share.
pub struct ServiceState {
    models: HashMap<String, Arc<Model>>,
    workers: HashMap<String, InversionWorker>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    jobs: JobTable,
    config: ServiceConfig,
    inversion_steps: usize,
    next_id: AtomicU64,
}

pub type SharedState = Arc<ServiceState>;

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl ServiceState {
    /// Serve `models` by name; sessions persisted in `config.sessions_dir` are restored.
    pub fn new(models: Vec<(String, Model)>, inversion: InversionConfig, config: ServiceConfig) -> Result<SharedState> {
        inversion.validate()?;
        if models.is_empty() {
            return Err(Error::invalid("the service needs at least one checkpoint"));
        }
        let inversion_steps = inversion.total_steps();
        let jobs: JobTable = Arc::default();
        let mut model_map = HashMap::new();
        let mut workers = HashMap::new();
        for (name, model) in models {
            let model = Arc::new(model);
            workers.insert(name.clone(), InversionWorker::spawn(model.clone(), inversion.clone(), jobs.clone()));
            model_map.insert(name, model);
        }
        let state = ServiceState {
            models: model_map,
            workers,
            sessions: RwLock::default(),
            jobs,
            config,
            inversion_steps,
            next_id: AtomicU64::new(1),
        };
        state.restore()?;
        Ok(Arc::new(state))
    }

    fn sessions_dir(&self) -> Option<PathBuf> {
        self.config.sessions_dir.as_ref().map(PathBuf::from)
    }

    fn restore(&self) -> Result<()> {
        let Some(dir) = self.sessions_dir() else { return Ok(()) };
        if !dir.exists() {
            return Ok(());
        }
        let mut sessions = self.sessions.write().expect("session table");
        let mut max_id = 0;
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let session: Session = match std::fs::read_to_string(&path).map_err(Error::from).and_then(|t| Ok(serde_json::from_str(&t)?)) {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("skipping unreadable session {}: {e}", path.display());
                    continue;
                }
            };
            if !self.models.contains_key(&session.checkpoint) {
                log::warn!("skipping session {} for unknown checkpoint {}", session.id, session.checkpoint);
                continue;
            }
            if let Some(n) = session.id.strip_prefix("s").and_then(|n| n.parse::<u64>().ok()) {
                max_id = max_id.max(n);
            }
            sessions.insert(session.id.clone(), Arc::new(Mutex::new(session)));
        }
        self.next_id.store(max_id + 1, Ordering::SeqCst);
        Ok(())
    }

    fn persist(&self, session: &Session) -> Result<()> {
        if let Some(dir) = self.sessions_dir() {
            std::fs::create_dir_all(&dir)?;
            std::fs::write(dir.join(format!("{}.json", session.id)), serde_json::to_vec_pretty(session)?)?;
        }
        Ok(())
    }

    fn fresh_id(&self, prefix: &str) -> String {
        format!("{prefix}{:06}", self.next_id.fetch_add(1, Ordering::SeqCst))
    }

    pub fn model(&self, name: &str) -> Result<&Arc<Model>> {
        self.models.get(name).ok_or_else(|| Error::NotFound(format!("checkpoint `{name}`")))
    }

    pub fn checkpoint_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.models.keys().cloned().collect();
        names.sort();
        names
    }

    fn session_handle(&self, id: &str) -> Result<Arc<Mutex<Session>>> {
        self.sessions.read().expect("session table").get(id).cloned().ok_or_else(|| Error::NotFound(format!("session `{id}`")))
    }

    pub fn session(&self, id: &str) -> Result<Session> {
        let handle = self.session_handle(id)?;
        let session = lock(&handle).clone();
        Ok(session)
    }

    fn resolution(&self, res: Option<usize>) -> Result<usize> {
        let res = res.unwrap_or(DEFAULT_RESOLUTION);
        if res == 0 || res > self.config.max_resolution {
            return Err(Error::invalid(format!("resolution {res} is outside 1..={}", self.config.max_resolution)));
        }
        Ok(res)
    }

    fn pose(&self, model: &Model, azimuth: f64, elevation: f64) -> Result<CameraPose> {
        let cam = &model.checkpoint.config.render.camera;
        if !(azimuth.is_finite() && elevation.is_finite()) {
            return Err(Error::invalid("pose angles must be finite"));
        }
        if !(cam.min_elevation.min(0.0)..=std::f64::consts::FRAC_PI_2).contains(&elevation) {
            return Err(Error::invalid(format!("elevation {elevation} is outside the upper hemisphere")));
        }
        CameraPose::new(azimuth, elevation, cam.radius)
    }

    pub fn create_session(&self, req: CreateSession) -> Result<Session> {
        let name = req.checkpoint.unwrap_or_else(|| DEFAULT_CHECKPOINT.to_string());
        let model = self.model(&name)?.clone();
        let codes = match req.init {
            SessionInit::Sampled { seed } => Codes::sample(&mut ChaCha8Rng::seed_from_u64(seed), model.code_dim()),
            SessionInit::Provided { codes } => {
                model.checkpoint.generator.check_codes(&codes).map_err(|e| Error::invalid(e.to_string()))?;
                codes
            }
        };
        let p = req.pose.unwrap_or(PoseSpec { azimuth: 0.8, elevation: 0.5 });
        let pose = self.pose(&model, p.azimuth, p.elevation)?;
        let session = Session::new(self.fresh_id("s"), name, codes, pose);
        self.persist(&session)?;
        self.sessions.write().expect("session table").insert(session.id.clone(), Arc::new(Mutex::new(session.clone())));
        Ok(session)
    }

    fn frame(&self, model: &Model, session: Session, codes: Codes, res: usize) -> Result<FrameResponse> {
        let png = model.render(&codes, &session.pose, res)?.encode_png()?;
        Ok(FrameResponse { session, codes, image_base64: B64.encode(png) })
    }

    pub fn edit(&self, id: &str, req: EditRequest) -> Result<FrameResponse> {
        let target = match (req.prompt, req.exemplar) {
            (Some(p), None) => EditTarget::Text(p),
            (None, Some(b)) => {
                let bytes = B64.decode(b.trim()).map_err(|e| Error::invalid(format!("exemplar is not base64: {e}")))?;
                EditTarget::Exemplar(Image::decode(&bytes)?)
            }
            _ => return Err(Error::invalid("give exactly one of `prompt` and `exemplar`")),
        };
        if !req.scale.is_finite() {
            return Err(Error::invalid("scale must be finite"));
        }
        let res = self.resolution(req.resolution)?;
        let handle = self.session_handle(id)?;
        let mut session = lock(&handle);
        let model = self.model(&session.checkpoint)?.clone();
        let dirs = model.directions(&target, req.channel)?;
        session.push(HistoryEntry::Edit { target: target.record(), channel: req.channel, scale: req.scale, directions: dirs })?;
        self.persist(&session)?;
        let snapshot = session.clone();
        drop(session);
        let codes = snapshot.codes.clone();
        self.frame(&model, snapshot, codes, res)
    }

    pub fn render(&self, id: &str, q: &RenderQuery) -> Result<Vec<u8>> {
        let session = self.session(id)?;
        let model = self.model(&session.checkpoint)?;
        let pose = self.pose(model, q.az.unwrap_or(session.pose.azimuth), q.el.unwrap_or(session.pose.elevation))?;
        let res = self.resolution(q.res)?;
        model.render(&session.codes, &pose, res)?.encode_png()
    }

    pub fn interpolate(&self, id: &str, req: InterpolateRequest) -> Result<FrameResponse> {
        let res = self.resolution(req.resolution)?;
        let other = self.session(&req.other)?;
        let handle = self.session_handle(id)?;
        let mut session = lock(&handle);
        if other.checkpoint != session.checkpoint {
            return Err(Error::invalid("sessions use different checkpoints"));
        }
        let model = self.model(&session.checkpoint)?.clone();
        let codes = interpolate_codes(&session.codes, &other.codes, req.ratio)?;
        if req.commit {
            session.push(HistoryEntry::Interpolate { toward: other.codes.clone(), ratio: req.ratio })?;
            self.persist(&session)?;
        }
        let snapshot = session.clone();
        drop(session);
        self.frame(&model, snapshot, codes, res)
    }

    /// Queue an inversion of an encoded image; undecodable uploads fail immediately.
    pub fn start_inversion(self: &Arc<Self>, bytes: &[u8], checkpoint: Option<String>) -> Result<JobStatus> {
        let name = checkpoint.unwrap_or_else(|| DEFAULT_CHECKPOINT.to_string());
        self.model(&name)?;
        let id = self.fresh_id("j");
        let mut status = JobStatus {
            job: id.clone(),
            checkpoint: name.clone(),
            status: JobState::Queued,
            iteration: 0,
            total_steps: self.inversion_steps,
            error: None,
            session: None,
            psnr: None,
        };
        let image = Image::decode(bytes).and_then(|img| {
            if img.width() != img.height() || img.width() > self.config.max_resolution {
                Err(Error::invalid(format!("upload must be square and at most {}px", self.config.max_resolution)))
            } else {
                Ok(img)
            }
        });
        let image = match image {
            Ok(img) => img,
            Err(e) => {
                status.status = JobState::Failed;
                status.error = Some(e.to_string());
                lock(&self.jobs).insert(id, status.clone());
                return Ok(status);
            }
        };
        lock(&self.jobs).insert(id.clone(), status.clone());
        let state = Arc::clone(self);
        let ck_name = name.clone();
        let on_success = Box::new(move |r: jobs::JobResult| -> String {
            let req = CreateSession {
                checkpoint: Some(ck_name),
                init: SessionInit::Provided { codes: r.codes },
                pose: Some(PoseSpec { azimuth: r.pose.azimuth, elevation: r.pose.elevation }),
            };
            match state.create_session(req) {
                Ok(s) => s.id,
                Err(e) => format!("error: {e}"),
            }
        });
        let worker = self.workers.get(&name).ok_or_else(|| Error::NotFound(format!("checkpoint `{name}`")))?;
        if !worker.submit(id, image, on_success) {
            return Err(Error::Unavailable("inversion worker stopped".into()));
        }
        Ok(status)
    }

    pub fn job(&self, id: &str) -> Result<JobStatus> {
        lock(&self.jobs).get(id).cloned().ok_or_else(|| Error::NotFound(format!("job `{id}`")))
    }
}

/// JSON error body with a status derived from the error kind.
pub struct ApiError(pub Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            Error::InvalidInput(_) | Error::Shape(_) | Error::Config { .. } | Error::ConfigParse(_) | Error::Image(_) | Error::Json(_) => {
                StatusCode::BAD_REQUEST
            }
            Error::Unavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(serde_json::json!({ "error": self.0.to_string() }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError(Error::Unavailable(format!("worker task failed: {e}"))))?.map_err(ApiError)
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T> {
    if body.is_empty() {
        return serde_json::from_slice(b"{}").map_err(|e| Error::invalid(e.to_string()));
    }
    serde_json::from_slice(body).map_err(|e| Error::invalid(format!("malformed request body: {e}")))
}

async fn healthz(State(state): State<SharedState>) -> Json<serde_json::Value> {
    let sessions = state.sessions.read().expect("session table").len();
    Json(serde_json::json!({ "status": "ok", "checkpoints": state.checkpoint_names(), "sessions": sessions }))
}

async fn create_session(State(state): State<SharedState>, body: Bytes) -> ApiResult<(StatusCode, Json<Session>)> {
    let req: CreateSession = parse_json(&body)?;
    Ok((StatusCode::CREATED, Json(blocking(move || state.create_session(req)).await?)))
}

async fn get_session(State(state): State<SharedState>, Path(id): Path<String>) -> ApiResult<Json<Session>> {
    Ok(Json(state.session(&id)?))
}

async fn edit_session(State(state): State<SharedState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<FrameResponse>> {
    let req: EditRequest = parse_json(&body)?;
    Ok(Json(blocking(move || state.edit(&id, req)).await?))
}

async fn render_session(State(state): State<SharedState>, Path(id): Path<String>, Query(q): Query<RenderQuery>) -> ApiResult<Response> {
    let format = q.format.clone().unwrap_or_else(|| "png".into());
    if format != "png" && format != "base64" {
        return Err(Error::invalid(format!("unknown format `{format}`; use png or base64")).into());
    }
    let png = blocking(move || state.render(&id, &q)).await?;
    Ok(if format == "png" {
        ([(header::CONTENT_TYPE, "image/png")], png).into_response()
    } else {
        Json(serde_json::json!({ "image_base64": B64.encode(png) })).into_response()
    })
}

async fn interpolate_session(State(state): State<SharedState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<FrameResponse>> {
    let req: InterpolateRequest = parse_json(&body)?;
    Ok(Json(blocking(move || state.interpolate(&id, req)).await?))
}

async fn start_inversion(
    State(state): State<SharedState>,
    Query(q): Query<InversionQuery>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<JobStatus>)> {
    let is_json = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("application/json"));
    let (bytes, checkpoint) = if is_json {
        let up: InversionUpload = parse_json(&body)?;
        let bytes = B64.decode(up.image_base64.trim()).unwrap_or_default();
        (bytes, up.checkpoint.or(q.checkpoint))
    } else {
        (body.to_vec(), q.checkpoint)
    };
    let status = state.start_inversion(&bytes, checkpoint)?;
    let code = if status.status == JobState::Failed { StatusCode::UNPROCESSABLE_ENTITY } else { StatusCode::ACCEPTED };
    Ok((code, Json(status)))
}

async fn poll_job(State(state): State<SharedState>, Path(id): Path<String>) -> ApiResult<Json<JobStatus>> {
    Ok(Json(state.job(&id)?))
}

pub fn router(state: SharedState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/edit", post(edit_session))
        .route("/sessions/{id}/render", get(render_session))
        .route("/sessions/{id}/interpolate", post(interpolate_session))
        .route("/inversions", post(start_inversion))
        .route("/inversions/{job}", get(poll_job))
        .with_state(state)
}

/// Serve until the process is stopped.
pub async fn serve(state: SharedState, bind: &str) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}
