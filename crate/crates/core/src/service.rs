//! Job-oriented HTTP surface over the pipeline.
//!
//! `POST /jobs` takes multipart fields `sketch` (PNG), `detections` (JSON),
//! `depth` (16-bit PNG, needed unless refinement is off) and one part per
//! mask file named in the detections document, matched by file name or
//! field name. Jobs run on a fixed pool of worker threads behind a bounded
//! queue; a full queue answers 503.
//!
//! | route | body |
//! |---|---|
//! | `GET /jobs/{id}` | state document |
//! | `GET /jobs/{id}/segmentation` | 16-bit label PNG |
//! | `GET /jobs/{id}/palette` | palette JSON |
//! | `GET /jobs/{id}/report` | run report JSON |
//! | `GET /jobs/{id}/layers` | stack manifest JSON |
//! | `GET /jobs/{id}/layers/{file}` | one layer asset |
//! | `GET /jobs/{id}/composite` | composite PNG |

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender, TrySendError};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::inpaint::InpaintBackend;
use crate::pipeline::{run_pipeline, PipelineConfig, PipelineInputs, Stage};

const MAX_UPLOAD_BYTES: usize = 256 << 20;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub pipeline: PipelineConfig,
    pub workers: usize,
    /// Jobs that may wait for a worker before new posts are refused.
    pub queue_capacity: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            pipeline: PipelineConfig::default(),
            workers: 2,
            queue_capacity: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub id: u64,
    pub state: JobState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<Stage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

struct Job {
    status: JobStatus,
    files: BTreeMap<String, Vec<u8>>,
}

struct Task {
    id: u64,
    inputs: PipelineInputs,
}

struct Shared {
    jobs: Mutex<HashMap<u64, Job>>,
    queue: SyncSender<Task>,
    next_id: AtomicU64,
    require_depth: bool,
}

#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    /// Start the worker pool and return the shared state.
    pub fn start(config: ServiceConfig, backend: Arc<dyn InpaintBackend>) -> Self {
        let (tx, rx) = sync_channel::<Task>(config.queue_capacity);
        let shared = Arc::new(Shared {
            jobs: Mutex::new(HashMap::new()),
            queue: tx,
            next_id: AtomicU64::new(1),
            require_depth: config.pipeline.depth_refinement,
        });
        let rx = Arc::new(Mutex::new(rx));
        for _ in 0..config.workers.max(1) {
            let rx = Arc::clone(&rx);
            let weak = Arc::downgrade(&shared);
            let backend = Arc::clone(&backend);
            let cfg = config.pipeline.clone();
            std::thread::spawn(move || worker(&rx, &weak, &cfg, backend.as_ref()));
        }
        AppState(shared)
    }

    pub fn status(&self, id: u64) -> Option<JobStatus> {
        self.0
            .jobs
            .lock()
            .expect("job store poisoned")
            .get(&id)
            .map(|j| j.status.clone())
    }
}

fn worker(
    rx: &Mutex<Receiver<Task>>,
    shared: &std::sync::Weak<Shared>,
    cfg: &PipelineConfig,
    backend: &dyn InpaintBackend,
) {
    loop {
        let task = match rx.lock().expect("queue poisoned").recv() {
            Ok(t) => t,
            Err(_) => return,
        };
        let Some(shared) = shared.upgrade() else {
            return;
        };
        set_state(&shared, task.id, |s| s.state = JobState::Running);
        let result = run_pipeline(&task.inputs, cfg, backend).and_then(|out| {
            let files = out
                .files()
                .map_err(|e| crate::pipeline::PipelineError::new(Stage::Output, e))?;
            Ok((out.stack.layers.len(), files))
        });
        let mut jobs = shared.jobs.lock().expect("job store poisoned");
        if let Some(job) = jobs.get_mut(&task.id) {
            match result {
                Ok((n, files)) => {
                    job.files = files.into_iter().collect();
                    job.status.layers = Some(n);
                    job.status.state = JobState::Done;
                }
                Err(e) => {
                    log::warn!("job {} failed: {e}", task.id);
                    job.status.stage = Some(e.stage);
                    job.status.error = Some(e.to_string());
                    job.status.state = JobState::Failed;
                }
            }
        }
    }
}

fn set_state(shared: &Shared, id: u64, f: impl FnOnce(&mut JobStatus)) {
    if let Some(job) = shared.jobs.lock().expect("job store poisoned").get_mut(&id) {
        f(&mut job.status);
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/jobs", post(create_job))
        .route("/jobs/{id}", get(job_status))
        .route(
            "/jobs/{id}/segmentation",
            get(|s: State<AppState>, p: Path<String>| job_file(s, p, "labels.png")),
        )
        .route(
            "/jobs/{id}/palette",
            get(|s: State<AppState>, p: Path<String>| job_file(s, p, "palette.json")),
        )
        .route(
            "/jobs/{id}/report",
            get(|s: State<AppState>, p: Path<String>| job_file(s, p, "report.json")),
        )
        .route(
            "/jobs/{id}/composite",
            get(|s: State<AppState>, p: Path<String>| job_file(s, p, "composite.png")),
        )
        .route(
            "/jobs/{id}/layers",
            get(|s: State<AppState>, p: Path<String>| job_file(s, p, "layers/manifest.json")),
        )
        .route("/jobs/{id}/layers/{file}", get(layer_asset))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .with_state(state)
}

/// Bind `addr` and serve until the process exits.
pub async fn serve(
    addr: SocketAddr,
    config: ServiceConfig,
    backend: Arc<dyn InpaintBackend>,
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(AppState::start(config, backend))).await
}

fn error(code: StatusCode, msg: impl Into<String>) -> Response {
    (code, Json(serde_json::json!({ "error": msg.into() }))).into_response()
}

async fn create_job(State(state): State<AppState>, mut form: Multipart) -> Response {
    let mut parts: HashMap<String, Bytes> = HashMap::new();
    loop {
        match form.next_field().await {
            Ok(Some(field)) => {
                let name = field.name().unwrap_or_default().to_owned();
                let file = field.file_name().map(str::to_owned);
                let bytes = match field.bytes().await {
                    Ok(b) => b,
                    Err(e) => return error(StatusCode::BAD_REQUEST, e.body_text()),
                };
                if let Some(f) = file.filter(|f| {
                    !matches!(name.as_str(), "sketch" | "detections" | "depth") && !f.is_empty()
                }) {
                    parts.insert(f, bytes.clone());
                }
                parts.insert(name, bytes);
            }
            Ok(None) => break,
            Err(e) => return error(StatusCode::BAD_REQUEST, e.body_text()),
        }
    }
    let mut required = vec!["sketch", "detections"];
    if state.0.require_depth {
        required.push("depth");
    }
    if let Some(missing) = required.iter().find(|k| !parts.contains_key(**k)) {
        return error(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("missing artifact: {missing}"),
        );
    }

    let decoded = tokio::task::spawn_blocking(move || {
        PipelineInputs::decode(
            &parts["sketch"],
            &parts["detections"],
            parts.get("depth").map(|b| &b[..]),
            |name| {
                parts.get(name).map(|b| b.to_vec()).ok_or_else(|| {
                    Error::InvalidArgument(format!("missing artifact: mask file {name}"))
                })
            },
        )
    })
    .await;
    let inputs = match decoded {
        Ok(Ok(i)) => i,
        Ok(Err(e)) => return error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    };

    let id = state.0.next_id.fetch_add(1, Ordering::Relaxed);
    let status = JobStatus {
        id,
        state: JobState::Queued,
        layers: None,
        stage: None,
        error: None,
    };
    // Register before enqueueing so a fast worker always finds the job.
    state.0.jobs.lock().expect("job store poisoned").insert(
        id,
        Job {
            status: status.clone(),
            files: BTreeMap::new(),
        },
    );
    match state.0.queue.try_send(Task { id, inputs }) {
        Ok(()) => (StatusCode::ACCEPTED, Json(status)).into_response(),
        Err(e) => {
            state.0.jobs.lock().expect("job store poisoned").remove(&id);
            match e {
                TrySendError::Full(_) => {
                    error(StatusCode::SERVICE_UNAVAILABLE, "job queue is full")
                }
                TrySendError::Disconnected(_) => {
                    error(StatusCode::SERVICE_UNAVAILABLE, "no workers")
                }
            }
        }
    }
}

fn parse_id(raw: &str) -> Option<u64> {
    raw.parse().ok()
}

async fn job_status(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    match parse_id(&id).and_then(|id| state.status(id)) {
        Some(s) => Json(s).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("unknown job {id}")),
    }
}

fn content_type(name: &str) -> &'static str {
    if name.ends_with(".png") {
        "image/png"
    } else {
        "application/json"
    }
}

fn fetch(state: &AppState, raw_id: &str, name: &str) -> Response {
    let jobs = state.0.jobs.lock().expect("job store poisoned");
    let Some(job) = parse_id(raw_id).and_then(|id| jobs.get(&id)) else {
        return error(StatusCode::NOT_FOUND, format!("unknown job {raw_id}"));
    };
    if job.status.state != JobState::Done {
        return (StatusCode::CONFLICT, Json(job.status.clone())).into_response();
    }
    match job.files.get(name) {
        Some(bytes) => {
            ([(header::CONTENT_TYPE, content_type(name))], bytes.clone()).into_response()
        }
        None => error(
            StatusCode::NOT_FOUND,
            format!("job {raw_id} has no file {name}"),
        ),
    }
}

async fn job_file(
    State(state): State<AppState>,
    Path(id): Path<String>,
    name: &'static str,
) -> Response {
    fetch(&state, &id, name)
}

async fn layer_asset(
    State(state): State<AppState>,
    Path((id, file)): Path<(String, String)>,
) -> Response {
    if file.contains('/') || file.contains("..") {
        return error(StatusCode::NOT_FOUND, "no such asset");
    }
    fetch(&state, &id, &format!("layers/{file}"))
}
