//! Long-running HTTP gateway exposing the router as a live service.
//!
//! Endpoints:
//!   POST /infer                 route one image (JSON or multipart)
//!   GET  /metrics               accumulator snapshot
//!   GET  /healthz               liveness
//!   POST /admin/reload-profile  atomic profile table swap
//!
//! Per-stream estimator and router state is keyed by `stream_id`
//! (defaulting to the client socket address), so output-based
//! estimation stays stream-local. Requests within a stream serialize on
//! the stream's session lock; distinct streams run concurrently.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{ConnectInfo, Multipart, Request as HttpRequest, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, RequestExt, Router};
use serde::{Deserialize, Serialize};

use ecore::harness::{HarnessError, MetricsAccumulator, ReplayConfig, RequestRecord, Session};
use ecore::{Backend, EstimatorError, ImageRaster, PairKey, ProfileTable};

use crate::config::{AppError, Resolved};

pub struct ServiceState {
    replay_cfg: ReplayConfig,
    table: RwLock<Arc<ProfileTable>>,
    profile_path: Mutex<Option<PathBuf>>,
    backend: Backend,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    metrics: Mutex<MetricsAccumulator>,
}

pub type SharedState = Arc<ServiceState>;

struct InferInput {
    label: String,
    image_path: Option<PathBuf>,
    raster: Option<ImageRaster>,
    truth_count: Option<u32>,
    stream_id: String,
}

#[derive(Deserialize)]
struct InferBody {
    image: Option<String>,
    truth_count: Option<u32>,
    stream_id: Option<String>,
}

#[derive(Serialize)]
struct LatencyBreakdown {
    gateway_ms: f64,
    network_ms: f64,
    inference_ms: f64,
}

#[derive(Serialize)]
struct InferReply {
    pair: PairKey,
    group: String,
    estimated_count: Option<u32>,
    detected_count: u32,
    latency_ms: LatencyBreakdown,
    energy_mwh: f64,
}

impl InferReply {
    fn from_record(rec: &RequestRecord) -> Self {
        Self {
            pair: rec.pair.clone(),
            group: rec.group.to_string(),
            estimated_count: rec.estimated_count,
            detected_count: rec.detected_count,
            latency_ms: LatencyBreakdown {
                gateway_ms: rec.gateway_ms,
                network_ms: rec.network_ms,
                inference_ms: rec.inference_ms,
            },
            energy_mwh: rec.backend_energy_mwh,
        }
    }
}

#[derive(Deserialize)]
struct ReloadBody {
    path: Option<PathBuf>,
}

impl ServiceState {
    pub fn new(resolved: &Resolved) -> SharedState {
        Arc::new(Self {
            backend: Backend::new(resolved.replay.backend.clone()),
            replay_cfg: resolved.replay.clone(),
            table: RwLock::new(Arc::new(resolved.table.clone())),
            profile_path: Mutex::new(resolved.profile_path.clone()),
            sessions: Mutex::new(HashMap::new()),
            metrics: Mutex::new(MetricsAccumulator::default()),
        })
    }

    fn session_for(&self, stream_id: &str) -> Result<Arc<Mutex<Session>>, HarnessError> {
        let mut sessions = self.sessions.lock().unwrap();
        if let Some(session) = sessions.get(stream_id) {
            return Ok(session.clone());
        }
        let mut cfg = self.replay_cfg.clone();
        cfg.stream_id = stream_id.to_string();
        let session = Arc::new(Mutex::new(Session::new(&cfg)?));
        sessions.insert(stream_id.to_string(), session.clone());
        Ok(session)
    }

    /// The same closed-loop step the offline harness runs, against the
    /// table snapshot taken at entry so profile reloads stay atomic
    /// per response.
    fn process(&self, input: InferInput) -> Result<InferReply, HarnessError> {
        let table = self.table.read().unwrap().clone();
        let session = self.session_for(&input.stream_id)?;
        let mut session = session.lock().unwrap();
        let record = session.process(
            &table,
            &self.backend,
            &input.label,
            input.image_path,
            input.raster,
            input.truth_count,
        )?;
        self.metrics.lock().unwrap().record(&record);
        Ok(InferReply::from_record(&record))
    }

    fn snapshot(&self) -> ecore::MetricsSnapshot {
        let table = self.table.read().unwrap().clone();
        let devices = table.distinct_devices();
        let powers = self
            .replay_cfg
            .idle
            .powers_for(devices.iter().map(String::as_str));
        self.metrics.lock().unwrap().snapshot(&powers)
    }
}

pub fn build_router(state: SharedState) -> Router {
    Router::new()
        .route("/infer", post(infer))
        .route("/metrics", get(metrics))
        .route("/healthz", get(healthz))
        .route("/admin/reload-profile", post(reload_profile))
        .with_state(state)
}

/// Bind, announce the bound address on stdout, and serve until killed.
pub async fn serve(resolved: Resolved) -> Result<(), AppError> {
    let state = ServiceState::new(&resolved);
    let app = build_router(state);
    let listener = tokio::net::TcpListener::bind(&resolved.listen)
        .await
        .map_err(|e| AppError::Runtime(format!("cannot bind {}: {e}", resolved.listen)))?;
    let addr = listener.local_addr().map_err(AppError::from)?;
    {
        use std::io::Write;
        let mut out = std::io::stdout();
        writeln!(out, "gateway listening on {addr}").ok();
        out.flush().ok();
    }
    axum::serve(
        listener,
        app.into_make_service_with_connect_info::<SocketAddr>(),
    )
    .await
    .map_err(|e| AppError::Runtime(e.to_string()))
}

async fn healthz() -> &'static str {
    "ok"
}

async fn metrics(State(state): State<SharedState>) -> Response {
    Json(state.snapshot()).into_response()
}

async fn infer(
    State(state): State<SharedState>,
    ConnectInfo(peer): ConnectInfo<SocketAddr>,
    req: HttpRequest,
) -> Response {
    let content_type = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("")
        .to_string();

    let input = if content_type.starts_with("multipart/form-data") {
        match req.extract::<Multipart, _>().await {
            Ok(mp) => parse_multipart(mp, peer).await,
            Err(e) => Err(format!("bad multipart body: {e}")),
        }
    } else {
        match req.extract::<Json<InferBody>, _>().await {
            Ok(Json(body)) => Ok(InferInput {
                label: body.image.clone().unwrap_or_else(|| "inline".to_string()),
                image_path: body.image.map(PathBuf::from),
                raster: None,
                truth_count: body.truth_count,
                stream_id: body.stream_id.unwrap_or_else(|| peer.to_string()),
            }),
            Err(e) => Err(format!("bad json body: {e}")),
        }
    };

    let input = match input {
        Ok(input) => input,
        Err(message) => return error_response(StatusCode::BAD_REQUEST, message),
    };

    let result = tokio::task::spawn_blocking(move || state.process(input)).await;
    match result {
        Ok(Ok(reply)) => Json(reply).into_response(),
        Ok(Err(e)) => error_response(status_for(&e), e.to_string()),
        Err(join) => error_response(StatusCode::INTERNAL_SERVER_ERROR, join.to_string()),
    }
}

async fn parse_multipart(mut mp: Multipart, peer: SocketAddr) -> Result<InferInput, String> {
    let mut raster = None;
    let mut truth_count = None;
    let mut stream_id = None;
    let mut label = "upload".to_string();
    while let Some(field) = mp.next_field().await.map_err(|e| e.to_string())? {
        match field.name().unwrap_or("") {
            "image" => {
                if let Some(name) = field.file_name() {
                    label = name.to_string();
                }
                let bytes = field.bytes().await.map_err(|e| e.to_string())?;
                raster = Some(
                    ImageRaster::read_pnm(bytes.as_ref())
                        .map_err(|e| format!("image field: {e}"))?,
                );
            }
            "truth_count" => {
                let text = field.text().await.map_err(|e| e.to_string())?;
                truth_count = Some(
                    text.trim()
                        .parse()
                        .map_err(|e| format!("truth_count: {e}"))?,
                );
            }
            "stream_id" => {
                stream_id = Some(field.text().await.map_err(|e| e.to_string())?);
            }
            other => return Err(format!("unknown multipart field `{other}`")),
        }
    }
    Ok(InferInput {
        label,
        image_path: None,
        raster,
        truth_count,
        stream_id: stream_id.unwrap_or_else(|| peer.to_string()),
    })
}

async fn reload_profile(
    State(state): State<SharedState>,
    body: Option<Json<ReloadBody>>,
) -> Response {
    let requested = body.and_then(|Json(b)| b.path);
    let path = match requested.or_else(|| state.profile_path.lock().unwrap().clone()) {
        Some(path) => path,
        None => {
            return error_response(
                StatusCode::BAD_REQUEST,
                "no profile path given and none configured".into(),
            )
        }
    };
    match ProfileTable::load_path(&path) {
        Ok(table) => {
            let entries = table.entries.len();
            let source = table.source.clone();
            *state.table.write().unwrap() = Arc::new(table);
            *state.profile_path.lock().unwrap() = Some(path);
            Json(serde_json::json!({ "entries": entries, "source": source })).into_response()
        }
        Err(e) => error_response(StatusCode::BAD_REQUEST, e.to_string()),
    }
}

fn status_for(e: &HarnessError) -> StatusCode {
    match e {
        HarnessError::Estimator(EstimatorError::MissingGroundTruth { .. }) => {
            StatusCode::UNPROCESSABLE_ENTITY
        }
        HarnessError::Backend(ecore::BackendError::MissingTruth { .. }) => {
            StatusCode::UNPROCESSABLE_ENTITY
        }
        HarnessError::Backend(ecore::BackendError::BackendUnreachable { .. }) => {
            StatusCode::SERVICE_UNAVAILABLE
        }
        HarnessError::Estimator(
            EstimatorError::DetectorUnavailable(_)
            | EstimatorError::DetectorTimeout { .. }
            | EstimatorError::DetectorProtocolError(_),
        ) => StatusCode::SERVICE_UNAVAILABLE,
        HarnessError::Estimator(_) | HarnessError::Route(_) | HarnessError::Workload(_) => {
            StatusCode::BAD_REQUEST
        }
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

fn error_response(status: StatusCode, message: String) -> Response {
    (status, Json(serde_json::json!({ "error": message }))).into_response()
}
