//! HTTP boundary: frame ingest, the latest-frame register, history, health
//! and the alert event feed.
//!
//! Analysis runs inline during ingest. Each authenticated user owns one
//! pipeline (timestamp guard, perspective smoother, debouncer) behind its own
//! lock, so a batch is analyzed in order and closed incidents are written to
//! the store before the response returns. The register holding the latest
//! frame and its assessment is replaced as one `Arc`, which is what readers
//! clone.

use std::collections::HashMap;
use std::convert::Infallible;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use axum::extract::{DefaultBodyLimit, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use futures::Stream;
use posewarden_core::perspective::PerspectiveSmoother;
use posewarden_core::pose_model::{is_header, parse_frame, FrameErrorKind, LandmarkFrame, TimestampGuard};
use posewarden_core::rules::{assess, Detail, PostureAssessment, RuleId};
use posewarden_core::store::{Store, StoreError};
use posewarden_core::temporal::{summarize, Bucket, Debouncer, TimeRange};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::broadcast;

use crate::config::ServiceConfig;

pub const MAX_BODY_BYTES: usize = 16 * 1024 * 1024;
const EVENT_BUFFER: usize = 256;

/// Turns raw image bytes into the string served as `frame`.
pub trait FrameEncoder: Send + Sync {
    fn encode(&self, image: &[u8]) -> Result<String, String>;
}

pub struct Base64Encoder;

impl FrameEncoder for Base64Encoder {
    fn encode(&self, image: &[u8]) -> Result<String, String> {
        Ok(BASE64.encode(image))
    }
}

/// One ingested frame and the assessment derived from it.
#[derive(Debug)]
pub struct Snapshot {
    pub frame: LandmarkFrame,
    pub assessment: PostureAssessment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlertEvent {
    pub incident_id: u64,
    pub rules: Vec<RuleId>,
    pub detail: Option<Detail>,
    pub ts_ms: i64,
}

struct Pipeline {
    guard: TimestampGuard,
    smoother: PerspectiveSmoother,
    debouncer: Debouncer,
}

pub struct AppState {
    config: ServiceConfig,
    store: Arc<Store>,
    register: RwLock<Option<Arc<Snapshot>>>,
    pipelines: Mutex<HashMap<String, Arc<Mutex<Pipeline>>>>,
    events: broadcast::Sender<AlertEvent>,
    encoder: Arc<dyn FrameEncoder>,
    started: Instant,
    webhook: Option<reqwest::Client>,
}

impl AppState {
    pub fn new(config: ServiceConfig, store: Arc<Store>) -> Self {
        Self::with_encoder(config, store, Arc::new(Base64Encoder))
    }

    pub fn with_encoder(config: ServiceConfig, store: Arc<Store>, encoder: Arc<dyn FrameEncoder>) -> Self {
        let (events, _) = broadcast::channel(EVENT_BUFFER);
        let webhook = config.webhook_url.as_ref().map(|_| {
            reqwest::Client::builder()
                .timeout(Duration::from_secs(5))
                .build()
                .expect("HTTP client builds without TLS configuration")
        });
        Self {
            config,
            store,
            register: RwLock::new(None),
            pipelines: Mutex::new(HashMap::new()),
            events,
            encoder,
            started: Instant::now(),
            webhook,
        }
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    /// A receiver for fired alerts, as the event feed uses.
    pub fn subscribe(&self) -> broadcast::Receiver<AlertEvent> {
        self.events.subscribe()
    }

    pub fn latest(&self) -> Option<Arc<Snapshot>> {
        self.register.read().expect("register lock poisoned").clone()
    }

    fn pipeline(&self, user_id: &str) -> Arc<Mutex<Pipeline>> {
        let mut map = self.pipelines.lock().expect("pipeline map poisoned");
        map.entry(user_id.to_string())
            .or_insert_with(|| {
                Arc::new(Mutex::new(Pipeline {
                    guard: TimestampGuard::new(),
                    smoother: PerspectiveSmoother::new(self.config.perspective),
                    debouncer: Debouncer::new(self.config.debounce),
                }))
            })
            .clone()
    }

    fn publish(&self, event: AlertEvent) {
        // No subscribers is fine; the event is simply dropped.
        let _ = self.events.send(event.clone());
        if let (Some(client), Some(url)) = (&self.webhook, &self.config.webhook_url) {
            let (client, url) = (client.clone(), url.clone());
            tokio::spawn(async move {
                if let Err(e) = client.post(&url).json(&event).send().await {
                    tracing::warn!(error = %e, "alert webhook failed");
                }
            });
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/ingest", post(ingest))
        .route("/get_posture", get(get_posture))
        .route("/health", get(health))
        .route("/history", get(history))
        .route("/events", get(events))
        .route("/signup", post(signup))
        .route("/account", delete(delete_account))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn authenticate(state: &AppState, headers: &HeaderMap) -> Result<String, Response> {
    let token = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::trim);
    let Some(token) = token else {
        return Err(error(StatusCode::UNAUTHORIZED, "missing bearer token"));
    };
    state
        .store
        .authenticate(token)
        .map_err(|_| error(StatusCode::UNAUTHORIZED, "invalid token"))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Rejection {
    pub line: usize,
    pub kind: FrameErrorKind,
    pub detail: String,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct IngestSummary {
    pub accepted: usize,
    pub rejected: Vec<Rejection>,
}

async fn ingest(State(state): State<Arc<AppState>>, headers: HeaderMap, body: String) -> Response {
    let user_id = match authenticate(&state, &headers) {
        Ok(u) => u,
        Err(r) => return r,
    };
    let summary = ingest_lines(&state, &user_id, &body);
    let status = if summary.rejected.is_empty() {
        StatusCode::OK
    } else {
        StatusCode::BAD_REQUEST
    };
    (status, Json(summary)).into_response()
}

/// Validates and analyzes each record in order. Invalid lines are reported
/// and skipped; the rest are processed.
pub fn ingest_lines(state: &AppState, user_id: &str, body: &str) -> IngestSummary {
    let pipeline = state.pipeline(user_id);
    let mut p = pipeline.lock().expect("pipeline poisoned");
    let mut summary = IngestSummary {
        accepted: 0,
        rejected: Vec::new(),
    };
    for (i, line) in body.lines().enumerate() {
        if line.trim().is_empty() || is_header(line) {
            continue;
        }
        let frame = match parse_frame(line).and_then(|f| p.guard.accept(f.ts_ms).map(|_| f)) {
            Ok(f) => f,
            Err(e) => {
                summary.rejected.push(Rejection {
                    line: i + 1,
                    kind: e.kind,
                    detail: e.detail,
                });
                continue;
            }
        };
        let perspective = p.smoother.push(&frame);
        let assessment = assess(&frame, perspective, &state.config.thresholds);
        let decision = p
            .debouncer
            .update(&assessment)
            .expect("timestamp guard admits only increasing timestamps");

        if let Some(closed) = &decision.closed {
            if let Err(e) = state.store.record_incident(user_id, closed) {
                tracing::warn!(user_id, error = %e, "incident not stored");
            }
        }
        if let (true, Some(id), Some(reason)) = (decision.fire, decision.incident_id, &decision.reason) {
            state.publish(AlertEvent {
                incident_id: id,
                rules: reason.rules.clone(),
                detail: reason.detail,
                ts_ms: decision.ts_ms,
            });
        }
        let snapshot = Arc::new(Snapshot { frame, assessment });
        *state.register.write().expect("register lock poisoned") = Some(snapshot);
        summary.accepted += 1;
    }
    summary
}

async fn get_posture(State(state): State<Arc<AppState>>) -> Response {
    let Some(snap) = state.latest() else {
        return error(StatusCode::SERVICE_UNAVAILABLE, "no frame available");
    };
    let frame = match &snap.frame.image {
        None => None,
        Some(bytes) => match state.encoder.encode(bytes) {
            Ok(s) => Some(s),
            Err(e) => {
                tracing::error!(error = %e, "frame encoding failed");
                return error(StatusCode::INTERNAL_SERVER_ERROR, "failed to encode frame");
            }
        },
    };
    Json(PostureResponse {
        frame,
        analysis: &snap.assessment,
    })
    .into_response()
}

#[derive(Serialize)]
struct PostureResponse<'a> {
    frame: Option<String>,
    analysis: &'a PostureAssessment,
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    Json(json!({
        "status": "ok",
        "version": env!("CARGO_PKG_VERSION"),
        "uptime_ms": state.started.elapsed().as_millis() as u64,
    }))
    .into_response()
}

#[derive(Debug, Deserialize)]
struct HistoryQuery {
    range: Option<String>,
    bucket: Option<String>,
}

async fn history(State(state): State<Arc<AppState>>, headers: HeaderMap, Query(q): Query<HistoryQuery>) -> Response {
    let user_id = match authenticate(&state, &headers) {
        Ok(u) => u,
        Err(r) => return r,
    };
    let Some(range) = q.range else {
        return error(StatusCode::BAD_REQUEST, "range is required, as START..END in epoch ms");
    };
    let window: TimeRange = match range.parse() {
        Ok(w) => w,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("{e}")),
    };
    let bucket: Bucket = match q.bucket.as_deref().unwrap_or("day").parse() {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("{e}")),
    };
    let mut incidents: Vec<_> = match state.store.query_incidents(&user_id, window) {
        Ok(v) => v.iter().map(|r| r.incident()).collect(),
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    };
    let live = state.pipelines.lock().expect("pipeline map poisoned").get(&user_id).cloned();
    if let Some(p) = live {
        incidents.extend(p.lock().expect("pipeline poisoned").debouncer.open_incident());
    }
    match summarize(&incidents, window, bucket) {
        Ok(s) => Json(s).into_response(),
        Err(e) => error(StatusCode::BAD_REQUEST, e.to_string()),
    }
}

async fn events(State(state): State<Arc<AppState>>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = state.subscribe();
    let stream = futures::stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(ev) => {
                    let event = Event::default()
                        .event("alert")
                        .json_data(&ev)
                        .expect("alert events serialize");
                    return Some((Ok(event), rx));
                }
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Sse::new(stream).keep_alive(KeepAlive::default())
}

#[derive(Debug, Deserialize)]
struct SignupRequest {
    display_name: String,
    secret: String,
}

async fn signup(State(state): State<Arc<AppState>>, Json(req): Json<SignupRequest>) -> Response {
    match state.store.create_user(&req.display_name, &req.secret) {
        Ok(nu) => (
            StatusCode::CREATED,
            Json(json!({
                "user_id": nu.user.user_id,
                "display_name": nu.user.display_name,
                "token": nu.token,
            })),
        )
            .into_response(),
        Err(e @ (StoreError::WeakSecret | StoreError::EmptyName)) => error(StatusCode::BAD_REQUEST, e.to_string()),
        Err(e @ StoreError::AlreadyInUse(_)) => error(StatusCode::CONFLICT, e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn delete_account(State(state): State<Arc<AppState>>, headers: HeaderMap) -> Response {
    let user_id = match authenticate(&state, &headers) {
        Ok(u) => u,
        Err(r) => return r,
    };
    state.pipelines.lock().expect("pipeline map poisoned").remove(&user_id);
    match state.store.delete_user(&user_id) {
        Ok(()) => StatusCode::NO_CONTENT.into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}
