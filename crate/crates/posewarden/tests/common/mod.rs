#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use posewarden::config::ServiceConfig;
use posewarden::service::{router, AppState, FrameEncoder};
use posewarden_core::harness::{Posture, SeatedPose};
use posewarden_core::pose_model::serialize_frame;
use posewarden_core::store::Store;
use tempfile::TempDir;
use tower::ServiceExt;

pub struct Harness {
    pub dir: TempDir,
    pub state: Arc<AppState>,
    pub app: Router,
    pub token: String,
}

pub fn harness_with(config: ServiceConfig, encoder: Option<Arc<dyn FrameEncoder>>) -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(Store::open(dir.path()).unwrap());
    let token = store.create_user("tester", "long-enough-secret").unwrap().token;
    let state = Arc::new(match encoder {
        Some(e) => AppState::with_encoder(config, store, e),
        None => AppState::new(config, store),
    });
    Harness {
        dir,
        app: router(state.clone()),
        state,
        token,
    }
}

pub fn harness() -> Harness {
    harness_with(ServiceConfig::default(), None)
}

pub async fn call(app: &Router, method: Method, uri: &str, token: Option<&str>, body: impl Into<Body>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if uri == "/signup" {
        req = req.header("content-type", "application/json");
    }
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let resp = app.clone().oneshot(req.body(body.into()).unwrap()).await.unwrap();
    let status = resp.status();
    (status, to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec())
}

pub fn json(bytes: &[u8]) -> serde_json::Value {
    serde_json::from_slice(bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(bytes)))
}

pub fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// Compares against a golden file; `UPDATE_GOLDEN=1` rewrites it instead.
pub fn assert_golden(name: &str, actual: &[u8]) {
    let path = golden_path(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(
        String::from_utf8_lossy(actual),
        String::from_utf8_lossy(&expected),
        "response differs from {name}"
    );
}

/// A seated frame from the template, as one PW1 line.
pub fn template_line(posture: Posture, ts_ms: i64, image: Option<Vec<u8>>) -> String {
    let mut f = SeatedPose::for_posture(posture).render(ts_ms, 0.96, 0.6);
    f.image = image;
    serialize_frame(&f)
}

const NONCE_SPAN: u64 = 100_000;
const NONCE_BASE_DEG: f64 = 40.0;
const NONCE_STEP_DEG: f64 = 0.0008;

/// A frame carrying `nonce` twice: as its image bytes and, modulo
/// `NONCE_SPAN`, in the back angle the rules will measure.
pub fn nonce_line(nonce: u64, ts_ms: i64) -> String {
    let pose = SeatedPose {
        back_deg: NONCE_BASE_DEG + (nonce % NONCE_SPAN) as f64 * NONCE_STEP_DEG,
        ..SeatedPose::for_posture(Posture::GoodPosture)
    };
    let mut f = pose.render(ts_ms, 0.96, 0.6);
    f.image = Some(nonce.to_le_bytes().to_vec());
    serialize_frame(&f)
}

/// Whether a /get_posture body pairs its frame with its own analysis.
pub fn nonce_pair_matches(body: &serde_json::Value) -> bool {
    use base64::Engine;
    let Some(b64) = body["frame"].as_str() else {
        return false;
    };
    let bytes = base64::engine::general_purpose::STANDARD.decode(b64).unwrap();
    let image_nonce = u64::from_le_bytes(bytes.try_into().unwrap());
    let measured = body["analysis"]["findings"][0]["measured"].as_f64().unwrap();
    let geo_nonce = ((measured - NONCE_BASE_DEG) / NONCE_STEP_DEG).round() as u64;
    image_nonce % NONCE_SPAN == geo_nonce
}

pub struct StressOutcome {
    pub ingested: u64,
    pub reads: u64,
    pub mismatches: u64,
}

/// Hammers ingest from two users while four readers poll /get_posture.
pub async fn stress_register(duration: Duration) -> StressOutcome {
    let h = harness();
    let second = h.state.store().create_user("second", "another-secret").unwrap().token;
    let stop = Arc::new(AtomicBool::new(false));
    let nonce = Arc::new(AtomicU64::new(1));
    let ingested = Arc::new(AtomicU64::new(0));
    let (reads, mismatches) = (Arc::new(AtomicU64::new(0)), Arc::new(AtomicU64::new(0)));

    let mut tasks = Vec::new();
    for token in [h.token.clone(), second] {
        let (app, stop, nonce, ingested) = (h.app.clone(), stop.clone(), nonce.clone(), ingested.clone());
        tasks.push(tokio::spawn(async move {
            let mut ts = 1_700_000_000_000i64;
            while !stop.load(Ordering::Relaxed) {
                let batch: Vec<String> = (0..4)
                    .map(|_| {
                        ts += 33;
                        nonce_line(nonce.fetch_add(1, Ordering::Relaxed), ts)
                    })
                    .collect();
                let (status, _) = call(&app, Method::POST, "/ingest", Some(&token), batch.join("\n")).await;
                assert_eq!(status, StatusCode::OK);
                ingested.fetch_add(4, Ordering::Relaxed);
                tokio::task::yield_now().await;
            }
        }));
    }
    for _ in 0..4 {
        let (app, stop, reads, mismatches) = (h.app.clone(), stop.clone(), reads.clone(), mismatches.clone());
        tasks.push(tokio::spawn(async move {
            while !stop.load(Ordering::Relaxed) {
                let (status, body) = call(&app, Method::GET, "/get_posture", None, Body::empty()).await;
                if status == StatusCode::SERVICE_UNAVAILABLE {
                    tokio::task::yield_now().await;
                    continue;
                }
                assert_eq!(status, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
                reads.fetch_add(1, Ordering::Relaxed);
                if !nonce_pair_matches(&json(&body)) {
                    mismatches.fetch_add(1, Ordering::Relaxed);
                }
                tokio::task::yield_now().await;
            }
        }));
    }
    let started = Instant::now();
    while started.elapsed() < duration {
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    stop.store(true, Ordering::Relaxed);
    for t in tasks {
        t.await.unwrap();
    }
    StressOutcome {
        ingested: ingested.load(Ordering::Relaxed),
        reads: reads.load(Ordering::Relaxed),
        mismatches: mismatches.load(Ordering::Relaxed),
    }
}
