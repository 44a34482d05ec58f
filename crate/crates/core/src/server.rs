//! HTTP segmentation service: immediate and recommend modes, feedback
//! collection, health, and feedback export for retraining.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::EmbeddingTable;
use crate::segmenter::{InferenceConfig, SegmenterModel};
use crate::textcore::{despace, normalize_whitespace};

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("{0}")]
    Load(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A model together with the identifier reported to clients.
#[derive(Debug)]
pub struct LoadedModel {
    pub model: SegmenterModel,
    /// Hex SHA-256 of the serialized model.
    pub id: String,
}

impl LoadedModel {
    pub fn new(model: SegmenterModel) -> Self {
        let id = hex::encode(Sha256::digest(model.to_bytes()));
        Self { model, id }
    }

    pub fn from_files(model: &Path, embeddings: &Path) -> Result<Self, ServerError> {
        let table = EmbeddingTable::load(embeddings, None)
            .map_err(|e| ServerError::Load(format!("embeddings {}: {e}", embeddings.display())))?;
        let bytes = std::fs::read(model).map_err(|source| ServerError::Io {
            path: model.to_path_buf(),
            source,
        })?;
        let m = SegmenterModel::from_bytes(&bytes, Arc::new(table))
            .map_err(|e| ServerError::Load(format!("model {}: {e}", model.display())))?;
        Ok(Self {
            model: m,
            id: hex::encode(Sha256::digest(&bytes)),
        })
    }
}

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub model: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub port: u16,
    pub threshold: f32,
    pub overlap: usize,
    pub feedback_log: PathBuf,
    pub max_chars: usize,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            model: None,
            embeddings: None,
            port: 8080,
            threshold: 0.5,
            overlap: 30,
            feedback_log: PathBuf::from("feedback.jsonl"),
            max_chars: 10_000,
        }
    }
}

/// Shared service state. The model slot is swapped atomically; handlers
/// clone the `Arc` and never hold the lock while computing.
pub struct AppState {
    model: RwLock<Option<Arc<LoadedModel>>>,
    feedback: Mutex<Option<File>>,
    feedback_path: PathBuf,
    threshold: f32,
    overlap: usize,
    max_chars: usize,
    started: Instant,
}

impl AppState {
    pub fn new(config: &ServerConfig, model: Option<LoadedModel>) -> Self {
        Self {
            model: RwLock::new(model.map(Arc::new)),
            feedback: Mutex::new(None),
            feedback_path: config.feedback_log.clone(),
            threshold: config.threshold,
            overlap: config.overlap,
            max_chars: config.max_chars,
            started: Instant::now(),
        }
    }

    pub fn model(&self) -> Option<Arc<LoadedModel>> {
        self.model.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Replaces the served model; in-flight requests finish on the old one.
    pub fn swap_model(&self, model: Option<LoadedModel>) {
        *self.model.write().unwrap_or_else(|e| e.into_inner()) = model.map(Arc::new);
    }

    fn inference_config(&self, model: &SegmenterModel) -> InferenceConfig {
        let l_max = model.config().l_max;
        InferenceConfig {
            threshold: self.threshold,
            overlap: self.overlap.min(l_max - 1),
            l_max,
        }
    }

    fn append_feedback(&self, line: &str) -> std::io::Result<()> {
        let mut guard = self.feedback.lock().unwrap_or_else(|e| e.into_inner());
        if guard.is_none() {
            *guard = Some(OpenOptions::new().create(true).append(true).open(&self.feedback_path)?);
        }
        let file = guard.as_mut().expect("opened above");
        file.write_all(line.as_bytes())?;
        file.sync_data()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentMode {
    #[default]
    Immediate,
    Recommend,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentRequest {
    pub text: String,
    #[serde(default)]
    pub mode: SegmentMode,
}

#[derive(Debug, PartialEq, Deserialize, Serialize)]
pub struct SegmentResponse {
    pub segmented: String,
    pub boundaries: Vec<u8>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub scores: Option<Vec<f32>>,
    pub model_id: String,
}

#[derive(Debug, Deserialize, Serialize)]
pub struct FeedbackRequest {
    pub original: String,
    pub suggested: String,
    pub accepted: String,
    #[serde(default)]
    pub client_id: String,
}

/// One line of the feedback log.
#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
pub struct FeedbackRecord {
    pub id: String,
    pub original: String,
    pub suggested: String,
    pub accepted: String,
    /// UTC milliseconds since the Unix epoch.
    pub timestamp: u64,
    pub client_id: String,
    /// The user accepted the suggestion unchanged.
    pub confirmation: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FeedbackResponse {
    pub accepted: bool,
    pub id: String,
    pub confirmation: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub model_id: Option<String>,
    pub uptime_seconds: f64,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": message.into() }))).into_response()
}

/// Index of the first character (after removing whitespace) where the two
/// texts differ, or `None` if they carry the same characters.
pub fn first_altered_char(original: &str, edited: &str) -> Option<usize> {
    let (a, _) = despace(original);
    let (b, _) = despace(edited);
    let (a, b) = (a.chars(), b.chars());
    match a.iter().zip(b).position(|(x, y)| x != y) {
        Some(i) => Some(i),
        None if a.len() != b.len() => Some(a.len().min(b.len())),
        None => None,
    }
}

async fn segment(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let req: SegmentRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed request: {e}")),
    };
    let len = req.text.chars().count();
    if len > state.max_chars {
        return error(
            StatusCode::PAYLOAD_TOO_LARGE,
            format!("text has {len} characters, limit is {}", state.max_chars),
        );
    }
    let Some(loaded) = state.model() else {
        return error(StatusCode::SERVICE_UNAVAILABLE, "no model loaded");
    };
    let cfg = state.inference_config(&loaded.model);
    let result = tokio::task::spawn_blocking(move || {
        let seg = loaded.model.analyze(&req.text, &cfg);
        (seg, req, loaded)
    })
    .await;
    let (seg, req, loaded) = match result {
        Ok(r) => r,
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, format!("inference task failed: {e}")),
    };
    let seg = match seg {
        Ok(s) => s,
        Err(e) => return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    };
    if first_altered_char(&req.text, &seg.text).is_some() {
        log::error!("segmentation altered characters; refusing to respond");
        return error(StatusCode::INTERNAL_SERVER_ERROR, "segmentation altered characters");
    }
    Json(SegmentResponse {
        segmented: seg.text,
        boundaries: seg.boundaries.to_bits(),
        scores: (req.mode == SegmentMode::Recommend).then_some(seg.scores),
        model_id: loaded.id.clone(),
    })
    .into_response()
}

async fn feedback(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let req: FeedbackRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed feedback: {e}")),
    };
    if let Some(pos) = first_altered_char(&req.original, &req.accepted) {
        return (
            StatusCode::UNPROCESSABLE_ENTITY,
            Json(serde_json::json!({
                "error": "accepted text alters characters of the original",
                "position": pos,
            })),
        )
            .into_response();
    }
    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0);
    let record = FeedbackRecord {
        id: uuid::Uuid::new_v4().to_string(),
        confirmation: req.accepted == req.suggested,
        original: req.original,
        suggested: req.suggested,
        accepted: req.accepted,
        timestamp,
        client_id: req.client_id,
    };
    let mut line = serde_json::to_string(&record).expect("record serializes");
    line.push('\n');
    let writer = state.clone();
    match tokio::task::spawn_blocking(move || writer.append_feedback(&line)).await {
        Ok(Ok(())) => Json(FeedbackResponse {
            accepted: true,
            id: record.id,
            confirmation: record.confirmation,
        })
        .into_response(),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, format!("feedback log: {e}")),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, format!("feedback task failed: {e}")),
    }
}

async fn health(State(state): State<Arc<AppState>>) -> Json<HealthResponse> {
    let model = state.model();
    Json(HealthResponse {
        status: if model.is_some() { "ok" } else { "degraded" }.into(),
        model_id: model.map(|m| m.id.clone()),
        uptime_seconds: state.started.elapsed().as_secs_f64(),
    })
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/segment", post(segment))
        .route("/v1/feedback", post(feedback))
        .route("/v1/health", get(health))
        .with_state(state)
}

/// Loads the configured model (if any) and serves until Ctrl-C. On Unix,
/// SIGHUP reloads the model files.
pub async fn serve(config: ServerConfig) -> Result<(), ServerError> {
    let model = match (&config.model, &config.embeddings) {
        (Some(m), Some(e)) => Some(LoadedModel::from_files(m, e)?),
        (None, None) => None,
        _ => {
            return Err(ServerError::Load(
                "--model and --embeddings must be given together".into(),
            ))
        }
    };
    if model.is_none() {
        log::warn!("starting without a model; /v1/segment answers 503");
    }
    let state = Arc::new(AppState::new(&config, model));
    #[cfg(unix)]
    spawn_reloader(state.clone(), config.clone());
    let addr = SocketAddr::from(([0, 0, 0, 0], config.port));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| ServerError::Io {
            path: PathBuf::from(addr.to_string()),
            source,
        })?;
    log::info!("listening on {addr}");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|source| ServerError::Io {
            path: PathBuf::from(addr.to_string()),
            source,
        })
}

#[cfg(unix)]
fn spawn_reloader(state: Arc<AppState>, config: ServerConfig) {
    use tokio::signal::unix::{signal, SignalKind};
    let (Some(model), Some(embeddings)) = (config.model, config.embeddings) else {
        return;
    };
    tokio::spawn(async move {
        let Ok(mut hup) = signal(SignalKind::hangup()) else {
            return;
        };
        while hup.recv().await.is_some() {
            let (m, e) = (model.clone(), embeddings.clone());
            match tokio::task::spawn_blocking(move || LoadedModel::from_files(&m, &e)).await {
                Ok(Ok(loaded)) => {
                    log::info!("reloaded model {}", loaded.id);
                    state.swap_model(Some(loaded));
                }
                Ok(Err(e)) => log::error!("reload failed, keeping current model: {e}"),
                Err(e) => log::error!("reload task failed: {e}"),
            }
        }
    });
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExportReport {
    pub exported: usize,
    /// Lines that did not parse or whose accepted text alters characters.
    pub corrupt: usize,
    /// Records whose accepted text is blank.
    pub empty: usize,
}

/// Writes the accepted text of every valid feedback record, one sentence
/// per line, in corpus format.
pub fn export_feedback<W: Write + ?Sized>(log: &Path, out: &mut W) -> Result<ExportReport, ServerError> {
    let io = |source| ServerError::Io {
        path: log.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(log).map_err(io)?);
    let mut report = ExportReport::default();
    for line in reader.split(b'\n') {
        let line = line.map_err(io)?;
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let record: FeedbackRecord = match serde_json::from_slice(&line) {
            Ok(r) => r,
            Err(_) => {
                report.corrupt += 1;
                continue;
            }
        };
        if first_altered_char(&record.original, &record.accepted).is_some() {
            report.corrupt += 1;
            continue;
        }
        let text = normalize_whitespace(&record.accepted);
        if text.is_empty() {
            report.empty += 1;
            continue;
        }
        writeln!(out, "{text}").map_err(|source| ServerError::Io {
            path: PathBuf::from("<output>"),
            source,
        })?;
        report.exported += 1;
    }
    if report.corrupt > 0 {
        log::warn!("skipped {} corrupt feedback lines", report.corrupt);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn altered_char_positions() {
        assert_eq!(first_altered_char("abc", "a b c"), None);
        assert_eq!(first_altered_char("abc", "abd"), Some(2));
        assert_eq!(first_altered_char("abc", "ab"), Some(2));
        assert_eq!(first_altered_char("나너본지", "나 너 본지"), None);
        assert_eq!(first_altered_char("", ""), None);
    }

    #[test]
    fn request_parsing() {
        let r: SegmentRequest = serde_json::from_str(r#"{"text":"a","mode":"recommend"}"#).unwrap();
        assert_eq!(r.mode, SegmentMode::Recommend);
        let r: SegmentRequest = serde_json::from_str(r#"{"text":"a"}"#).unwrap();
        assert_eq!(r.mode, SegmentMode::Immediate);
        assert!(serde_json::from_str::<SegmentRequest>(r#"{"text":"a","mode":"other"}"#).is_err());
        assert!(serde_json::from_str::<SegmentRequest>(r#"{"mode":"immediate"}"#).is_err());
    }

    #[test]
    fn export_skips_corrupt_lines() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("fb.jsonl");
        let rec = |acc: &str| {
            serde_json::to_string(&FeedbackRecord {
                id: "x".into(),
                original: "ab cd".into(),
                suggested: "abcd".into(),
                accepted: acc.into(),
                timestamp: 1,
                client_id: String::new(),
                confirmation: false,
            })
            .unwrap()
        };
        let content = format!("{}\n{{not json\n{}\n\n{}\n", rec("ab cd"), rec("abXd"), rec("a b c d"));
        std::fs::write(&log, content).unwrap();
        let mut out = Vec::new();
        let r = export_feedback(&log, &mut out).unwrap();
        assert_eq!((r.exported, r.corrupt, r.empty), (2, 2, 0));
        assert_eq!(String::from_utf8(out).unwrap(), "ab cd\na b c d\n");
    }

    #[test]
    fn export_empty_log() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("fb.jsonl");
        std::fs::write(&log, "").unwrap();
        let mut out = Vec::new();
        assert_eq!(export_feedback(&log, &mut out).unwrap(), ExportReport::default());
        assert!(out.is_empty());
    }
}
