//! HTTP review service under `/api/v1`.
//!
//! | method | path                                         | response                 |
//! |--------|----------------------------------------------|--------------------------|
//! | GET    | `/recordings`                                | `[RecordingSummary]`     |
//! | GET    | `/recordings/{id}/epochs?flagged=true`       | `[EpochSummary]`         |
//! | GET    | `/recordings/{id}/epochs/{n}/signal`         | `Signal`                 |
//! | POST   | `/recordings/{id}/epochs/{n}/review`         | `ReviewDecision`         |
//! | GET    | `/recordings/{id}/hypnogram?corrected=true`  | `CorrectedHypnogram`     |
//!
//! Errors are `{"error": "..."}` with status 404 (unknown recording or
//! epoch), 422 (invalid stage or reviewer), 409 (stale `expected_revision`)
//! or 401 (missing token when one is configured).
//!
//! Decisions are appended to `reviews.jsonl`, one `ReviewDecision` per line;
//! the active state is the last decision per epoch, replayed at startup.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hypno_core::{SleepStage, NUM_STAGES};
use serde::{Deserialize, Serialize};

use crate::commands::{read_predictions, CONFIG_SNAPSHOT, PREDICTIONS_FILE, QUERY_FILE};
use crate::config::RunConfig;
use crate::error::{read, Error, Result};
use crate::export::PredictionRecord;
use crate::ingest::{read_manifest, CachedRecording};

pub const REVIEWS_FILE: &str = "reviews.jsonl";
pub const TOKEN_HEADER: &str = "x-review-token";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewDecision {
    pub recording_id: String,
    pub epoch_index: usize,
    pub predicted: SleepStage,
    pub reviewed: SleepStage,
    pub reviewer: String,
    /// Milliseconds since the Unix epoch.
    pub timestamp_ms: u64,
    /// 1 for the first decision on an epoch, then incremented.
    pub revision: u64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ReviewRequest {
    pub stage: String,
    pub reviewer: String,
    /// Current revision the client saw (0 before any decision).
    pub expected_revision: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingSummary {
    pub recording: String,
    pub epochs: usize,
    pub flagged: usize,
    pub reviewed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub predicted: SleepStage,
    pub mu: [f64; NUM_STAGES],
    pub var: [f64; NUM_STAGES],
    pub flagged: bool,
    pub criterion_score: f64,
    pub rank: usize,
    pub label: Option<SleepStage>,
    pub decision: Option<ReviewDecision>,
    pub revision: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub recording: String,
    pub epoch: usize,
    pub sample_rate: f64,
    pub samples: Vec<f32>,
    /// Sample range `[start, end)` of the scored centre epoch.
    pub center: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypnogramEpoch {
    pub epoch: usize,
    pub model_stage: SleepStage,
    pub flagged: bool,
    pub decision: Option<ReviewDecision>,
    pub final_stage: SleepStage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectedHypnogram {
    pub recording: String,
    pub corrected: bool,
    pub epochs: Vec<HypnogramEpoch>,
}

type Key = (String, usize);

/// Active decision and revision per epoch: a fold over the log in order,
/// later entries replacing earlier ones.
pub fn materialize<'a>(log: impl IntoIterator<Item = &'a ReviewDecision>) -> BTreeMap<Key, ReviewDecision> {
    let mut out = BTreeMap::new();
    for d in log {
        out.insert((d.recording_id.clone(), d.epoch_index), d.clone());
    }
    out
}

struct ReviewLog {
    path: PathBuf,
    active: BTreeMap<Key, ReviewDecision>,
}

impl ReviewLog {
    fn open(path: PathBuf) -> Result<Self> {
        let log: Vec<ReviewDecision> = if path.exists() {
            let text =
                String::from_utf8(read(&path)?).map_err(|_| Error::Data(format!("{}: not UTF-8", path.display())))?;
            let complete = text.rfind('\n').map_or("", |i| &text[..=i]);
            // a final line without a newline is an interrupted append
            crate::formats::from_jsonl(complete).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        } else {
            Vec::new()
        };
        Ok(Self {
            active: materialize(&log),
            path,
        })
    }

    fn revision(&self, key: &Key) -> u64 {
        self.active.get(key).map_or(0, |d| d.revision)
    }

    fn append(&mut self, d: ReviewDecision) -> Result<ReviewDecision> {
        let mut line = serde_json::to_vec(&d)?;
        line.push(b'\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        f.write_all(&line)
            .and_then(|_| f.sync_data())
            .map_err(|e| Error::io(&self.path, e))?;
        self.active.insert((d.recording_id.clone(), d.epoch_index), d.clone());
        Ok(d)
    }
}

struct RecordingEntry {
    /// Sorted by epoch.
    predictions: Vec<PredictionRecord>,
    cache: Option<CachedRecording>,
}

pub struct AppState {
    recordings: BTreeMap<String, RecordingEntry>,
    cache_dir: Option<PathBuf>,
    reviews: Mutex<ReviewLog>,
    token: Option<String>,
}

impl AppState {
    /// Serves a run directory: its query export when present, else its
    /// prediction export; signals come from the cache named in the run's
    /// config snapshot.
    pub fn open(run: &Path, token: Option<String>) -> Result<Self> {
        let preds = [QUERY_FILE, PREDICTIONS_FILE]
            .into_iter()
            .map(|f| run.join(f))
            .find(|p| p.exists())
            .ok_or_else(|| Error::Data(format!("{}: no prediction export", run.display())))?;
        let snapshot = run.join(CONFIG_SNAPSHOT);
        let cache_dir = if snapshot.exists() {
            let text = String::from_utf8(read(&snapshot)?)
                .map_err(|_| Error::Config("config snapshot is not UTF-8".into()))?;
            Some(RunConfig::from_toml(&text)?.data.cache_dir)
        } else {
            None
        };
        Self::from_parts(read_predictions(&preds)?, cache_dir, run.join(REVIEWS_FILE), token)
    }

    pub fn from_parts(
        predictions: Vec<PredictionRecord>,
        cache_dir: Option<PathBuf>,
        reviews: PathBuf,
        token: Option<String>,
    ) -> Result<Self> {
        let manifest = cache_dir.as_deref().and_then(|d| read_manifest(d).ok());
        let mut recordings: BTreeMap<String, RecordingEntry> = BTreeMap::new();
        for p in predictions {
            recordings
                .entry(p.recording.clone())
                .or_insert_with(|| RecordingEntry {
                    predictions: Vec::new(),
                    cache: manifest
                        .as_ref()
                        .and_then(|m| m.recordings.iter().find(|r| r.recording_id == p.recording).cloned()),
                })
                .predictions
                .push(p);
        }
        for r in recordings.values_mut() {
            r.predictions.sort_by_key(|p| p.epoch);
            if r.predictions.windows(2).any(|w| w[0].epoch == w[1].epoch) {
                return Err(Error::Data(format!(
                    "duplicate epochs for {}",
                    r.predictions[0].recording
                )));
            }
        }
        Ok(Self {
            recordings,
            cache_dir,
            reviews: Mutex::new(ReviewLog::open(reviews)?),
            token,
        })
    }

    /// Active decisions, for inspection and tests.
    pub fn decisions(&self) -> BTreeMap<Key, ReviewDecision> {
        self.reviews.lock().unwrap().active.clone()
    }
}

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

fn not_found(what: String) -> ApiError {
    ApiError(StatusCode::NOT_FOUND, what)
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

type Shared = Arc<AppState>;
type ApiResult<T> = std::result::Result<Json<T>, ApiError>;

fn recording<'a>(s: &'a AppState, id: &str) -> std::result::Result<&'a RecordingEntry, ApiError> {
    s.recordings
        .get(id)
        .ok_or_else(|| not_found(format!("unknown recording {id}")))
}

fn epoch<'a>(r: &'a RecordingEntry, id: &str, n: usize) -> std::result::Result<&'a PredictionRecord, ApiError> {
    r.predictions
        .binary_search_by_key(&n, |p| p.epoch)
        .map(|i| &r.predictions[i])
        .map_err(|_| not_found(format!("recording {id} has no scored epoch {n}")))
}

async fn list_recordings(State(s): State<Shared>) -> ApiResult<Vec<RecordingSummary>> {
    let active = s.reviews.lock().unwrap().active.clone();
    Ok(Json(
        s.recordings
            .iter()
            .map(|(id, r)| RecordingSummary {
                recording: id.clone(),
                epochs: r.predictions.len(),
                flagged: r.predictions.iter().filter(|p| p.flagged).count(),
                reviewed: active.keys().filter(|(rid, _)| rid == id).count(),
            })
            .collect(),
    ))
}

#[derive(Debug, Deserialize)]
struct EpochsQuery {
    #[serde(default)]
    flagged: bool,
}

/// All scored epochs in epoch order, or only the flagged ones in review
/// queue order.
async fn list_epochs(
    State(s): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<EpochsQuery>,
) -> ApiResult<Vec<EpochSummary>> {
    let r = recording(&s, &id)?;
    let reviews = s.reviews.lock().unwrap();
    let mut out: Vec<EpochSummary> = r
        .predictions
        .iter()
        .filter(|p| !q.flagged || p.flagged)
        .map(|p| {
            let key = (id.clone(), p.epoch);
            EpochSummary {
                epoch: p.epoch,
                predicted: p.predicted,
                mu: p.mu,
                var: p.var,
                flagged: p.flagged,
                criterion_score: p.criterion_score,
                rank: p.rank,
                label: p.label,
                decision: reviews.active.get(&key).cloned(),
                revision: reviews.revision(&key),
            }
        })
        .collect();
    if q.flagged {
        out.sort_by_key(|e| (e.rank, e.epoch));
    }
    Ok(Json(out))
}

fn read_window(path: &Path, index: usize) -> Result<Vec<f32>> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut header = [0u8; 16];
    f.read_exact(&mut header).map_err(|e| Error::io(path, e))?;
    let n = u32::from_le_bytes(header[12..16].try_into().unwrap()) as usize;
    f.seek(SeekFrom::Start((16 + index * 4 * n) as u64))
        .map_err(|e| Error::io(path, e))?;
    let mut buf = vec![0u8; 4 * n];
    f.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(buf
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect())
}

async fn signal(State(s): State<Shared>, UrlPath((id, n)): UrlPath<(String, usize)>) -> ApiResult<Signal> {
    let r = recording(&s, &id)?;
    epoch(r, &id, n)?;
    let (Some(cache), Some(dir)) = (&r.cache, &s.cache_dir) else {
        return Err(not_found(format!("no cached signal for {id}")));
    };
    let index = cache
        .windows
        .iter()
        .position(|w| w.epoch == n)
        .ok_or_else(|| not_found(format!("no cached window for epoch {n}")))?;
    let samples = read_window(&dir.join(&cache.samples_file), index)?;
    let third = samples.len() / 3;
    Ok(Json(Signal {
        recording: id,
        epoch: n,
        sample_rate: cache.sample_rate,
        center: (third, 2 * third),
        samples,
    }))
}

async fn review(
    State(s): State<Shared>,
    UrlPath((id, n)): UrlPath<(String, usize)>,
    Json(body): Json<ReviewRequest>,
) -> ApiResult<ReviewDecision> {
    let r = recording(&s, &id)?;
    let p = epoch(r, &id, n)?;
    let stage: SleepStage = body.stage.parse().map_err(|_| {
        ApiError(
            StatusCode::UNPROCESSABLE_ENTITY,
            format!("invalid stage {:?}", body.stage),
        )
    })?;
    if body.reviewer.trim().is_empty() {
        return Err(ApiError(
            StatusCode::UNPROCESSABLE_ENTITY,
            "reviewer must not be empty".into(),
        ));
    }
    let mut log = s.reviews.lock().unwrap();
    let key = (id.clone(), n);
    let current = log.revision(&key);
    if let Some(expected) = body.expected_revision {
        if expected != current {
            return Err(ApiError(
                StatusCode::CONFLICT,
                format!("epoch {n} is at revision {current}, not {expected}"),
            ));
        }
    }
    let timestamp_ms = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64);
    let d = log.append(ReviewDecision {
        recording_id: id,
        epoch_index: n,
        predicted: p.predicted,
        reviewed: stage,
        reviewer: body.reviewer,
        timestamp_ms,
        revision: current + 1,
    })?;
    Ok(Json(d))
}

#[derive(Debug, Deserialize)]
struct HypnogramQuery {
    #[serde(default)]
    corrected: bool,
}

async fn hypnogram(
    State(s): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<HypnogramQuery>,
) -> ApiResult<CorrectedHypnogram> {
    let r = recording(&s, &id)?;
    let reviews = s.reviews.lock().unwrap();
    let epochs = r
        .predictions
        .iter()
        .map(|p| {
            let decision = q
                .corrected
                .then(|| reviews.active.get(&(id.clone(), p.epoch)).cloned())
                .flatten();
            HypnogramEpoch {
                epoch: p.epoch,
                model_stage: p.predicted,
                flagged: p.flagged,
                final_stage: decision.as_ref().map_or(p.predicted, |d| d.reviewed),
                decision,
            }
        })
        .collect();
    Ok(Json(CorrectedHypnogram {
        recording: id,
        corrected: q.corrected,
        epochs,
    }))
}

async fn require_token(State(s): State<Shared>, req: Request, next: Next) -> Response {
    if let Some(token) = &s.token {
        let ok = req
            .headers()
            .get(TOKEN_HEADER)
            .and_then(|v| v.to_str().ok())
            .is_some_and(|v| v == token);
        if !ok {
            return ApiError(StatusCode::UNAUTHORIZED, format!("missing or wrong {TOKEN_HEADER}")).into_response();
        }
    }
    next.run(req).await
}

pub fn router(state: AppState) -> Router {
    let shared = Arc::new(state);
    let api = Router::new()
        .route("/recordings", get(list_recordings))
        .route("/recordings/{id}/epochs", get(list_epochs))
        .route("/recordings/{id}/epochs/{n}/signal", get(signal))
        .route("/recordings/{id}/epochs/{n}/review", post(review))
        .route("/recordings/{id}/hypnogram", get(hypnogram))
        .layer(middleware::from_fn_with_state(shared.clone(), require_token))
        .with_state(shared);
    Router::new().nest("/api/v1", api)
}

pub async fn serve(state: AppState, addr: &str) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::Config(format!("cannot listen on {addr}: {e}")))?;
    eprintln!("review service listening on http://{addr}/api/v1");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::io(addr, e))
}
