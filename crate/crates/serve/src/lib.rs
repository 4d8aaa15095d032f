//! HTTP API over audit artifacts for the triage dashboard.
//!
//! | route | |
//! |---|---|
//! | `GET /api/roster?delta=` | students with their group at `delta`, risk flag and explanation |
//! | `GET /api/interventions` | current mark of every marked student |
//! | `GET /api/interventions/{user_id}` | current mark of one student |
//! | `POST /api/interventions` | record a mark `{user_id, marked, note, author?}` |
//! | `GET /api/characterization` | the stored regression report |
//!
//! Everything else falls through to the static dashboard bundle when one is configured.

pub mod journal;
pub mod roster;

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use chrono::Utc;
use serde::Deserialize;
use tokio::sync::{Mutex, RwLock};
use tower_http::services::ServeDir;
use uu_audit::grouping::TrustLevel;

pub use journal::{InterventionMark, Journal, JournalError};
pub use roster::{Artifacts, LoadError, Roster, TriageRow};

pub const JOURNAL_FILE: &str = "interventions.jsonl";
pub const DEFAULT_AUTHOR: &str = "instructor";

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error("server: {0}")]
    Io(#[from] std::io::Error),
}

pub struct AppState {
    artifacts: Option<Artifacts>,
    marks: RwLock<BTreeMap<String, InterventionMark>>,
    journal: Mutex<Journal>,
}

impl AppState {
    /// Loads the artifacts in `dir` if they are there and replays the journal.
    ///
    /// Missing artifacts leave the server up with the data routes answering 409.
    pub fn open(dir: &Path, journal_path: Option<PathBuf>) -> Result<AppState, ServeError> {
        let artifacts = match Artifacts::load(dir) {
            Ok(a) => Some(a),
            Err(LoadError::Missing(_)) => None,
            Err(e) => return Err(e.into()),
        };
        let journal_path = journal_path.unwrap_or_else(|| dir.join(JOURNAL_FILE));
        Ok(AppState::new(artifacts, &journal_path)?)
    }

    pub fn new(artifacts: Option<Artifacts>, journal_path: &Path) -> Result<AppState, JournalError> {
        let marks = journal::replay(journal_path)?;
        Ok(AppState {
            artifacts,
            marks: RwLock::new(marks),
            journal: Mutex::new(Journal::open(journal_path)?),
        })
    }

    pub fn artifacts(&self) -> Option<&Artifacts> {
        self.artifacts.as_ref()
    }
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": message.into() }))).into_response()
}

fn not_loaded() -> Response {
    error(StatusCode::CONFLICT, "audit artifacts are not loaded")
}

#[derive(Debug, Deserialize)]
struct RosterQuery {
    delta: Option<f64>,
}

async fn get_roster(State(state): State<Arc<AppState>>, Query(q): Query<RosterQuery>) -> Response {
    let delta = match q.delta.map_or(Ok(TrustLevel::default()), TrustLevel::new) {
        Ok(d) => d,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let Some(artifacts) = &state.artifacts else {
        return not_loaded();
    };
    Json(artifacts.roster(delta)).into_response()
}

async fn get_characterization(State(state): State<Arc<AppState>>) -> Response {
    match state.artifacts.as_ref().map(|a| &a.characterization) {
        Some(Some(ch)) => Json(ch).into_response(),
        Some(None) => error(StatusCode::CONFLICT, "no characterization has been computed"),
        None => not_loaded(),
    }
}

async fn list_interventions(State(state): State<Arc<AppState>>) -> Response {
    let marks = state.marks.read().await;
    Json(marks.values().cloned().collect::<Vec<_>>()).into_response()
}

async fn get_intervention(State(state): State<Arc<AppState>>, UrlPath(user_id): UrlPath<String>) -> Response {
    match state.marks.read().await.get(&user_id) {
        Some(mark) => Json(mark).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("no mark for `{user_id}`")),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MarkRequest {
    user_id: String,
    marked: bool,
    #[serde(default)]
    note: String,
    author: Option<String>,
}

async fn post_intervention(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let req: MarkRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
    };
    let Some(artifacts) = &state.artifacts else {
        return not_loaded();
    };
    if !artifacts.contains(&req.user_id) {
        return error(StatusCode::NOT_FOUND, format!("unknown student `{}`", req.user_id));
    }
    let mark = InterventionMark {
        user_id: req.user_id,
        marked: req.marked,
        note: req.note,
        marked_at: Utc::now(),
        author: req.author.unwrap_or_else(|| DEFAULT_AUTHOR.to_string()),
    };
    // The journal lock is held until the in-memory view is updated so the two stay in order.
    let mut journal = state.journal.lock().await;
    if let Err(e) = journal.append(&mark) {
        return error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
    }
    state.marks.write().await.insert(mark.user_id.clone(), mark.clone());
    drop(journal);
    (StatusCode::CREATED, Json(mark)).into_response()
}

pub fn router(state: Arc<AppState>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/roster", get(get_roster))
        .route("/api/characterization", get(get_characterization))
        .route("/api/interventions", get(list_interventions).post(post_intervention))
        .route("/api/interventions/{user_id}", get(get_intervention))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, state: AppState, static_dir: Option<&Path>) -> Result<(), ServeError> {
    let app = router(Arc::new(state), static_dir);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, app).await?;
    Ok(())
}
