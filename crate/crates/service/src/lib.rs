//! HTTP + JSON endpoint for live sessions.
//!
//! | method | path                  | body          | reply                  |
//! |--------|-----------------------|---------------|------------------------|
//! | POST   | `/sessions`           | [`CreateRequest`] | 201 + [`SessionSnapshot`] |
//! | POST   | `/sessions/{id}/event`| [`UserEvent`] | 200 + [`TurnResult`]   |
//! | GET    | `/sessions/{id}`      |               | 200 + [`SessionSnapshot`] |
//! | DELETE | `/sessions/{id}`      |               | 204                    |
//!
//! Errors are `{"error": "..."}` with 400 (bad input), 404 (unknown session)
//! or 409 (session finished). Images and masks travel as base64 PNG strings.
//! Anything else is served from the static UI directory when one is configured.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tower_http::services::ServeDir;

pub use imgdial_core::harness::World;
pub use imgdial_core::session::{SessionConfig, SessionSnapshot, TurnResult, UserEvent};
use imgdial_core::session::{Session, SessionError, SessionPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyChoice {
    Rule,
    Dqn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateRequest {
    pub policy: PolicyChoice,
    /// Checkpoint path for `dqn`; falls back to the server default.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub scene_id: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    pub session: SessionConfig,
    pub default_checkpoint: Option<PathBuf>,
    pub static_dir: Option<PathBuf>,
}

pub struct AppState {
    world: Arc<World>,
    config: ServiceConfig,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    next_id: AtomicU64,
}

impl AppState {
    pub fn new(world: Arc<World>, config: ServiceConfig) -> Arc<Self> {
        Arc::new(Self { world, config, sessions: Mutex::new(HashMap::new()), next_id: AtomicU64::new(1) })
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .lock()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::UnknownSession(id.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("dqn policy needs a checkpoint")]
    NoCheckpoint,
    #[error(transparent)]
    Session(#[from] SessionError),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self {
            ApiError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ApiError::Session(SessionError::Finished) => StatusCode::CONFLICT,
            _ => StatusCode::BAD_REQUEST,
        };
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/event", post(post_event));
    let api = match &state.config.static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    api.with_state(state)
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    Json(req): Json<CreateRequest>,
) -> Result<(StatusCode, Json<SessionSnapshot>), ApiError> {
    let n = state.next_id.fetch_add(1, Ordering::Relaxed);
    let id = format!("s{n}");
    let policy = match req.policy {
        PolicyChoice::Rule => SessionPolicy::rule(&state.world, state.config.session.tau),
        PolicyChoice::Dqn => {
            let path = req.checkpoint.or_else(|| state.config.default_checkpoint.clone()).ok_or(ApiError::NoCheckpoint)?;
            SessionPolicy::from_checkpoint_file(&state.world, path)?
        }
    };
    let session = Session::create(
        id.clone(),
        state.world.clone(),
        policy,
        req.scene_id.as_deref(),
        req.seed.unwrap_or(n),
        state.config.session,
    )?;
    let snapshot = session.snapshot();
    state.sessions.lock().expect("session map poisoned").insert(id, Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(snapshot)))
}

async fn post_event(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(event): Json<UserEvent>,
) -> Result<Json<TurnResult>, ApiError> {
    let session = state.session(&id)?;
    let mut guard = session.lock().expect("session poisoned");
    Ok(Json(guard.user_event(&event)?))
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionSnapshot>, ApiError> {
    let session = state.session(&id)?;
    let guard = session.lock().expect("session poisoned");
    Ok(Json(guard.snapshot()))
}

async fn delete_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    state
        .sessions
        .lock()
        .expect("session map poisoned")
        .remove(&id)
        .map(|_| StatusCode::NO_CONTENT)
        .ok_or(ApiError::UnknownSession(id))
}

/// Bind and serve until the process is stopped.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}
