//! REST facade over the active-learning engine for a human annotator.
//!
//! | route | purpose |
//! |---|---|
//! | `POST /sessions` | create a session from a dataset source and engine config |
//! | `GET /sessions/{id}` | status, ledger and metrics snapshot |
//! | `GET /sessions/{id}/next` | the pending question (idempotent until answered) |
//! | `POST /sessions/{id}/answer` | answer the pending question |
//!
//! Each session owns one engine behind an async mutex. Answers hold the lock
//! through retraining; a `next` request arriving meanwhile waits up to the
//! long-poll timeout and then gets `409` with status `training`. A second
//! answer posted while one is being processed gets `409` at once.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, OwnedMutexGuard, RwLock};
use tower_http::cors::{Any, CorsLayer};

use multiq_core::config::{load_dataset, DatasetSource};
use multiq_core::engine::{Engine, EngineConfig, Holdout, MetricsRow, PendingQuestion, Phase};
use multiq_core::{Dataset, Error as CoreError, QuestionFamily};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Base directory for relative dataset paths.
    pub data_dir: PathBuf,
    /// How long `next` waits for a retrain before answering `409`.
    pub long_poll: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("."),
            long_poll: Duration::from_secs(5),
        }
    }
}

struct Session {
    engine: Engine,
    pool: Dataset,
}

type SessionRef = Arc<Mutex<Session>>;

#[derive(Clone)]
pub struct AppState {
    cfg: Arc<ServiceConfig>,
    sessions: Arc<RwLock<HashMap<String, SessionRef>>>,
}

impl AppState {
    pub fn new(cfg: ServiceConfig) -> Self {
        Self {
            cfg: Arc::new(cfg),
            sessions: Arc::new(RwLock::new(HashMap::new())),
        }
    }
}

pub fn router(state: AppState) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_status))
        .route("/sessions/{id}/next", get(next_question))
        .route("/sessions/{id}/answer", post(submit_answer))
        .layer(cors)
        .with_state(state)
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(addr: std::net::SocketAddr, cfg: ServiceConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(AppState::new(cfg))).await
}

// ---- errors --------------------------------------------------------------

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    session_status: Option<SessionStatus>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            session_status: None,
        }
    }

    fn not_found(what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("{what} not found"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.message, "status": self.session_status });
        (self.status, Json(body)).into_response()
    }
}

fn engine_error(e: CoreError) -> ApiError {
    let status = match &e {
        CoreError::AnswerOutOfRange { .. } => StatusCode::UNPROCESSABLE_ENTITY,
        CoreError::NoPendingQuestion => StatusCode::CONFLICT,
        CoreError::Config(_) | CoreError::InvalidInput(_) | CoreError::DimensionMismatch { .. } => {
            StatusCode::BAD_REQUEST
        }
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    };
    ApiError::new(status, e.to_string())
}

// ---- payloads ------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    AwaitingAnswer,
    Training,
    BudgetExhausted,
    Failed,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub engine: EngineConfig,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub id: String,
    pub pool_size: usize,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub feature_names: Vec<String>,
    pub seed_questions: usize,
    pub budget: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Member {
    pub index: usize,
    pub features: Vec<f64>,
    /// Pass-through display columns.
    pub metadata: HashMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QuestionPayload {
    /// Logical step; echo it with the answer to guard against stale views.
    pub step: u64,
    pub kind_index: usize,
    pub family: QuestionFamily,
    pub target: Option<usize>,
    pub target_name: Option<String>,
    pub cost: f64,
    pub seed: bool,
    pub entropy: f64,
    pub members: Vec<Member>,
    /// Answer labels, indexed by answer value.
    pub answers: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub budget: f64,
    pub spent: f64,
    pub remaining: f64,
    pub counts: Vec<usize>,
    pub seeds_remaining: usize,
    pub latest: Option<MetricsRow>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NextResponse {
    pub status: SessionStatus,
    pub question: Option<QuestionPayload>,
    pub metrics: MetricsSnapshot,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerBody {
    pub answer: usize,
    #[serde(default)]
    pub step: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AnswerResponse {
    pub accepted: bool,
    pub retrained: bool,
    pub status: SessionStatus,
    pub metrics: MetricsSnapshot,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StatusResponse {
    pub status: SessionStatus,
    pub metrics: MetricsSnapshot,
    pub history: Vec<MetricsRow>,
    pub model_params: Vec<f64>,
}

fn snapshot(s: &Session) -> MetricsSnapshot {
    let ledger = s.engine.ledger();
    MetricsSnapshot {
        budget: ledger.budget,
        spent: ledger.spent,
        remaining: ledger.remaining(),
        counts: ledger.counts.clone(),
        seeds_remaining: s.engine.seeds_remaining(),
        latest: s.engine.metrics().last().cloned(),
    }
}

fn status_of(s: &Session) -> SessionStatus {
    match s.engine.phase() {
        Phase::Exhausted => SessionStatus::BudgetExhausted,
        Phase::Failed(_) => SessionStatus::Failed,
        _ => SessionStatus::AwaitingAnswer,
    }
}

fn payload(s: &Session, p: &PendingQuestion) -> QuestionPayload {
    let members = p
        .question
        .members
        .iter()
        .map(|&i| Member {
            index: i,
            features: s.pool.features[i].clone(),
            metadata: s
                .pool
                .metadata_names
                .iter()
                .cloned()
                .zip(s.pool.metadata.get(i).cloned().unwrap_or_default())
                .collect(),
        })
        .collect();
    let is_class = p.kind.family == QuestionFamily::Class;
    QuestionPayload {
        step: p.step,
        kind_index: p.question.kind_index,
        family: p.kind.family,
        target: (!is_class).then_some(p.question.target),
        target_name: (!is_class).then(|| s.pool.class_names[p.question.target].clone()),
        cost: p.cost,
        seed: p.seed,
        entropy: p.entropy,
        members,
        answers: if is_class {
            s.pool.class_names.clone()
        } else {
            vec!["no".into(), "yes".into()]
        },
    }
}

// ---- handlers ------------------------------------------------------------

async fn lookup(state: &AppState, id: &str) -> Result<SessionRef, ApiError> {
    state
        .sessions
        .read()
        .await
        .get(id)
        .cloned()
        .ok_or_else(|| ApiError::not_found("session"))
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateSession =
        serde_json::from_slice(&body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    if !(req.engine.budget > 0.0) {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "budget must be > 0"));
    }
    req.engine.validate().map_err(engine_error)?;
    let source = match req.dataset {
        DatasetSource::Csv {
            path,
            label_column,
            metadata_columns,
            holdout_path,
            holdout,
        } => DatasetSource::Csv {
            path: state.cfg.data_dir.join(path),
            label_column,
            metadata_columns,
            holdout_path: holdout_path.map(|h| state.cfg.data_dir.join(h)),
            holdout,
        },
        blobs => blobs,
    };
    if let DatasetSource::Csv { path, holdout_path, .. } = &source {
        for p in std::iter::once(path).chain(holdout_path.as_ref()) {
            if !p.is_file() {
                return Err(ApiError::not_found(&format!("dataset {}", p.display())));
            }
        }
    }
    let engine_cfg = req.engine;
    let built = tokio::task::spawn_blocking(move || -> Result<Session, ApiError> {
        let (pool, holdout) =
            load_dataset(&source).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
        let engine = Engine::new(
            pool.features.clone(),
            pool.num_classes(),
            holdout.as_ref().map(Holdout::from),
            engine_cfg,
        )
        .map_err(engine_error)?;
        Ok(Session { engine, pool })
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;

    let created = Created {
        id: uuid::Uuid::new_v4().simple().to_string(),
        pool_size: built.pool.len(),
        num_classes: built.pool.num_classes(),
        class_names: built.pool.class_names.clone(),
        feature_names: built.pool.feature_names.clone(),
        seed_questions: built.engine.seeds_remaining(),
        budget: built.engine.ledger().budget,
    };
    state
        .sessions
        .write()
        .await
        .insert(created.id.clone(), Arc::new(Mutex::new(built)));
    Ok((StatusCode::CREATED, Json(created)).into_response())
}

async fn session_status(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let session = lookup(&state, &id).await?;
    let guard = match tokio::time::timeout(state.cfg.long_poll, session.lock()).await {
        Ok(g) => g,
        Err(_) => return Err(training_conflict()),
    };
    Ok(Json(StatusResponse {
        status: status_of(&guard),
        metrics: snapshot(&guard),
        history: guard.engine.metrics().rows.clone(),
        model_params: guard.engine.model().params().to_vec(),
    })
    .into_response())
}

fn training_conflict() -> ApiError {
    ApiError {
        status: StatusCode::CONFLICT,
        message: "session is retraining".into(),
        session_status: Some(SessionStatus::Training),
    }
}

/// Computes (or returns the cached) pending question on a blocking thread.
async fn ensure_question(mut guard: OwnedMutexGuard<Session>) -> Result<NextResponse, ApiError> {
    tokio::task::spawn_blocking(move || {
        let next = guard.engine.next_question().map_err(engine_error)?;
        let question = next.as_ref().map(|p| payload(&guard, p));
        Ok(NextResponse {
            status: status_of(&guard),
            question,
            metrics: snapshot(&guard),
        })
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn next_question(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let session = lookup(&state, &id).await?;
    let guard = match tokio::time::timeout(state.cfg.long_poll, session.lock_owned()).await {
        Ok(g) => g,
        Err(_) => return Err(training_conflict()),
    };
    Ok(Json(ensure_question(guard).await?).into_response())
}

async fn submit_answer(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let body: AnswerBody =
        serde_json::from_slice(&body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
    let session = lookup(&state, &id).await?;
    let Ok(mut guard) = session.try_lock_owned() else {
        return Err(ApiError::new(StatusCode::CONFLICT, "another answer is being processed"));
    };
    let pending_step = guard.engine.pending().map(|p| p.step);
    match (pending_step, body.step) {
        (None, _) => {
            return Err(ApiError {
                status: StatusCode::CONFLICT,
                message: "no pending question".into(),
                session_status: Some(status_of(&guard)),
            })
        }
        (Some(p), Some(s)) if p != s => {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                format!("answer is for step {s}, pending question is step {p}"),
            ))
        }
        _ => {}
    }
    let answer = body.answer;
    let (retrained, guard) = tokio::task::spawn_blocking(move || {
        let out = guard.engine.submit_answer(answer).map_err(engine_error)?;
        // prepare the next question while still holding the session
        match guard.engine.next_question() {
            Ok(_) | Err(CoreError::TrainingDiverged { .. }) => {}
            Err(e) => return Err(engine_error(e)),
        }
        Ok((out.retrained, guard))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(AnswerResponse {
        accepted: true,
        retrained,
        status: status_of(&guard),
        metrics: snapshot(&guard),
    })
    .into_response())
}
