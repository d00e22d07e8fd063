//! HTTP session service. Each session owns a model and a derivation tree.
//! Readers take the current tree snapshot; branch requests are serialized
//! per session and swap in a new snapshot when they finish.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use portrule::derivation::{DerivationTree, NodeStatus, RecordOutcome, TreeNodeId};
use portrule::doc::{to_json, BundleDoc, GraphDoc, RuleDoc};
use portrule::error::{BranchError, FormatError, ParseError, TreeError};
use portrule::model::Model;
use portrule::strategy::{parse_with_rules, EvalConfig};
use serde::{Deserialize, Serialize};
use tokio::sync::oneshot;

pub const DEFAULT_LISTEN: &str = "127.0.0.1:7464";

/// Branch requests still running after this long are answered with a job id.
pub const ASYNC_AFTER: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                error: message.into(),
                line: None,
                column: None,
                location: None,
            },
        }
    }

    fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, what)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<ParseError> for ApiError {
    fn from(e: ParseError) -> Self {
        let mut err = Self::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string());
        err.body.line = Some(e.line);
        err.body.column = Some(e.column);
        err
    }
}

impl From<FormatError> for ApiError {
    fn from(e: FormatError) -> Self {
        let mut err = Self::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string());
        if let FormatError::Syntax { line, column, .. } = &e {
            err.body.line = Some(*line);
            err.body.column = Some(*column);
        }
        if let FormatError::Invalid { location, .. } = &e {
            err.body.location = Some(location.clone());
        }
        err
    }
}

impl From<TreeError> for ApiError {
    fn from(e: TreeError) -> Self {
        let status = match e {
            TreeError::UnknownNode(_) => StatusCode::NOT_FOUND,
            TreeError::FailureNode(_) => StatusCode::CONFLICT,
            TreeError::Graph(_) => StatusCode::UNPROCESSABLE_ENTITY,
        };
        Self::new(status, e.to_string())
    }
}

impl From<BranchError> for ApiError {
    fn from(e: BranchError) -> Self {
        match e {
            BranchError::Tree(e) => e.into(),
            BranchError::Parse(e) => e.into(),
            BranchError::Eval(e) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::new(e.status(), e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, e.body_text())
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub async_after: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            async_after: ASYNC_AFTER,
        }
    }
}

struct Session {
    id: String,
    model: Arc<Model>,
    cfg: EvalConfig,
    tree: RwLock<Arc<DerivationTree>>,
    writer: Arc<tokio::sync::Mutex<()>>,
    created: u64,
    updated: AtomicU64,
}

impl Session {
    fn snapshot(&self) -> Arc<DerivationTree> {
        Arc::clone(&self.tree.read().expect("tree lock"))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum JobState {
    Running,
    Done { result: RecordOutcome },
    Failed { error: ErrorBody },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobDoc {
    pub id: String,
    pub session: String,
    #[serde(flatten)]
    pub state: JobState,
}

struct Inner {
    cfg: ServiceConfig,
    sessions: RwLock<BTreeMap<String, Arc<Session>>>,
    jobs: Mutex<BTreeMap<String, JobDoc>>,
    next_session: AtomicU64,
    next_job: AtomicU64,
}

#[derive(Clone)]
pub struct Service {
    inner: Arc<Inner>,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl Service {
    pub fn new(cfg: ServiceConfig) -> Self {
        Service {
            inner: Arc::new(Inner {
                cfg,
                sessions: RwLock::new(BTreeMap::new()),
                jobs: Mutex::new(BTreeMap::new()),
                next_session: AtomicU64::new(1),
                next_job: AtomicU64::new(1),
            }),
        }
    }

    pub fn router(self) -> Router {
        Router::new()
            .route("/sessions", post(create_session).get(list_sessions))
            .route("/sessions/{id}", get(session_info).delete(delete_session))
            .route("/sessions/{id}/tree", get(get_tree))
            .route("/sessions/{id}/state/{node}", get(get_state))
            .route("/sessions/{id}/branch", post(branch))
            .route("/sessions/{id}/series", get(series))
            .route("/sessions/{id}/rules", get(rules))
            .route("/jobs/{id}", get(job))
            .with_state(self)
    }

    fn session(&self, id: &str) -> ApiResult<Arc<Session>> {
        self.inner
            .sessions
            .read()
            .expect("sessions lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown session {id}")))
    }

    fn set_job(&self, id: &str, state: JobState) {
        if let Some(j) = self.inner.jobs.lock().expect("jobs lock").get_mut(id) {
            j.state = state;
        }
    }
}

pub fn router(cfg: ServiceConfig) -> Router {
    Service::new(cfg).router()
}

fn json_text(text: String) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], text).into_response()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub model: BundleDoc,
    /// Extra rules appended to the bundle's.
    #[serde(default)]
    pub rules: Vec<RuleDoc>,
    #[serde(default)]
    pub cfg: EvalConfig,
    #[serde(default)]
    pub snapshot_every: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: String,
    pub cfg: EvalConfig,
    pub nodes: usize,
    pub created: u64,
    pub updated: u64,
}

fn info(s: &Session) -> SessionInfo {
    SessionInfo {
        id: s.id.clone(),
        cfg: s.cfg.clone(),
        nodes: s.snapshot().len(),
        created: s.created,
        updated: s.updated.load(Ordering::Relaxed),
    }
}

async fn create_session(
    State(svc): State<Service>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<SessionInfo>)> {
    let Json(req) = body?;
    let model = Model::from_docs(&req.model, &req.rules)?;
    let mut tree = DerivationTree::new(model.initial.clone());
    if let Some(k) = req.snapshot_every {
        tree.snapshot_every = k;
    }
    let id = format!("s{}", svc.inner.next_session.fetch_add(1, Ordering::Relaxed));
    let t = now();
    let session = Arc::new(Session {
        id: id.clone(),
        model: Arc::new(model),
        cfg: req.cfg,
        tree: RwLock::new(Arc::new(tree)),
        writer: Arc::new(tokio::sync::Mutex::new(())),
        created: t,
        updated: AtomicU64::new(t),
    });
    let body = info(&session);
    svc.inner.sessions.write().expect("sessions lock").insert(id, session);
    Ok((StatusCode::CREATED, Json(body)))
}

async fn list_sessions(State(svc): State<Service>) -> Json<Vec<SessionInfo>> {
    let sessions: Vec<Arc<Session>> = svc.inner.sessions.read().expect("sessions lock").values().cloned().collect();
    Json(sessions.iter().map(|s| info(s)).collect())
}

async fn session_info(State(svc): State<Service>, Path(id): Path<String>) -> ApiResult<Json<SessionInfo>> {
    Ok(Json(info(&*svc.session(&id)?)))
}

async fn delete_session(State(svc): State<Service>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    svc.inner
        .sessions
        .write()
        .expect("sessions lock")
        .remove(&id)
        .map(|_| StatusCode::NO_CONTENT)
        .ok_or_else(|| ApiError::not_found(format!("unknown session {id}")))
}

async fn get_tree(State(svc): State<Service>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(json_text(svc.session(&id)?.snapshot().to_json()))
}

async fn get_state(State(svc): State<Service>, Path((id, node)): Path<(String, String)>) -> ApiResult<Response> {
    let tree = svc.session(&id)?.snapshot();
    let node: TreeNodeId = node
        .parse()
        .map_err(|_| ApiError::not_found(format!("unknown tree node {node}")))?;
    let n = tree.node(node)?;
    Ok(json_text(to_json(&GraphDoc::from_graph(&n.state.graph, true))))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchRequest {
    pub node: TreeNodeId,
    pub strategy: String,
    /// Overrides the session's seed for this run.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Accepted {
    pub job: String,
}

async fn branch(
    State(svc): State<Service>,
    Path(id): Path<String>,
    body: Result<Json<BranchRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(req) = body?;
    let session = svc.session(&id)?;
    let guard = Arc::clone(&session.writer).lock_owned().await;
    let tree = session.snapshot();
    if tree.node(req.node)?.status == NodeStatus::Failure {
        return Err(TreeError::FailureNode(req.node).into());
    }
    parse_with_rules(&req.strategy, &session.model.rules)?;
    let mut cfg = session.cfg.clone();
    if let Some(seed) = req.seed {
        cfg.seed = seed;
    }

    let job_id = format!("j{}", svc.inner.next_job.fetch_add(1, Ordering::Relaxed));
    svc.inner.jobs.lock().expect("jobs lock").insert(
        job_id.clone(),
        JobDoc {
            id: job_id.clone(),
            session: id.clone(),
            state: JobState::Running,
        },
    );
    let (tx, rx) = oneshot::channel::<ApiResult<RecordOutcome>>();
    let worker_svc = svc.clone();
    let worker_job = job_id.clone();
    tokio::spawn(async move {
        let model = Arc::clone(&session.model);
        let run = tokio::task::spawn_blocking(move || {
            let mut next = (*tree).clone();
            next.branch(req.node, &req.strategy, &model, &cfg).map(|out| (next, out))
        })
        .await;
        let result = match run {
            Ok(Ok((next, out))) => {
                *session.tree.write().expect("tree lock") = Arc::new(next);
                session.updated.store(now(), Ordering::Relaxed);
                Ok(out)
            }
            Ok(Err(e)) => Err(ApiError::from(e)),
            Err(e) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
        };
        drop(guard);
        worker_svc.set_job(
            &worker_job,
            match &result {
                Ok(out) => JobState::Done { result: out.clone() },
                Err(e) => JobState::Failed { error: e.body.clone() },
            },
        );
        let _ = tx.send(result);
    });

    match tokio::time::timeout(svc.inner.cfg.async_after, rx).await {
        Ok(done) => {
            svc.inner.jobs.lock().expect("jobs lock").remove(&job_id);
            let out = done.map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
            Ok(Json(out).into_response())
        }
        Err(_) => Ok((StatusCode::ACCEPTED, Json(Accepted { job: job_id })).into_response()),
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct SeriesQuery {
    pub node: TreeNodeId,
    pub name: String,
}

async fn series(
    State(svc): State<Service>,
    Path(id): Path<String>,
    query: Result<Query<SeriesQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = query?;
    let session = svc.session(&id)?;
    let s = session.snapshot().series(q.node, &q.name, &session.model.signature)?;
    Ok(Json(s).into_response())
}

async fn rules(State(svc): State<Service>, Path(id): Path<String>) -> ApiResult<Json<Vec<RuleDoc>>> {
    let session = svc.session(&id)?;
    Ok(Json(session.model.rules.iter().map(|r| RuleDoc::from_rule(r)).collect()))
}

async fn job(State(svc): State<Service>, Path(id): Path<String>) -> ApiResult<Json<JobDoc>> {
    svc.inner
        .jobs
        .lock()
        .expect("jobs lock")
        .get(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("unknown job {id}")))
}

/// Serves until the process is stopped.
pub async fn serve(listen: &str, cfg: ServiceConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(listen).await?;
    axum::serve(listener, router(cfg)).await
}
