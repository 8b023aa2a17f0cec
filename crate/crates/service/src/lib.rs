//! HTTP elicitation service: the optimisation loop with a person answering
//! the comparisons.
//!
//! Every session is persisted to `<dir>/<id>.json` on each transition and the
//! index is rebuilt from that directory on start-up. After an answer the next
//! round is computed in the background; until it is ready the session reports
//! status `computing`.

pub mod client;
mod error;
mod session;

use std::collections::HashMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mixbo::bench::Problem;
use mixbo::experiment::load_problem;
use mixbo::{acquire::LoopState, OracleKind, RunConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::{Mutex, RwLock};

pub use error::{ApiError, ErrorBody};
pub use session::{Best, Outcome, PendingPair, PosteriorView, Session, Snapshot, Status};

struct Slot {
    session: Session,
    problem: Arc<Problem>,
}

type SlotRef = Arc<Mutex<Slot>>;

pub struct App {
    dir: PathBuf,
    tables_dir: PathBuf,
    sessions: RwLock<HashMap<String, SlotRef>>,
}

type Shared = Arc<App>;

impl App {
    /// Open (or create) the session directory and reload every saved session.
    ///
    /// Relative table paths in session configs resolve against `tables_dir`.
    /// Must run inside a Tokio runtime: sessions interrupted mid-computation
    /// are resumed in the background.
    pub async fn open(dir: &Path, tables_dir: &Path) -> std::io::Result<Shared> {
        fs::create_dir_all(dir)?;
        let app = Arc::new(App {
            dir: dir.to_path_buf(),
            tables_dir: tables_dir.to_path_buf(),
            sessions: RwLock::new(HashMap::new()),
        });
        let mut resume = Vec::new();
        let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        entries.sort();
        for path in entries {
            let loaded = fs::read_to_string(&path)
                .map_err(|e| e.to_string())
                .and_then(|s| serde_json::from_str::<Session>(&s).map_err(|e| e.to_string()))
                .and_then(|s| {
                    let mut cfg = s.state.config.clone();
                    load_problem(&mut cfg, None).map(|p| (s, p)).map_err(|e| e.to_string())
                });
            match loaded {
                Ok((session, problem)) => {
                    let id = session.id.clone();
                    let computing = session.status == Status::Computing;
                    let slot = Arc::new(Mutex::new(Slot {
                        session,
                        problem: Arc::new(problem),
                    }));
                    if computing {
                        resume.push(slot.clone());
                    }
                    app.sessions.write().await.insert(id, slot);
                }
                Err(e) => log::warn!("skipping {}: {e}", path.display()),
            }
        }
        log::info!("loaded {} sessions from {}", app.sessions.read().await.len(), dir.display());
        for slot in resume {
            tokio::spawn(advance(app.clone(), slot));
        }
        Ok(app)
    }

    async fn slot(&self, id: &str) -> Result<SlotRef, ApiError> {
        self.sessions.read().await.get(id).cloned().ok_or_else(|| ApiError::not_found(id))
    }

    fn persist(&self, session: &Session) -> Result<(), ApiError> {
        session
            .persist(&self.dir)
            .map_err(|e| ApiError::internal(format!("persisting session {}: {e}", session.id)))
    }
}

pub fn router(app: Shared) -> Router {
    Router::new()
        .route("/api/v1/problems", get(list_problems))
        .route("/api/v1/sessions", post(create_session))
        .route("/api/v1/sessions/{id}", get(get_session))
        .route("/api/v1/sessions/{id}/answer", post(post_answer))
        .route("/api/v1/sessions/{id}/history", get(get_history))
        .with_state(app)
}

/// Serve on `addr` until the process is stopped.
pub async fn serve(addr: SocketAddr, dir: &Path, tables_dir: &Path) -> std::io::Result<()> {
    let app = App::open(dir, tables_dir).await?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(app)).await
}

fn new_nonce() -> String {
    uuid::Uuid::new_v4().simple().to_string()
}

/// Compute the next comparison for a session whose status is `computing`.
async fn advance(app: Shared, slot: SlotRef) {
    let (mut state, problem) = {
        let g = slot.lock().await;
        (g.session.state.clone(), g.problem.clone())
    };
    let result = tokio::task::spawn_blocking(move || -> mixbo::Result<LoopState> {
        state.advance(&problem, None)?;
        Ok(state)
    })
    .await;
    let mut g = slot.lock().await;
    match result {
        Ok(Ok(state)) => {
            g.session.state = state;
            g.session.status = Status::AwaitingAnswer;
            g.session.nonce = Some(new_nonce());
        }
        Ok(Err(e)) => {
            log::error!("session {}: {e}", g.session.id);
            g.session.status = Status::Failed;
            g.session.error = Some(e.to_string());
        }
        Err(e) => {
            g.session.status = Status::Failed;
            g.session.error = Some(format!("computation aborted: {e}"));
        }
    }
    if let Err(e) = app.persist(&g.session) {
        log::error!("{}", e.body.message);
    }
}

#[derive(Serialize)]
struct ProblemInfo {
    id: &'static str,
    objectives: Option<usize>,
    dims: Option<usize>,
    objective_names: Vec<String>,
    /// Tabular problems take their shape from `problem.table`.
    requires_table: bool,
    defaults: RunConfig,
}

async fn list_problems() -> Json<Vec<ProblemInfo>> {
    let mut out = Vec::new();
    for id in ["dtlz2", "wfg9", "tabular"] {
        let defaults = RunConfig::for_problem(id).expect("known problem");
        let problem = Problem::by_id(id, None).ok();
        out.push(ProblemInfo {
            id,
            objectives: problem.as_ref().map(Problem::objectives),
            dims: problem.as_ref().map(Problem::dims),
            objective_names: problem.as_ref().map(Problem::objective_names).unwrap_or_default(),
            requires_table: problem.is_none(),
            defaults,
        });
    }
    Json(out)
}

fn session_config(app: &App, doc: &Value) -> Result<(RunConfig, Problem), ApiError> {
    let mut cfg = RunConfig::from_value(doc).map_err(ApiError::from_config_error)?;
    if cfg.model.preference == mixbo::config::PreferenceSource::FixedTruth {
        return Err(ApiError::from_config_error(mixbo::Error::invalid(
            "model.preference",
            "fixed_truth needs a simulated decision maker",
        )));
    }
    if cfg.theory {
        return Err(ApiError::from_config_error(mixbo::Error::invalid(
            "theory",
            "theory checks need ground truth, which elicitation sessions do not have",
        )));
    }
    cfg.oracle = OracleKind::Human;
    if let Some(t) = &cfg.problem.table {
        if Path::new(t).is_relative() {
            cfg.problem.table = Some(app.tables_dir.join(t).to_string_lossy().into_owned());
        }
    }
    let problem = load_problem(&mut cfg, None).map_err(ApiError::from_config_error)?;
    cfg.validate().map_err(ApiError::from_config_error)?;
    Ok((cfg, problem))
}

async fn create_session(State(app): State<Shared>, doc: Result<Json<Value>, JsonRejection>) -> Result<Response, ApiError> {
    let Json(doc) = doc.map_err(ApiError::from_rejection)?;
    let (cfg, problem) = session_config(&app, &doc)?;
    let problem = Arc::new(problem);
    let p = problem.clone();
    let state = tokio::task::spawn_blocking(move || -> mixbo::Result<LoopState> {
        let mut state = LoopState::new(cfg, &p)?;
        state.advance(&p, None)?;
        Ok(state)
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?
    .map_err(ApiError::from_config_error)?;
    let session = Session {
        id: uuid::Uuid::new_v4().simple().to_string(),
        status: Status::AwaitingAnswer,
        nonce: Some(new_nonce()),
        error: None,
        state,
    };
    app.persist(&session)?;
    let snap = session.snapshot(&problem);
    app.sessions
        .write()
        .await
        .insert(session.id.clone(), Arc::new(Mutex::new(Slot { session, problem })));
    Ok((StatusCode::CREATED, Json(snap)).into_response())
}

async fn get_session(State(app): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Json<Snapshot>, ApiError> {
    let slot = app.slot(&id).await?;
    let g = slot.lock().await;
    Ok(Json(g.session.snapshot(&g.problem)))
}

#[derive(Deserialize)]
struct AnswerParams {
    #[serde(default)]
    wait: bool,
}

async fn post_answer(
    State(app): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Query(params): Query<AnswerParams>,
    body: Result<Json<Value>, JsonRejection>,
) -> Result<Response, ApiError> {
    let slot = app.slot(&id).await?;
    let Json(body) = body.map_err(ApiError::from_rejection)?;
    let nonce = body
        .get("nonce")
        .and_then(Value::as_str)
        .ok_or_else(|| ApiError::bad_request("nonce", "missing pending-query nonce"))?;
    let first_wins = match body.get("choice").and_then(Value::as_str) {
        Some("first") => true,
        Some("second") => false,
        other => {
            return Err(ApiError::bad_request(
                "choice",
                format!("choice must be \"first\" or \"second\", got {other:?}"),
            ))
        }
    };
    let computing = {
        let mut g = slot.lock().await;
        let s = &mut g.session;
        match s.status {
            Status::Finished => return Err(ApiError::conflict("session is finished")),
            Status::Computing => return Err(ApiError::conflict("no comparison is pending yet")),
            Status::Failed => return Err(ApiError::conflict("session failed; no comparison is pending")),
            Status::AwaitingAnswer => {}
        }
        if s.nonce.as_deref() != Some(nonce) {
            return Err(ApiError::conflict("stale or duplicate answer"));
        }
        s.state
            .answer(first_wins, None, None)
            .map_err(|e| ApiError::internal(e.to_string()))?;
        s.nonce = None;
        s.status = if s.state.is_finished() { Status::Finished } else { Status::Computing };
        app.persist(s)?;
        s.status == Status::Computing
    };
    if computing {
        let task = tokio::spawn(advance(app.clone(), slot.clone()));
        if params.wait {
            task.await.map_err(|e| ApiError::internal(e.to_string()))?;
        }
    }
    let g = slot.lock().await;
    let code = if g.session.status == Status::Computing { StatusCode::ACCEPTED } else { StatusCode::OK };
    Ok((code, Json(g.session.snapshot(&g.problem))).into_response())
}

#[derive(Deserialize)]
struct HistoryParams {
    #[serde(default)]
    format: Option<String>,
}

async fn get_history(
    State(app): State<Shared>,
    UrlPath(id): UrlPath<String>,
    Query(params): Query<HistoryParams>,
) -> Result<Response, ApiError> {
    let slot = app.slot(&id).await?;
    let records = slot.lock().await.session.state.records.clone();
    match params.format.as_deref() {
        None | Some("json") => Ok(Json(records).into_response()),
        Some("jsonl") => {
            let body = mixbo::record::run_bytes(&records).map_err(|e| ApiError::internal(e.to_string()))?;
            Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
        }
        Some(other) => Err(ApiError::bad_request("format", format!("unknown format {other:?} (json, jsonl)"))),
    }
}
