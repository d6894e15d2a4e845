use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use nl2plan::pddl::{parse_domain, parse_problem};
use nl2plan::pipeline::{
    usage_totals, Artifact, FeedbackInput, FeedbackSource, PipelineError, PlanArtifact, ResumeRequest, RunConfig,
    RunManifest, Runner, Seed, StepId, MANIFEST, NO_PLAN_FILE, PLAN_FILE, USAGE_FILE,
};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::OwnedMutexGuard;

#[derive(Debug, thiserror::Error)]
#[error("{code}: {message}")]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    /// Every machine code the API returns, with its HTTP status.
    pub const CODES: &'static [(&'static str, u16)] = &[
        ("invalid-request", 400),
        ("empty-description", 400),
        ("invalid-config", 400),
        ("missing-domain", 400),
        ("missing-problem", 400),
        ("invalid-pddl", 400),
        ("invalid-feedback", 400),
        ("not-found", 404),
        ("step-not-reached", 409),
        ("not-awaiting-feedback", 409),
        ("busy", 409),
        ("invalid-edit", 422),
        ("internal", 500),
        ("provider-unavailable", 503),
    ];

    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        let status = Self::CODES.iter().find(|(c, _)| *c == code).map_or(500, |(_, s)| *s);
        ApiError { status: StatusCode::from_u16(status).unwrap(), code, message: message.into() }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let code = match &e {
            PipelineError::EmptyDescription => "empty-description",
            PipelineError::InvalidConfig(_) => "invalid-config",
            PipelineError::MissingDomain(_) => "missing-domain",
            PipelineError::MissingProblem => "missing-problem",
            PipelineError::Llm(_) => "provider-unavailable",
            PipelineError::UnknownRun(_) => "not-found",
            PipelineError::StepNotReached { .. } => "step-not-reached",
            PipelineError::NotAwaitingFeedback { .. } => "not-awaiting-feedback",
            PipelineError::Busy(_) => "busy",
            PipelineError::InvalidEdit { .. } => "invalid-edit",
            _ => "internal",
        };
        ApiError::new(code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new("invalid-request", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "code": self.code, "message": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

struct Inner {
    runner: Runner,
    base: RunConfig,
    locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
}

/// Shared by all handlers. Runs are only mutated while holding their lock;
/// reads go straight to the files on disk.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(runner: Runner, base: RunConfig) -> Self {
        AppState(Arc::new(Inner { runner, base, locks: Mutex::new(HashMap::new()) }))
    }

    pub fn runner(&self) -> &Runner {
        &self.0.runner
    }

    fn try_lock(&self, id: &str) -> ApiResult<OwnedMutexGuard<()>> {
        let lock = self.0.locks.lock().unwrap().entry(id.to_string()).or_default().clone();
        lock.try_lock_owned().map_err(|_| ApiError::new("busy", format!("run {id} is busy")))
    }

    /// Executes a run in the background; the guard is released when the
    /// run finishes, parks or fails.
    fn spawn(&self, id: String, guard: OwnedMutexGuard<()>) {
        let runner = self.0.runner.clone();
        tokio::task::spawn_blocking(move || {
            let _guard = guard;
            if let Err(e) = runner.execute(&id) {
                tracing::error!(run = %id, "execution stopped: {e}");
            }
        });
    }

    /// Picks up runs a previous process left running.
    pub fn recover(&self) -> ApiResult<Vec<String>> {
        let mut ids = Vec::new();
        for m in self.0.runner.list()? {
            if m.status == nl2plan::pipeline::RunStatus::Running {
                let guard = self.try_lock(&m.id)?;
                self.spawn(m.id.clone(), guard);
                ids.push(m.id);
            }
        }
        Ok(ids)
    }

    fn run_dir(&self, id: &str) -> ApiResult<PathBuf> {
        let store = self.0.runner.store();
        if !store.exists(id) {
            return Err(ApiError::new("not-found", format!("unknown run {id}")));
        }
        Ok(store.dir(id))
    }
}

/// A persisted JSON file, served byte for byte.
fn json_file(path: &Path) -> ApiResult<Response> {
    let bytes = std::fs::read(path).map_err(|e| ApiError::new("internal", format!("{}: {e}", path.display())))?;
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
}

fn parse_step(s: &str) -> ApiResult<StepId> {
    s.parse().map_err(|e: String| ApiError::new("not-found", e))
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRun {
    pub description: String,
    /// Overrides of the service's default configuration.
    #[serde(default)]
    pub config: Option<Value>,
    /// Shorthand for the same feedback source on every LLM step.
    #[serde(default)]
    pub feedback: Option<FeedbackSource>,
    /// Stored domain PDDL, for runs starting at task extraction or planning.
    #[serde(default)]
    pub domain: Option<String>,
    #[serde(default)]
    pub problem: Option<String>,
}

impl AppState {
    /// Resolves a request into the configuration and seed of a new run.
    pub fn prepare(&self, req: &CreateRun) -> ApiResult<(RunConfig, Seed)> {
        if req.description.trim().is_empty() {
            return Err(PipelineError::EmptyDescription.into());
        }
        let mut config = serde_json::to_value(&self.0.base).expect("config serializes");
        if let Some(over) = req.config.clone() {
            merge(&mut config, over);
        }
        let mut config: RunConfig =
            serde_json::from_value(config).map_err(|e| ApiError::new("invalid-config", e.to_string()))?;
        if let Some(f) = req.feedback {
            config = config.with_feedback(f);
        }
        config.check()?;
        let bad = |what: &str, e: String| ApiError::new("invalid-pddl", format!("{what}: {e}"));
        let domain = match &req.domain {
            Some(t) => Some(parse_domain(t).map_err(|e| bad("domain", e.to_string()))?),
            None => None,
        };
        let problem = match (&req.problem, &domain) {
            (Some(t), Some(d)) => Some(parse_problem(t, d).map_err(|e| bad("problem", e.to_string()))?),
            (Some(_), None) => return Err(PipelineError::MissingDomain(config.start_step).into()),
            _ => None,
        };
        Ok((config, Seed { domain, problem }))
    }
}

async fn create_run(State(s): State<AppState>, body: Result<Json<CreateRun>, JsonRejection>) -> ApiResult<Response> {
    let Json(req) = body?;
    let (config, seed) = s.prepare(&req)?;
    if config.start_step.uses_llm() {
        s.0.runner.provider(&config.provider).map_err(PipelineError::from)?;
    }
    let m = s.0.runner.create(&req.description, config, seed)?;
    let guard = s.try_lock(&m.id)?;
    s.spawn(m.id.clone(), guard);
    Ok((StatusCode::ACCEPTED, Json(m)).into_response())
}

async fn list_runs(State(s): State<AppState>) -> ApiResult<Json<Vec<RunManifest>>> {
    Ok(Json(s.0.runner.list()?))
}

async fn get_run(State(s): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    json_file(&s.run_dir(&id)?.join(MANIFEST))
}

async fn get_step(State(s): State<AppState>, UrlPath((id, n)): UrlPath<(String, String)>) -> ApiResult<Response> {
    let dir = s.run_dir(&id)?;
    let step = parse_step(&n)?;
    let path = dir.join(format!("step_{}.json", step.number()));
    if !path.is_file() {
        return Err(PipelineError::StepNotReached { run: id, step }.into());
    }
    json_file(&path)
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeedbackBody {
    Approve,
    Text { text: String },
    /// Replaces the step's result and reruns what follows.
    Edit { text: String },
}

async fn post_feedback(
    State(s): State<AppState>,
    UrlPath((id, n)): UrlPath<(String, String)>,
    body: Result<Json<FeedbackBody>, JsonRejection>,
) -> ApiResult<Json<RunManifest>> {
    let Json(body) = body?;
    s.run_dir(&id)?;
    let step = parse_step(&n)?;
    let guard = s.try_lock(&id)?;
    let runner = &s.0.runner;
    let m = match body {
        FeedbackBody::Approve => runner.submit_feedback(&id, step, FeedbackInput::Approve)?,
        FeedbackBody::Text { text } if text.trim().is_empty() => {
            return Err(ApiError::new("invalid-feedback", "feedback text is empty; approve instead"))
        }
        FeedbackBody::Text { text } => runner.submit_feedback(&id, step, FeedbackInput::Text(text))?,
        FeedbackBody::Edit { text } => runner.prepare_resume(
            &id,
            ResumeRequest { from_step: Some(step), artifact_text: Some(text), task_description: None },
        )?,
    };
    s.spawn(id, guard);
    Ok(Json(m))
}

async fn post_resume(
    State(s): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<ResumeRequest>, JsonRejection>,
) -> ApiResult<Json<RunManifest>> {
    let Json(req) = body?;
    s.run_dir(&id)?;
    let guard = s.try_lock(&id)?;
    let m = s.0.runner.prepare_resume(&id, req)?;
    s.spawn(id, guard);
    Ok(Json(m))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PlanView {
    pub found: bool,
    /// `plan.txt`, or the no-plan notice.
    pub text: String,
    pub result: PlanArtifact,
}

async fn get_plan(State(s): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<PlanView>> {
    let dir = s.run_dir(&id)?;
    let not_reached = || ApiError::from(PipelineError::StepNotReached { run: id.clone(), step: StepId::Planning });
    let rec = s.0.runner.store().load_step(&id, StepId::Planning)?.ok_or_else(not_reached)?;
    let Some(Artifact::Plan(result)) = rec.artifact else { return Err(not_reached()) };
    let read = |f: &str| std::fs::read_to_string(dir.join(f)).ok();
    let (found, text) = match (read(PLAN_FILE), read(NO_PLAN_FILE)) {
        (Some(t), _) => (true, t),
        (None, Some(t)) => (false, t),
        _ => return Err(not_reached()),
    };
    Ok(Json(PlanView { found, text, result }))
}

async fn get_usage(State(s): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    let dir = s.run_dir(&id)?;
    if dir.join(USAGE_FILE).is_file() {
        return json_file(&dir.join(USAGE_FILE));
    }
    Ok(Json(usage_totals(&dir)?).into_response())
}

async fn codes() -> Json<Value> {
    Json(ApiError::CODES.iter().map(|(c, s)| serde_json::json!({ "code": c, "status": s })).collect())
}

async fn no_route() -> ApiError {
    ApiError::new("not-found", "no such endpoint")
}

pub fn router(state: AppState, ui_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/runs", post(create_run).get(list_runs))
        .route("/runs/:id", get(get_run))
        .route("/runs/:id/steps/:n", get(get_step))
        .route("/runs/:id/steps/:n/feedback", post(post_feedback))
        .route("/runs/:id/resume", post(post_resume))
        .route("/runs/:id/plan", get(get_plan))
        .route("/runs/:id/usage", get(get_usage))
        .route("/error-codes", get(codes))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => api.fallback(no_route),
    }
}
