#[path = "../../core/tests/common/blocksworld.rs"]
mod blocksworld;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use blocksworld::Script;
use http_body_util::BodyExt;
use nl2plan::llm::{ChatExchange, ChatRequest, LlmError, Provider, ProviderKind};
use nl2plan::pipeline::{FeedbackSource, RunConfig, Runner, StepId};
use nl2plan_service::{router, ApiError, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

fn text(name: &str) -> String {
    std::fs::read_to_string(fixtures().join(name)).unwrap().trim_end().to_string()
}

fn base_config(transcripts: &str) -> RunConfig {
    let mut c = RunConfig::default().with_feedback(FeedbackSource::Llm);
    c.provider.kind = ProviderKind::Replay;
    c.provider.transcript_dir = Some(fixtures().join("transcripts").join(transcripts));
    c
}

fn app_with(runner: Runner) -> (Router, AppState) {
    let state = AppState::new(runner, base_config("blocksworld"));
    (router(state.clone(), None), state)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap_or(Value::Null) };
    (status, v)
}

/// Polls the run until its status leaves `running`.
async fn settle(app: &Router, id: &str) -> Value {
    let start = Instant::now();
    loop {
        let (s, m) = call(app, "GET", &format!("/runs/{id}"), None).await;
        assert_eq!(s, StatusCode::OK);
        if m["status"] != "running" {
            return m;
        }
        assert!(start.elapsed() < Duration::from_secs(60), "run {id} did not settle");
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

async fn create(app: &Router, body: Value) -> String {
    let (s, m) = call(app, "POST", "/runs", Some(body)).await;
    assert_eq!(s, StatusCode::ACCEPTED, "{m}");
    m["id"].as_str().unwrap().to_string()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[tokio::test(flavor = "multi_thread")]
async fn replay_run_through_the_api() {
    let tmp = tempfile::tempdir().unwrap();
    let (app, _) = app_with(Runner::new(tmp.path()));
    let (s, m) = call(&app, "POST", "/runs", Some(json!({ "description": text("tasks/blocksworld_easy.txt") }))).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    assert_eq!(m["status"], "running");
    let id = m["id"].as_str().unwrap().to_string();
    let m = settle(&app, &id).await;
    assert_eq!(m["status"], "done", "{m}");

    // every GET equals the persisted JSON
    let dir = tmp.path().join(&id);
    assert_eq!(m, read_json(&dir.join("manifest.json")));
    for n in 1..=6 {
        let (s, rec) = call(&app, "GET", &format!("/runs/{id}/steps/{n}"), None).await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(rec, read_json(&dir.join(format!("step_{n}.json"))));
    }
    let (_, rec) = call(&app, "GET", &format!("/runs/{id}/steps/action_construction"), None).await;
    for a in rec["actions"].as_array().unwrap() {
        assert_eq!(a["passes"].as_array().unwrap().len(), 2);
    }
    let (s, usage) = call(&app, "GET", &format!("/runs/{id}/usage"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(usage, read_json(&dir.join("usage.json")));
    let (s, plan) = call(&app, "GET", &format!("/runs/{id}/plan"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(plan["found"], true);
    assert_eq!(plan["text"], std::fs::read_to_string(dir.join("plan.txt")).unwrap());
    assert_eq!(plan["result"]["verdict"], json!({ "verdict": "valid", "cost": 4 }));
    let (_, list) = call(&app, "GET", "/runs", None).await;
    assert_eq!(list.as_array().unwrap().len(), 1);
}

#[tokio::test(flavor = "multi_thread")]
async fn errors_carry_published_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let (app, _) = app_with(Runner::new(tmp.path()));
    let cases = [
        (json!({ "description": "  " }), "empty-description"),
        (json!({ "description": "x", "config": { "start_step": "task_extraction" } }), "missing-domain"),
        (json!({ "description": "x", "config": { "start_step": "action_construction" } }), "invalid-config"),
        (json!({ "description": "x", "config": { "temperature": 7.0 } }), "invalid-config"),
        (json!({ "description": "x", "config": { "max_action_messages": "many" } }), "invalid-config"),
        (json!({ "description": "x", "domain": "(define (domain" }), "invalid-pddl"),
        (json!({ "description": "x", "unknown": 1 }), "invalid-request"),
        (json!({ "description": "x", "config": { "provider": { "transcript_dir": "/nonexistent/dir" } } }), "provider-unavailable"),
        (
            json!({ "description": "x", "config": { "provider": { "kind": "live", "api_key_env": "NL2PLAN_TEST_UNSET_KEY" } } }),
            "provider-unavailable",
        ),
    ];
    for (body, code) in cases {
        let (s, e) = call(&app, "POST", "/runs", Some(body.clone())).await;
        assert_eq!(e["code"], code, "{body}: {e}");
        let want = ApiError::CODES.iter().find(|(c, _)| *c == code).unwrap().1;
        assert_eq!(s.as_u16(), want, "{body}");
        assert!(e["message"].as_str().is_some_and(|m| !m.is_empty()));
    }
    // rejected requests leave nothing behind
    assert_eq!(std::fs::read_dir(tmp.path()).map(|d| d.count()).unwrap_or(0), 0);

    let (s, e) = call(&app, "GET", "/runs/nope", None).await;
    assert_eq!((s, e["code"].as_str()), (StatusCode::NOT_FOUND, Some("not-found")));
    let (s, _) = call(&app, "GET", "/runs/..%2Fetc", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, e) = call(&app, "POST", "/runs", None).await;
    assert_eq!((s, e["code"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid-request")));
    let (s, _) = call(&app, "GET", "/nowhere", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, codes) = call(&app, "GET", "/error-codes", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(codes.as_array().unwrap().len(), ApiError::CODES.len());
}

#[tokio::test(flavor = "multi_thread")]
async fn human_feedback_through_the_api() {
    let tmp = tempfile::tempdir().unwrap();
    let (app, _) = app_with(Runner::new(tmp.path()).with_provider(Arc::new(Script::default().provider())));
    let id = create(&app, json!({ "description": blocksworld::easy_description(), "feedback": "human" })).await;
    let m = settle(&app, &id).await;
    assert_eq!(m["status"], "awaiting-human-feedback");
    assert_eq!(m["current_step"], "type_extraction");

    let (s, e) = call(&app, "GET", &format!("/runs/{id}/steps/6"), None).await;
    assert_eq!((s, e["code"].as_str()), (StatusCode::CONFLICT, Some("step-not-reached")));
    let (s, e) = call(&app, "POST", &format!("/runs/{id}/steps/2/feedback"), Some(json!({ "kind": "approve" }))).await;
    assert_eq!((s, e["code"].as_str()), (StatusCode::CONFLICT, Some("step-not-reached")));
    let (s, e) = call(&app, "POST", &format!("/runs/{id}/steps/1/feedback"), Some(json!({ "kind": "text", "text": " " }))).await;
    assert_eq!((s, e["code"].as_str()), (StatusCode::BAD_REQUEST, Some("invalid-feedback")));

    // approve steps 1 and 2
    for n in 1..=2 {
        let (s, m) = call(&app, "POST", &format!("/runs/{id}/steps/{n}/feedback"), Some(json!({ "kind": "approve" }))).await;
        assert_eq!(s, StatusCode::OK, "{m}");
        let m = settle(&app, &id).await;
        assert_eq!(m["current_step"], StepId::from_number(n + 1).unwrap().to_string());
    }
    let (_, rec) = call(&app, "GET", &format!("/runs/{id}/steps/1"), None).await;
    assert_eq!(rec["feedback"]["state"], "approved");

    // text feedback at step 3: exactly one regeneration
    let fb = json!({ "kind": "text", "text": "1. Add an action put_down: the arm puts the block it holds down on the table." });
    let (s, _) = call(&app, "POST", &format!("/runs/{id}/steps/3/feedback"), Some(fb.clone())).await;
    assert_eq!(s, StatusCode::OK);
    let m = settle(&app, &id).await;
    assert_eq!(m["current_step"], "action_construction");
    let (s, e) = call(&app, "POST", &format!("/runs/{id}/steps/3/feedback"), Some(fb)).await;
    assert_eq!((s, e["code"].as_str()), (StatusCode::CONFLICT, Some("not-awaiting-feedback")));
    let (_, rec) = call(&app, "GET", &format!("/runs/{id}/steps/3"), None).await;
    let revisions = rec["calls"].as_array().unwrap().iter().filter(|c| c["purpose"] == "revision").count();
    assert_eq!(revisions, 1);
    assert_eq!(rec["feedback"]["state"], "revised");

    // one action at a time in step 4
    let mut m = m;
    while m["current_step"] == "action_construction" {
        assert!(m["pending_action"].is_string());
        let (s, _) = call(&app, "POST", &format!("/runs/{id}/steps/4/feedback"), Some(json!({ "kind": "approve" }))).await;
        assert_eq!(s, StatusCode::OK);
        m = settle(&app, &id).await;
    }
    assert_eq!(m["current_step"], "task_extraction");

    // a cyclic hierarchy edit is refused and changes nothing
    let before = std::fs::read(tmp.path().join(&id).join("step_2.json")).unwrap();
    let (s, e) = call(
        &app,
        "POST",
        &format!("/runs/{id}/steps/2/feedback"),
        Some(json!({ "kind": "edit", "text": "block: cube\ncube: block" })),
    )
    .await;
    assert_eq!((s, e["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("invalid-edit")), "{e}");
    assert!(e["message"].as_str().unwrap().contains("cycl"), "{e}");
    assert_eq!(std::fs::read(tmp.path().join(&id).join("step_2.json")).unwrap(), before);

    // the parked task is replaced by an edited problem
    let task = "(:objects a b c - block)\n(:init (on a b) (on_table b) (on_table c) (clear a) (clear c) (arm_empty))\n(:goal (and (on b a) (on c b)))";
    let (s, m) = call(&app, "POST", &format!("/runs/{id}/steps/5/feedback"), Some(json!({ "kind": "edit", "text": task }))).await;
    assert_eq!(s, StatusCode::OK, "{m}");
    let m = settle(&app, &id).await;
    assert_eq!(m["status"], "done", "{m}");
    let (_, rec) = call(&app, "GET", &format!("/runs/{id}/steps/5"), None).await;
    assert_eq!(rec["edited"], true);
    assert_eq!(rec["feedback"]["state"], "edited");
    let (_, plan) = call(&app, "GET", &format!("/runs/{id}/plan"), None).await;
    assert_eq!(plan["found"], true);
    assert_eq!(plan["result"]["verdict"]["verdict"], "valid", "{plan}");
    assert_eq!(plan["text"].as_str().unwrap().lines().filter(|l| l.starts_with('(')).count(), 6);
}

#[tokio::test(flavor = "multi_thread")]
async fn resume_endpoint_reruns_and_reuses() {
    let tmp = tempfile::tempdir().unwrap();
    let (app, _) = app_with(Runner::new(tmp.path()).with_provider(Arc::new(Script::default().provider())));
    let id = create(&app, json!({ "description": blocksworld::easy_description() })).await;
    assert_eq!(settle(&app, &id).await["status"], "done");
    let (s, m) = call(
        &app,
        "POST",
        &format!("/runs/{id}/resume"),
        Some(json!({ "from_step": "task_extraction", "task_description": text("tasks/blocksworld_medium.txt") })),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{m}");
    let m = settle(&app, &id).await;
    assert_eq!(m["status"], "done");
    assert_eq!(m["superseded"], json!({ "task_extraction": 1, "planning": 1 }));
    let (_, plan) = call(&app, "GET", &format!("/runs/{id}/plan"), None).await;
    assert_eq!(plan["text"].as_str().unwrap().lines().filter(|l| l.starts_with('(')).count(), 8);

    let (s, e) = call(&app, "POST", &format!("/runs/{id}/resume"), Some(json!({ "from_step": "hierarchy_construction", "artifact_text": "block: block" }))).await;
    assert_eq!((s, e["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("invalid-edit")));
}

/// Answers slowly, so that a run is still executing when the next request
/// arrives.
struct Slow(nl2plan::llm::ScriptedProvider);

impl Provider for Slow {
    fn complete(&self, r: &ChatRequest) -> Result<ChatExchange, LlmError> {
        std::thread::sleep(Duration::from_millis(100));
        self.0.complete(r)
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn mutations_of_a_running_run_are_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let (app, _) = app_with(Runner::new(tmp.path()).with_provider(Arc::new(Slow(Script::default().provider()))));
    let id = create(&app, json!({ "description": blocksworld::easy_description() })).await;
    let (s, e) = call(&app, "POST", &format!("/runs/{id}/resume"), Some(json!({}))).await;
    assert_eq!((s, e["code"].as_str()), (StatusCode::CONFLICT, Some("busy")));
    // reads do not wait for the step
    let t = Instant::now();
    let (s, _) = call(&app, "GET", &format!("/runs/{id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert!(t.elapsed() < Duration::from_millis(100));
    assert_eq!(settle(&app, &id).await["status"], "done");
}

#[tokio::test(flavor = "multi_thread")]
async fn restarted_service_finishes_interrupted_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let reference = {
        let (app, _) = app_with(Runner::new(tmp.path()));
        let id = create(&app, json!({ "description": text("tasks/blocksworld_easy.txt") })).await;
        settle(&app, &id).await;
        id
    };
    let files = |id: &str| {
        let mut out = std::collections::BTreeMap::new();
        for e in std::fs::read_dir(tmp.path().join(id)).unwrap() {
            let p = e.unwrap().path();
            let n = p.file_name().unwrap().to_string_lossy().into_owned();
            if n.starts_with("step_") || n.ends_with(".pddl") || n == "plan.txt" {
                out.insert(n, std::fs::read(&p).unwrap());
            }
        }
        out
    };
    let want = files(&reference);
    for boundary in [StepId::TypeExtraction, StepId::HierarchyConstruction, StepId::ActionExtraction, StepId::ActionConstruction, StepId::TaskExtraction] {
        // the first process stops right after the boundary
        let halting = Runner::new(tmp.path()).with_halt_hook(Arc::new(move |_, s| s == boundary));
        let (app, _) = app_with(halting);
        let id = create(&app, json!({ "description": text("tasks/blocksworld_easy.txt") })).await;
        let start = Instant::now();
        while std::fs::read_to_string(tmp.path().join(&id).join(format!("step_{}.json", boundary.number()))).is_err()
            || read_json(&tmp.path().join(&id).join("manifest.json"))["current_step"] != json!(boundary.next())
        {
            assert!(start.elapsed() < Duration::from_secs(30));
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
        drop(app);
        assert_eq!(read_json(&tmp.path().join(&id).join("manifest.json"))["status"], "running");

        let (app, state) = app_with(Runner::new(tmp.path()));
        let recovered = state.recover().unwrap();
        assert!(recovered.contains(&id));
        let m = settle(&app, &id).await;
        assert_eq!(m["status"], "done", "after {boundary}: {m}");
        assert_eq!(files(&id), want, "after {boundary}");
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn parked_runs_survive_a_restart() {
    let tmp = tempfile::tempdir().unwrap();
    let id = {
        let (app, _) = app_with(Runner::new(tmp.path()).with_provider(Arc::new(Script::default().provider())));
        let id = create(&app, json!({ "description": blocksworld::easy_description(), "feedback": "human" })).await;
        assert_eq!(settle(&app, &id).await["status"], "awaiting-human-feedback");
        id
    };
    let mut c = base_config("blocksworld");
    c.provider.kind = ProviderKind::Replay;
    let state = AppState::new(Runner::new(tmp.path()).with_provider(Arc::new(Script::default().provider())), c);
    assert!(state.recover().unwrap().is_empty());
    let app = router(state, None);
    let (_, m) = call(&app, "GET", &format!("/runs/{id}"), None).await;
    assert_eq!(m["status"], "awaiting-human-feedback");
    let (s, _) = call(&app, "POST", &format!("/runs/{id}/steps/1/feedback"), Some(json!({ "kind": "approve" }))).await;
    assert_eq!(s, StatusCode::OK);
    let m = settle(&app, &id).await;
    assert_eq!(m["current_step"], "hierarchy_construction");
}

#[tokio::test(flavor = "multi_thread")]
async fn static_ui_is_served_at_the_root() {
    let tmp = tempfile::tempdir().unwrap();
    let ui = tmp.path().join("ui");
    std::fs::create_dir_all(&ui).unwrap();
    std::fs::write(ui.join("index.html"), "<html>review</html>").unwrap();
    let state = AppState::new(Runner::new(tmp.path().join("runs")), base_config("blocksworld"));
    let app = router(state, Some(&ui));
    let resp = app.clone().oneshot(Request::get("/").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let body = resp.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(&body[..], b"<html>review</html>");
    let (s, list) = call(&app, "GET", "/runs", None).await;
    assert_eq!((s, list), (StatusCode::OK, json!([])));
}
