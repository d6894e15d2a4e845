use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::parse::{build_tree, parse_actions, parse_hierarchy, parse_types, tagged_block};
use super::records::{
    Artifact, CallPurpose, FeedbackRound, PipelineRun, Provenance, RunFailure, RunManifest, RunStatus, StepRecord,
    StepStatus, TaskArtifact, TypeList,
};
use super::steps::{Flow, StepCtx, PROBLEM_NAME};
use super::store::{RunStore, DOMAIN_FILE, NO_PLAN_FILE, PLAN_FILE, PROBLEM_FILE, TRANSCRIPTS, USAGE_FILE};
use super::{PipelineError, RunConfig, StepId};
use crate::llm::{
    open_provider, read_transcript, ChatExchange, ChatRequest, LlmError, Message, Provider, ProviderConfig,
    TemplateSet, Usage,
};
use crate::pddl::{parse_domain, print_domain, print_problem, DomainSpec, ProblemSpec};
use crate::validator::{render_feedback, validate_task, TaskDraft};

pub type ProviderFactory = Arc<dyn Fn(&ProviderConfig) -> Result<Arc<dyn Provider>, LlmError> + Send + Sync>;

/// Called after every finished step; returning true stops execution there
/// as if the process had died.
pub type HaltHook = Arc<dyn Fn(&str, StepId) -> bool + Send + Sync>;

/// Stored artifacts a run starting past type extraction builds on.
#[derive(Clone, Debug, Default)]
pub struct Seed {
    pub domain: Option<DomainSpec>,
    pub problem: Option<ProblemSpec>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "text", rename_all = "snake_case")]
pub enum FeedbackInput {
    Approve,
    Text(String),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResumeRequest {
    pub from_step: Option<StepId>,
    /// Replacement for the step's result, in the step's block grammar (steps
    /// 1-3) or as PDDL (steps 4-5).
    #[serde(default)]
    pub artifact_text: Option<String>,
    /// New task for a domain-reuse rerun of task extraction.
    #[serde(default)]
    pub task_description: Option<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub total_tokens: u64,
    pub exchanges: u64,
}

impl StepUsage {
    fn add(&mut self, u: Usage) {
        self.input_tokens += u.input_tokens;
        self.output_tokens += u.output_tokens;
        self.total_tokens += u.total();
        self.exchanges += 1;
    }
}

/// Token sums per step over every transcript of a run, superseded ones
/// included.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageReport {
    pub steps: BTreeMap<StepId, StepUsage>,
    pub total: StepUsage,
}

fn transcript_step(name: &str) -> Option<StepId> {
    let rest = name.strip_prefix("step_")?.strip_suffix(".jsonl")?;
    let n = rest.split('.').next()?;
    StepId::from_number(n.parse().ok()?)
}

/// Sums the `transcripts/*.jsonl` files of a run directory.
pub fn usage_totals(run_dir: &Path) -> Result<UsageReport, PipelineError> {
    let mut report = UsageReport {
        steps: StepId::ALL.into_iter().filter(|s| s.uses_llm()).map(|s| (s, StepUsage::default())).collect(),
        total: StepUsage::default(),
    };
    let dir = run_dir.join(TRANSCRIPTS);
    let Ok(entries) = std::fs::read_dir(&dir) else { return Ok(report) };
    let mut files: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    files.sort();
    for f in files {
        let Some(step) = f.file_name().and_then(|n| transcript_step(&n.to_string_lossy())) else { continue };
        for e in read_transcript(&f)? {
            report.steps.entry(step).or_default().add(e.usage);
            report.total.add(e.usage);
        }
    }
    Ok(report)
}

/// Keeps the predicates some action mentions and the types of parameters,
/// quantified variables and kept predicate arguments, with their
/// ancestors.
pub fn prune_domain(domain: &DomainSpec) -> DomainSpec {
    let used: BTreeSet<String> = domain.actions.iter().flat_map(|a| a.referenced_predicates()).collect();
    let predicates: Vec<_> = domain.predicates.iter().filter(|p| used.contains(&p.name)).cloned().collect();
    let mut types: BTreeSet<String> = domain.actions.iter().flat_map(|a| a.referenced_types()).collect();
    types.extend(predicates.iter().flat_map(|p| p.params.iter().map(|v| v.ty.clone())));
    DomainSpec {
        name: domain.name.clone(),
        hierarchy: domain.hierarchy.retain_with_ancestors(&types),
        predicates,
        actions: domain.actions.clone(),
    }
}

fn count(rec: &StepRecord, purpose: CallPurpose, action: Option<&str>, tid: impl Fn(&str) -> bool) -> u32 {
    rec.calls
        .iter()
        .filter(|c| c.purpose == purpose && c.action.as_deref() == action && tid(&c.template_id))
        .count() as u32
}

/// Checks the budget invariants of a finished step record.
pub fn check_budgets(rec: &StepRecord, config: &RunConfig) -> Result<(), String> {
    let step = rec.step;
    let fail = |m: String| Err(format!("{step}: {m}"));
    if rec.feedback.regenerations() > 1 || count(rec, CallPurpose::Revision, None, |_| true) > 1 {
        return fail("more than one feedback regeneration".into());
    }
    if count(rec, CallPurpose::Feedback, None, |_| true) > 1 {
        return fail("more than one feedback request".into());
    }
    match step {
        StepId::ActionConstruction => {
            for a in &rec.actions {
                let name = Some(a.name.as_str());
                if rec.status == StepStatus::Done && a.passes.len() != 2 {
                    return fail(format!("{} has {} passes", a.name, a.passes.len()));
                }
                for p in &a.passes {
                    let sent = count(rec, CallPurpose::Validation, name, |t| t.contains(&format!("pass{}:", p.pass)));
                    if p.messages > config.max_action_messages || sent != p.messages {
                        return fail(format!("{} pass {}: {} validator messages ({sent} sent)", a.name, p.pass, p.messages));
                    }
                    if p.reports.len() != p.drafts.len() || p.reports.len() as u32 > p.messages + 2 {
                        return fail(format!("{} pass {}: {} validations", a.name, p.pass, p.reports.len()));
                    }
                }
                if a.feedback.regenerations() > 1
                    || count(rec, CallPurpose::Revision, name, |_| true) > 1
                    || count(rec, CallPurpose::Feedback, name, |_| true) > 1
                {
                    return fail(format!("{}: more than one feedback round", a.name));
                }
            }
        }
        StepId::TaskExtraction
            if rec.validation.len() as u32 > config.max_task_validations => {
                return fail(format!("{} task validations", rec.validation.len()));
            }
        _ => {}
    }
    Ok(())
}

/// Zero-shot chain-of-thought baseline: one call, answer returned as is.
pub fn baseline_cot(
    provider: &dyn Provider,
    templates: &TemplateSet,
    domain_description: &str,
    task_description: &str,
    config: &RunConfig,
) -> Result<ChatExchange, PipelineError> {
    if task_description.trim().is_empty() {
        return Err(PipelineError::EmptyDescription);
    }
    let prompt = templates.render(
        "baseline_cot",
        &[("domain_description", domain_description), ("task_description", task_description)],
    )?;
    let request = ChatRequest {
        template_id: "baseline_cot".into(),
        messages: vec![Message::user(prompt)],
        model: config.provider.model.clone(),
        temperature: config.temperature,
        max_tokens: config.provider.max_tokens,
    };
    Ok(provider.complete(&request)?)
}

fn default_factory() -> ProviderFactory {
    Arc::new(|c: &ProviderConfig| open_provider(c).map(Arc::from))
}

/// Creates, executes, parks and resumes runs stored under one root.
#[derive(Clone)]
pub struct Runner {
    store: RunStore,
    templates: TemplateSet,
    factory: ProviderFactory,
    halt: Option<HaltHook>,
}

impl Runner {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Runner { store: RunStore::new(root), templates: TemplateSet::builtin(), factory: default_factory(), halt: None }
    }

    pub fn with_templates(mut self, templates: TemplateSet) -> Self {
        self.templates = templates;
        self
    }

    pub fn with_provider_factory(mut self, factory: ProviderFactory) -> Self {
        self.factory = factory;
        self
    }

    /// Serves every run from one provider, whatever its configuration says.
    pub fn with_provider(self, provider: Arc<dyn Provider>) -> Self {
        self.with_provider_factory(Arc::new(move |_| Ok(provider.clone())))
    }

    pub fn with_halt_hook(mut self, hook: HaltHook) -> Self {
        self.halt = Some(hook);
        self
    }

    pub fn store(&self) -> &RunStore {
        &self.store
    }

    pub fn templates(&self) -> &TemplateSet {
        &self.templates
    }

    pub fn provider(&self, config: &ProviderConfig) -> Result<Arc<dyn Provider>, LlmError> {
        (self.factory)(config)
    }

    /// Writes a new run directory without executing anything.
    pub fn create(&self, description: &str, config: RunConfig, seed: Seed) -> Result<RunManifest, PipelineError> {
        if description.trim().is_empty() {
            return Err(PipelineError::EmptyDescription);
        }
        config.check()?;
        let start = config.start_step;
        if start >= StepId::TaskExtraction && seed.domain.is_none() {
            return Err(PipelineError::MissingDomain(start));
        }
        if start == StepId::Planning && seed.problem.is_none() {
            return Err(PipelineError::MissingProblem);
        }
        let mut m = RunManifest {
            id: uuid::Uuid::new_v4().to_string(),
            created: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            description: description.to_string(),
            task_description: None,
            config,
            status: RunStatus::Running,
            current_step: Some(start),
            pending_action: None,
            failure: None,
            degraded: false,
            superseded: BTreeMap::new(),
            files: Vec::new(),
        };
        self.store.create(&mut m)?;
        if start >= StepId::TaskExtraction {
            if let Some(d) = &seed.domain {
                self.store.write_text(&m.id, DOMAIN_FILE, &print_domain(d))?;
            }
        }
        if start == StepId::Planning {
            if let Some(p) = &seed.problem {
                self.store.write_text(&m.id, PROBLEM_FILE, &print_problem(p))?;
            }
        }
        self.store.save_manifest(&mut m)?;
        Ok(m)
    }

    pub fn run_pipeline(&self, description: &str, config: RunConfig, seed: Seed) -> Result<RunManifest, PipelineError> {
        let m = self.create(description, config, seed)?;
        self.execute(&m.id)
    }

    fn write_usage(&self, id: &str) -> Result<(), PipelineError> {
        let report = usage_totals(&self.store.dir(id))?;
        let mut text = serde_json::to_string_pretty(&report).expect("usage serializes");
        text.push('\n');
        self.store.write_text(id, USAGE_FILE, &text)
    }

    /// Whether a parked run has received the input it waits for.
    fn input_arrived(&self, m: &RunManifest) -> Result<bool, PipelineError> {
        let Some(step) = m.current_step else { return Ok(false) };
        let Some(rec) = self.store.load_step(&m.id, step)? else { return Ok(false) };
        let waiting = |f: &FeedbackRound| matches!(f, FeedbackRound::Received { .. });
        Ok(waiting(&rec.feedback) || rec.actions.iter().any(|a| waiting(&a.feedback)))
    }

    /// Runs from the current step until the run is done, failed, parked for
    /// human feedback, or halted by the hook.
    pub fn execute(&self, id: &str) -> Result<RunManifest, PipelineError> {
        let mut m = self.store.load_manifest(id)?;
        match m.status {
            RunStatus::Done | RunStatus::Failed => return Ok(m),
            RunStatus::AwaitingHumanFeedback if !self.input_arrived(&m)? => return Ok(m),
            _ => {}
        }
        m.status = RunStatus::Running;
        self.store.save_manifest(&mut m)?;
        let mut provider: Option<Arc<dyn Provider>> = None;
        while let Some(step) = m.current_step {
            let finished = self.store.load_step(id, step)?.is_some_and(|r| r.status == StepStatus::Done);
            let flow = if finished {
                Ok(Flow::Done)
            } else {
                let p = match &provider {
                    Some(p) => Ok(p.clone()),
                    None if step.uses_llm() => (self.factory)(&m.config.provider).map_err(PipelineError::from),
                    None => Ok(Arc::new(NoProvider) as Arc<dyn Provider>),
                };
                match p {
                    Ok(p) => {
                        if step.uses_llm() {
                            provider = Some(p.clone());
                        }
                        let mut ctx =
                            StepCtx { store: &self.store, templates: &self.templates, provider: p.as_ref(), manifest: &mut m };
                        ctx.run(step)
                    }
                    Err(e) => Err(e),
                }
            };
            match flow {
                Ok(Flow::Done) => {
                    tracing::info!(run = id, %step, "step done");
                    m.pending_action = None;
                    m.current_step = step.next();
                    if m.current_step.is_none() {
                        m.status = RunStatus::Done;
                    }
                    self.write_usage(id)?;
                    self.store.save_manifest(&mut m)?;
                    if m.status == RunStatus::Running && self.halt.as_ref().is_some_and(|h| h(id, step)) {
                        return Ok(m);
                    }
                }
                Ok(Flow::Parked) => {
                    tracing::info!(run = id, %step, "awaiting human feedback");
                    m.status = RunStatus::AwaitingHumanFeedback;
                    self.write_usage(id)?;
                    self.store.save_manifest(&mut m)?;
                    return Ok(m);
                }
                Err(e) => {
                    tracing::warn!(run = id, %step, "run failed: {e}");
                    m.status = RunStatus::Failed;
                    m.failure = Some(RunFailure { step, cause: e.to_string() });
                    self.write_usage(id)?;
                    self.store.save_manifest(&mut m)?;
                    return Ok(m);
                }
            }
        }
        Ok(m)
    }

    /// Records human input for a parked step; `execute` then continues.
    pub fn submit_feedback(&self, id: &str, step: StepId, input: FeedbackInput) -> Result<RunManifest, PipelineError> {
        let mut m = self.store.load_manifest(id)?;
        let not_awaiting = || PipelineError::NotAwaitingFeedback { run: id.to_string(), step };
        if m.status != RunStatus::AwaitingHumanFeedback || m.current_step != Some(step) {
            if self.store.load_step(id, step)?.is_none() && m.current_step.is_some_and(|c| c < step) {
                return Err(PipelineError::StepNotReached { run: id.to_string(), step });
            }
            return Err(not_awaiting());
        }
        let mut rec = self.store.load_step(id, step)?.ok_or_else(not_awaiting)?;
        let text = match input {
            FeedbackInput::Text(t) if !t.trim().is_empty() => Some(t),
            _ => None,
        };
        let round = if step == StepId::ActionConstruction {
            let name = m.pending_action.clone().ok_or_else(not_awaiting)?;
            &mut rec.actions.iter_mut().find(|a| a.name == name).ok_or_else(not_awaiting)?.feedback
        } else {
            &mut rec.feedback
        };
        if *round != FeedbackRound::Pending {
            return Err(not_awaiting());
        }
        *round = FeedbackRound::Received { text };
        self.store.save_step(id, &rec)?;
        m.status = RunStatus::Running;
        self.store.save_manifest(&mut m)?;
        Ok(m)
    }

    /// Supersedes the records of `first` and every later step, with the
    /// files they produced.
    fn supersede_from(&self, m: &mut RunManifest, first: StepId) -> Result<(), PipelineError> {
        for s in StepId::ALL.into_iter().filter(|s| *s >= first) {
            self.store.supersede(m, s)?;
            match s {
                StepId::ActionConstruction => self.store.remove(&m.id, DOMAIN_FILE)?,
                StepId::TaskExtraction => self.store.remove(&m.id, PROBLEM_FILE)?,
                StepId::Planning => {
                    self.store.remove(&m.id, PLAN_FILE)?;
                    self.store.remove(&m.id, NO_PLAN_FILE)?;
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn edit_body(step: StepId, text: &str) -> String {
        if text.contains("```") {
            if let Ok(b) = tagged_block(text, step.block_tag()) {
                return b;
            }
        }
        text.to_string()
    }

    /// Checks an edited result against the step's structural invariants.
    fn parse_edit(&self, m: &RunManifest, step: StepId, text: &str) -> Result<(Artifact, Vec<String>), PipelineError> {
        let invalid = |message: String| PipelineError::InvalidEdit { step, message };
        let body = Self::edit_body(step, text);
        let mut warnings = Vec::new();
        let art = match step {
            StepId::TypeExtraction => Artifact::Types(parse_types(&body, &mut warnings).map_err(|e| invalid(e.to_string()))?),
            StepId::HierarchyConstruction => {
                let types = match self.store.load_step(&m.id, StepId::TypeExtraction)?.and_then(|r| r.artifact) {
                    Some(Artifact::Types(t)) => t,
                    _ => TypeList::default(),
                };
                let lines = parse_hierarchy(&body).map_err(|e| invalid(e.to_string()))?;
                let tree =
                    build_tree(&lines, &types, Provenance::Edited, &mut warnings).map_err(|e| invalid(e.to_string()))?;
                Artifact::Hierarchy(tree)
            }
            StepId::ActionExtraction => {
                Artifact::Actions(parse_actions(&body, &mut warnings).map_err(|e| invalid(e.to_string()))?)
            }
            StepId::ActionConstruction => Artifact::Domain(parse_domain(&body).map_err(|e| invalid(e.to_string()))?),
            StepId::TaskExtraction => {
                let domain_text = self.store.read_text(&m.id, DOMAIN_FILE)?.ok_or(PipelineError::MissingDomain(step))?;
                let domain = parse_domain(&domain_text).map_err(|e| invalid(format!("stored domain: {e}")))?;
                let draft = TaskDraft::parse(&body).map_err(|e| invalid(e.to_string()))?;
                let report = validate_task(&draft, &domain);
                if !report.passed() {
                    return Err(invalid(render_feedback(&report).expect("report has issues")));
                }
                let problem = draft.to_problem(PROBLEM_NAME, &domain).map_err(|e| invalid(e.to_string()))?;
                Artifact::Task(TaskArtifact { draft: body.trim().to_string(), problem: Some(problem), passed: true })
            }
            StepId::Planning => return Err(invalid("the plan is computed, not edited".into())),
        };
        Ok((art, warnings))
    }

    /// Prepares a rerun from `from_step`: an edit replaces that step's result
    /// and reruns what follows; otherwise the step itself is rerun. Earlier
    /// records stay as they are, replaced ones are kept as superseded.
    pub fn prepare_resume(&self, id: &str, req: ResumeRequest) -> Result<RunManifest, PipelineError> {
        let mut m = self.store.load_manifest(id)?;
        if m.status == RunStatus::Running {
            return Err(PipelineError::Busy(id.to_string()));
        }
        let from = req.from_step.or(m.current_step).unwrap_or(StepId::Planning);
        if req.task_description.is_some() && from != StepId::TaskExtraction {
            return Err(PipelineError::InvalidConfig("a new task description reruns task_extraction".into()));
        }
        if req.task_description.as_deref().is_some_and(|t| t.trim().is_empty()) {
            return Err(PipelineError::EmptyDescription);
        }
        let rec = self.store.load_step(id, from)?;
        let has = |f: &str| self.store.dir(id).join(f).is_file();
        let seeded = match from {
            StepId::TaskExtraction => has(DOMAIN_FILE),
            StepId::Planning => has(DOMAIN_FILE) && has(PROBLEM_FILE),
            _ => false,
        };
        let reached = match &rec {
            Some(r) => matches!(r.status, StepStatus::Done | StepStatus::AwaitingFeedback),
            None => false,
        } || seeded
            || (m.status == RunStatus::Failed && m.current_step == Some(from));
        if !reached {
            return Err(PipelineError::StepNotReached { run: id.to_string(), step: from });
        }
        if let Some(text) = &req.artifact_text {
            let (art, warnings) = self.parse_edit(&m, from, text)?;
            if let Some(next) = from.next() {
                self.supersede_from(&mut m, next)?;
            }
            let mut r = rec.unwrap_or_else(|| StepRecord::new(from));
            match &art {
                Artifact::Domain(d) => self.store.write_text(id, DOMAIN_FILE, &print_domain(d))?,
                Artifact::Task(TaskArtifact { problem: Some(p), .. }) => {
                    self.store.write_text(id, PROBLEM_FILE, &print_problem(p))?
                }
                _ => {}
            }
            if !r.feedback.is_settled() {
                r.feedback = FeedbackRound::Edited;
            }
            for a in r.actions.iter_mut().filter(|a| !a.feedback.is_settled()) {
                a.feedback = FeedbackRound::Edited;
            }
            r.artifact = Some(art);
            r.edited = true;
            r.flawed = false;
            r.warnings.extend(warnings);
            r.status = StepStatus::Done;
            self.store.save_step(id, &r)?;
            m.current_step = from.next();
        } else {
            self.supersede_from(&mut m, from)?;
            m.current_step = Some(from);
        }
        if let Some(t) = req.task_description {
            m.task_description = Some(t);
        }
        m.degraded = StepId::ALL
            .into_iter()
            .filter_map(|s| self.store.load_step(id, s).ok().flatten())
            .any(|r| r.flawed);
        m.status = if m.current_step.is_some() { RunStatus::Running } else { RunStatus::Done };
        m.failure = None;
        m.pending_action = None;
        self.store.save_manifest(&mut m)?;
        Ok(m)
    }

    pub fn resume(&self, id: &str, req: ResumeRequest) -> Result<RunManifest, PipelineError> {
        self.prepare_resume(id, req)?;
        self.execute(id)
    }

    pub fn load(&self, id: &str) -> Result<PipelineRun, PipelineError> {
        self.store.load(id)
    }

    pub fn list(&self) -> Result<Vec<RunManifest>, PipelineError> {
        self.store.list()
    }

    /// Re-executes runs a previous process left running. Parked runs stay
    /// parked.
    pub fn recover(&self) -> Result<Vec<RunManifest>, PipelineError> {
        let mut out = Vec::new();
        for m in self.store.list()? {
            if m.status == RunStatus::Running {
                out.push(self.execute(&m.id)?);
            }
        }
        Ok(out)
    }
}

/// Stand-in for steps that make no model calls.
struct NoProvider;

impl Provider for NoProvider {
    fn complete(&self, _: &ChatRequest) -> Result<ChatExchange, LlmError> {
        Err(LlmError::Config("this step makes no model calls".into()))
    }
}
