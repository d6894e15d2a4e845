use super::parse::{build_tree, parse_feedback, parse_step_output, StepOutput, StepParseError};
use super::records::{
    actions_block, ActionRecord, Artifact, CallPurpose, CallRecord, FeedbackRound, NlAction, PassRecord, PlanArtifact,
    Provenance, RunManifest, StepRecord, StepStatus, TaskArtifact, TypeList, TypeTree,
};
use super::runner::prune_domain;
use super::store::{RunStore, DOMAIN_FILE, NO_PLAN_FILE, PLAN_FILE, PROBLEM_FILE};
use super::{FeedbackSource, PipelineError, RunConfig, StepId};
use crate::llm::{ChatRequest, Message, Provider, TemplateSet};
use crate::pddl::{
    parse_domain, parse_problem, print_action, print_domain, print_predicate, print_problem, DomainSpec, PredicateDecl,
    ProblemSpec,
};
use crate::planner::{plan, validate_plan, Outcome};
use crate::validator::{render_feedback, validate_action, validate_task, ActionDraft, TaskDraft};

/// Name given to generated domains and problems.
pub const DOMAIN_NAME: &str = "generated";
pub const PROBLEM_NAME: &str = "task";

pub(super) enum Flow {
    Done,
    Parked,
}

enum Decision {
    Keep,
    Park,
    Revise(FeedbackSource, String),
}

/// Original prompt, the answer under review and the feedback, ending where
/// the corrected answer goes; mirrors the exemplar in every main template.
pub(super) fn revision_prompt(prompt: &str, answer: &str, feedback: &str) -> String {
    format!("{prompt}{}\n\n### Feedback\n{}\n\n### Corrected solution\n", answer.trim_end(), feedback.trim())
}

fn retry_prompt(prompt: &str, tag: &str) -> String {
    format!("{prompt}\n\nRespond only in the required format: end your answer with exactly one fenced ```{tag} block.")
}

fn fenced(tag: &str, body: &str) -> String {
    format!("```{tag}\n{}\n```", body.trim_end())
}

fn predicate_list(preds: &[PredicateDecl]) -> String {
    if preds.is_empty() {
        return "None yet.".into();
    }
    preds.iter().map(print_predicate).collect::<Vec<_>>().join("\n")
}

fn actions_text(d: &DomainSpec) -> String {
    d.actions.iter().map(|a| print_action(a, 0)).collect::<Vec<_>>().join("\n")
}

fn outline(h: &crate::pddl::TypeHierarchy) -> String {
    TypeTree { hierarchy: h.clone(), provenance: Default::default() }.outline()
}

/// Predicates known after the finished passes, pass 1 of every action
/// first, in action order.
pub(super) fn known_predicates(rec: &StepRecord) -> Vec<PredicateDecl> {
    let mut out: Vec<PredicateDecl> = Vec::new();
    for pass in 0..2 {
        for a in &rec.actions {
            if let Some(p) = a.passes.get(pass).filter(|p| p.complete) {
                for d in &p.new_predicates {
                    if !out.iter().any(|q| q.name == d.name) {
                        out.push(d.clone());
                    }
                }
            }
        }
    }
    out
}

fn unexpected(step: StepId) -> StepParseError {
    StepParseError::Grammar { tag: step.block_tag().into(), message: "unexpected payload".into() }
}

fn parse_types(raw: &str) -> Result<(TypeList, Vec<String>), StepParseError> {
    let p = parse_step_output(StepId::TypeExtraction, raw)?;
    match p.output {
        StepOutput::Types(t) => Ok((t, p.warnings)),
        _ => Err(unexpected(StepId::TypeExtraction)),
    }
}

fn parse_actions(raw: &str) -> Result<(Vec<NlAction>, Vec<String>), StepParseError> {
    let p = parse_step_output(StepId::ActionExtraction, raw)?;
    match p.output {
        StepOutput::Actions(a) => Ok((a, p.warnings)),
        _ => Err(unexpected(StepId::ActionExtraction)),
    }
}

fn parse_action(raw: &str) -> Result<(ActionDraft, String), StepParseError> {
    match parse_step_output(StepId::ActionConstruction, raw)?.output {
        StepOutput::Action { draft, text } => Ok((draft, text)),
        _ => Err(unexpected(StepId::ActionConstruction)),
    }
}

fn parse_task(raw: &str) -> Result<(TaskDraft, String), StepParseError> {
    match parse_step_output(StepId::TaskExtraction, raw)?.output {
        StepOutput::Task { draft, text } => Ok((draft, text)),
        _ => Err(unexpected(StepId::TaskExtraction)),
    }
}

fn parse_tree(raw: &str, types: &TypeList) -> Result<(TypeTree, Vec<String>), StepParseError> {
    match parse_step_output(StepId::HierarchyConstruction, raw)?.output {
        StepOutput::Hierarchy(lines) => {
            let mut w = Vec::new();
            let tree = build_tree(&lines, types, Provenance::SynthesizedParent, &mut w)?;
            Ok((tree, w))
        }
        _ => Err(unexpected(StepId::HierarchyConstruction)),
    }
}

pub(super) struct StepCtx<'a> {
    pub store: &'a RunStore,
    pub templates: &'a TemplateSet,
    pub provider: &'a dyn Provider,
    pub manifest: &'a mut RunManifest,
}

impl StepCtx<'_> {
    fn config(&self) -> &RunConfig {
        &self.manifest.config
    }

    fn id(&self) -> String {
        self.manifest.id.clone()
    }

    fn fail(step: StepId, message: impl Into<String>) -> PipelineError {
        PipelineError::Step { step, message: message.into() }
    }

    pub fn run(&mut self, step: StepId) -> Result<Flow, PipelineError> {
        match step {
            StepId::TypeExtraction | StepId::HierarchyConstruction | StepId::ActionExtraction => self.nl_step(step),
            StepId::ActionConstruction => self.construct_actions(),
            StepId::TaskExtraction => self.extract_task(),
            StepId::Planning => self.planning(),
        }
    }

    /// Continues an unfinished record, or starts afresh with an empty
    /// transcript. Exchanges beyond the record's calls are dropped.
    fn open_record(&self, step: StepId) -> Result<StepRecord, PipelineError> {
        let id = self.id();
        match self.store.load_step(&id, step)? {
            Some(mut r) => {
                self.store.truncate_transcript(&id, step, r.calls.len())?;
                r.status = StepStatus::InProgress;
                Ok(r)
            }
            None => {
                self.store.truncate_transcript(&id, step, 0)?;
                Ok(StepRecord::new(step))
            }
        }
    }

    fn finish(&self, rec: &mut StepRecord) -> Result<Flow, PipelineError> {
        rec.status = StepStatus::Done;
        self.store.save_step(&self.manifest.id, rec)?;
        Ok(Flow::Done)
    }

    fn park(&self, rec: &mut StepRecord) -> Result<Flow, PipelineError> {
        rec.status = StepStatus::AwaitingFeedback;
        self.store.save_step(&self.manifest.id, rec)?;
        Ok(Flow::Parked)
    }

    fn artifact(&self, step: StepId, wanted_by: StepId) -> Result<Artifact, PipelineError> {
        self.store
            .load_step(&self.manifest.id, step)?
            .filter(|r| r.status == StepStatus::Done)
            .and_then(|r| r.artifact)
            .ok_or_else(|| Self::fail(wanted_by, format!("no finished {step} result")))
    }

    fn types(&self, by: StepId) -> Result<TypeList, PipelineError> {
        match self.artifact(StepId::TypeExtraction, by)? {
            Artifact::Types(t) => Ok(t),
            _ => Err(Self::fail(by, "type extraction result has the wrong kind")),
        }
    }

    fn tree(&self, by: StepId) -> Result<TypeTree, PipelineError> {
        match self.artifact(StepId::HierarchyConstruction, by)? {
            Artifact::Hierarchy(t) => Ok(t),
            _ => Err(Self::fail(by, "hierarchy result has the wrong kind")),
        }
    }

    fn nl_actions(&self, by: StepId) -> Result<Vec<NlAction>, PipelineError> {
        match self.artifact(StepId::ActionExtraction, by)? {
            Artifact::Actions(a) => Ok(a),
            _ => Err(Self::fail(by, "action extraction result has the wrong kind")),
        }
    }

    fn stored_domain(&self, by: StepId) -> Result<DomainSpec, PipelineError> {
        let text = self.store.read_text(&self.manifest.id, DOMAIN_FILE)?.ok_or(PipelineError::MissingDomain(by))?;
        parse_domain(&text).map_err(|e| Self::fail(by, format!("stored domain: {e}")))
    }

    fn stored_problem(&self, domain: &DomainSpec) -> Result<ProblemSpec, PipelineError> {
        let text = self.store.read_text(&self.manifest.id, PROBLEM_FILE)?.ok_or(PipelineError::MissingProblem)?;
        parse_problem(&text, domain).map_err(|e| Self::fail(StepId::Planning, format!("stored problem: {e}")))
    }

    fn task_description(&self) -> String {
        self.manifest.task_description.clone().unwrap_or_else(|| self.manifest.description.clone())
    }

    /// One completion, appended to the step transcript and the record.
    fn call(
        &self,
        rec: &mut StepRecord,
        purpose: CallPurpose,
        template_id: String,
        prompt: String,
        action: Option<&str>,
    ) -> Result<String, PipelineError> {
        let cfg = self.config();
        let request = ChatRequest {
            template_id: template_id.clone(),
            messages: vec![Message::user(prompt.clone())],
            model: cfg.provider.model.clone(),
            temperature: cfg.temperature,
            max_tokens: cfg.provider.max_tokens,
        };
        let exchange = self.provider.complete(&request)?;
        self.store.append_exchange(&self.manifest.id, rec.step, &exchange)?;
        tracing::debug!(run = %self.manifest.id, step = %rec.step, template = %template_id, "completion");
        rec.calls.push(CallRecord {
            purpose,
            template_id,
            action: action.map(str::to_string),
            digest: exchange.digest,
            prompt,
            response: exchange.response.clone(),
        });
        Ok(exchange.response)
    }

    /// A completion parsed with `parse`; one retry with a format reminder,
    /// then the step fails.
    #[allow(clippy::too_many_arguments)]
    fn generate<T>(
        &self,
        rec: &mut StepRecord,
        purpose: CallPurpose,
        template_id: &str,
        prompt: &str,
        action: Option<&str>,
        tag: &str,
        parse: impl Fn(&str) -> Result<T, StepParseError>,
    ) -> Result<(String, T), PipelineError> {
        let raw = self.call(rec, purpose, template_id.to_string(), prompt.to_string(), action)?;
        let first = match parse(&raw) {
            Ok(v) => return Ok((raw, v)),
            Err(e) => e,
        };
        tracing::warn!(run = %self.manifest.id, step = %rec.step, "unparseable answer, retrying: {first}");
        let raw = self.call(rec, CallPurpose::Retry, format!("{template_id}:retry"), retry_prompt(prompt, tag), action)?;
        match parse(&raw) {
            Ok(v) => Ok((raw, v)),
            Err(e) => Err(PipelineError::Unparseable { step: rec.step, message: format!("{first}; then {e}") }),
        }
    }

    /// Advances a feedback round. `review` is the rendered feedback prompt,
    /// needed only for an LLM source that has not been asked yet.
    fn decide(
        &self,
        rec: &mut StepRecord,
        round: &mut FeedbackRound,
        source: FeedbackSource,
        template_id: &str,
        review: impl FnOnce() -> Result<String, PipelineError>,
        action: Option<&str>,
    ) -> Result<Decision, PipelineError> {
        Ok(match (source, round.clone()) {
            (_, FeedbackRound::Received { text: None }) => {
                *round = FeedbackRound::Approved;
                Decision::Keep
            }
            (_, FeedbackRound::Received { text: Some(t) }) => Decision::Revise(FeedbackSource::Human, t),
            (_, FeedbackRound::Pending) => Decision::Park,
            (FeedbackSource::Llm, FeedbackRound::NotRequested) => {
                let prompt = review()?;
                let (_, fb) = self.generate(rec, CallPurpose::Feedback, template_id, &prompt, action, "feedback", parse_feedback)?;
                match fb {
                    None => {
                        *round = FeedbackRound::Accepted { source: FeedbackSource::Llm };
                        Decision::Keep
                    }
                    Some(t) => Decision::Revise(FeedbackSource::Llm, t),
                }
            }
            (FeedbackSource::Human, FeedbackRound::NotRequested) => {
                *round = FeedbackRound::Pending;
                Decision::Park
            }
            _ => Decision::Keep,
        })
    }

    fn main_prompt(&self, step: StepId) -> Result<String, PipelineError> {
        let d = self.manifest.description.as_str();
        Ok(match step {
            StepId::TypeExtraction => self.templates.render("type_extraction", &[("description", d)])?,
            StepId::HierarchyConstruction => {
                let types = self.types(step)?.to_block();
                self.templates.render("hierarchy_construction", &[("description", d), ("types", &types)])?
            }
            StepId::ActionExtraction => {
                let h = self.tree(step)?.outline();
                self.templates.render("action_extraction", &[("description", d), ("hierarchy", &h)])?
            }
            _ => unreachable!("only the natural-language steps have a plain main prompt"),
        })
    }

    fn review_prompt(&self, step: StepId, art: &Artifact) -> Result<String, PipelineError> {
        let d = self.manifest.description.as_str();
        let id = format!("{step}_feedback");
        Ok(match (step, art) {
            (StepId::TypeExtraction, Artifact::Types(t)) => {
                self.templates.render(&id, &[("description", d), ("solution", &fenced("types", &t.to_block()))])?
            }
            (StepId::HierarchyConstruction, Artifact::Hierarchy(t)) => {
                let types = self.types(step)?.to_block();
                let sol = fenced("hierarchy", &t.to_block());
                self.templates.render(&id, &[("description", d), ("types", &types), ("solution", &sol)])?
            }
            (StepId::ActionExtraction, Artifact::Actions(a)) => {
                let h = self.tree(step)?.outline();
                let sol = fenced("actions", &actions_block(a));
                self.templates.render(&id, &[("description", d), ("hierarchy", &h), ("solution", &sol)])?
            }
            _ => unreachable!("review prompts for steps 1-3 only"),
        })
    }

    fn parse_nl(&self, step: StepId, types: Option<&TypeList>, raw: &str) -> Result<(Artifact, Vec<String>), StepParseError> {
        match step {
            StepId::TypeExtraction => parse_types(raw).map(|(t, w)| (Artifact::Types(t), w)),
            StepId::HierarchyConstruction => {
                parse_tree(raw, types.expect("types loaded")).map(|(t, w)| (Artifact::Hierarchy(t), w))
            }
            _ => parse_actions(raw).map(|(a, w)| (Artifact::Actions(a), w)),
        }
    }

    /// Type extraction, hierarchy construction and action extraction.
    fn nl_step(&mut self, step: StepId) -> Result<Flow, PipelineError> {
        let mut rec = self.open_record(step)?;
        let types = match step {
            StepId::HierarchyConstruction => Some(self.types(step)?),
            _ => None,
        };
        let tag = step.block_tag();
        if rec.artifact.is_none() {
            let prompt = self.main_prompt(step)?;
            let (raw, (art, warnings)) =
                self.generate(&mut rec, CallPurpose::Main, step.as_str(), &prompt, None, tag, |r| {
                    self.parse_nl(step, types.as_ref(), r)
                })?;
            rec.prompt = prompt;
            rec.response = raw;
            rec.first_artifact = Some(art.clone());
            rec.artifact = Some(art);
            rec.warnings.extend(warnings);
        }
        let source = self.config().feedback_for(step);
        let mut round = std::mem::take(&mut rec.feedback);
        let art = rec.artifact.clone().expect("generated above");
        let decision =
            self.decide(&mut rec, &mut round, source, &format!("{step}_feedback"), || self.review_prompt(step, &art), None)?;
        match decision {
            Decision::Keep => {}
            Decision::Park => {
                rec.feedback = round;
                return self.park(&mut rec);
            }
            Decision::Revise(src, text) => {
                let prompt = revision_prompt(&rec.prompt, &rec.response, &text);
                let (_, (art, warnings)) = self.generate(
                    &mut rec,
                    CallPurpose::Revision,
                    &format!("{step}:revision"),
                    &prompt,
                    None,
                    tag,
                    |r| self.parse_nl(step, types.as_ref(), r),
                )?;
                rec.artifact = Some(art);
                rec.warnings.extend(warnings);
                round = FeedbackRound::Revised { source: src, feedback: text };
            }
        }
        rec.feedback = round;
        self.finish(&mut rec)
    }

    /// The context an action is drafted against: known predicates and the
    /// latest schemas of every other action.
    fn action_context(rec: &StepRecord, tree: &TypeTree, i: usize) -> DomainSpec {
        DomainSpec {
            name: DOMAIN_NAME.into(),
            hierarchy: tree.hierarchy.clone(),
            predicates: known_predicates(rec),
            actions: rec
                .actions
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .filter_map(|(_, a)| a.latest_schema().cloned())
                .collect(),
        }
    }

    /// Validates `draft` and redrafts with the issues until it passes or
    /// the pass has used its message budget, then accepts it.
    #[allow(clippy::too_many_arguments)]
    fn validate_action_loop(
        &self,
        rec: &mut StepRecord,
        pass: &mut PassRecord,
        context: &DomainSpec,
        name: &str,
        prompt: &str,
        mut raw: String,
        mut draft: ActionDraft,
        mut text: String,
    ) -> Result<String, PipelineError> {
        let max = self.config().max_action_messages;
        let tid = format!("action_construction:pass{}:validation", pass.pass);
        loop {
            let report = validate_action(&draft, context);
            pass.drafts.push(text.clone());
            pass.reports.push(report.clone());
            if report.passed() || pass.messages >= max {
                pass.flawed = !report.passed();
                match draft.to_schema(context) {
                    Ok((schema, new)) => {
                        pass.schema = Some(schema);
                        pass.new_predicates = new;
                    }
                    Err(e) => {
                        pass.schema = None;
                        pass.new_predicates.clear();
                        pass.flawed = true;
                        rec.warnings.push(format!("{name}: pass {} draft left out ({e})", pass.pass));
                    }
                }
                if pass.flawed {
                    rec.warnings.push(format!("{name}: pass {} accepted with validator issues", pass.pass));
                }
                return Ok(raw);
            }
            pass.messages += 1;
            let feedback = render_feedback(&report).expect("report has issues");
            let vprompt = revision_prompt(prompt, &raw, &feedback);
            let (r, (d, t)) = self.generate(
                rec,
                CallPurpose::Validation,
                &tid,
                &vprompt,
                Some(name),
                "action",
                parse_action,
            )?;
            (raw, draft, text) = (r, d, t);
        }
    }

    fn draft_action(
        &self,
        rec: &mut StepRecord,
        tree: &TypeTree,
        nl: &[NlAction],
        i: usize,
        pass: u8,
    ) -> Result<(), PipelineError> {
        let a = &nl[i];
        let context = Self::action_context(rec, tree, i);
        let others = nl
            .iter()
            .filter(|o| o.name != a.name)
            .map(|o| format!("- {}: {}", o.name, o.description))
            .collect::<Vec<_>>()
            .join("\n");
        let others = if others.is_empty() { "None.".to_string() } else { others };
        let prompt = self.templates.render(
            "action_construction",
            &[
                ("description", &self.manifest.description),
                ("hierarchy", &tree.outline()),
                ("predicates", &predicate_list(&context.predicates)),
                ("action_name", &a.name),
                ("action_description", &a.description),
                ("action_example", &a.example),
                ("other_actions", &others),
            ],
        )?;
        let tid = format!("action_construction:pass{pass}");
        let (raw, (draft, text)) =
            self.generate(rec, CallPurpose::Main, &tid, &prompt, Some(&a.name), "action", parse_action)?;
        let mut p = PassRecord { pass, ..PassRecord::default() };
        let raw = self.validate_action_loop(rec, &mut p, &context, &a.name, &prompt, raw, draft, text)?;
        let ar = &mut rec.actions[i];
        ar.last_prompt = prompt;
        ar.last_response = raw;
        ar.passes.push(p);
        Ok(())
    }

    /// Feedback on one action after its second pass; a revision is
    /// validated within what is left of that pass's budget.
    fn action_feedback(&mut self, rec: &mut StepRecord, tree: &TypeTree, nl: &[NlAction], i: usize) -> Result<Flow, PipelineError> {
        let a = &nl[i];
        let source = self.config().feedback_for(StepId::ActionConstruction);
        let mut round = std::mem::take(&mut rec.actions[i].feedback);
        let context = Self::action_context(rec, tree, i);
        let solution = fenced("action", rec.actions[i].passes[1].drafts.last().map(String::as_str).unwrap_or(""));
        let review = || -> Result<String, PipelineError> {
            let mut preds = context.predicates.clone();
            preds.extend(rec.actions[i].passes[1].new_predicates.iter().cloned());
            Ok(self.templates.render(
                "action_construction_feedback",
                &[
                    ("description", &self.manifest.description),
                    ("hierarchy", &tree.outline()),
                    ("predicates", &predicate_list(&preds)),
                    ("action_description", &format!("{}: {} Example: {}", a.name, a.description, a.example)),
                    ("solution", &solution),
                ],
            )?)
        };
        let review_text = match (source, &round) {
            (FeedbackSource::Llm, FeedbackRound::NotRequested) => Some(review()?),
            _ => None,
        };
        let decision = self.decide(
            rec,
            &mut round,
            source,
            "action_construction_feedback",
            || Ok(review_text.expect("rendered for an unasked LLM round")),
            Some(&a.name),
        )?;
        match decision {
            Decision::Keep => {}
            Decision::Park => {
                rec.actions[i].feedback = round;
                self.manifest.pending_action = Some(a.name.clone());
                return Ok(Flow::Parked);
            }
            Decision::Revise(src, text) => {
                let base = rec.actions[i].last_prompt.clone();
                let prompt = revision_prompt(&base, &rec.actions[i].last_response, &text);
                let (raw, (draft, dtext)) = self.generate(
                    rec,
                    CallPurpose::Revision,
                    "action_construction:pass2:revision",
                    &prompt,
                    Some(&a.name),
                    "action",
                    parse_action,
                )?;
                let mut p = rec.actions[i].passes.pop().expect("second pass drafted");
                p.schema = None;
                p.new_predicates.clear();
                p.flawed = false;
                let raw = self.validate_action_loop(rec, &mut p, &context, &a.name, &base, raw, draft, dtext)?;
                rec.actions[i].passes.push(p);
                rec.actions[i].last_response = raw;
                round = FeedbackRound::Revised { source: src, feedback: text };
            }
        }
        rec.actions[i].feedback = round;
        self.manifest.pending_action = None;
        Ok(Flow::Done)
    }

    /// Two passes over all actions, then pruning. The record is saved after
    /// every action so that parking and restarts lose no work.
    fn construct_actions(&mut self) -> Result<Flow, PipelineError> {
        let step = StepId::ActionConstruction;
        let tree = self.tree(step)?;
        let nl = self.nl_actions(step)?;
        let mut rec = self.open_record(step)?;
        if rec.actions.is_empty() {
            rec.actions = nl.iter().map(|a| ActionRecord { name: a.name.clone(), ..ActionRecord::default() }).collect();
        }
        for pass in 1..=2u8 {
            let idx = pass as usize - 1;
            for i in 0..nl.len() {
                if rec.actions[i].passes.get(idx).is_some_and(|p| p.complete) {
                    continue;
                }
                if rec.actions[i].passes.len() == idx {
                    self.draft_action(&mut rec, &tree, &nl, i, pass)?;
                }
                if pass == 2 {
                    if let Flow::Parked = self.action_feedback(&mut rec, &tree, &nl, i)? {
                        return self.park(&mut rec);
                    }
                }
                rec.actions[i].passes[idx].complete = true;
                self.store.save_step(&self.manifest.id, &rec)?;
            }
        }
        let domain = DomainSpec {
            name: DOMAIN_NAME.into(),
            hierarchy: tree.hierarchy.clone(),
            predicates: known_predicates(&rec),
            actions: rec.actions.iter().filter_map(|a| a.passes[1].schema.clone()).collect(),
        };
        for a in rec.actions.iter().filter(|a| a.excluded()) {
            rec.warnings.push(format!("{} is not part of the domain", a.name));
        }
        let pruned = prune_domain(&domain);
        for p in domain.predicates.iter().filter(|p| pruned.predicate(&p.name).is_none()) {
            rec.warnings.push(format!("pruned unused predicate {}", p.name));
        }
        for t in domain.hierarchy.names().filter(|t| !pruned.hierarchy.contains(t)) {
            rec.warnings.push(format!("pruned unused type {t}"));
        }
        rec.flawed = rec.actions.iter().any(|a| a.flawed());
        self.manifest.degraded |= rec.flawed;
        self.store.write_text(&self.manifest.id, DOMAIN_FILE, &print_domain(&pruned))?;
        // the unpruned domain, before any element was dropped
        rec.first_artifact = Some(Artifact::Domain(domain));
        rec.artifact = Some(Artifact::Domain(pruned));
        self.finish(&mut rec)
    }

    /// Validates task drafts, regenerating the whole solution, until one
    /// passes or the run's validation budget is used.
    fn validate_task_loop(
        &self,
        rec: &mut StepRecord,
        domain: &DomainSpec,
        mut raw: String,
        mut draft: TaskDraft,
        mut text: String,
    ) -> Result<(), PipelineError> {
        let max = self.config().max_task_validations as usize;
        loop {
            let mut passed = false;
            if rec.validation.len() < max {
                let report = validate_task(&draft, domain);
                passed = report.passed();
                rec.validation.push(report.clone());
                if !passed && rec.validation.len() < max {
                    let feedback = render_feedback(&report).expect("report has issues");
                    let prompt = revision_prompt(&rec.prompt, &raw, &feedback);
                    let (r, (d, t)) = self.generate(
                        rec,
                        CallPurpose::Validation,
                        "task_extraction:validation",
                        &prompt,
                        None,
                        "task",
                        parse_task,
                    )?;
                    (raw, draft, text) = (r, d, t);
                    continue;
                }
            }
            rec.response = raw;
            rec.artifact = Some(Artifact::Task(TaskArtifact { draft: text, problem: None, passed }));
            return Ok(());
        }
    }

    fn extract_task(&mut self) -> Result<Flow, PipelineError> {
        let step = StepId::TaskExtraction;
        let domain = self.stored_domain(step)?;
        let mut rec = self.open_record(step)?;
        let description = self.task_description();
        let hierarchy = outline(&domain.hierarchy);
        let predicates = predicate_list(&domain.predicates);
        if rec.artifact.is_none() {
            let prompt = self.templates.render(
                "task_extraction",
                &[
                    ("description", &description),
                    ("hierarchy", &hierarchy),
                    ("predicates", &predicates),
                    ("actions", &actions_text(&domain)),
                ],
            )?;
            rec.prompt = prompt.clone();
            let (raw, (draft, text)) =
                self.generate(&mut rec, CallPurpose::Main, "task_extraction", &prompt, None, "task", parse_task)?;
            rec.first_artifact = Some(Artifact::Task(TaskArtifact { draft: text.clone(), problem: None, passed: false }));
            self.validate_task_loop(&mut rec, &domain, raw, draft, text)?;
        }
        let source = self.config().feedback_for(step);
        let mut round = std::mem::take(&mut rec.feedback);
        let Some(Artifact::Task(current)) = rec.artifact.clone() else {
            return Err(Self::fail(step, "task record has the wrong kind"));
        };
        let review = || -> Result<String, PipelineError> {
            Ok(self.templates.render(
                "task_extraction_feedback",
                &[
                    ("description", &description),
                    ("hierarchy", &hierarchy),
                    ("predicates", &predicates),
                    ("solution", &fenced("task", &current.draft)),
                ],
            )?)
        };
        match self.decide(&mut rec, &mut round, source, "task_extraction_feedback", review, None)? {
            Decision::Keep => {}
            Decision::Park => {
                rec.feedback = round;
                return self.park(&mut rec);
            }
            Decision::Revise(src, text) => {
                let prompt = revision_prompt(&rec.prompt, &rec.response, &text);
                let (raw, (draft, dtext)) = self.generate(
                    &mut rec,
                    CallPurpose::Revision,
                    "task_extraction:revision",
                    &prompt,
                    None,
                    "task",
                    parse_task,
                )?;
                self.validate_task_loop(&mut rec, &domain, raw, draft, dtext)?;
                round = FeedbackRound::Revised { source: src, feedback: text };
            }
        }
        rec.feedback = round;
        let Some(Artifact::Task(mut task)) = rec.artifact.clone() else { unreachable!() };
        rec.flawed = !task.passed;
        let converted = TaskDraft::parse(&task.draft)
            .and_then(|d| d.to_problem(PROBLEM_NAME, &domain))
            .map_err(|e| Self::fail(step, format!("the accepted task cannot be converted: {e}")));
        let problem = match converted {
            Ok(p) => p,
            Err(e) => {
                // kept for inspection; a resume reruns the step
                self.store.save_step(&self.manifest.id, &rec)?;
                return Err(e);
            }
        };
        if rec.flawed {
            rec.warnings.push("task accepted with validator issues".into());
        }
        self.manifest.degraded |= rec.flawed;
        self.store.write_text(&self.manifest.id, PROBLEM_FILE, &print_problem(&problem))?;
        task.problem = Some(problem);
        rec.artifact = Some(Artifact::Task(task));
        self.finish(&mut rec)
    }

    fn planning(&mut self) -> Result<Flow, PipelineError> {
        let domain = self.stored_domain(StepId::Planning)?;
        let problem = self.stored_problem(&domain)?;
        let id = self.id();
        let result = plan(&domain, &problem, &self.config().planner);
        let verdict = match &result.outcome {
            Outcome::Plan(p) => {
                self.store.remove(&id, NO_PLAN_FILE)?;
                self.store.write_text(&id, PLAN_FILE, &p.to_plan_file())?;
                Some(validate_plan(&domain, &problem, p))
            }
            Outcome::Unsolvable => {
                self.store.remove(&id, PLAN_FILE)?;
                self.store.write_text(&id, NO_PLAN_FILE, "No plan found\n")?;
                None
            }
            Outcome::ResourceLimit { reason } => return Err(PipelineError::PlannerLimit(reason.clone())),
        };
        let mut rec = StepRecord::new(StepId::Planning);
        rec.artifact = Some(Artifact::Plan(PlanArtifact {
            outcome: result.outcome,
            expansions: result.stats.expansions,
            generated: result.stats.generated,
            verdict,
        }));
        self.finish(&mut rec)
    }
}
