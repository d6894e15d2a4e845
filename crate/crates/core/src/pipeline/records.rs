use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{FeedbackSource, RunConfig, StepId};
use crate::pddl::{ActionSchema, DomainSpec, PredicateDecl, ProblemSpec, TypeHierarchy};
use crate::planner::{Outcome, Verdict};
use crate::validator::ValidationReport;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeListEntry {
    pub name: String,
    pub description: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeList {
    pub entries: Vec<TypeListEntry>,
}

impl TypeList {
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    /// Block body as the model writes it.
    pub fn to_block(&self) -> String {
        self.entries.iter().map(|e| format!("{}: {}", e.name, e.description)).collect::<Vec<_>>().join("\n")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Requested,
    SynthesizedParent,
    /// Added by a human edit of the hierarchy.
    Edited,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeTree {
    pub hierarchy: TypeHierarchy,
    pub provenance: BTreeMap<String, Provenance>,
}

impl TypeTree {
    pub fn to_block(&self) -> String {
        self.hierarchy.entries().map(|(n, e)| format!("{n}: {}", e.parent)).collect::<Vec<_>>().join("\n")
    }

    /// Indented rendering for prompts, children under their parent.
    pub fn outline(&self) -> String {
        fn walk(h: &TypeHierarchy, t: &str, depth: usize, out: &mut Vec<String>) {
            for c in h.children(t) {
                let d = h.description(c).unwrap_or("");
                let line = if d.is_empty() { c.to_string() } else { format!("{c}: {d}") };
                out.push(format!("{}- {line}", "  ".repeat(depth)));
                walk(h, c, depth + 1, out);
            }
        }
        let mut out = vec!["object".to_string()];
        walk(&self.hierarchy, "object", 1, &mut out);
        out.join("\n")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NlAction {
    pub name: String,
    pub description: String,
    pub example: String,
}

pub fn actions_block(actions: &[NlAction]) -> String {
    actions
        .iter()
        .map(|a| format!("name: {}\ndescription: {}\nexample: {}", a.name, a.description, a.example))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskArtifact {
    /// Objects, init and goal as drafted.
    pub draft: String,
    /// Set when the step finishes.
    pub problem: Option<ProblemSpec>,
    /// The draft was validated and passed.
    pub passed: bool,
}

/// Planner result without wall-clock fields, so that reruns compare equal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanArtifact {
    pub outcome: Outcome,
    pub expansions: u64,
    pub generated: u64,
    pub verdict: Option<Verdict>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Artifact {
    Types(TypeList),
    Hierarchy(TypeTree),
    Actions(Vec<NlAction>),
    Domain(DomainSpec),
    Task(TaskArtifact),
    Plan(PlanArtifact),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallPurpose {
    Main,
    /// Re-ask after unparseable output.
    Retry,
    /// Redraft with validator feedback.
    Validation,
    Feedback,
    /// Regeneration with feedback.
    Revision,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub purpose: CallPurpose,
    pub template_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<String>,
    pub digest: String,
    pub prompt: String,
    pub response: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum FeedbackRound {
    #[default]
    NotRequested,
    /// Parked until a human answers.
    Pending,
    /// Human input received, not yet acted on.
    Received { text: Option<String> },
    /// The feedback source found nothing to change.
    Accepted { source: FeedbackSource },
    /// A human approved the solution as is.
    Approved,
    /// One regeneration with this feedback.
    Revised { source: FeedbackSource, feedback: String },
    /// The artifact was replaced by a human edit.
    Edited,
}

impl FeedbackRound {
    pub fn regenerations(&self) -> u32 {
        matches!(self, FeedbackRound::Revised { .. }) as u32
    }

    pub fn is_settled(&self) -> bool {
        !matches!(self, FeedbackRound::Pending | FeedbackRound::Received { .. })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PassRecord {
    pub pass: u8,
    /// Every draft of this pass in order, as the fenced block body.
    pub drafts: Vec<String>,
    pub reports: Vec<ValidationReport>,
    /// Validator feedback messages sent back to the model.
    pub messages: u32,
    pub flawed: bool,
    /// Schema of the accepted draft; `None` when it could not be converted.
    pub schema: Option<ActionSchema>,
    /// Predicates the accepted draft declared that were not known before.
    pub new_predicates: Vec<PredicateDecl>,
    /// Validation and, in the second pass, feedback are finished.
    pub complete: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub name: String,
    pub passes: Vec<PassRecord>,
    pub feedback: FeedbackRound,
    /// Raw answer of the last pass-2 generation, for the feedback prompt.
    #[serde(default)]
    pub last_response: String,
    #[serde(default)]
    pub last_prompt: String,
}

impl ActionRecord {
    pub fn flawed(&self) -> bool {
        self.passes.last().is_some_and(|p| p.flawed)
    }

    /// Left out of the domain: the final draft could not be converted.
    pub fn excluded(&self) -> bool {
        self.passes.len() == 2 && self.passes[1].complete && self.passes[1].schema.is_none()
    }

    /// Schema of the latest finished pass.
    pub fn latest_schema(&self) -> Option<&ActionSchema> {
        self.passes.iter().rev().find(|p| p.complete).and_then(|p| p.schema.as_ref())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    InProgress,
    AwaitingFeedback,
    Done,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: StepId,
    pub status: StepStatus,
    /// Original prompt of the main generation.
    pub prompt: String,
    /// Raw answer the feedback round refers to.
    pub response: String,
    pub calls: Vec<CallRecord>,
    pub first_artifact: Option<Artifact>,
    pub artifact: Option<Artifact>,
    pub feedback: FeedbackRound,
    /// Task validations, in order.
    pub validation: Vec<ValidationReport>,
    /// Per-action construction history.
    pub actions: Vec<ActionRecord>,
    pub warnings: Vec<String>,
    /// Accepted with unresolved validator issues.
    pub flawed: bool,
    /// Artifact supplied by an edit instead of generated.
    pub edited: bool,
}

impl StepRecord {
    pub fn new(step: StepId) -> Self {
        StepRecord {
            step,
            status: StepStatus::InProgress,
            prompt: String::new(),
            response: String::new(),
            calls: Vec::new(),
            first_artifact: None,
            artifact: None,
            feedback: FeedbackRound::NotRequested,
            validation: Vec::new(),
            actions: Vec::new(),
            warnings: Vec::new(),
            flawed: false,
            edited: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Running,
    AwaitingHumanFeedback,
    Done,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunFailure {
    pub step: StepId,
    pub cause: String,
}

/// `manifest.json` of a run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub id: String,
    pub created: String,
    pub description: String,
    /// Replaces `description` for task extraction after a domain-reuse resume.
    #[serde(default)]
    pub task_description: Option<String>,
    pub config: RunConfig,
    pub status: RunStatus,
    pub current_step: Option<StepId>,
    /// Action awaiting human feedback during action construction.
    #[serde(default)]
    pub pending_action: Option<String>,
    pub failure: Option<RunFailure>,
    /// Some artifact was accepted with validator issues.
    pub degraded: bool,
    /// Number of superseded records per step.
    #[serde(default)]
    pub superseded: BTreeMap<StepId, u32>,
    /// Files in the run directory, relative paths.
    pub files: Vec<String>,
}

/// A run as loaded from disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub manifest: RunManifest,
    pub steps: BTreeMap<StepId, StepRecord>,
    pub domain: Option<DomainSpec>,
    pub problem: Option<ProblemSpec>,
    pub plan: Option<PlanArtifact>,
}
