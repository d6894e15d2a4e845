//! The six-step natural-language-to-plan pipeline: LLM-driven extraction
//! steps with validation and feedback, persisted run directories, human
//! feedback parking and resumption.

mod parse;
mod records;
mod runner;
mod steps;
mod store;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{LlmError, ProviderConfig, TemplateError};
use crate::planner::PlannerConfig;

pub use parse::{build_tree, parse_feedback, parse_step_output, tagged_block, Parsed, StepOutput, StepParseError};
pub use records::{
    actions_block, ActionRecord, Artifact, CallPurpose, CallRecord, FeedbackRound, NlAction, PassRecord, PipelineRun,
    PlanArtifact, Provenance, RunFailure, RunManifest, RunStatus, StepRecord, StepStatus, TaskArtifact, TypeList,
    TypeListEntry, TypeTree,
};
pub use runner::{
    baseline_cot, check_budgets, prune_domain, usage_totals, FeedbackInput, HaltHook, ProviderFactory, ResumeRequest,
    Runner, Seed, StepUsage, UsageReport,
};
pub use steps::{DOMAIN_NAME, PROBLEM_NAME};
pub use store::{RunStore, DOMAIN_FILE, MANIFEST, NO_PLAN_FILE, PLAN_FILE, PROBLEM_FILE, TRANSCRIPTS, USAGE_FILE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepId {
    TypeExtraction,
    HierarchyConstruction,
    ActionExtraction,
    ActionConstruction,
    TaskExtraction,
    Planning,
}

impl StepId {
    pub const ALL: [StepId; 6] = [
        StepId::TypeExtraction,
        StepId::HierarchyConstruction,
        StepId::ActionExtraction,
        StepId::ActionConstruction,
        StepId::TaskExtraction,
        StepId::Planning,
    ];

    /// Steps a run may start at: from scratch, with a stored domain, or
    /// with a stored domain and problem.
    pub const STARTS: [StepId; 3] = [StepId::TypeExtraction, StepId::TaskExtraction, StepId::Planning];

    pub fn number(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_number(n: u8) -> Option<StepId> {
        StepId::ALL.get((n as usize).checked_sub(1)?).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StepId::TypeExtraction => "type_extraction",
            StepId::HierarchyConstruction => "hierarchy_construction",
            StepId::ActionExtraction => "action_extraction",
            StepId::ActionConstruction => "action_construction",
            StepId::TaskExtraction => "task_extraction",
            StepId::Planning => "planning",
        }
    }

    pub fn uses_llm(self) -> bool {
        self != StepId::Planning
    }

    /// Tag of the fenced block that ends the step's answer.
    pub fn block_tag(self) -> &'static str {
        match self {
            StepId::TypeExtraction => "types",
            StepId::HierarchyConstruction => "hierarchy",
            StepId::ActionExtraction => "actions",
            StepId::ActionConstruction => "action",
            StepId::TaskExtraction => "task",
            StepId::Planning => "plan",
        }
    }

    pub fn next(self) -> Option<StepId> {
        StepId::from_number(self.number() + 1)
    }
}

impl fmt::Display for StepId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StepId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if let Ok(n) = s.parse::<u8>() {
            return StepId::from_number(n).ok_or_else(|| format!("no step {n}"));
        }
        let norm = s.replace('-', "_");
        StepId::ALL
            .into_iter()
            .find(|x| x.as_str() == norm)
            .ok_or_else(|| format!("unknown step '{s}'"))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackSource {
    #[default]
    None,
    Llm,
    Human,
}

impl FromStr for FeedbackSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(FeedbackSource::None),
            "llm" => Ok(FeedbackSource::Llm),
            "human" => Ok(FeedbackSource::Human),
            _ => Err(format!("unknown feedback source '{s}' (none, llm, human)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Feedback source per LLM step; missing steps get none.
    pub feedback: BTreeMap<StepId, FeedbackSource>,
    pub max_action_messages: u32,
    pub max_task_validations: u32,
    pub start_step: StepId,
    pub temperature: f64,
    pub provider: ProviderConfig,
    pub planner: PlannerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            feedback: BTreeMap::new(),
            max_action_messages: 8,
            max_task_validations: 8,
            start_step: StepId::TypeExtraction,
            temperature: 0.0,
            provider: ProviderConfig::default(),
            planner: PlannerConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn feedback_for(&self, step: StepId) -> FeedbackSource {
        self.feedback.get(&step).copied().unwrap_or_default()
    }

    /// Uses one source for every LLM step.
    pub fn with_feedback(mut self, source: FeedbackSource) -> Self {
        self.feedback = StepId::ALL.into_iter().filter(|s| s.uses_llm()).map(|s| (s, source)).collect();
        self
    }

    pub fn check(&self) -> Result<(), PipelineError> {
        if !StepId::STARTS.contains(&self.start_step) {
            return Err(PipelineError::InvalidConfig(format!(
                "runs can start at type_extraction, task_extraction or planning, not {}",
                self.start_step
            )));
        }
        if self.feedback.contains_key(&StepId::Planning) {
            return Err(PipelineError::InvalidConfig("planning takes no feedback".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(PipelineError::InvalidConfig(format!("temperature {} outside [0, 2]", self.temperature)));
        }
        if self.max_action_messages == 0 || self.max_task_validations == 0 {
            return Err(PipelineError::InvalidConfig("validation budgets must be at least 1".into()));
        }
        if self.start_step.uses_llm() {
            self.provider.check()?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("the task description is empty")]
    EmptyDescription,
    #[error("starting at {0} needs a stored domain")]
    MissingDomain(StepId),
    #[error("starting at planning needs a stored problem")]
    MissingProblem,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("{step}: output could not be parsed after a retry: {message}")]
    Unparseable { step: StepId, message: String },
    #[error("{step}: {message}")]
    Step { step: StepId, message: String },
    #[error("planner gave up: {0}")]
    PlannerLimit(String),
    #[error("unknown run {0}")]
    UnknownRun(String),
    #[error("run {run} has no record for {step} yet")]
    StepNotReached { run: String, step: StepId },
    #[error("run {run} is not awaiting feedback at {step}")]
    NotAwaitingFeedback { run: String, step: StepId },
    #[error("run {0} is still running")]
    Busy(String),
    #[error("edited {step} artifact rejected: {message}")]
    InvalidEdit { step: StepId, message: String },
    #[error("run storage: {0}")]
    Io(String),
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        PipelineError::Io(e.to_string())
    }
}
