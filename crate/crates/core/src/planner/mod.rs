//! Embedded classical planner: grounding, delete-relaxation heuristics,
//! best-first search and a lifted plan validator.

mod ground;
mod heuristic;
mod search;
mod validate;

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pddl::{DomainSpec, GroundAtom, ObjectDecl, Plan, PlanStep, ProblemSpec};

pub use ground::{ground, GroundingLimits};
pub use heuristic::{heuristic, HeuristicKind};
pub use search::{solve, Outcome, PlanResult, SearchKind, SearchStats};
pub use validate::{validate_plan, Verdict};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlannerError {
    #[error("grounding limit exceeded: {0}")]
    GroundingLimit(String),
    #[error("action {0} is not applicable")]
    Inapplicable(String),
}

/// A set of true atoms, one bit per atom of the task's atom table.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct State {
    words: Vec<u64>,
}

impl State {
    pub fn empty(n_atoms: usize) -> Self {
        State {
            words: vec![0; n_atoms.div_ceil(64)],
        }
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    #[inline]
    pub fn clear(&mut self, i: usize) {
        self.words[i / 64] &= !(1 << (i % 64));
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(w, &bits)| {
            (0..64).filter(move |b| bits >> b & 1 == 1).map(move |b| w * 64 + b)
        })
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }
}

impl fmt::Debug for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.ones()).finish()
    }
}

/// Literal conjunction over atom indices.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct Conjunction {
    pub pos: Vec<usize>,
    pub neg: Vec<usize>,
}

impl Conjunction {
    pub fn holds(&self, s: &State) -> bool {
        self.pos.iter().all(|&i| s.get(i)) && self.neg.iter().all(|&i| !s.get(i))
    }

    pub fn unsatisfied(&self, s: &State) -> usize {
        self.pos.iter().filter(|&&i| !s.get(i)).count()
            + self.neg.iter().filter(|&&i| s.get(i)).count()
    }
}

/// `when` effect; the condition is a disjunction of conjunctions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConditionalEffect {
    pub condition: Vec<Conjunction>,
    pub add: Vec<usize>,
    pub del: Vec<usize>,
    pub cost: u64,
}

impl ConditionalEffect {
    pub fn fires(&self, s: &State) -> bool {
        self.condition.iter().any(|c| c.holds(s))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundAction {
    pub name: String,
    pub args: Vec<String>,
    pub pre: Conjunction,
    pub add: Vec<usize>,
    pub del: Vec<usize>,
    pub conditional: Vec<ConditionalEffect>,
    /// Unconditional cost; 1 for every action when the domain has no costs.
    pub cost: u64,
}

impl GroundAction {
    pub fn applicable(&self, s: &State) -> bool {
        self.pre.holds(s)
    }

    pub fn step(&self) -> PlanStep {
        PlanStep {
            action: self.name.clone(),
            args: self.args.clone(),
        }
    }
}

impl fmt::Display for GroundAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.step())
    }
}

#[derive(Clone, Debug)]
pub struct GroundTask {
    pub atoms: Vec<GroundAtom>,
    pub actions: Vec<GroundAction>,
    pub init: State,
    /// Disjunction of conjunctions; empty means unsatisfiable.
    pub goal: Vec<Conjunction>,
    pub objects: Vec<ObjectDecl>,
    pub unit_cost: bool,
}

impl GroundTask {
    pub fn is_goal(&self, s: &State) -> bool {
        self.goal.iter().any(|c| c.holds(s))
    }

    /// Applies `action` to `state`. Deletes are applied before adds, and
    /// conditional effects are decided on the pre-state.
    pub fn successor(&self, state: &State, action: &GroundAction) -> Result<(State, u64), PlannerError> {
        if !action.applicable(state) {
            return Err(PlannerError::Inapplicable(action.to_string()));
        }
        let fired: Vec<&ConditionalEffect> = action.conditional.iter().filter(|c| c.fires(state)).collect();
        let mut next = state.clone();
        for &d in action.del.iter().chain(fired.iter().flat_map(|c| c.del.iter())) {
            next.clear(d);
        }
        for &a in action.add.iter().chain(fired.iter().flat_map(|c| c.add.iter())) {
            next.set(a);
        }
        let cost = if self.unit_cost {
            1
        } else {
            action.cost + fired.iter().map(|c| c.cost).sum::<u64>()
        };
        Ok((next, cost))
    }

    pub fn state_atoms(&self, s: &State) -> Vec<&GroundAtom> {
        s.ones().map(|i| &self.atoms[i]).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub search: SearchKind,
    pub heuristic: HeuristicKind,
    pub max_expansions: u64,
    pub max_ground_actions: usize,
    #[serde(with = "secs")]
    pub timeout: Duration,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            search: SearchKind::GreedyBestFirst,
            heuristic: HeuristicKind::Ff,
            max_expansions: 1_000_000,
            max_ground_actions: 1_000_000,
            timeout: Duration::from_secs(60),
        }
    }
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        if !(v.is_finite() && v > 0.0) {
            return Err(serde::de::Error::custom("timeout must be a positive number of seconds"));
        }
        Ok(Duration::from_secs_f64(v))
    }
}

/// Grounds and solves; a returned plan has already been checked by the
/// lifted validator.
pub fn plan(domain: &DomainSpec, problem: &ProblemSpec, config: &PlannerConfig) -> PlanResult {
    let limits = GroundingLimits {
        max_ground_actions: config.max_ground_actions,
        ..GroundingLimits::default()
    };
    let task = match ground(domain, problem, limits) {
        Ok(t) => t,
        Err(e) => {
            return PlanResult {
                outcome: Outcome::ResourceLimit { reason: e.to_string() },
                stats: SearchStats::default(),
            }
        }
    };
    let result = solve(&task, config);
    if let Outcome::Plan(p) = &result.outcome {
        let verdict = validate_plan(domain, problem, p);
        assert!(verdict.is_valid(), "planner produced an invalid plan: {verdict:?}");
    }
    result
}

pub(crate) fn plan_from_steps(task: &GroundTask, steps: &[usize]) -> Plan {
    let mut state = task.init.clone();
    let mut cost = 0;
    let mut out = Vec::with_capacity(steps.len());
    for &i in steps {
        let a = &task.actions[i];
        let (next, c) = task.successor(&state, a).expect("search only follows applicable actions");
        state = next;
        cost += c;
        out.push(a.step());
    }
    Plan { steps: out, cost }
}
