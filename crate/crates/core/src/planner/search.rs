use std::cmp::Reverse;
use std::collections::hash_map::Entry;
use std::collections::{BinaryHeap, HashMap};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::heuristic::Evaluator;
use super::{plan_from_steps, GroundTask, PlannerConfig, State};
use crate::pddl::Plan;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
#[derive(Default)]
pub enum SearchKind {
    #[default]
    GreedyBestFirst,
    Astar,
    /// Uniform-cost search; breadth-first when every action costs 1.
    Bfs,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Outcome {
    Plan(Plan),
    /// Every reachable state was explored without meeting the goal.
    Unsolvable,
    ResourceLimit { reason: String },
}

impl Outcome {
    pub fn plan(&self) -> Option<&Plan> {
        match self {
            Outcome::Plan(p) => Some(p),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchStats {
    pub expansions: u64,
    pub generated: u64,
    pub elapsed_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub outcome: Outcome,
    pub stats: SearchStats,
}

struct Node {
    state: State,
    parent: Option<usize>,
    action: usize,
    g: u64,
}

/// Best-first search over the ground task. Queue entries are ordered by the
/// search key and then by generation order, so ties resolve FIFO and runs
/// are deterministic.
pub fn solve(task: &GroundTask, config: &PlannerConfig) -> PlanResult {
    let started = Instant::now();
    let mut stats = SearchStats::default();
    let finish = |outcome: Outcome, mut stats: SearchStats| {
        stats.elapsed_ms = started.elapsed().as_secs_f64() * 1000.0;
        PlanResult { outcome, stats }
    };

    let kind = config.search;
    let eval = (kind != SearchKind::Bfs).then(|| Evaluator::new(task, config.heuristic));
    let h_of = |s: &State| match &eval {
        Some(e) => e.eval(s),
        None => Some(0),
    };
    let key = |g: u64, h: u64| match kind {
        SearchKind::GreedyBestFirst => h,
        SearchKind::Astar => g + h,
        SearchKind::Bfs => g,
    };

    let mut nodes: Vec<Node> = Vec::new();
    let mut best_g: HashMap<State, u64> = HashMap::new();
    let mut open: BinaryHeap<Reverse<(u64, u64, usize)>> = BinaryHeap::new();
    let mut seq = 0u64;

    let Some(h0) = h_of(&task.init) else {
        return finish(Outcome::Unsolvable, stats);
    };
    nodes.push(Node { state: task.init.clone(), parent: None, action: usize::MAX, g: 0 });
    best_g.insert(task.init.clone(), 0);
    open.push(Reverse((key(0, h0), seq, 0)));

    while let Some(Reverse((_, _, id))) = open.pop() {
        let g = nodes[id].g;
        if kind != SearchKind::GreedyBestFirst && best_g[&nodes[id].state] < g {
            continue;
        }
        if task.is_goal(&nodes[id].state) {
            let mut steps = Vec::new();
            let mut cur = id;
            while let Some(p) = nodes[cur].parent {
                steps.push(nodes[cur].action);
                cur = p;
            }
            steps.reverse();
            return finish(Outcome::Plan(plan_from_steps(task, &steps)), stats);
        }
        if stats.expansions >= config.max_expansions {
            let reason = format!("expansion limit of {} reached", config.max_expansions);
            return finish(Outcome::ResourceLimit { reason }, stats);
        }
        if stats.expansions % 256 == 0 && started.elapsed() > config.timeout {
            let reason = format!("time limit of {:.1}s reached", config.timeout.as_secs_f64());
            return finish(Outcome::ResourceLimit { reason }, stats);
        }
        stats.expansions += 1;

        for (ai, a) in task.actions.iter().enumerate() {
            if !a.applicable(&nodes[id].state) {
                continue;
            }
            let (next, c) = task
                .successor(&nodes[id].state, a)
                .expect("applicability checked above");
            let ng = g + c;
            stats.generated += 1;
            match best_g.entry(next.clone()) {
                Entry::Occupied(mut e) => {
                    // greedy search never reopens; the others reopen on a cheaper path
                    if kind == SearchKind::GreedyBestFirst || *e.get() <= ng {
                        continue;
                    }
                    e.insert(ng);
                }
                Entry::Vacant(e) => {
                    e.insert(ng);
                }
            }
            let Some(h) = h_of(&next) else { continue };
            seq += 1;
            nodes.push(Node { state: next, parent: Some(id), action: ai, g: ng });
            open.push(Reverse((key(ng, h), seq, nodes.len() - 1)));
        }
    }
    finish(Outcome::Unsolvable, stats)
}
