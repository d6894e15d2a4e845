use serde::{Deserialize, Serialize};

use super::{GroundTask, State};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeuristicKind {
    #[default]
    Ff,
    GoalCount,
}

/// Delete-relaxed operator: one per ground action plus one per conditional
/// effect disjunct. Negative conditions are dropped, which keeps the
/// relaxation an over-approximation of reachability.
struct RelaxedOp {
    pre: Vec<usize>,
    add: Vec<usize>,
}

/// Precomputed relaxation of a ground task, reused across evaluations.
pub(crate) struct Evaluator<'t> {
    task: &'t GroundTask,
    kind: HeuristicKind,
    ops: Vec<RelaxedOp>,
    /// atom -> ops having it as a precondition
    consumers: Vec<Vec<usize>>,
    ever_added: Vec<bool>,
    ever_deleted: Vec<bool>,
}

impl<'t> Evaluator<'t> {
    pub(crate) fn new(task: &'t GroundTask, kind: HeuristicKind) -> Self {
        let n = task.atoms.len();
        let mut ops = Vec::new();
        let mut ever_added = vec![false; n];
        let mut ever_deleted = vec![false; n];
        for a in &task.actions {
            if !a.add.is_empty() {
                ops.push(RelaxedOp { pre: a.pre.pos.clone(), add: a.add.clone() });
            }
            a.add.iter().for_each(|&i| ever_added[i] = true);
            a.del.iter().for_each(|&i| ever_deleted[i] = true);
            for ce in &a.conditional {
                ce.add.iter().for_each(|&i| ever_added[i] = true);
                ce.del.iter().for_each(|&i| ever_deleted[i] = true);
                if ce.add.is_empty() {
                    continue;
                }
                for c in &ce.condition {
                    let mut pre = a.pre.pos.clone();
                    pre.extend(&c.pos);
                    pre.sort_unstable();
                    pre.dedup();
                    ops.push(RelaxedOp { pre, add: ce.add.clone() });
                }
            }
        }
        let mut consumers = vec![Vec::new(); n];
        for (i, op) in ops.iter().enumerate() {
            for &p in &op.pre {
                consumers[p].push(i);
            }
        }
        Evaluator { task, kind, ops, consumers, ever_added, ever_deleted }
    }

    /// `None` means the goal is unreachable from `state` even under the
    /// relaxation; otherwise the value is 0 exactly on goal states.
    pub(crate) fn eval(&self, state: &State) -> Option<u64> {
        if self.task.is_goal(state) {
            return Some(0);
        }
        match self.kind {
            HeuristicKind::GoalCount => self.goal_count(state),
            HeuristicKind::Ff => self.ff(state),
        }
    }

    fn goal_count(&self, state: &State) -> Option<u64> {
        self.task
            .goal
            .iter()
            .filter(|c| {
                c.pos.iter().all(|&i| state.get(i) || self.ever_added[i])
                    && c.neg.iter().all(|&i| !state.get(i) || self.ever_deleted[i])
            })
            .map(|c| c.unsatisfied(state) as u64)
            .min()
    }

    fn ff(&self, state: &State) -> Option<u64> {
        let n = self.task.atoms.len();
        let mut level: Vec<Option<u32>> = vec![None; n];
        let mut op_level: Vec<Option<u32>> = vec![None; self.ops.len()];
        let mut missing: Vec<usize> = self.ops.iter().map(|o| o.pre.len()).collect();

        let mut frontier: Vec<usize> = state.ones().collect();
        for &i in &frontier {
            level[i] = Some(0);
        }
        let mut ready: Vec<usize> = (0..self.ops.len()).filter(|&o| missing[o] == 0).collect();
        let mut l = 0u32;
        let goal_level = |level: &[Option<u32>]| -> Option<usize> {
            // disjunct with the smallest (max level, level sum); ties by position
            self.task
                .goal
                .iter()
                .enumerate()
                .filter_map(|(k, c)| {
                    let mut max = 0;
                    let mut sum = 0u64;
                    for &p in &c.pos {
                        let v = level[p]?;
                        max = max.max(v);
                        sum += u64::from(v);
                    }
                    Some(((max, sum), k))
                })
                .min()
                .map(|(_, k)| k)
        };
        loop {
            for &a in &frontier {
                for &o in &self.consumers[a] {
                    missing[o] -= 1;
                    if missing[o] == 0 {
                        ready.push(o);
                    }
                }
            }
            if goal_level(&level).is_some() {
                break;
            }
            let mut next = Vec::new();
            for &o in &ready {
                op_level[o] = Some(l);
                for &a in &self.ops[o].add {
                    if level[a].is_none() {
                        level[a] = Some(l + 1);
                        next.push(a);
                    }
                }
            }
            ready.clear();
            if next.is_empty() {
                break;
            }
            frontier = next;
            l += 1;
        }
        let chosen = &self.task.goal[goal_level(&level)?];

        // backward extraction
        let top = chosen.pos.iter().filter_map(|&p| level[p]).max().unwrap_or(0) as usize;
        let mut goals: Vec<Vec<usize>> = vec![Vec::new(); top + 1];
        let mut queued = vec![false; n];
        for &p in &chosen.pos {
            let lv = level[p].unwrap() as usize;
            if lv > 0 && !queued[p] {
                queued[p] = true;
                goals[lv].push(p);
            }
        }
        let mut selected = vec![false; self.ops.len()];
        let mut count = 0u64;
        for lv in (1..=top).rev() {
            let mut layer = std::mem::take(&mut goals[lv]);
            layer.sort_unstable();
            let mut achieved: Vec<usize> = Vec::new();
            for g in layer {
                if achieved.contains(&g) {
                    continue;
                }
                let want = lv as u32 - 1;
                let o = (0..self.ops.len())
                    .find(|&o| op_level[o] == Some(want) && self.ops[o].add.contains(&g))
                    .expect("every leveled atom has an achiever one layer below");
                if !selected[o] {
                    selected[o] = true;
                    count += 1;
                }
                achieved.extend(&self.ops[o].add);
                for &p in &self.ops[o].pre {
                    let pl = level[p].unwrap() as usize;
                    if pl > 0 && !queued[p] {
                        queued[p] = true;
                        goals[pl].push(p);
                    }
                }
            }
        }
        // unmet negative goal literals still need at least one step
        Some(count.max(1))
    }
}

/// Heuristic estimate for `state`; see [`HeuristicKind`].
pub fn heuristic(task: &GroundTask, state: &State, kind: HeuristicKind) -> Option<u64> {
    Evaluator::new(task, kind).eval(state)
}
