//! Independent reference implementations used as test oracles. Nothing here
//! calls into the planner; states are plain sets of ground atoms and every
//! formula is evaluated directly on the lifted schemas.
#![allow(dead_code)]

pub mod blocksworld;
pub mod faults;

use std::collections::{BTreeSet, BinaryHeap, HashMap, HashSet, VecDeque};
use std::cmp::Reverse;
use std::path::PathBuf;

use nl2plan::pddl::{
    parse_domain, parse_problem, DomainSpec, Effect, Formula, GroundAtom, PlanStep, ProblemSpec, Term,
};

pub type OState = BTreeSet<GroundAtom>;
type Env = HashMap<String, String>;

/// Resolves from either crate of the workspace.
pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

/// Every domain in the PDDL corpus with its problems.
pub fn corpus() -> Vec<(String, Vec<String>)> {
    let mut names: Vec<String> = std::fs::read_dir(fixture("pddl"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    names
        .iter()
        .filter_map(|d| d.strip_suffix(".domain.pddl"))
        .map(|stem| {
            let probs = names
                .iter()
                .filter(|n| n.starts_with(&format!("{stem}.")) && n.ends_with(".problem.pddl"))
                .cloned()
                .collect();
            (format!("{stem}.domain.pddl"), probs)
        })
        .collect()
}

pub fn read_fixture(name: &str) -> String {
    std::fs::read_to_string(fixture(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn load(domain: &str, problem: &str) -> (DomainSpec, ProblemSpec) {
    let d = parse_domain(&read_fixture(&format!("pddl/{domain}.domain.pddl"))).unwrap();
    let p = parse_problem(&read_fixture(&format!("pddl/{domain}.{problem}.problem.pddl")), &d).unwrap();
    (d, p)
}

pub struct Oracle<'a> {
    pub d: &'a DomainSpec,
    pub p: &'a ProblemSpec,
    /// predicates that occur in some effect
    changing: HashSet<String>,
}

fn subtype<'a>(d: &'a DomainSpec, mut t: &'a str, sup: &str) -> bool {
    loop {
        if t == sup {
            return true;
        }
        match d.hierarchy.parent(t) {
            Some(p) => t = p,
            None => return sup == "object",
        }
    }
}

fn effect_preds(e: &Effect, out: &mut HashSet<String>) {
    match e {
        Effect::Add(a) | Effect::Delete(a) => {
            out.insert(a.predicate.clone());
        }
        Effect::And(es) => es.iter().for_each(|x| effect_preds(x, out)),
        Effect::Forall(_, x) | Effect::When(_, x) => effect_preds(x, out),
        Effect::IncreaseCost(_) => {}
    }
}

impl<'a> Oracle<'a> {
    pub fn new(d: &'a DomainSpec, p: &'a ProblemSpec) -> Self {
        let mut changing = HashSet::new();
        for a in &d.actions {
            effect_preds(&a.effect, &mut changing);
        }
        Oracle { d, p, changing }
    }

    pub fn init(&self) -> OState {
        self.p.init.iter().cloned().collect()
    }

    fn objs(&self, ty: &str) -> Vec<String> {
        self.p
            .objects
            .iter()
            .filter(|o| subtype(self.d, &o.ty, ty))
            .map(|o| o.name.clone())
            .collect()
    }

    fn envs(&self, vars: &[nl2plan::pddl::TypedVar], base: &Env) -> Vec<Env> {
        let mut out = vec![base.clone()];
        for v in vars {
            let mut next = vec![];
            for e in &out {
                for o in self.objs(&v.ty) {
                    let mut e2 = e.clone();
                    e2.insert(v.name.clone(), o);
                    next.push(e2);
                }
            }
            out = next;
        }
        out
    }

    fn term(t: &Term, env: &Env) -> String {
        match t {
            Term::Var(v) => env[v].clone(),
            Term::Object(o) => o.clone(),
        }
    }

    fn ground(a: &nl2plan::pddl::Atom, env: &Env) -> GroundAtom {
        GroundAtom::new(a.predicate.clone(), a.args.iter().map(|t| Self::term(t, env)))
    }

    /// Exact truth when `relaxed` is false. When relaxed, negated atoms of
    /// changing predicates count as true.
    pub fn eval(&self, f: &Formula, s: &OState, env: &Env, relaxed: bool, negated: bool) -> bool {
        let r = match f {
            Formula::Atom(a) => {
                if negated && relaxed && self.changing.contains(&a.predicate) {
                    return true;
                }
                s.contains(&Self::ground(a, env))
            }
            Formula::Equality(x, y) => Self::term(x, env) == Self::term(y, env),
            Formula::Not(g) => return self.eval(g, s, env, relaxed, !negated),
            Formula::And(gs) => {
                if negated {
                    gs.iter().any(|g| self.eval(g, s, env, relaxed, true))
                } else {
                    gs.iter().all(|g| self.eval(g, s, env, relaxed, false))
                }
            }
            Formula::Or(gs) => {
                if negated {
                    gs.iter().all(|g| self.eval(g, s, env, relaxed, true))
                } else {
                    gs.iter().any(|g| self.eval(g, s, env, relaxed, false))
                }
            }
            Formula::Imply(x, y) => {
                let alt = Formula::Or(vec![Formula::Not(x.clone()), (**y).clone()]);
                return self.eval(&alt, s, env, relaxed, negated);
            }
            Formula::Forall(vs, g) => {
                let es = self.envs(vs, env);
                if negated {
                    es.iter().any(|e| self.eval(g, s, e, relaxed, true))
                } else {
                    es.iter().all(|e| self.eval(g, s, e, relaxed, false))
                }
            }
            Formula::Exists(vs, g) => {
                let es = self.envs(vs, env);
                if negated {
                    es.iter().all(|e| self.eval(g, s, e, relaxed, true))
                } else {
                    es.iter().any(|e| self.eval(g, s, e, relaxed, false))
                }
            }
        };
        // the negated branches above already returned the negated value
        match f {
            Formula::Atom(_) | Formula::Equality(..) => r != negated,
            _ => r,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn collect(&self, e: &Effect, s: &OState, env: &Env, relaxed: bool, add: &mut Vec<GroundAtom>, del: &mut Vec<GroundAtom>, cost: &mut u64) {
        match e {
            Effect::Add(a) => add.push(Self::ground(a, env)),
            Effect::Delete(a) => del.push(Self::ground(a, env)),
            Effect::And(es) => es.iter().for_each(|x| self.collect(x, s, env, relaxed, add, del, cost)),
            Effect::Forall(vs, x) => {
                for e2 in self.envs(vs, env) {
                    self.collect(x, s, &e2, relaxed, add, del, cost);
                }
            }
            Effect::When(c, x) => {
                if self.eval(c, s, env, relaxed, false) {
                    self.collect(x, s, env, relaxed, add, del, cost);
                }
            }
            Effect::IncreaseCost(n) => *cost += n,
        }
    }

    /// Every typed instantiation of every schema, in declaration order.
    pub fn instances(&self) -> Vec<(usize, Env, PlanStep)> {
        let mut out = vec![];
        for (i, a) in self.d.actions.iter().enumerate() {
            for env in self.envs(&a.params, &Env::new()) {
                let args = a.params.iter().map(|p| env[&p.name].clone()).collect();
                out.push((i, env, PlanStep { action: a.name.clone(), args }));
            }
        }
        out
    }

    /// Applies a step if applicable; returns successor and cost.
    pub fn apply(&self, s: &OState, step: &PlanStep) -> Option<(OState, u64)> {
        let a = self.d.actions.iter().find(|a| a.name == step.action)?;
        if a.params.len() != step.args.len() {
            return None;
        }
        let mut env = Env::new();
        for (p, arg) in a.params.iter().zip(&step.args) {
            let o = self.p.objects.iter().find(|o| &o.name == arg)?;
            if !subtype(self.d, &o.ty, &p.ty) {
                return None;
            }
            env.insert(p.name.clone(), arg.clone());
        }
        if !self.eval(&a.precondition, s, &env, false, false) {
            return None;
        }
        let (mut add, mut del, mut cost) = (vec![], vec![], 0);
        self.collect(&a.effect, s, &env, false, &mut add, &mut del, &mut cost);
        let mut n = s.clone();
        for x in del {
            n.remove(&x);
        }
        n.extend(add);
        let unit = !self.d.actions.iter().any(|a| a.effect.has_cost());
        Some((n, if unit { 1 } else { cost }))
    }

    pub fn goal(&self, s: &OState) -> bool {
        self.eval(&self.p.goal, s, &Env::new(), false, false)
    }

    /// Dijkstra over the concrete state space. `Err(())` when more than
    /// `cap` states are reached; `Ok(None)` when the goal is unreachable.
    pub fn optimal_cost(&self, cap: usize) -> Result<Option<u64>, ()> {
        let inst = self.instances();
        let mut dist: HashMap<OState, u64> = HashMap::new();
        let mut heap = BinaryHeap::new();
        let s0 = self.init();
        dist.insert(s0.clone(), 0);
        heap.push(Reverse((0u64, s0)));
        while let Some(Reverse((g, s))) = heap.pop() {
            if dist[&s] < g {
                continue;
            }
            if self.goal(&s) {
                return Ok(Some(g));
            }
            for (_, _, step) in &inst {
                if let Some((n, c)) = self.apply(&s, step) {
                    let ng = g + c;
                    if dist.get(&n).is_none_or(|&old| ng < old) {
                        dist.insert(n.clone(), ng);
                        if dist.len() > cap {
                            return Err(());
                        }
                        heap.push(Reverse((ng, n)));
                    }
                }
            }
        }
        Ok(None)
    }

    fn mentioned(&self, f: &Formula, env: &Env, out: &mut BTreeSet<GroundAtom>) {
        match f {
            Formula::Atom(a) => {
                if self.changing.contains(&a.predicate) {
                    out.insert(Self::ground(a, env));
                }
            }
            Formula::Equality(..) => {}
            Formula::Not(g) => self.mentioned(g, env, out),
            Formula::And(gs) | Formula::Or(gs) => gs.iter().for_each(|g| self.mentioned(g, env, out)),
            Formula::Imply(x, y) => {
                self.mentioned(x, env, out);
                self.mentioned(y, env, out);
            }
            Formula::Forall(vs, g) | Formula::Exists(vs, g) => {
                for e in self.envs(vs, env) {
                    self.mentioned(g, &e, out);
                }
            }
        }
    }

    /// True when some state whose changing atoms all lie in `reach` (and
    /// whose other atoms are as in the initial state) satisfies `f`.
    pub fn satisfiable_within(&self, f: &Formula, env: &Env, reach: &OState) -> bool {
        let mut atoms = BTreeSet::new();
        self.mentioned(f, env, &mut atoms);
        let free: Vec<GroundAtom> = atoms.into_iter().filter(|a| reach.contains(a)).collect();
        assert!(free.len() <= 16, "too many atoms for subset enumeration");
        let fixed: OState = self.p.init.iter().filter(|a| !self.changing.contains(&a.predicate)).cloned().collect();
        (0u32..1 << free.len()).any(|mask| {
            let mut s = fixed.clone();
            s.extend(free.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, a)| a.clone()));
            self.eval(f, &s, env, false, false)
        })
    }

    fn relaxed_effects(&self, e: &Effect, env: &Env, reach: &OState, add: &mut Vec<GroundAtom>) {
        match e {
            Effect::Add(a) => add.push(Self::ground(a, env)),
            Effect::Delete(_) | Effect::IncreaseCost(_) => {}
            Effect::And(es) => es.iter().for_each(|x| self.relaxed_effects(x, env, reach, add)),
            Effect::Forall(vs, x) => {
                for e2 in self.envs(vs, env) {
                    self.relaxed_effects(x, &e2, reach, add);
                }
            }
            Effect::When(c, x) => {
                if self.satisfiable_within(c, env, reach) {
                    self.relaxed_effects(x, env, reach, add);
                }
            }
        }
    }

    /// Atoms reachable when deletes are ignored.
    pub fn relaxed_reachable(&self) -> OState {
        let inst = self.instances();
        let mut s = self.init();
        loop {
            let before = s.len();
            for (i, env, _) in &inst {
                let a = &self.d.actions[*i];
                if self.satisfiable_within(&a.precondition, env, &s) {
                    let mut add = vec![];
                    self.relaxed_effects(&a.effect, env, &s, &mut add);
                    s.extend(add);
                }
            }
            if s.len() == before {
                return s;
            }
        }
    }

    /// Instances whose precondition can hold in some relaxed-reachable state.
    pub fn relaxed_instances(&self) -> BTreeSet<(String, Vec<String>)> {
        let r = self.relaxed_reachable();
        self.instances()
            .into_iter()
            .filter(|(i, env, _)| self.satisfiable_within(&self.d.actions[*i].precondition, env, &r))
            .map(|(_, _, s)| (s.action, s.args))
            .collect()
    }

    /// Length of a shortest delete-free plan, by breadth-first search over
    /// sets of reached atoms.
    pub fn relaxed_plan_length(&self, from: &OState) -> Option<usize> {
        let inst = self.instances();
        let mut seen: HashSet<OState> = HashSet::new();
        let mut queue = VecDeque::from([(from.clone(), 0usize)]);
        seen.insert(from.clone());
        while let Some((s, depth)) = queue.pop_front() {
            if self.eval(&self.p.goal, &s, &Env::new(), true, false) {
                return Some(depth);
            }
            for (i, env, _) in &inst {
                let a = &self.d.actions[*i];
                if self.eval(&a.precondition, &s, env, true, false) {
                    let (mut add, mut del, mut c) = (vec![], vec![], 0);
                    self.collect(&a.effect, &s, env, true, &mut add, &mut del, &mut c);
                    let mut n = s.clone();
                    n.extend(add);
                    if n.len() > s.len() && seen.insert(n.clone()) {
                        queue.push_back((n, depth + 1));
                    }
                }
            }
        }
        None
    }
}
