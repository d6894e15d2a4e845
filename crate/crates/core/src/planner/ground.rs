//! Grounding: instantiate action schemas over the typed object universe and
//! keep the instances that are reachable under the delete relaxation.
//!
//! Quantifiers are expanded over objects, conditions are brought into
//! disjunctive normal form and every precondition disjunct becomes its own
//! ground action. Atoms of predicates that no action ever changes are
//! evaluated against the initial state while grounding.

use std::collections::{BTreeSet, HashMap, HashSet};

use crate::pddl::{
    Atom, DomainSpec, Effect, Formula, GroundAtom, ProblemSpec, Term, TypedVar,
};

use super::{Conjunction, ConditionalEffect, GroundAction, GroundTask, PlannerError, State};

/// Upper bounds that keep grounding from exhausting memory.
#[derive(Clone, Copy, Debug)]
pub struct GroundingLimits {
    pub max_ground_actions: usize,
    pub max_dnf_terms: usize,
}

impl Default for GroundingLimits {
    fn default() -> Self {
        GroundingLimits {
            max_ground_actions: 1_000_000,
            max_dnf_terms: 4096,
        }
    }
}

type Dnf = Vec<Conj>;

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct Conj {
    pos: BTreeSet<usize>,
    neg: BTreeSet<usize>,
}

impl Conj {
    fn consistent(&self) -> bool {
        self.pos.is_disjoint(&self.neg)
    }
}

fn dnf_true() -> Dnf {
    vec![Conj::default()]
}

struct Grounder<'a> {
    domain: &'a DomainSpec,
    problem: &'a ProblemSpec,
    limits: GroundingLimits,
    atoms: Vec<GroundAtom>,
    index: HashMap<GroundAtom, usize>,
    fluent: HashSet<String>,
    init: HashSet<GroundAtom>,
    by_type: HashMap<String, Vec<String>>,
}

impl<'a> Grounder<'a> {
    fn objects_of(&mut self, ty: &str) -> Vec<String> {
        if let Some(v) = self.by_type.get(ty) {
            return v.clone();
        }
        let h = &self.domain.hierarchy;
        let v: Vec<String> = self
            .problem
            .objects
            .iter()
            .filter(|o| h.is_subtype(&o.ty, ty).unwrap_or(false))
            .map(|o| o.name.clone())
            .collect();
        self.by_type.insert(ty.to_string(), v.clone());
        v
    }

    fn intern(&mut self, atom: GroundAtom) -> usize {
        if let Some(&i) = self.index.get(&atom) {
            return i;
        }
        let i = self.atoms.len();
        self.index.insert(atom.clone(), i);
        self.atoms.push(atom);
        i
    }

    fn resolve(term: &Term, binding: &HashMap<String, String>) -> String {
        match term {
            Term::Var(v) => binding.get(v).cloned().unwrap_or_else(|| format!("?{v}")),
            Term::Object(o) => o.clone(),
        }
    }

    fn ground_atom(atom: &Atom, binding: &HashMap<String, String>) -> GroundAtom {
        GroundAtom {
            predicate: atom.predicate.clone(),
            args: atom.args.iter().map(|t| Self::resolve(t, binding)).collect(),
        }
    }

    fn and(&self, a: Dnf, b: Dnf) -> Result<Dnf, PlannerError> {
        let mut out = BTreeSet::new();
        for x in &a {
            for y in &b {
                let c = Conj {
                    pos: x.pos.union(&y.pos).copied().collect(),
                    neg: x.neg.union(&y.neg).copied().collect(),
                };
                if c.consistent() {
                    out.insert(c);
                }
            }
            if out.len() > self.limits.max_dnf_terms {
                return Err(PlannerError::GroundingLimit(format!(
                    "condition expands to more than {} disjuncts",
                    self.limits.max_dnf_terms
                )));
            }
        }
        Ok(out.into_iter().collect())
    }

    fn or(&self, mut a: Dnf, b: Dnf) -> Result<Dnf, PlannerError> {
        a.extend(b);
        a.sort();
        a.dedup();
        if a.len() > self.limits.max_dnf_terms {
            return Err(PlannerError::GroundingLimit(format!(
                "condition expands to more than {} disjuncts",
                self.limits.max_dnf_terms
            )));
        }
        Ok(a)
    }

    fn quantified(
        &mut self,
        vars: &[TypedVar],
        binding: &HashMap<String, String>,
    ) -> Vec<HashMap<String, String>> {
        let mut out = vec![binding.clone()];
        for v in vars {
            let objs = self.objects_of(&v.ty);
            let mut next = Vec::with_capacity(out.len() * objs.len());
            for b in &out {
                for o in &objs {
                    let mut nb = b.clone();
                    nb.insert(v.name.clone(), o.clone());
                    next.push(nb);
                }
            }
            out = next;
        }
        out
    }

    /// Condition to DNF; `positive == false` grounds the negation.
    fn condition(
        &mut self,
        f: &Formula,
        binding: &HashMap<String, String>,
        positive: bool,
    ) -> Result<Dnf, PlannerError> {
        match f {
            Formula::Atom(a) => {
                let g = Self::ground_atom(a, binding);
                if !self.fluent.contains(&g.predicate) {
                    let holds = self.init.contains(&g);
                    return Ok(if holds == positive { dnf_true() } else { Vec::new() });
                }
                let i = self.intern(g);
                let mut c = Conj::default();
                if positive {
                    c.pos.insert(i);
                } else {
                    c.neg.insert(i);
                }
                Ok(vec![c])
            }
            Formula::Equality(a, b) => {
                let eq = Self::resolve(a, binding) == Self::resolve(b, binding);
                Ok(if eq == positive { dnf_true() } else { Vec::new() })
            }
            Formula::Not(inner) => self.condition(inner, binding, !positive),
            Formula::And(items) | Formula::Or(items) => {
                let conjunctive = matches!(f, Formula::And(_)) == positive;
                let mut acc = if conjunctive { dnf_true() } else { Vec::new() };
                for item in items {
                    let d = self.condition(item, binding, positive)?;
                    acc = if conjunctive { self.and(acc, d)? } else { self.or(acc, d)? };
                    if conjunctive && acc.is_empty() {
                        break;
                    }
                }
                Ok(acc)
            }
            Formula::Imply(a, b) => {
                // a -> b  ==  (not a) or b
                let rewritten = Formula::Or(vec![Formula::Not(a.clone()), (**b).clone()]);
                self.condition(&rewritten, binding, positive)
            }
            Formula::Forall(vars, body) | Formula::Exists(vars, body) => {
                let conjunctive = matches!(f, Formula::Forall(..)) == positive;
                let mut acc = if conjunctive { dnf_true() } else { Vec::new() };
                for b in self.quantified(vars, binding) {
                    let d = self.condition(body, &b, positive)?;
                    acc = if conjunctive { self.and(acc, d)? } else { self.or(acc, d)? };
                    if conjunctive && acc.is_empty() {
                        break;
                    }
                }
                Ok(acc)
            }
        }
    }

    fn to_conjunction(c: &Conj) -> Conjunction {
        Conjunction {
            pos: c.pos.iter().copied().collect(),
            neg: c.neg.iter().copied().collect(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn effect(
        &mut self,
        e: &Effect,
        binding: &HashMap<String, String>,
        condition: Option<&Dnf>,
        add: &mut Vec<usize>,
        del: &mut Vec<usize>,
        cost: &mut u64,
        conditional: &mut Vec<ConditionalEffect>,
    ) -> Result<(), PlannerError> {
        match e {
            Effect::Add(a) | Effect::Delete(a) => {
                let i = self.intern(Self::ground_atom(a, binding));
                match condition {
                    None => {
                        if matches!(e, Effect::Add(_)) { add.push(i) } else { del.push(i) }
                    }
                    Some(c) => conditional.push(ConditionalEffect {
                        condition: c.iter().map(Self::to_conjunction).collect(),
                        add: if matches!(e, Effect::Add(_)) { vec![i] } else { vec![] },
                        del: if matches!(e, Effect::Delete(_)) { vec![i] } else { vec![] },
                        cost: 0,
                    }),
                }
            }
            Effect::IncreaseCost(n) => match condition {
                None => *cost += n,
                Some(c) => conditional.push(ConditionalEffect {
                    condition: c.iter().map(Self::to_conjunction).collect(),
                    add: vec![],
                    del: vec![],
                    cost: *n,
                }),
            },
            Effect::And(items) => {
                for item in items {
                    self.effect(item, binding, condition, add, del, cost, conditional)?;
                }
            }
            Effect::Forall(vars, body) => {
                for b in self.quantified(vars, binding) {
                    self.effect(body, &b, condition, add, del, cost, conditional)?;
                }
            }
            Effect::When(cond, body) => {
                let mut d = self.condition(cond, binding, true)?;
                if let Some(outer) = condition {
                    d = self.and(outer.clone(), d)?;
                }
                if !d.is_empty() {
                    self.effect(body, binding, Some(&d), add, del, cost, conditional)?;
                }
            }
        }
        Ok(())
    }
}

fn fluent_predicates(domain: &DomainSpec) -> HashSet<String> {
    fn walk(e: &Effect, out: &mut HashSet<String>) {
        match e {
            Effect::Add(a) | Effect::Delete(a) => {
                out.insert(a.predicate.clone());
            }
            Effect::And(items) => items.iter().for_each(|i| walk(i, out)),
            Effect::Forall(_, b) | Effect::When(_, b) => walk(b, out),
            Effect::IncreaseCost(_) => {}
        }
    }
    let mut out = HashSet::new();
    for a in &domain.actions {
        walk(&a.effect, &mut out);
    }
    out
}

/// Grounds a (domain, problem) pair into a propositional task.
pub fn ground(
    domain: &DomainSpec,
    problem: &ProblemSpec,
    limits: GroundingLimits,
) -> Result<GroundTask, PlannerError> {
    let mut g = Grounder {
        domain,
        problem,
        limits,
        atoms: Vec::new(),
        index: HashMap::new(),
        fluent: fluent_predicates(domain),
        init: problem.init.iter().cloned().collect(),
        by_type: HashMap::new(),
    };
    let unit_cost = !domain.uses_action_costs();

    let init_fluents: Vec<usize> = problem
        .init
        .iter()
        .filter(|a| g.fluent.contains(&a.predicate))
        .cloned()
        .collect::<Vec<_>>()
        .into_iter()
        .map(|a| g.intern(a))
        .collect();

    let goal: Vec<Conjunction> = g
        .condition(&problem.goal, &HashMap::new(), true)?
        .iter()
        .map(Grounder::to_conjunction)
        .collect();

    let mut candidates: Vec<GroundAction> = Vec::new();
    for schema in &domain.actions {
        let domains: Vec<Vec<String>> = schema.params.iter().map(|p| g.objects_of(&p.ty)).collect();
        let total: usize = domains.iter().map(Vec::len).try_fold(1usize, |acc, n| acc.checked_mul(n)).unwrap_or(usize::MAX);
        if total.saturating_add(candidates.len()) > limits.max_ground_actions {
            return Err(PlannerError::GroundingLimit(format!(
                "action {} has {total} instantiations (limit {})",
                schema.name, limits.max_ground_actions
            )));
        }
        if domains.iter().any(Vec::is_empty) {
            continue;
        }
        let mut idx = vec![0usize; domains.len()];
        loop {
            let binding: HashMap<String, String> = schema
                .params
                .iter()
                .zip(&idx)
                .zip(&domains)
                .map(|((p, &i), d)| (p.name.clone(), d[i].clone()))
                .collect();
            let args: Vec<String> = idx.iter().zip(&domains).map(|(&i, d)| d[i].clone()).collect();
            let pre = g.condition(&schema.precondition, &binding, true)?;
            if !pre.is_empty() {
                let (mut add, mut del, mut cost, mut conditional) = (Vec::new(), Vec::new(), 0u64, Vec::new());
                g.effect(&schema.effect, &binding, None, &mut add, &mut del, &mut cost, &mut conditional)?;
                add.sort_unstable();
                add.dedup();
                del.sort_unstable();
                del.dedup();
                if unit_cost {
                    cost = 1;
                }
                for disjunct in &pre {
                    candidates.push(GroundAction {
                        name: schema.name.clone(),
                        args: args.clone(),
                        pre: Grounder::to_conjunction(disjunct),
                        add: add.clone(),
                        del: del.clone(),
                        conditional: conditional.clone(),
                        cost,
                    });
                    if candidates.len() > limits.max_ground_actions {
                        return Err(PlannerError::GroundingLimit(format!(
                            "more than {} ground actions",
                            limits.max_ground_actions
                        )));
                    }
                }
            }
            if !next_tuple(&mut idx, &domains) {
                break;
            }
        }
    }

    let reached = relaxed_filter(&candidates, &init_fluents, g.atoms.len());
    let actions: Vec<GroundAction> = candidates
        .into_iter()
        .zip(reached)
        .filter_map(|(a, keep)| keep.then_some(a))
        .collect();

    let n = g.atoms.len();
    let mut init = State::empty(n);
    for i in init_fluents {
        init.set(i);
    }
    Ok(GroundTask {
        atoms: g.atoms,
        actions,
        init,
        goal,
        objects: problem.objects.to_vec(),
        unit_cost,
    })
}

/// Advances an odometer over the parameter domains; false once exhausted.
fn next_tuple(idx: &mut [usize], domains: &[Vec<String>]) -> bool {
    for k in (0..idx.len()).rev() {
        idx[k] += 1;
        if idx[k] < domains[k].len() {
            return true;
        }
        idx[k] = 0;
    }
    false
}

/// Marks the candidates whose positive preconditions become reachable when
/// delete effects are ignored.
fn relaxed_filter(candidates: &[GroundAction], init: &[usize], n_atoms: usize) -> Vec<bool> {
    let mut reachable = vec![false; n_atoms];
    for &i in init {
        reachable[i] = true;
    }
    let mut reached = vec![false; candidates.len()];
    let holds = |c: &Conjunction, r: &[bool]| c.pos.iter().all(|&p| r[p]);
    loop {
        let mut changed = false;
        for (i, a) in candidates.iter().enumerate() {
            if !reached[i] && holds(&a.pre, &reachable) {
                reached[i] = true;
                changed = true;
                for &p in &a.add {
                    reachable[p] = true;
                }
            }
            if reached[i] {
                for ce in &a.conditional {
                    if ce.condition.iter().any(|c| holds(c, &reachable)) {
                        for &p in &ce.add {
                            if !reachable[p] {
                                reachable[p] = true;
                                changed = true;
                            }
                        }
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    reached
}
