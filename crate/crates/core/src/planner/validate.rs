//! Plan checking by direct simulation of the lifted action schemas. This
//! deliberately shares no code with grounding so that it can cross-check the
//! search.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::pddl::{Atom, DomainSpec, Effect, Formula, GroundAtom, Plan, ProblemSpec, Term, TypedVar};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "kebab-case")]
pub enum Verdict {
    Valid { cost: u64 },
    /// `step` is 1-based; `None` means every step applied but the goal failed.
    Invalid {
        step: Option<usize>,
        reason: String,
        unmet: Option<String>,
    },
}

impl Verdict {
    pub fn is_valid(&self) -> bool {
        matches!(self, Verdict::Valid { .. })
    }
}

type Binding = HashMap<String, String>;

struct Sim<'a> {
    domain: &'a DomainSpec,
    problem: &'a ProblemSpec,
    state: BTreeSet<GroundAtom>,
}

impl Sim<'_> {
    fn term(t: &Term, b: &Binding) -> String {
        match t {
            Term::Var(v) => b[v].clone(),
            Term::Object(o) => o.clone(),
        }
    }

    fn atom(a: &Atom, b: &Binding) -> GroundAtom {
        GroundAtom {
            predicate: a.predicate.clone(),
            args: a.args.iter().map(|t| Self::term(t, b)).collect(),
        }
    }

    fn objects_of(&self, ty: &str) -> Vec<&str> {
        self.problem
            .objects
            .iter()
            .filter(|o| self.domain.hierarchy.is_subtype(&o.ty, ty).unwrap_or(false))
            .map(|o| o.name.as_str())
            .collect()
    }

    fn bindings(&self, vars: &[TypedVar], b: &Binding) -> Vec<Binding> {
        let mut out = vec![b.clone()];
        for v in vars {
            out = out
                .into_iter()
                .flat_map(|b| {
                    self.objects_of(&v.ty).into_iter().map(move |o| {
                        let mut nb = b.clone();
                        nb.insert(v.name.clone(), o.to_string());
                        nb
                    })
                })
                .collect();
        }
        out
    }

    fn holds(&self, f: &Formula, b: &Binding) -> bool {
        match f {
            Formula::Atom(a) => self.state.contains(&Self::atom(a, b)),
            Formula::Equality(x, y) => Self::term(x, b) == Self::term(y, b),
            Formula::Not(g) => !self.holds(g, b),
            Formula::And(gs) => gs.iter().all(|g| self.holds(g, b)),
            Formula::Or(gs) => gs.iter().any(|g| self.holds(g, b)),
            Formula::Imply(x, y) => !self.holds(x, b) || self.holds(y, b),
            Formula::Forall(vs, g) => self.bindings(vs, b).iter().all(|nb| self.holds(g, nb)),
            Formula::Exists(vs, g) => self.bindings(vs, b).iter().any(|nb| self.holds(g, nb)),
        }
    }

    /// Names the first literal responsible for `f` being false.
    fn explain(&self, f: &Formula, b: &Binding) -> String {
        match f {
            Formula::Atom(a) => Self::atom(a, b).to_string(),
            Formula::Not(g) => match &**g {
                Formula::Atom(a) => format!("(not {})", Self::atom(a, b)),
                Formula::Equality(x, y) => format!("(not (= {} {}))", Self::term(x, b), Self::term(y, b)),
                _ => format!("(not {})", self.ground_text(g, b)),
            },
            Formula::Equality(x, y) => format!("(= {} {})", Self::term(x, b), Self::term(y, b)),
            Formula::And(gs) => gs
                .iter()
                .find(|g| !self.holds(g, b))
                .map(|g| self.explain(g, b))
                .unwrap_or_default(),
            Formula::Imply(_, y) => self.explain(y, b),
            Formula::Forall(vs, g) => self
                .bindings(vs, b)
                .iter()
                .find(|nb| !self.holds(g, nb))
                .map(|nb| self.explain(g, nb))
                .unwrap_or_default(),
            Formula::Or(_) | Formula::Exists(..) => self.ground_text(f, b),
        }
    }

    fn ground_text(&self, f: &Formula, b: &Binding) -> String {
        let mut text = crate::pddl::formula_to_string(f);
        let mut keys: Vec<&String> = b.keys().collect();
        // longest names first so ?b does not clobber ?b1
        keys.sort_by_key(|k| std::cmp::Reverse(k.len()));
        for k in keys {
            text = text.replace(&format!("?{k}"), &b[k]);
        }
        text.split_whitespace().collect::<Vec<_>>().join(" ")
    }

    fn effects(&self, e: &Effect, b: &Binding, add: &mut Vec<GroundAtom>, del: &mut Vec<GroundAtom>, cost: &mut u64) {
        match e {
            Effect::Add(a) => add.push(Self::atom(a, b)),
            Effect::Delete(a) => del.push(Self::atom(a, b)),
            Effect::And(es) => es.iter().for_each(|x| self.effects(x, b, add, del, cost)),
            Effect::Forall(vs, x) => {
                for nb in self.bindings(vs, b) {
                    self.effects(x, &nb, add, del, cost);
                }
            }
            Effect::When(c, x) => {
                if self.holds(c, b) {
                    self.effects(x, b, add, del, cost);
                }
            }
            Effect::IncreaseCost(n) => *cost += n,
        }
    }
}

/// Simulates `plan` from the initial state; valid iff every step is
/// applicable and the final state satisfies the goal.
pub fn validate_plan(domain: &DomainSpec, problem: &ProblemSpec, plan: &Plan) -> Verdict {
    let mut sim = Sim {
        domain,
        problem,
        state: problem.init.iter().cloned().collect(),
    };
    let unit = !domain.uses_action_costs();
    let mut total = 0u64;
    for (i, step) in plan.steps.iter().enumerate() {
        let invalid = |reason: String, unmet: Option<String>| Verdict::Invalid { step: Some(i + 1), reason, unmet };
        let Some(schema) = domain.action(&step.action) else {
            return invalid(format!("unknown action {}", step.action), None);
        };
        if schema.params.len() != step.args.len() {
            return invalid(
                format!("{} expects {} arguments, got {}", schema.name, schema.params.len(), step.args.len()),
                None,
            );
        }
        let mut binding = Binding::new();
        for (p, arg) in schema.params.iter().zip(&step.args) {
            let ok = problem
                .object_type(arg)
                .is_some_and(|t| domain.hierarchy.is_subtype(t, &p.ty).unwrap_or(false));
            if !ok {
                return invalid(format!("argument {arg} is not an object of type {}", p.ty), None);
            }
            binding.insert(p.name.clone(), arg.clone());
        }
        if !sim.holds(&schema.precondition, &binding) {
            let unmet = sim.explain(&schema.precondition, &binding);
            return invalid(format!("precondition of {step} does not hold: {unmet}"), Some(unmet));
        }
        let (mut add, mut del, mut cost) = (Vec::new(), Vec::new(), 0);
        sim.effects(&schema.effect, &binding, &mut add, &mut del, &mut cost);
        for a in &del {
            sim.state.remove(a);
        }
        sim.state.extend(add);
        total += if unit { 1 } else { cost };
    }
    if !sim.holds(&problem.goal, &Binding::new()) {
        let unmet = sim.explain(&problem.goal, &Binding::new());
        return Verdict::Invalid {
            step: None,
            reason: format!("goal not satisfied after the last step: {unmet}"),
            unmet: Some(unmet),
        };
    }
    Verdict::Valid { cost: total }
}
