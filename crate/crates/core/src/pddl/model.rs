use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Built-in root of every type hierarchy.
pub const OBJECT: &str = "object";

/// Name of the only numeric fluent supported.
pub const TOTAL_COST: &str = "total-cost";

/// Words that may never be used as type, predicate, action or object names.
pub const RESERVED_WORDS: &[&str] = &[
    "and", "or", "not", "imply", "forall", "exists", "when", "increase", "decrease", "either",
    "define", "domain", "problem", "object", "number", "total-cost", "=",
];

/// Requirements line emitted by the printer. Fixed for every generated domain.
pub const REQUIREMENTS: &[&str] = &[
    ":strips",
    ":typing",
    ":equality",
    ":negative-preconditions",
    ":disjunctive-preconditions",
    ":universal-preconditions",
    ":conditional-effects",
    ":existential-preconditions",
    ":action-costs",
];

/// Letters, digits, `_` and `-`, starting with a letter.
pub fn is_valid_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

pub fn is_reserved(name: &str) -> bool {
    RESERVED_WORDS.contains(&name)
}

/// Collapses a free-text description onto one line so it survives as a
/// trailing PDDL comment.
pub fn normalize_description(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeEntry {
    pub parent: String,
    #[serde(default)]
    pub description: String,
}

/// Single-parent type tree rooted at `object`. The root itself is implicit and
/// never stored.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeHierarchy {
    entries: BTreeMap<String, TypeEntry>,
}

impl TypeHierarchy {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a hierarchy from `(name, parent, description)` triples.
    ///
    /// Parents that are never declared themselves are added directly under
    /// `object`. Names are lowercased.
    pub fn from_entries<I, S1, S2, S3>(entries: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = (S1, S2, S3)>,
        S1: AsRef<str>,
        S2: AsRef<str>,
        S3: AsRef<str>,
    {
        let mut map: BTreeMap<String, TypeEntry> = BTreeMap::new();
        for (name, parent, description) in entries {
            let name = name.as_ref().to_ascii_lowercase();
            let parent = parent.as_ref().to_ascii_lowercase();
            if name == OBJECT {
                if parent != OBJECT {
                    return Err(ModelError::InvalidHierarchy(
                        "the root type object cannot have a parent".into(),
                    ));
                }
                continue;
            }
            for n in [&name, &parent] {
                if !is_valid_identifier(n) {
                    return Err(ModelError::InvalidIdentifier(n.clone()));
                }
            }
            let entry = TypeEntry {
                parent: parent.clone(),
                description: normalize_description(description.as_ref()),
            };
            match map.get(&name) {
                Some(existing) if existing.parent != parent && existing.parent != OBJECT => {
                    return Err(ModelError::InvalidHierarchy(format!(
                        "type {name} has two parents: {} and {parent}",
                        existing.parent
                    )));
                }
                Some(existing) if entry.description.is_empty() => {
                    let description = existing.description.clone();
                    map.insert(name, TypeEntry { parent, description });
                }
                _ => {
                    map.insert(name, entry);
                }
            }
        }
        let implicit: Vec<String> = map
            .values()
            .map(|e| e.parent.clone())
            .filter(|p| p != OBJECT && !map.contains_key(p))
            .collect();
        for p in implicit {
            map.entry(p).or_insert(TypeEntry {
                parent: OBJECT.to_string(),
                description: String::new(),
            });
        }
        let hierarchy = TypeHierarchy { entries: map };
        hierarchy.check_acyclic()?;
        Ok(hierarchy)
    }

    fn check_acyclic(&self) -> Result<(), ModelError> {
        for start in self.entries.keys() {
            let mut seen = BTreeSet::new();
            let mut cur = start.as_str();
            while cur != OBJECT {
                if !seen.insert(cur) {
                    return Err(ModelError::InvalidHierarchy(format!(
                        "cycle in the type hierarchy through {start}"
                    )));
                }
                cur = &self.entries[cur].parent;
            }
        }
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        name == OBJECT || self.entries.contains_key(name)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// Declared types in name order, excluding `object`.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &TypeEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn parent(&self, name: &str) -> Option<&str> {
        self.entries.get(name).map(|e| e.parent.as_str())
    }

    pub fn description(&self, name: &str) -> Option<&str> {
        self.entries.get(name).map(|e| e.description.as_str())
    }

    pub fn children<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.entries
            .iter()
            .filter(move |(_, e)| e.parent == name)
            .map(|(k, _)| k.as_str())
    }

    /// `name` followed by each ancestor up to and including `object`.
    pub fn chain<'a>(&'a self, name: &'a str) -> Vec<&'a str> {
        let mut out = vec![name];
        let mut cur = name;
        while let Some(p) = self.parent(cur) {
            out.push(p);
            cur = p;
        }
        if *out.last().unwrap() != OBJECT {
            out.push(OBJECT);
        }
        out
    }

    /// Reflexive subtype test.
    pub fn is_subtype(&self, sub: &str, sup: &str) -> Result<bool, ModelError> {
        for t in [sub, sup] {
            if !self.contains(t) {
                return Err(ModelError::UndeclaredType(t.to_string()));
            }
        }
        Ok(self.chain(sub).contains(&sup))
    }

    /// Keeps only the named types and their ancestors.
    pub fn retain_with_ancestors(&self, keep: &BTreeSet<String>) -> TypeHierarchy {
        let mut closed = BTreeSet::new();
        for t in keep {
            if self.entries.contains_key(t) {
                for a in self.chain(t) {
                    if a != OBJECT {
                        closed.insert(a.to_string());
                    }
                }
            }
        }
        TypeHierarchy {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| closed.contains(*k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypedVar {
    /// Variable name without the leading `?`.
    pub name: String,
    #[serde(rename = "type")]
    pub ty: String,
}

impl TypedVar {
    pub fn new(name: impl Into<String>, ty: impl Into<String>) -> Self {
        TypedVar {
            name: name.into(),
            ty: ty.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredicateDecl {
    pub name: String,
    pub params: Vec<TypedVar>,
    #[serde(default)]
    pub description: String,
}

impl PredicateDecl {
    pub fn arity(&self) -> usize {
        self.params.len()
    }

    /// Same name, arity and parameter types.
    pub fn same_signature(&self, other: &PredicateDecl) -> bool {
        self.name == other.name
            && self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| a.ty == b.ty)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Term {
    /// Variable name without the leading `?`.
    Var(String),
    Object(String),
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(v) => write!(f, "?{v}"),
            Term::Object(o) => f.write_str(o),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Atom {
    pub predicate: String,
    pub args: Vec<Term>,
}

impl Atom {
    pub fn new(predicate: impl Into<String>, args: Vec<Term>) -> Self {
        Atom {
            predicate: predicate.into(),
            args,
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}", self.predicate)?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        f.write_str(")")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Formula {
    Atom(Atom),
    Equality(Term, Term),
    Not(Box<Formula>),
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Imply(Box<Formula>, Box<Formula>),
    Forall(Vec<TypedVar>, Box<Formula>),
    Exists(Vec<TypedVar>, Box<Formula>),
}

impl Formula {
    pub fn truth() -> Self {
        Formula::And(Vec::new())
    }

    /// Visits every atom, including those under negation and quantifiers.
    pub fn for_each_atom<'a>(&'a self, f: &mut impl FnMut(&'a Atom)) {
        match self {
            Formula::Atom(a) => f(a),
            Formula::Equality(..) => {}
            Formula::Not(inner) => inner.for_each_atom(f),
            Formula::And(items) | Formula::Or(items) => {
                items.iter().for_each(|i| i.for_each_atom(f))
            }
            Formula::Imply(a, b) => {
                a.for_each_atom(f);
                b.for_each_atom(f);
            }
            Formula::Forall(_, body) | Formula::Exists(_, body) => body.for_each_atom(f),
        }
    }

    /// Visits every quantified variable list.
    pub fn for_each_binder<'a>(&'a self, f: &mut impl FnMut(&'a [TypedVar])) {
        match self {
            Formula::Atom(_) | Formula::Equality(..) => {}
            Formula::Not(inner) => inner.for_each_binder(f),
            Formula::And(items) | Formula::Or(items) => {
                items.iter().for_each(|i| i.for_each_binder(f))
            }
            Formula::Imply(a, b) => {
                a.for_each_binder(f);
                b.for_each_binder(f);
            }
            Formula::Forall(vars, body) | Formula::Exists(vars, body) => {
                f(vars);
                body.for_each_binder(f);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Effect {
    Add(Atom),
    Delete(Atom),
    And(Vec<Effect>),
    Forall(Vec<TypedVar>, Box<Effect>),
    When(Formula, Box<Effect>),
    IncreaseCost(u64),
}

impl Effect {
    pub fn none() -> Self {
        Effect::And(Vec::new())
    }

    /// Visits every atom, including those in `when` conditions.
    pub fn for_each_atom<'a>(&'a self, f: &mut impl FnMut(&'a Atom)) {
        match self {
            Effect::Add(a) | Effect::Delete(a) => f(a),
            Effect::And(items) => items.iter().for_each(|i| i.for_each_atom(f)),
            Effect::Forall(_, body) => body.for_each_atom(f),
            Effect::When(cond, eff) => {
                cond.for_each_atom(f);
                eff.for_each_atom(f);
            }
            Effect::IncreaseCost(_) => {}
        }
    }

    pub fn for_each_binder<'a>(&'a self, f: &mut impl FnMut(&'a [TypedVar])) {
        match self {
            Effect::Add(_) | Effect::Delete(_) | Effect::IncreaseCost(_) => {}
            Effect::And(items) => items.iter().for_each(|i| i.for_each_binder(f)),
            Effect::Forall(vars, body) => {
                f(vars);
                body.for_each_binder(f);
            }
            Effect::When(cond, eff) => {
                cond.for_each_binder(f);
                eff.for_each_binder(f);
            }
        }
    }

    pub fn has_cost(&self) -> bool {
        match self {
            Effect::IncreaseCost(_) => true,
            Effect::And(items) => items.iter().any(Effect::has_cost),
            Effect::Forall(_, body) | Effect::When(_, body) => body.has_cost(),
            Effect::Add(_) | Effect::Delete(_) => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionSchema {
    pub name: String,
    pub params: Vec<TypedVar>,
    pub precondition: Formula,
    pub effect: Effect,
    #[serde(default)]
    pub description: String,
}

impl ActionSchema {
    /// Names of all predicates this action mentions.
    pub fn referenced_predicates(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.precondition.for_each_atom(&mut |a| {
            out.insert(a.predicate.clone());
        });
        self.effect.for_each_atom(&mut |a| {
            out.insert(a.predicate.clone());
        });
        out
    }

    /// Types of parameters and quantified variables.
    pub fn referenced_types(&self) -> BTreeSet<String> {
        let mut out: BTreeSet<String> = self.params.iter().map(|p| p.ty.clone()).collect();
        let mut add = |vars: &[TypedVar]| {
            for v in vars {
                out.insert(v.ty.clone());
            }
        };
        self.precondition.for_each_binder(&mut add);
        self.effect.for_each_binder(&mut add);
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub name: String,
    pub hierarchy: TypeHierarchy,
    pub predicates: Vec<PredicateDecl>,
    pub actions: Vec<ActionSchema>,
}

impl DomainSpec {
    pub fn new(name: impl Into<String>) -> Self {
        DomainSpec {
            name: name.into(),
            hierarchy: TypeHierarchy::new(),
            predicates: Vec::new(),
            actions: Vec::new(),
        }
    }

    pub fn predicate(&self, name: &str) -> Option<&PredicateDecl> {
        self.predicates.iter().find(|p| p.name == name)
    }

    pub fn action(&self, name: &str) -> Option<&ActionSchema> {
        self.actions.iter().find(|a| a.name == name)
    }

    pub fn uses_action_costs(&self) -> bool {
        self.actions.iter().any(|a| a.effect.has_cost())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectDecl {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GroundAtom {
    pub predicate: String,
    pub args: Vec<String>,
}

impl GroundAtom {
    pub fn new<S: Into<String>>(predicate: impl Into<String>, args: impl IntoIterator<Item = S>) -> Self {
        GroundAtom {
            predicate: predicate.into(),
            args: args.into_iter().map(Into::into).collect(),
        }
    }
}

impl fmt::Display for GroundAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}", self.predicate)?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        f.write_str(")")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub name: String,
    pub domain: String,
    pub objects: Vec<ObjectDecl>,
    pub init: Vec<GroundAtom>,
    /// Value of `(= (total-cost) n)` in the initial state, when present.
    pub initial_cost: Option<u64>,
    pub goal: Formula,
}

impl ProblemSpec {
    pub fn object_type(&self, name: &str) -> Option<&str> {
        self.objects
            .iter()
            .find(|o| o.name == name)
            .map(|o| o.ty.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PlanStep {
    pub action: String,
    pub args: Vec<String>,
}

impl fmt::Display for PlanStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}", self.action)?;
        for a in &self.args {
            write!(f, " {a}")?;
        }
        f.write_str(")")
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub steps: Vec<PlanStep>,
    pub cost: u64,
}

impl Plan {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// One step per line followed by `; cost = <n>`.
    pub fn to_plan_file(&self) -> String {
        let mut out = String::new();
        for s in &self.steps {
            out.push_str(&s.to_string());
            out.push('\n');
        }
        out.push_str(&format!("; cost = {}\n", self.cost));
        out
    }

    /// Reads the plan file format. Blank lines and comments other than the
    /// cost line are ignored; a missing cost line leaves the cost at 0.
    pub fn from_plan_file(text: &str) -> Result<Plan, ModelError> {
        let mut plan = Plan::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix(';') {
                if let Some(v) = rest.trim().strip_prefix("cost =") {
                    plan.cost = v
                        .split_whitespace()
                        .next()
                        .and_then(|n| n.parse().ok())
                        .ok_or_else(|| ModelError::InvalidPlan(format!("bad cost line: {line}")))?;
                }
                continue;
            }
            let inner = line
                .strip_prefix('(')
                .and_then(|l| l.strip_suffix(')'))
                .ok_or_else(|| ModelError::InvalidPlan(format!("bad plan step: {line}")))?;
            let mut parts = inner.split_whitespace().map(str::to_ascii_lowercase);
            let action = parts
                .next()
                .ok_or_else(|| ModelError::InvalidPlan("empty plan step".into()))?;
            plan.steps.push(PlanStep {
                action,
                args: parts.collect(),
            });
        }
        Ok(plan)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vehicles() -> TypeHierarchy {
        TypeHierarchy::from_entries([
            ("truck", "vehicle", ""),
            ("plane", "vehicle", ""),
            ("vehicle", "object", ""),
            ("city", "object", ""),
        ])
        .unwrap()
    }

    #[test]
    fn subtype_examples() {
        let h = vehicles();
        assert!(h.is_subtype("truck", "vehicle").unwrap());
        assert!(h.is_subtype("vehicle", "vehicle").unwrap());
        assert!(!h.is_subtype("vehicle", "truck").unwrap());
        assert!(h.is_subtype("truck", OBJECT).unwrap());
        assert!(!h.is_subtype("truck", "plane").unwrap());
        assert!(matches!(
            h.is_subtype("boat", "vehicle"),
            Err(ModelError::UndeclaredType(t)) if t == "boat"
        ));
    }

    #[test]
    fn implicit_parent_is_declared_under_object() {
        let h = TypeHierarchy::from_entries([("truck", "vehicle", "")]).unwrap();
        assert_eq!(h.parent("vehicle"), Some(OBJECT));
    }

    #[test]
    fn cycles_and_double_parents_rejected() {
        let err = TypeHierarchy::from_entries([("a", "b", ""), ("b", "a", "")]).unwrap_err();
        assert!(matches!(err, ModelError::InvalidHierarchy(_)));
        let err = TypeHierarchy::from_entries([("a", "b", ""), ("a", "c", "")]).unwrap_err();
        assert!(matches!(err, ModelError::InvalidHierarchy(_)));
    }

    #[test]
    fn identifiers() {
        assert!(is_valid_identifier("truck-1_a"));
        assert!(!is_valid_identifier("1truck"));
        assert!(!is_valid_identifier("?x"));
        assert!(!is_valid_identifier(""));
    }

    #[test]
    fn plan_file_round_trip() {
        let plan = Plan {
            steps: vec![
                PlanStep { action: "unstack".into(), args: vec!["c".into(), "a".into()] },
                PlanStep { action: "put-down".into(), args: vec!["c".into()] },
            ],
            cost: 2,
        };
        let text = plan.to_plan_file();
        assert_eq!(text, "(unstack c a)\n(put-down c)\n; cost = 2\n");
        assert_eq!(Plan::from_plan_file(&text).unwrap(), plan);
    }
}
