//! Validation of drafted actions and task sections, producing issues with
//! deterministic repair suggestions that are fed back to the model.
//!
//! Drafts are kept as raw s-expressions because the faults we want to
//! report (stray keywords, `or` inside an effect, untyped parameters, ...)
//! cannot be represented in the typed model.

mod action;
mod task;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pddl::sexp::read_all;
use crate::pddl::{
    parse_action, parse_goal, parse_init_entry, parse_objects, parse_predicate_decl, ActionSchema, DomainSpec,
    Formula, InitEntry, ParseError, PredicateDecl, ProblemSpec, Sexp, Span,
};

pub use action::validate_action;
pub use task::validate_task;

/// Checks run in this order; a report only ever contains issues of the
/// first category that failed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    Keywords,
    Types,
    Predicates,
    Arity,
    Binding,
    Conflicts,
    EffectGrammar,
    Names,
    Objects,
    Init,
    Goal,
    AllPassed,
}

impl Category {
    pub const ACTION_ORDER: [Category; 8] = [
        Category::Keywords,
        Category::Types,
        Category::Predicates,
        Category::Arity,
        Category::Binding,
        Category::Conflicts,
        Category::EffectGrammar,
        Category::Names,
    ];

    pub const TASK_ORDER: [Category; 3] = [Category::Objects, Category::Init, Category::Goal];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Keywords => "keywords",
            Category::Types => "types",
            Category::Predicates => "predicates",
            Category::Arity => "arity",
            Category::Binding => "binding",
            Category::Conflicts => "conflicts",
            Category::EffectGrammar => "effect-grammar",
            Category::Names => "names",
            Category::Objects => "objects",
            Category::Init => "init",
            Category::Goal => "goal",
            Category::AllPassed => "all-passed",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

macro_rules! issue_codes {
    ($($variant:ident => $text:literal : $doc:literal,)*) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "kebab-case")]
        pub enum IssueCode { $($variant,)* }

        impl IssueCode {
            pub const ALL: &'static [IssueCode] = &[$(IssueCode::$variant,)*];

            pub fn as_str(self) -> &'static str {
                match self { $(IssueCode::$variant => $text,)* }
            }

            /// One-line description used by the published catalog.
            pub fn summary(self) -> &'static str {
                match self { $(IssueCode::$variant => $doc,)* }
            }
        }
    };
}

issue_codes! {
    MalformedExpression => "malformed-expression": "An expression has the wrong shape: missing operands, a list where a name belongs, or text outside any section.",
    UnknownKeyword => "unknown-keyword": "An action uses a section keyword other than :parameters, :precondition or :effect.",
    MisplacedKeyword => "misplaced-keyword": "A keyword appears inside a formula, effect or declaration instead of at the action level.",
    DuplicateSection => "duplicate-section": "An action section is given more than once.",
    MissingSection => "missing-section": "The action has no :effect.",
    UntypedParameter => "untyped-parameter": "A parameter or predicate argument is declared without a type.",
    UnknownType => "unknown-type": "A parameter, quantified variable, predicate argument or object uses a type absent from the hierarchy.",
    UndefinedPredicate => "undefined-predicate": "A formula or effect mentions a predicate that is neither in the domain nor declared with the draft.",
    ArityMismatch => "arity-mismatch": "A predicate is used with a different number of arguments than declared.",
    ArgumentTypeMismatch => "argument-type-mismatch": "An argument's type is not a subtype of the declared parameter type.",
    UnboundVariable => "unbound-variable": "A variable is neither an action parameter nor bound by forall/exists.",
    ConstantInAction => "constant-in-action": "An action mentions a concrete object instead of a variable.",
    DuplicateParameter => "duplicate-parameter": "The same variable name is declared twice in one list.",
    ConflictingPredicate => "conflicting-predicate": "A newly declared predicate reuses an existing name with a different signature.",
    DisallowedEffectConnective => "disallowed-effect-connective": "An effect uses or, exists, imply or =, which only conditions may use.",
    NegatedCompoundEffect => "negated-compound-effect": "An effect negates something other than a single atom.",
    InvalidCostEffect => "invalid-cost-effect": "A cost effect is not of the form (increase (total-cost) <non-negative integer>).",
    EffectInPrecondition => "effect-in-precondition": "A precondition contains when, increase or decrease.",
    NestedWhen => "nested-when": "A conditional effect is nested inside another conditional effect.",
    ReservedName => "reserved-name": "An action or predicate is named after a PDDL keyword.",
    NameCollision => "name-collision": "An action or predicate shares its name with a type, predicate or another action.",
    InvalidIdentifier => "invalid-identifier": "A name contains characters outside letters, digits, '_' and '-', or does not start with a letter.",
    DuplicateObject => "duplicate-object": "The same object is declared twice.",
    ObjectShadowsType => "object-shadows-type": "An object has the same name as a type.",
    NegationInInit => "negation-in-init": "The initial state lists a negated atom.",
    UndefinedObject => "undefined-object": "The initial state or goal refers to an object that is not declared.",
    NonGroundInit => "non-ground-init": "An initial-state atom contains a variable.",
    NonAtomicInit => "non-atomic-init": "The initial state contains a compound formula instead of atoms.",
}

impl fmt::Display for IssueCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub code: IssueCode,
    pub location: String,
    pub message: String,
    pub suggested_fix: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
    pub checked_category: Category,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn all_passed() -> Self {
        ValidationReport { issues: Vec::new(), checked_category: Category::AllPassed }
    }

    /// Keeps only the issues of the first failing category in `order`.
    pub(crate) fn first_failing(found: Vec<(Category, ValidationIssue)>, order: &[Category]) -> Self {
        for &cat in order {
            let mut issues: Vec<ValidationIssue> = Vec::new();
            for (c, i) in &found {
                if *c == cat && !issues.contains(i) {
                    issues.push(i.clone());
                }
            }
            if !issues.is_empty() {
                return ValidationReport { issues, checked_category: cat };
            }
        }
        ValidationReport::all_passed()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("nothing to render: the report has no issues")]
pub struct EmptyReport;

/// Numbered feedback, one line per issue: `1. <message> Fix: <fix>`.
pub fn render_feedback(report: &ValidationReport) -> Result<String, EmptyReport> {
    if report.issues.is_empty() {
        return Err(EmptyReport);
    }
    Ok(report
        .issues
        .iter()
        .enumerate()
        .map(|(i, issue)| format!("{}. {} Fix: {}", i + 1, issue.message, issue.suggested_fix))
        .collect::<Vec<_>>()
        .join("\n"))
}

/// An action as drafted by the model: the `(:action ...)` form plus the
/// declarations of any predicates it introduces.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionDraft {
    pub action: Sexp,
    pub predicates: Vec<Sexp>,
}

impl ActionDraft {
    /// Reads `(:action ...)` optionally followed or preceded by
    /// `(:predicates ...)`.
    pub fn parse(text: &str) -> Result<ActionDraft, ParseError> {
        let forms = read_all(text)?;
        let mut action = None;
        let mut predicates: Option<Vec<Sexp>> = None;
        for f in forms {
            match f.head().as_deref() {
                Some(":action") if action.is_none() => action = Some(f),
                Some(":predicates") if predicates.is_none() => {
                    predicates = Some(f.as_list().map(|l| l[1..].to_vec()).unwrap_or_default())
                }
                Some(":action" | ":predicates") => {
                    return Err(ParseError::at(
                        f.span,
                        format!("more than one {} form", f.head().unwrap_or_default()),
                        "give exactly one action per answer",
                    ))
                }
                _ => {
                    return Err(ParseError::at(
                        f.span,
                        format!("unexpected form '{f}'"),
                        "answer with (:action ...) and optionally (:predicates ...)",
                    ))
                }
            }
        }
        let action = action.ok_or_else(|| ParseError::eof("no (:action ...) form found"))?;
        Ok(ActionDraft { action, predicates: predicates.unwrap_or_default() })
    }

    /// Converts a draft into the typed model. Returns the schema and the
    /// predicates it declares that `context` does not already contain.
    pub fn to_schema(&self, context: &DomainSpec) -> Result<(ActionSchema, Vec<PredicateDecl>), ParseError> {
        let mut all = context.predicates.clone();
        let mut new = Vec::new();
        for p in &self.predicates {
            let decl = parse_predicate_decl(p, &context.hierarchy)?;
            match all.iter().find(|q| q.name == decl.name) {
                Some(q) if q.same_signature(&decl) => {}
                Some(_) => {
                    return Err(ParseError::at(p.span, format!("predicate '{}' redeclared", decl.name), "keep the existing signature"))
                }
                None => {
                    all.push(decl.clone());
                    new.push(decl);
                }
            }
        }
        let schema = parse_action(&self.action, &context.hierarchy, &all)?;
        Ok((schema, new))
    }

    /// Text form of the draft as the model would write it.
    pub fn to_text(&self) -> String {
        let mut out = self.action.to_string();
        if !self.predicates.is_empty() {
            out.push_str("\n(:predicates");
            for p in &self.predicates {
                out.push(' ');
                out.push_str(&p.to_string());
            }
            out.push(')');
        }
        out
    }
}

/// Drafted task sections: the contents of `:objects` and `:init`, and the
/// goal formula.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskDraft {
    pub objects: Vec<Sexp>,
    pub init: Vec<Sexp>,
    pub goal: Option<Sexp>,
}

impl TaskDraft {
    /// Accepts the three sections on their own or wrapped in
    /// `(define (problem ...) ...)`; `:domain` and `:metric` are ignored.
    pub fn parse(text: &str) -> Result<TaskDraft, ParseError> {
        let mut forms = read_all(text)?;
        if forms.len() == 1 && forms[0].head().as_deref() == Some("define") {
            let items = forms.remove(0).as_list().map(<[Sexp]>::to_vec).unwrap_or_default();
            forms = items.into_iter().skip(1).filter(|s| s.head().as_deref() != Some("problem")).collect();
        }
        let mut draft = TaskDraft { objects: Vec::new(), init: Vec::new(), goal: None };
        let (mut seen_objects, mut seen_init) = (false, false);
        for f in forms {
            let body = f.as_list().map(|l| l[1..].to_vec()).unwrap_or_default();
            let dup = |what: &str| {
                ParseError::at(f.span, format!("more than one {what} section"), "give each section once")
            };
            match f.head().as_deref() {
                Some(":objects") => {
                    if std::mem::replace(&mut seen_objects, true) {
                        return Err(dup(":objects"));
                    }
                    draft.objects = body;
                }
                Some(":init") => {
                    if std::mem::replace(&mut seen_init, true) {
                        return Err(dup(":init"));
                    }
                    draft.init = body;
                }
                Some(":goal") => {
                    if draft.goal.is_some() {
                        return Err(dup(":goal"));
                    }
                    let [g] = <[Sexp; 1]>::try_from(body).map_err(|_| {
                        ParseError::at(f.span, "expected exactly one goal formula", "combine goals with (and ...)")
                    })?;
                    draft.goal = Some(g);
                }
                Some(":domain" | ":metric") => {}
                _ => {
                    return Err(ParseError::at(
                        f.span,
                        format!("unexpected form '{f}'"),
                        "answer with (:objects ...), (:init ...) and (:goal ...)",
                    ))
                }
            }
        }
        Ok(draft)
    }

    /// Builds the problem; cost-using domains get `(= (total-cost) 0)`
    /// unless the draft sets it.
    pub fn to_problem(&self, name: &str, domain: &DomainSpec) -> Result<ProblemSpec, ParseError> {
        let objects = parse_objects(&self.objects, domain)?;
        let mut init = Vec::new();
        let mut initial_cost = None;
        for s in &self.init {
            match parse_init_entry(s, domain, &objects)? {
                InitEntry::Atom(a) => {
                    if !init.contains(&a) {
                        init.push(a)
                    }
                }
                InitEntry::Cost(c) => initial_cost = Some(c),
            }
        }
        if initial_cost.is_none() && domain.uses_action_costs() {
            initial_cost = Some(0);
        }
        let goal = match &self.goal {
            Some(g) => parse_goal(g, domain, &objects)?,
            None => return Err(ParseError::at(Span::default(), "missing goal", "add a (:goal ...) section")),
        };
        let goal = if goal == Formula::And(vec![]) { Formula::truth() } else { goal };
        Ok(ProblemSpec { name: name.to_string(), domain: domain.name.clone(), objects, init, initial_cost, goal })
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[Sexp]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" ");
        let mut out = format!("(:objects {})\n(:init {})\n", join(&self.objects), join(&self.init));
        if let Some(g) = &self.goal {
            out.push_str(&format!("(:goal {g})\n"));
        }
        out
    }
}
