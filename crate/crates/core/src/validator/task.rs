use crate::pddl::{is_reserved, is_valid_identifier, DomainSpec, Sexp, OBJECT, TOTAL_COST};

use super::action::typed_entries;
use super::{Category, IssueCode, TaskDraft, ValidationIssue, ValidationReport};

struct Checker<'a> {
    domain: &'a DomainSpec,
    /// Declared objects with their types; objects of unknown type are kept
    /// with `None` so later sections do not report them as undefined.
    objects: Vec<(String, Option<String>)>,
    found: Vec<(Category, ValidationIssue)>,
}

impl Checker<'_> {
    fn push(&mut self, cat: Category, code: IssueCode, loc: &str, message: String, fix: impl Into<String>) {
        self.found.push((
            cat,
            ValidationIssue { code, location: loc.to_string(), message, suggested_fix: fix.into() },
        ));
    }

    fn objects(&mut self, items: &[Sexp]) {
        let cat = Category::Objects;
        let loc = "objects";
        let entries = match typed_entries(items) {
            Ok(e) => e,
            Err((s, msg)) => {
                self.push(cat, IssueCode::MalformedExpression, loc, format!("The object list is malformed: {msg}."), format!("List objects as 'name - type', replacing '{s}'."));
                return;
            }
        };
        for e in entries {
            let name = e.name;
            if !is_valid_identifier(&name) {
                self.push(
                    cat,
                    IssueCode::InvalidIdentifier,
                    loc,
                    format!("'{name}' is not a valid object name."),
                    "Use letters, digits, '_' and '-', starting with a letter.",
                );
                continue;
            }
            if is_reserved(&name) && name != OBJECT {
                self.push(cat, IssueCode::InvalidIdentifier, loc, format!("'{name}' is a reserved word and cannot name an object."), format!("Rename '{name}', e.g. to '{name}1'."));
                continue;
            }
            if self.domain.hierarchy.contains(&name) {
                self.push(
                    cat,
                    IssueCode::ObjectShadowsType,
                    loc,
                    format!("The object '{name}' has the same name as a type."),
                    format!("Rename the object, e.g. to '{name}1'."),
                );
                continue;
            }
            let ty = e.ty.unwrap_or_else(|| OBJECT.to_string());
            let known = self.domain.hierarchy.contains(&ty);
            if !known {
                let mut names: Vec<&str> = self.domain.hierarchy.names().collect();
                names.push(OBJECT);
                self.push(
                    cat,
                    IssueCode::UnknownType,
                    loc,
                    format!("The object '{name}' has type '{ty}', which is not in the type hierarchy."),
                    format!("Use one of the existing types: {}.", names.join(", ")),
                );
            }
            if self.objects.iter().any(|(n, _)| *n == name) {
                self.push(
                    cat,
                    IssueCode::DuplicateObject,
                    loc,
                    format!("The object '{name}' is declared more than once."),
                    format!("Declare '{name}' once with a single type."),
                );
                continue;
            }
            self.objects.push((name, known.then_some(ty)));
        }
    }

    /// Checks predicate, arity, objects and argument types of an atom whose
    /// terms may be objects or variables bound in `scope`.
    fn atom(&mut self, cat: Category, loc: &str, s: &Sexp, items: &[Sexp], scope: &[(String, Option<String>)], ground: bool) {
        let Some(pred) = items[0].as_atom().map(str::to_ascii_lowercase) else {
            self.push(cat, IssueCode::MalformedExpression, loc, format!("'{s}' does not start with a predicate name."), "Write atoms as (predicate arg ...).");
            return;
        };
        let Some(decl) = self.domain.predicate(&pred) else {
            self.push(
                cat,
                IssueCode::UndefinedPredicate,
                loc,
                format!("The predicate '{pred}' in '{s}' is not defined in the domain."),
                format!("Use one of the domain predicates: {}.", self.domain.predicates.iter().map(|p| p.name.as_str()).collect::<Vec<_>>().join(", ")),
            );
            return;
        };
        let mut types: Vec<Option<String>> = Vec::new();
        let mut ok = true;
        for t in &items[1..] {
            let Some(raw) = t.as_atom() else {
                self.push(cat, IssueCode::MalformedExpression, loc, format!("'{t}' in '{s}' is not an object name."), "Use object names as arguments.");
                ok = false;
                continue;
            };
            let name = raw.to_ascii_lowercase();
            if let Some(v) = name.strip_prefix('?') {
                if ground {
                    self.push(cat, IssueCode::NonGroundInit, loc, format!("The initial-state atom '{s}' contains the variable '{name}'."), "Replace every variable with a declared object.");
                    ok = false;
                } else if let Some((_, ty)) = scope.iter().rev().find(|(n, _)| n == v) {
                    types.push(ty.clone());
                } else {
                    self.push(cat, IssueCode::UnboundVariable, loc, format!("The variable '{name}' in '{s}' is not bound by forall or exists."), format!("Bind '{name}' with a quantifier or use an object."));
                    ok = false;
                }
                continue;
            }
            match self.objects.iter().find(|(n, _)| *n == name) {
                Some((_, ty)) => types.push(ty.clone()),
                None => {
                    self.push(cat, IssueCode::UndefinedObject, loc, format!("The object '{name}' in '{s}' is not declared."), format!("Add '{name}' to the objects or use a declared object."));
                    ok = false;
                }
            }
        }
        if !ok {
            return;
        }
        if types.len() != decl.arity() {
            self.push(
                cat,
                IssueCode::ArityMismatch,
                loc,
                format!("'{s}' gives {} argument(s) but '{pred}' takes {}.", types.len(), decl.arity()),
                format!("Call '{pred}' with exactly {} argument(s).", decl.arity()),
            );
            return;
        }
        for ((t, have), param) in items[1..].iter().zip(&types).zip(&decl.params) {
            let Some(have) = have else { continue };
            if !self.domain.hierarchy.is_subtype(have, &param.ty).unwrap_or(true) {
                self.push(
                    cat,
                    IssueCode::ArgumentTypeMismatch,
                    loc,
                    format!("In '{s}', '{t}' has type '{have}' but '{pred}' expects '{}' there.", param.ty),
                    format!("Use an object of type '{}'.", param.ty),
                );
            }
        }
    }

    fn init(&mut self, entries: &[Sexp]) {
        let cat = Category::Init;
        let loc = "init";
        for s in entries {
            let items = match s.as_list() {
                Some(items) if !items.is_empty() => items,
                _ => {
                    self.push(cat, IssueCode::MalformedExpression, loc, format!("'{s}' is not an atom."), "Write each initial fact as (predicate obj ...).");
                    continue;
                }
            };
            match s.head().as_deref() {
                Some("=") => {
                    let ok = items.len() == 3
                        && items[1].head().as_deref() == Some(TOTAL_COST)
                        && items[2].as_atom().is_some_and(|n| n.parse::<u64>().is_ok());
                    if !ok {
                        self.push(cat, IssueCode::MalformedExpression, loc, format!("'{s}' is not a supported numeric fact."), "Only (= (total-cost) 0) may appear in the initial state.");
                    }
                }
                Some("not") => self.push(
                    cat,
                    IssueCode::NegationInInit,
                    loc,
                    format!("The initial state lists the negated fact '{s}'."),
                    "Remove it; facts that are not listed are false.",
                ),
                Some(h @ ("and" | "or" | "imply" | "forall" | "exists" | "when" | "increase" | "decrease")) => self.push(
                    cat,
                    IssueCode::NonAtomicInit,
                    loc,
                    format!("The initial state contains the compound formula '{h} ...'."),
                    "List each true fact as a separate ground atom.",
                ),
                _ => self.atom(cat, loc, s, items, &[], true),
            }
        }
    }

    fn goal(&mut self, s: &Sexp, scope: &mut Vec<(String, Option<String>)>) {
        let cat = Category::Goal;
        let loc = "goal";
        let items = match s.as_list() {
            Some(items) => items,
            None => {
                self.push(cat, IssueCode::MalformedExpression, loc, format!("'{s}' is not a goal formula."), "Wrap goal atoms in parentheses.");
                return;
            }
        };
        if items.is_empty() {
            return;
        }
        let arity = |n: usize| items.len() == n + 1;
        match s.head().as_deref() {
            Some("and" | "or") => items[1..].iter().for_each(|c| self.goal(c, scope)),
            Some("not") if arity(1) => self.goal(&items[1], scope),
            Some("imply") if arity(2) => {
                self.goal(&items[1], scope);
                self.goal(&items[2], scope);
            }
            Some(q @ ("forall" | "exists")) if arity(2) => {
                let depth = scope.len();
                match items[1].as_list().map(typed_entries) {
                    Some(Ok(entries)) => {
                        for e in entries {
                            let ty = e.ty.unwrap_or_else(|| OBJECT.to_string());
                            let Some(v) = e.name.strip_prefix('?') else {
                                self.push(cat, IssueCode::MalformedExpression, loc, format!("'{}' in '{q}' is not a variable.", e.name), format!("Write it as '?{}'.", e.name));
                                continue;
                            };
                            let known = self.domain.hierarchy.contains(&ty);
                            if !known {
                                self.push(cat, IssueCode::UnknownType, loc, format!("The quantified variable '?{v}' has unknown type '{ty}'."), "Use a type from the domain.");
                            }
                            scope.push((v.to_string(), known.then_some(ty)));
                        }
                    }
                    _ => self.push(cat, IssueCode::MalformedExpression, loc, format!("'{q}' needs a variable list, found '{}'.", items[1]), "Write the variables as (?x - type)."),
                }
                self.goal(&items[2], scope);
                scope.truncate(depth);
            }
            Some("=") if arity(2) => {
                for t in &items[1..] {
                    if let Some(name) = t.as_atom().map(str::to_ascii_lowercase) {
                        let bound = match name.strip_prefix('?') {
                            Some(v) => scope.iter().any(|(n, _)| n == v),
                            None => self.objects.iter().any(|(n, _)| *n == name),
                        };
                        if !bound {
                            let code = if name.starts_with('?') { IssueCode::UnboundVariable } else { IssueCode::UndefinedObject };
                            self.push(cat, code, loc, format!("'{name}' in '{s}' is not declared."), "Compare declared objects or bound variables only.");
                        }
                    } else {
                        self.push(cat, IssueCode::MalformedExpression, loc, format!("'{t}' in '{s}' is not a name."), "Compare names only.");
                    }
                }
            }
            Some(h @ ("not" | "imply" | "forall" | "exists" | "=")) => self.push(
                cat,
                IssueCode::MalformedExpression,
                loc,
                format!("'{h}' in '{s}' has the wrong number of operands."),
                format!("Check the operands of '{h}'."),
            ),
            Some(h @ ("when" | "increase" | "decrease" | "either")) => self.push(
                cat,
                IssueCode::MalformedExpression,
                loc,
                format!("'{h}' cannot appear in a goal."),
                "State the goal as a condition over predicates.",
            ),
            Some(h) if h.starts_with(':') => self.push(
                cat,
                IssueCode::MalformedExpression,
                loc,
                format!("The keyword '{h}' appears inside the goal."),
                "Remove the keyword from the goal formula.",
            ),
            _ => {
                let scope = scope.clone();
                self.atom(cat, loc, s, items, &scope, false)
            }
        }
    }
}

/// Validates drafted objects, initial state and goal against a domain.
/// Sections are checked in that order and only the first failing one is
/// reported.
pub fn validate_task(draft: &TaskDraft, domain: &DomainSpec) -> ValidationReport {
    let mut c = Checker { domain, objects: Vec::new(), found: Vec::new() };
    c.objects(&draft.objects);
    c.init(&draft.init);
    match &draft.goal {
        Some(g) => c.goal(g, &mut Vec::new()),
        None => c.push(Category::Goal, IssueCode::MalformedExpression, "goal", "The task has no goal.".into(), "Add a (:goal ...) section."),
    }
    ValidationReport::first_failing(c.found, &Category::TASK_ORDER)
}
