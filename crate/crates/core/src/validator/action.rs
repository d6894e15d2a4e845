use crate::pddl::{is_reserved, is_valid_identifier, DomainSpec, Sexp, OBJECT, TOTAL_COST};

use super::{Category, IssueCode, ValidationIssue, ValidationReport};

const SECTIONS: [&str; 3] = [":parameters", ":precondition", ":effect"];
const CONNECTIVES: [&str; 11] =
    ["and", "or", "not", "imply", "forall", "exists", "when", "increase", "decrease", "=", "either"];

pub(super) struct Entry {
    pub name: String,
    pub ty: Option<String>,
}

/// Splits `?a ?b - t ?c` style lists; the error carries the offending node.
pub(super) fn typed_entries(items: &[Sexp]) -> Result<Vec<Entry>, (&Sexp, String)> {
    let mut out: Vec<Entry> = Vec::new();
    let mut group = 0;
    let mut i = 0;
    while i < items.len() {
        let s = &items[i];
        match s.as_atom() {
            Some("-") => {
                let Some(t) = items.get(i + 1) else {
                    return Err((s, "'-' is not followed by a type".into()));
                };
                let Some(ty) = t.as_atom() else {
                    return Err((t, format!("'{t}' is not a single type name")));
                };
                if group == out.len() {
                    return Err((s, "'-' has no names before it".into()));
                }
                for e in &mut out[group..] {
                    e.ty = Some(ty.to_ascii_lowercase());
                }
                group = out.len();
                i += 2;
            }
            Some(a) => {
                out.push(Entry { name: a.to_ascii_lowercase(), ty: None });
                i += 1;
            }
            None => return Err((s, format!("unexpected list '{s}' in a typed list"))),
        }
    }
    Ok(out)
}

#[derive(Clone)]
struct Var {
    name: String,
    /// `None` when the declared type is missing or unknown; such variables
    /// are not argument-type checked.
    ty: Option<String>,
}

struct Sig {
    name: String,
    types: Vec<Option<String>>,
}

struct Checker<'a> {
    domain: &'a DomainSpec,
    action: String,
    sigs: Vec<Sig>,
    found: Vec<(Category, ValidationIssue)>,
}

impl Checker<'_> {
    fn push(&mut self, cat: Category, code: IssueCode, loc: &str, message: String, fix: String) {
        self.found.push((
            cat,
            ValidationIssue { code, location: loc.to_string(), message, suggested_fix: fix },
        ));
    }

    fn malformed(&mut self, loc: &str, message: String, fix: impl Into<String>) {
        self.push(Category::Keywords, IssueCode::MalformedExpression, loc, message, fix.into());
    }

    fn type_known(&self, ty: &str) -> bool {
        ty == OBJECT || self.domain.hierarchy.contains(ty)
    }

    fn check_identifier(&mut self, name: &str, what: &str, loc: &str) {
        if !is_valid_identifier(name) {
            self.push(
                Category::Names,
                IssueCode::InvalidIdentifier,
                loc,
                format!("The {what} name '{name}' is not a valid identifier."),
                format!("Rename '{name}' using letters, digits, '_' and '-', starting with a letter."),
            );
        }
    }

    /// Variable list of an action, predicate or quantifier.
    fn var_list(&mut self, items: &[Sexp], loc: &str, what: &str) -> Vec<Var> {
        let entries = match typed_entries(items) {
            Ok(e) => e,
            Err((s, msg)) => {
                self.malformed(loc, format!("In the {what} of {}: {msg}.", self.action), format!("Write the {what} as '?name - type' pairs, replacing '{s}'."));
                return Vec::new();
            }
        };
        let mut vars: Vec<Var> = Vec::new();
        for e in entries {
            if e.name.starts_with(':') {
                self.push(
                    Category::Keywords,
                    IssueCode::MisplacedKeyword,
                    loc,
                    format!("The keyword '{}' appears inside the {what}.", e.name),
                    format!("Move '{}' out of the {what}.", e.name),
                );
                continue;
            }
            let Some(name) = e.name.strip_prefix('?') else {
                self.malformed(
                    loc,
                    format!("'{}' in the {what} is not a variable.", e.name),
                    format!("Write it as '?{}'.", e.name),
                );
                continue;
            };
            self.check_identifier(name, "variable", loc);
            let ty = match &e.ty {
                None => {
                    self.push(
                        Category::Types,
                        IssueCode::UntypedParameter,
                        loc,
                        format!("Variable '?{name}' in the {what} has no type."),
                        format!("Add a type to '?{name}', for example '?{name} - <type>'."),
                    );
                    None
                }
                Some(t) if !self.type_known(t) => {
                    self.push(
                        Category::Types,
                        IssueCode::UnknownType,
                        loc,
                        format!("Variable '?{name}' has type '{t}', which is not in the type hierarchy."),
                        format!("Replace '{t}' with one of the existing types: {}.", self.type_names()),
                    );
                    None
                }
                Some(t) => Some(t.clone()),
            };
            if vars.iter().any(|v| v.name == name) {
                self.push(
                    Category::Binding,
                    IssueCode::DuplicateParameter,
                    loc,
                    format!("Variable '?{name}' is declared twice in the {what}."),
                    format!("Rename one of the '?{name}' variables."),
                );
                continue;
            }
            vars.push(Var { name: name.to_string(), ty });
        }
        vars
    }

    fn type_names(&self) -> String {
        let mut names: Vec<&str> = self.domain.hierarchy.names().collect();
        names.push(OBJECT);
        names.join(", ")
    }

    fn sig(&self, name: &str) -> Option<&Sig> {
        self.sigs.iter().find(|s| s.name == name)
    }

    fn term(&mut self, t: &Sexp, scope: &[Var], loc: &str) -> Option<Var> {
        let Some(raw) = t.as_atom() else {
            self.malformed(loc, format!("'{t}' is used as an argument but is not a name."), "Use a variable such as '?x' as the argument.");
            return None;
        };
        let name = raw.to_ascii_lowercase();
        if name.starts_with(':') {
            self.push(
                Category::Keywords,
                IssueCode::MisplacedKeyword,
                loc,
                format!("The keyword '{name}' is used as an argument."),
                format!("Remove '{name}' from the argument list."),
            );
            return None;
        }
        match name.strip_prefix('?') {
            Some(v) => match scope.iter().rev().find(|b| b.name == v) {
                Some(b) => Some(b.clone()),
                None => {
                    self.push(
                        Category::Binding,
                        IssueCode::UnboundVariable,
                        loc,
                        format!("Variable '?{v}' is not a parameter of {} and is not quantified.", self.action),
                        format!("Add '?{v}' to the parameters or bind it with forall or exists."),
                    );
                    None
                }
            },
            None => {
                self.push(
                    Category::Binding,
                    IssueCode::ConstantInAction,
                    loc,
                    format!("Action {} refers to the object '{name}' directly.", self.action),
                    format!("Replace '{name}' with a parameter variable of the right type."),
                );
                None
            }
        }
    }

    fn atom(&mut self, s: &Sexp, items: &[Sexp], scope: &[Var], loc: &str) {
        let pred = items[0].as_atom().unwrap_or_default().to_ascii_lowercase();
        let args: Vec<Option<Var>> = items[1..].iter().map(|t| self.term(t, scope, loc)).collect();
        let Some(sig) = self.sig(&pred) else {
            self.push(
                Category::Predicates,
                IssueCode::UndefinedPredicate,
                loc,
                format!("The predicate '{pred}' used in '{s}' is not defined."),
                format!("Define predicate {pred} or use an existing one."),
            );
            return;
        };
        let types = sig.types.clone();
        if types.len() != args.len() {
            self.push(
                Category::Arity,
                IssueCode::ArityMismatch,
                loc,
                format!("'{s}' gives {} argument(s) but predicate '{pred}' takes {}.", args.len(), types.len()),
                format!("Call '{pred}' with exactly {} argument(s).", types.len()),
            );
            return;
        }
        for (arg, want) in args.iter().zip(types) {
            let (Some(Var { name, ty: Some(have) }), Some(want)) = (arg, want) else { continue };
            if !self.domain.hierarchy.is_subtype(have, &want).unwrap_or(true) {
                self.push(
                    Category::Arity,
                    IssueCode::ArgumentTypeMismatch,
                    loc,
                    format!("In '{s}', '?{name}' has type '{have}' but '{pred}' expects '{want}' there."),
                    format!("Pass a variable of type '{want}' or change the declared type of '?{name}'."),
                );
            }
        }
    }

    fn operands(&mut self, s: &Sexp, items: &[Sexp], n: usize, loc: &str) -> bool {
        if items.len() == n + 1 {
            return true;
        }
        let op = &items[0];
        self.malformed(
            loc,
            format!("'{op}' takes {n} operand(s) but '{s}' has {}.", items.len() - 1),
            format!("Give '{op}' exactly {n} operand(s)."),
        );
        false
    }

    /// Common shape checks. Returns the items and lowercased head of a
    /// well-formed non-empty list.
    fn shape<'s>(&mut self, s: &'s Sexp, what: &str, loc: &str) -> Option<(&'s [Sexp], String)> {
        let Some(items) = s.as_list() else {
            if s.is_keyword() {
                self.push(
                    Category::Keywords,
                    IssueCode::MisplacedKeyword,
                    loc,
                    format!("The keyword '{s}' appears inside the {what}."),
                    format!("Move '{s}' to the action level or remove it."),
                );
            } else {
                self.malformed(loc, format!("Expected a parenthesized {what} but found '{s}'."), format!("Wrap '{s}' in parentheses as a {what}."));
            }
            return None;
        };
        if items.is_empty() {
            return None;
        }
        let Some(head) = s.head() else {
            self.malformed(loc, format!("The {what} '{s}' does not start with an operator or predicate."), "Start the expression with a predicate name or a connective.");
            return None;
        };
        if head.starts_with(':') {
            self.push(
                Category::Keywords,
                IssueCode::MisplacedKeyword,
                loc,
                format!("The keyword '{head}' appears inside the {what}."),
                format!("Move '{head}' to the action level or remove it."),
            );
            return None;
        }
        Some((items, head))
    }

    fn quantified(&mut self, s: &Sexp, items: &[Sexp], scope: &mut Vec<Var>, loc: &str) -> Option<usize> {
        if !self.operands(s, items, 2, loc) {
            return None;
        }
        let Some(vars) = items[1].as_list() else {
            self.malformed(loc, format!("'{}' needs a variable list, found '{}'.", items[0], items[1]), "Write the variables as (?x - type).");
            return None;
        };
        let depth = scope.len();
        let vars = self.var_list(vars, loc, "quantified variables");
        scope.extend(vars);
        Some(depth)
    }

    fn condition(&mut self, s: &Sexp, scope: &mut Vec<Var>, loc: &str) {
        let Some((items, head)) = self.shape(s, "formula", loc) else { return };
        match head.as_str() {
            "and" | "or" => items[1..].iter().for_each(|c| self.condition(c, scope, loc)),
            "not" => {
                if self.operands(s, items, 1, loc) {
                    self.condition(&items[1], scope, loc)
                }
            }
            "imply" => {
                if self.operands(s, items, 2, loc) {
                    self.condition(&items[1], scope, loc);
                    self.condition(&items[2], scope, loc);
                }
            }
            "forall" | "exists" => {
                if let Some(depth) = self.quantified(s, items, scope, loc) {
                    self.condition(&items[2], scope, loc);
                    scope.truncate(depth);
                }
            }
            "=" => {
                if self.operands(s, items, 2, loc) {
                    self.term(&items[1], scope, loc);
                    self.term(&items[2], scope, loc);
                }
            }
            "when" | "increase" | "decrease" => self.push(
                Category::EffectGrammar,
                IssueCode::EffectInPrecondition,
                loc,
                format!("The precondition of {} contains the effect '{head}'.", self.action),
                format!("Move '{head}' from the precondition into the effect."),
            ),
            "either" => self.malformed(loc, format!("'{s}' is not a formula."), "Replace it with a predicate or a connective."),
            _ => self.atom(s, items, scope, loc),
        }
    }

    fn effect(&mut self, s: &Sexp, scope: &mut Vec<Var>, loc: &str, in_when: bool) {
        let Some((items, head)) = self.shape(s, "effect", loc) else { return };
        match head.as_str() {
            "and" => items[1..].iter().for_each(|c| self.effect(c, scope, loc, in_when)),
            "not" => {
                if !self.operands(s, items, 1, loc) {
                    return;
                }
                let inner = &items[1];
                let inner_head = inner.head();
                let compound = matches!(inner_head.as_deref(), Some(h) if CONNECTIVES.contains(&h));
                if inner_head.as_deref() == Some("=") {
                    self.push(
                        Category::EffectGrammar,
                        IssueCode::DisallowedEffectConnective,
                        loc,
                        format!("The effect '{s}' uses '=', which is only allowed in conditions."),
                        "Remove the equality from the effect or move it into the precondition.".into(),
                    );
                } else if compound || inner.as_list().is_some_and(<[Sexp]>::is_empty) {
                    self.push(
                        Category::EffectGrammar,
                        IssueCode::NegatedCompoundEffect,
                        loc,
                        format!("The effect '{s}' negates something other than a single atom."),
                        "Negate each atom separately, e.g. (and (not (p ?x)) (not (q ?x))).".into(),
                    );
                } else if let Some((items, _)) = self.shape(inner, "effect", loc) {
                    self.atom(inner, items, scope, loc);
                }
            }
            "forall" => {
                if let Some(depth) = self.quantified(s, items, scope, loc) {
                    self.effect(&items[2], scope, loc, in_when);
                    scope.truncate(depth);
                }
            }
            "when" => {
                if !self.operands(s, items, 2, loc) {
                    return;
                }
                if in_when {
                    self.push(
                        Category::EffectGrammar,
                        IssueCode::NestedWhen,
                        loc,
                        format!("The effect of {} nests one 'when' inside another.", self.action),
                        "Merge the two conditions with 'and' into a single 'when'.".into(),
                    );
                }
                self.condition(&items[1], scope, loc);
                self.effect(&items[2], scope, loc, true);
            }
            "increase" | "decrease" => {
                let ok = head == "increase"
                    && items.len() == 3
                    && items[1].head().as_deref() == Some(TOTAL_COST)
                    && items[1].as_list().is_some_and(|l| l.len() == 1)
                    && items[2].as_atom().is_some_and(|n| n.parse::<u64>().is_ok());
                if !ok {
                    self.push(
                        Category::EffectGrammar,
                        IssueCode::InvalidCostEffect,
                        loc,
                        format!("The cost effect '{s}' is not supported."),
                        "Write cost effects as (increase (total-cost) <non-negative integer>).".into(),
                    );
                }
            }
            "or" | "exists" | "imply" | "=" => self.push(
                Category::EffectGrammar,
                IssueCode::DisallowedEffectConnective,
                loc,
                format!("The effect of {} uses '{head}', which is only allowed in conditions.", self.action),
                format!("Remove '{head}' from the effect; use separate actions or 'when' for alternatives."),
            ),
            "either" => self.malformed(loc, format!("'{s}' is not an effect."), "Replace it with an atom or a connective."),
            _ => self.atom(s, items, scope, loc),
        }
    }

    /// Declarations of new predicates; returns their names for collision checks.
    fn declarations(&mut self, preds: &[Sexp]) {
        let mut seen: Vec<(String, Vec<Option<String>>)> = Vec::new();
        for p in preds {
            let loc = "predicates";
            let Some((items, name)) = self.shape(p, "predicate declaration", loc) else {
                if p.as_list().is_some_and(<[Sexp]>::is_empty) {
                    self.malformed(loc, "An empty predicate declaration '()' was given.".into(), "Remove the empty declaration.");
                }
                continue;
            };
            let loc = format!("predicates.{name}");
            if CONNECTIVES.contains(&name.as_str()) || is_reserved(&name) {
                self.push(
                    Category::Names,
                    IssueCode::ReservedName,
                    &loc,
                    format!("The predicate name '{name}' is a reserved word."),
                    format!("Rename the predicate '{name}' to a descriptive non-reserved name."),
                );
            } else {
                self.check_identifier(&name, "predicate", &loc);
            }
            if self.domain.hierarchy.contains(&name) {
                self.push(
                    Category::Names,
                    IssueCode::NameCollision,
                    &loc,
                    format!("The predicate '{name}' has the same name as a type."),
                    format!("Rename the predicate '{name}', e.g. to 'is_{name}'."),
                );
            }
            if self.domain.action(&name).is_some() || name == self.action {
                self.push(
                    Category::Names,
                    IssueCode::NameCollision,
                    &loc,
                    format!("The predicate '{name}' has the same name as an action."),
                    format!("Rename the predicate '{name}'."),
                );
            }
            let vars = self.var_list(&items[1..], &loc, "predicate parameters");
            let types: Vec<Option<String>> = vars.iter().map(|v| v.ty.clone()).collect();
            let existing = self
                .domain
                .predicate(&name)
                .map(|d| d.params.iter().map(|p| Some(p.ty.clone())).collect::<Vec<_>>())
                .or_else(|| seen.iter().find(|(n, _)| *n == name).map(|(_, t)| t.clone()));
            match existing {
                Some(old) if old != types || old.len() != vars.len() => {
                    let shown = old.iter().map(|t| t.clone().unwrap_or_else(|| "?".into())).collect::<Vec<_>>().join(", ");
                    self.push(
                        Category::Conflicts,
                        IssueCode::ConflictingPredicate,
                        &loc,
                        format!("Predicate '{name}' is already declared with argument types ({shown})."),
                        format!("Reuse the existing '{name}' with its declared arguments or choose a new name."),
                    );
                }
                Some(_) => {}
                None => {
                    seen.push((name.clone(), types.clone()));
                    self.sigs.push(Sig { name, types });
                }
            }
        }
    }
}

/// Validates one drafted action against the domain built so far. The
/// context must not contain an earlier version of the same action.
pub fn validate_action(draft: &super::ActionDraft, context: &DomainSpec) -> ValidationReport {
    let mut c = Checker {
        domain: context,
        action: "the action".into(),
        sigs: context
            .predicates
            .iter()
            .map(|p| Sig { name: p.name.clone(), types: p.params.iter().map(|v| Some(v.ty.clone())).collect() })
            .collect(),
        found: Vec::new(),
    };
    let s = &draft.action;
    let items = match s.as_list() {
        Some(items) if s.head().as_deref() == Some(":action") => items,
        _ => {
            c.malformed("action", format!("Expected an (:action ...) form but found '{s}'."), "Start the answer with (:action <name> ...).");
            return ValidationReport::first_failing(c.found, &Category::ACTION_ORDER);
        }
    };
    let Some(name) = items.get(1).and_then(Sexp::as_atom).map(str::to_ascii_lowercase) else {
        c.malformed("action", "The action has no name.".into(), "Write (:action <name> :parameters ... ).");
        return ValidationReport::first_failing(c.found, &Category::ACTION_ORDER);
    };
    c.action = name.clone();

    let mut sections: [Option<&Sexp>; 3] = [None; 3];
    let mut i = 2;
    while i < items.len() {
        let key = &items[i];
        let Some(k) = key.as_atom().filter(|k| k.starts_with(':')).map(str::to_ascii_lowercase) else {
            c.malformed(&name, format!("Expected a section keyword in {name} but found '{key}'."), "Put each part after :parameters, :precondition or :effect.");
            i += 1;
            continue;
        };
        let value = items.get(i + 1).filter(|v| !v.is_keyword());
        match SECTIONS.iter().position(|x| *x == k) {
            None => c.push(
                Category::Keywords,
                IssueCode::UnknownKeyword,
                &name,
                format!("Action {name} uses the unknown keyword '{k}'."),
                format!("Remove '{k}'; actions only have :parameters, :precondition and :effect."),
            ),
            Some(slot) => {
                if sections[slot].is_some() {
                    c.push(
                        Category::Keywords,
                        IssueCode::DuplicateSection,
                        &name,
                        format!("Action {name} has more than one '{k}' section."),
                        format!("Merge the '{k}' sections into one."),
                    );
                } else if let Some(v) = value {
                    sections[slot] = Some(v);
                } else {
                    c.malformed(&name, format!("The '{k}' section of {name} is empty."), format!("Give '{k}' a value."));
                }
            }
        }
        i += if value.is_some() { 2 } else { 1 };
    }
    if sections[2].is_none() && !c.found.iter().any(|(_, i)| i.code == IssueCode::DuplicateSection) {
        c.push(
            Category::Keywords,
            IssueCode::MissingSection,
            &name,
            format!("Action {name} has no :effect."),
            "Add an :effect section describing what the action changes.".into(),
        );
    }

    if !is_valid_identifier(&name) {
        c.check_identifier(&name, "action", &name);
    } else if is_reserved(&name) {
        c.push(
            Category::Names,
            IssueCode::ReservedName,
            &name,
            format!("The action name '{name}' is a reserved word."),
            format!("Rename the action '{name}' to a descriptive verb phrase."),
        );
    }
    let clash = if context.action(&name).is_some() {
        Some("another action")
    } else if context.predicate(&name).is_some() || draft.predicates.iter().any(|p| p.head().as_deref() == Some(&name)) {
        Some("a predicate")
    } else if context.hierarchy.contains(&name) {
        Some("a type")
    } else {
        None
    };
    if let Some(what) = clash {
        c.push(
            Category::Names,
            IssueCode::NameCollision,
            &name,
            format!("The action name '{name}' is already used by {what}."),
            format!("Rename the action '{name}'."),
        );
    }

    c.declarations(&draft.predicates);

    let params_loc = format!("{name}.parameters");
    let mut scope = match sections[0] {
        Some(p) => match p.as_list() {
            Some(items) => c.var_list(items, &params_loc, "parameters"),
            None => {
                c.malformed(&params_loc, format!("The parameters of {name} must be a list, found '{p}'."), "Write :parameters (?x - type ...).");
                Vec::new()
            }
        },
        None => Vec::new(),
    };
    if let Some(pre) = sections[1] {
        c.condition(pre, &mut scope, &format!("{name}.precondition"));
    }
    if let Some(eff) = sections[2] {
        c.effect(eff, &mut scope, &format!("{name}.effect"), false);
    }
    ValidationReport::first_failing(c.found, &Category::ACTION_ORDER)
}
