use std::collections::BTreeSet;

use super::model::*;
use super::sexp::{read_one, Sexp, SexpKind, Span};
use super::ParseError;

fn err(span: Span, message: impl Into<String>, hint: impl Into<String>) -> ParseError {
    ParseError::at(span, message, hint)
}

fn lower(s: &str) -> String {
    s.to_ascii_lowercase()
}

fn expect_list<'a>(s: &'a Sexp, what: &str) -> Result<&'a [Sexp], ParseError> {
    s.as_list().ok_or_else(|| {
        err(
            s.span,
            format!("expected a parenthesized {what}, found '{s}'"),
            format!("write the {what} as a list"),
        )
    })
}

fn expect_atom<'a>(s: &'a Sexp, what: &str) -> Result<&'a str, ParseError> {
    s.as_atom().ok_or_else(|| {
        err(
            s.span,
            format!("expected {what}, found a list"),
            format!("replace the list with a single {what}"),
        )
    })
}

/// One entry of a typed list such as `?a ?b - block ?c`.
#[derive(Clone, Debug, PartialEq)]
pub struct TypedItem {
    pub name: String,
    /// `None` when no `- type` follows the item.
    pub ty: Option<String>,
    pub span: Span,
    pub comment: Option<String>,
}

/// Splits a typed list into items. Names and types are lowercased.
pub fn parse_typed_list(items: &[Sexp]) -> Result<Vec<TypedItem>, ParseError> {
    let mut out: Vec<TypedItem> = Vec::new();
    let mut group_start = 0;
    let mut i = 0;
    while i < items.len() {
        let item = &items[i];
        match &item.kind {
            SexpKind::Atom(a) if a == "-" => {
                let Some(ty) = items.get(i + 1) else {
                    return Err(err(item.span, "'-' without a type", "add a type name after '-'"));
                };
                if ty.head().as_deref() == Some("either") {
                    return Err(err(
                        ty.span,
                        "'either' types are not supported",
                        "declare a common parent type and use it instead",
                    ));
                }
                let ty_name = lower(expect_atom(ty, "a type name")?);
                if group_start == out.len() {
                    return Err(err(item.span, "'-' without preceding names", "put names before '- type'"));
                }
                for entry in &mut out[group_start..] {
                    entry.ty = Some(ty_name.clone());
                    if entry.comment.is_none() && ty.span.line == entry.span.line {
                        entry.comment = ty.comment.clone();
                    }
                }
                group_start = out.len();
                i += 2;
            }
            SexpKind::Atom(a) => {
                out.push(TypedItem {
                    name: lower(a),
                    ty: None,
                    span: item.span,
                    comment: item.comment.clone(),
                });
                i += 1;
            }
            SexpKind::List(_) => {
                return Err(err(
                    item.span,
                    format!("unexpected list '{item}' in a typed list"),
                    "typed lists contain names, '-' and type names only",
                ))
            }
        }
    }
    Ok(out)
}

fn strip_var(item: &TypedItem) -> Result<String, ParseError> {
    match item.name.strip_prefix('?') {
        Some(v) if is_valid_identifier(v) => Ok(v.to_string()),
        _ => Err(err(
            item.span,
            format!("'{}' is not a variable", item.name),
            "variables start with '?' followed by a letter",
        )),
    }
}

/// Converts s-expressions into formulas and effects, checking references
/// against a domain (and, for problems, an object list).
pub struct Builder<'a> {
    pub hierarchy: &'a TypeHierarchy,
    pub predicates: &'a [PredicateDecl],
    /// `Some` when terms may name objects (problem goals).
    pub objects: Option<&'a [ObjectDecl]>,
}

impl<'a> Builder<'a> {
    pub fn typed_vars(&self, items: &[Sexp]) -> Result<Vec<TypedVar>, ParseError> {
        let parsed = parse_typed_list(items)?;
        let mut out = Vec::with_capacity(parsed.len());
        for item in &parsed {
            let name = strip_var(item)?;
            let ty = item.ty.clone().unwrap_or_else(|| OBJECT.to_string());
            if !self.hierarchy.contains(&ty) {
                return Err(err(
                    item.span,
                    format!("undeclared type '{ty}'"),
                    format!("declare '{ty}' in :types or use an existing type"),
                ));
            }
            out.push(TypedVar::new(name, ty));
        }
        Ok(out)
    }

    fn term(&self, s: &Sexp, scope: &[TypedVar]) -> Result<Term, ParseError> {
        let raw = expect_atom(s, "a term")?;
        let name = lower(raw);
        if let Some(v) = name.strip_prefix('?') {
            if scope.iter().any(|b| b.name == v) {
                return Ok(Term::Var(v.to_string()));
            }
            return Err(err(
                s.span,
                format!("unbound variable '{name}'"),
                "add it to the parameters or bind it with forall/exists",
            ));
        }
        match self.objects {
            Some(objects) if objects.iter().any(|o| o.name == name) => Ok(Term::Object(name)),
            Some(_) => Err(err(
                s.span,
                format!("undefined object '{name}'"),
                format!("declare '{name}' in :objects"),
            )),
            None => Err(err(
                s.span,
                format!("constant '{name}' used in a domain"),
                "constants are not supported; use a parameter variable instead",
            )),
        }
    }

    fn atom(&self, s: &Sexp, items: &[Sexp], scope: &[TypedVar]) -> Result<Atom, ParseError> {
        let pred = lower(expect_atom(&items[0], "a predicate name")?);
        if pred.starts_with(':') {
            return Err(err(
                items[0].span,
                format!("keyword '{pred}' used where a formula was expected"),
                "move the keyword to the action level",
            ));
        }
        let Some(decl) = self.predicates.iter().find(|p| p.name == pred) else {
            return Err(err(
                s.span,
                format!("undefined predicate '{pred}'"),
                format!("declare '{pred}' in :predicates"),
            ));
        };
        let args = items[1..]
            .iter()
            .map(|t| self.term(t, scope))
            .collect::<Result<Vec<_>, _>>()?;
        if args.len() != decl.arity() {
            return Err(err(
                s.span,
                format!(
                    "predicate '{pred}' takes {} argument(s), got {}",
                    decl.arity(),
                    args.len()
                ),
                format!("pass exactly {} argument(s) to '{pred}'", decl.arity()),
            ));
        }
        Ok(Atom::new(pred, args))
    }

    fn arg_count(s: &Sexp, items: &[Sexp], n: usize, what: &str) -> Result<(), ParseError> {
        if items.len() != n + 1 {
            return Err(err(
                s.span,
                format!("'{what}' takes {n} argument(s), got {}", items.len() - 1),
                format!("give '{what}' exactly {n} argument(s)"),
            ));
        }
        Ok(())
    }

    fn quantifier_vars(&self, s: &Sexp) -> Result<Vec<TypedVar>, ParseError> {
        self.typed_vars(expect_list(s, "variable list")?)
    }

    pub fn formula(&self, s: &Sexp, scope: &mut Vec<TypedVar>) -> Result<Formula, ParseError> {
        let items = expect_list(s, "formula")?;
        if items.is_empty() {
            return Ok(Formula::truth());
        }
        let head = s.head().ok_or_else(|| {
            err(s.span, format!("formula '{s}' has no operator"), "start the formula with a predicate or connective")
        })?;
        match head.as_str() {
            "and" | "or" => {
                let parts = items[1..]
                    .iter()
                    .map(|c| self.formula(c, scope))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(if head == "and" { Formula::And(parts) } else { Formula::Or(parts) })
            }
            "not" => {
                Self::arg_count(s, items, 1, "not")?;
                Ok(Formula::Not(Box::new(self.formula(&items[1], scope)?)))
            }
            "imply" => {
                Self::arg_count(s, items, 2, "imply")?;
                let a = self.formula(&items[1], scope)?;
                let b = self.formula(&items[2], scope)?;
                Ok(Formula::Imply(Box::new(a), Box::new(b)))
            }
            "forall" | "exists" => {
                Self::arg_count(s, items, 2, &head)?;
                let vars = self.quantifier_vars(&items[1])?;
                let depth = scope.len();
                scope.extend(vars.iter().cloned());
                let body = self.formula(&items[2], scope);
                scope.truncate(depth);
                let body = Box::new(body?);
                Ok(if head == "forall" { Formula::Forall(vars, body) } else { Formula::Exists(vars, body) })
            }
            "=" => {
                Self::arg_count(s, items, 2, "=")?;
                Ok(Formula::Equality(self.term(&items[1], scope)?, self.term(&items[2], scope)?))
            }
            "when" | "increase" | "decrease" => Err(err(
                s.span,
                format!("'{head}' is an effect and cannot appear in a condition"),
                format!("move '{head}' into the :effect"),
            )),
            _ => Ok(Formula::Atom(self.atom(s, items, scope)?)),
        }
    }

    pub fn effect(&self, s: &Sexp, scope: &mut Vec<TypedVar>) -> Result<Effect, ParseError> {
        self.effect_inner(s, scope, false)
    }

    fn effect_inner(&self, s: &Sexp, scope: &mut Vec<TypedVar>, in_when: bool) -> Result<Effect, ParseError> {
        let items = expect_list(s, "effect")?;
        if items.is_empty() {
            return Ok(Effect::none());
        }
        let head = s.head().ok_or_else(|| {
            err(s.span, format!("effect '{s}' has no operator"), "start the effect with a predicate or connective")
        })?;
        match head.as_str() {
            "and" => Ok(Effect::And(
                items[1..]
                    .iter()
                    .map(|c| self.effect_inner(c, scope, in_when))
                    .collect::<Result<Vec<_>, _>>()?,
            )),
            "not" => {
                Self::arg_count(s, items, 1, "not")?;
                let inner = expect_list(&items[1], "atom")?;
                let inner_head = items[1].head();
                if inner.is_empty()
                    || matches!(
                        inner_head.as_deref(),
                        Some("and" | "or" | "not" | "forall" | "exists" | "when" | "imply" | "increase")
                    )
                {
                    return Err(err(
                        items[1].span,
                        "'not' in an effect must wrap a single atom",
                        "negate each atom separately inside an 'and'",
                    ));
                }
                Ok(Effect::Delete(self.atom(&items[1], inner, scope)?))
            }
            "forall" => {
                Self::arg_count(s, items, 2, "forall")?;
                let vars = self.quantifier_vars(&items[1])?;
                let depth = scope.len();
                scope.extend(vars.iter().cloned());
                let body = self.effect_inner(&items[2], scope, in_when);
                scope.truncate(depth);
                Ok(Effect::Forall(vars, Box::new(body?)))
            }
            "when" => {
                Self::arg_count(s, items, 2, "when")?;
                if in_when {
                    return Err(err(s.span, "nested 'when' effects are not allowed", "merge the conditions into one 'when'"));
                }
                let cond = self.formula(&items[1], scope)?;
                let eff = self.effect_inner(&items[2], scope, true)?;
                Ok(Effect::When(cond, Box::new(eff)))
            }
            "increase" => {
                Self::arg_count(s, items, 2, "increase")?;
                let target_ok = items[1].head().as_deref() == Some(TOTAL_COST)
                    && items[1].as_list().is_some_and(|l| l.len() == 1);
                if !target_ok {
                    return Err(err(
                        items[1].span,
                        "only (total-cost) can be increased",
                        "write (increase (total-cost) <n>)",
                    ));
                }
                let amount = items[2]
                    .as_atom()
                    .and_then(|a| a.parse::<u64>().ok())
                    .ok_or_else(|| {
                        err(items[2].span, "cost increase must be a non-negative integer", "use a literal such as 1")
                    })?;
                Ok(Effect::IncreaseCost(amount))
            }
            "or" | "exists" | "imply" | "=" => Err(err(
                s.span,
                format!("'{head}' is not allowed in an effect"),
                "effects may only use and, not, forall, when and increase",
            )),
            _ => Ok(Effect::Add(self.atom(s, items, scope)?)),
        }
    }
}

fn check_name(name: &str, span: Span, what: &str) -> Result<(), ParseError> {
    if !is_valid_identifier(name) {
        return Err(err(
            span,
            format!("invalid {what} name '{name}'"),
            "use letters, digits, '_' and '-', starting with a letter",
        ));
    }
    if is_reserved(name) {
        return Err(err(span, format!("{what} name '{name}' is reserved"), "choose a different name"));
    }
    Ok(())
}

fn define_header<'a>(s: &'a Sexp, kind: &str) -> Result<(String, &'a [Sexp]), ParseError> {
    let items = expect_list(s, "definition")?;
    if s.head().as_deref() != Some("define") {
        return Err(err(s.span, "expected (define ...)", "wrap the definition in (define ...)"));
    }
    let header = items
        .get(1)
        .ok_or_else(|| err(s.span, format!("missing ({kind} <name>)"), format!("add ({kind} <name>) after define")))?;
    let h = expect_list(header, "header")?;
    if header.head().as_deref() != Some(kind) || h.len() != 2 {
        return Err(err(header.span, format!("expected ({kind} <name>)"), format!("write ({kind} <name>)")));
    }
    let name = lower(expect_atom(&h[1], "a name")?);
    Ok((name, &items[2..]))
}

fn section_body(s: &Sexp) -> Result<(String, &[Sexp]), ParseError> {
    let items = expect_list(s, "section")?;
    let head = s
        .head()
        .filter(|h| h.starts_with(':'))
        .ok_or_else(|| err(s.span, format!("expected a section such as (:types ...), found '{s}'"), "start each section with a keyword"))?;
    Ok((head, &items[1..]))
}

fn parse_types(items: &[Sexp]) -> Result<TypeHierarchy, ParseError> {
    let parsed = parse_typed_list(items)?;
    let mut seen = BTreeSet::new();
    for t in &parsed {
        check_name(&t.name, t.span, "type")
            .or_else(|e| if t.name == OBJECT { Ok(()) } else { Err(e) })?;
        if !seen.insert(t.name.clone()) && t.name != OBJECT {
            return Err(err(t.span, format!("type '{}' declared twice", t.name), "declare each type once"));
        }
    }
    TypeHierarchy::from_entries(parsed.iter().map(|t| {
        (
            t.name.clone(),
            t.ty.clone().unwrap_or_else(|| OBJECT.to_string()),
            t.comment.clone().unwrap_or_default(),
        )
    }))
    .map_err(|e| {
        let span = items.first().map(|s| s.span).unwrap_or_default();
        err(span, e.to_string(), "make every type have exactly one parent and no cycles")
    })
}

/// Parses one predicate declaration such as `(on ?x - block ?y - block)`.
pub fn parse_predicate_decl(s: &Sexp, hierarchy: &TypeHierarchy) -> Result<PredicateDecl, ParseError> {
    let items = expect_list(s, "predicate declaration")?;
    let name_sexp = items
        .first()
        .ok_or_else(|| err(s.span, "empty predicate declaration", "write (name ?arg - type ...)"))?;
    let name = lower(expect_atom(name_sexp, "a predicate name")?);
    check_name(&name, name_sexp.span, "predicate")?;
    let builder = Builder { hierarchy, predicates: &[], objects: None };
    let params = builder.typed_vars(&items[1..])?;
    let mut seen = BTreeSet::new();
    for p in &params {
        if !seen.insert(&p.name) {
            return Err(err(s.span, format!("variable '?{}' repeated in '{name}'", p.name), "give each parameter a distinct name"));
        }
    }
    Ok(PredicateDecl {
        name,
        params,
        description: normalize_description(s.comment.as_deref().unwrap_or("")),
    })
}

/// Parses an `(:action ...)` form against known types and predicates.
pub fn parse_action(
    s: &Sexp,
    hierarchy: &TypeHierarchy,
    predicates: &[PredicateDecl],
) -> Result<ActionSchema, ParseError> {
    let items = expect_list(s, "action")?;
    if s.head().as_deref() != Some(":action") {
        return Err(err(s.span, "expected (:action ...)", "start the action with :action"));
    }
    let name_sexp = items
        .get(1)
        .ok_or_else(|| err(s.span, "action without a name", "write (:action <name> ...)"))?;
    let name = lower(expect_atom(name_sexp, "an action name")?);
    check_name(&name, name_sexp.span, "action")?;
    let builder = Builder { hierarchy, predicates, objects: None };
    let mut params: Option<Vec<TypedVar>> = None;
    let mut pre: Option<&Sexp> = None;
    let mut eff: Option<&Sexp> = None;
    let mut i = 2;
    while i < items.len() {
        let key = &items[i];
        let Some(k) = key.as_atom().filter(|k| k.starts_with(':')).map(lower) else {
            return Err(err(key.span, format!("expected a keyword, found '{key}'"), "use :parameters, :precondition or :effect"));
        };
        let value = items
            .get(i + 1)
            .ok_or_else(|| err(key.span, format!("'{k}' has no value"), format!("add a value after '{k}'")))?;
        let slot_taken = match k.as_str() {
            ":parameters" => params.is_some(),
            ":precondition" => pre.is_some(),
            ":effect" => eff.is_some(),
            _ => {
                return Err(err(key.span, format!("unknown keyword '{k}'"), "use :parameters, :precondition or :effect"));
            }
        };
        if slot_taken {
            return Err(err(key.span, format!("'{k}' given twice"), format!("keep a single '{k}'")));
        }
        match k.as_str() {
            ":parameters" => params = Some(builder.typed_vars(expect_list(value, "parameter list")?)?),
            ":precondition" => pre = Some(value),
            _ => eff = Some(value),
        }
        i += 2;
    }
    let params = params.unwrap_or_default();
    let mut seen = BTreeSet::new();
    for p in &params {
        if !seen.insert(&p.name) {
            return Err(err(s.span, format!("parameter '?{}' repeated", p.name), "give each parameter a distinct name"));
        }
    }
    let mut scope = params.clone();
    let precondition = match pre {
        Some(p) => builder.formula(p, &mut scope)?,
        None => Formula::truth(),
    };
    let effect = match eff {
        Some(e) => builder.effect(e, &mut scope)?,
        None => return Err(err(s.span, format!("action '{name}' has no :effect"), "add an :effect section")),
    };
    Ok(ActionSchema {
        name,
        params,
        precondition,
        effect,
        description: normalize_description(name_sexp.comment.as_deref().unwrap_or("")),
    })
}

/// Parses a domain definition, checking every type, predicate and variable reference.
pub fn parse_domain(text: &str) -> Result<DomainSpec, ParseError> {
    let root = read_one(text)?;
    let (name, sections) = define_header(&root, "domain")?;
    let mut types: Option<&[Sexp]> = None;
    let mut preds: Option<&[Sexp]> = None;
    let mut actions: Vec<&Sexp> = Vec::new();
    for s in sections {
        let (head, body) = section_body(s)?;
        match head.as_str() {
            ":requirements" => {
                if let Some(bad) = body.iter().find(|r| !r.is_keyword()) {
                    return Err(err(bad.span, format!("'{bad}' is not a requirement keyword"), "requirements start with ':'"));
                }
            }
            ":types" | ":predicates" => {
                let slot = if head == ":types" { &mut types } else { &mut preds };
                if slot.is_some() {
                    return Err(err(s.span, format!("duplicate {head} section"), "merge the sections"));
                }
                *slot = Some(body);
            }
            ":functions" => {
                let ok = match body {
                    [] => true,
                    [f] => f.head().as_deref() == Some(TOTAL_COST),
                    [f, dash, num] => {
                        f.head().as_deref() == Some(TOTAL_COST)
                            && dash.as_atom() == Some("-")
                            && num.as_atom().map(lower).as_deref() == Some("number")
                    }
                    _ => false,
                };
                if !ok {
                    return Err(err(s.span, "only the (total-cost) function is supported", "declare (:functions (total-cost) - number)"));
                }
            }
            ":action" => actions.push(s),
            ":constants" => {
                return Err(err(s.span, "the :constants section is not supported", "declare objects in the problem instead"))
            }
            _ => return Err(err(s.span, format!("unknown section keyword '{head}'"), "use :requirements, :types, :predicates, :functions or :action")),
        }
    }
    let hierarchy = match types {
        Some(t) => parse_types(t)?,
        None => TypeHierarchy::new(),
    };
    let mut predicates: Vec<PredicateDecl> = Vec::new();
    for p in preds.unwrap_or(&[]) {
        let decl = parse_predicate_decl(p, &hierarchy)?;
        if predicates.iter().any(|q| q.name == decl.name) {
            return Err(err(p.span, format!("predicate '{}' declared twice", decl.name), "declare each predicate once"));
        }
        if hierarchy.contains(&decl.name) {
            return Err(err(p.span, format!("predicate '{}' has the same name as a type", decl.name), "rename the predicate"));
        }
        predicates.push(decl);
    }
    let mut parsed_actions: Vec<ActionSchema> = Vec::new();
    for a in actions {
        let action = parse_action(a, &hierarchy, &predicates)?;
        if parsed_actions.iter().any(|b| b.name == action.name) {
            return Err(err(a.span, format!("action '{}' defined twice", action.name), "rename or remove one of them"));
        }
        if predicates.iter().any(|p| p.name == action.name) {
            return Err(err(a.span, format!("action '{}' has the same name as a predicate", action.name), "rename the action"));
        }
        parsed_actions.push(action);
    }
    Ok(DomainSpec { name, hierarchy, predicates, actions: parsed_actions })
}

/// Parses `(:objects ...)` contents into declarations checked against the domain.
pub fn parse_objects(items: &[Sexp], domain: &DomainSpec) -> Result<Vec<ObjectDecl>, ParseError> {
    let mut objects: Vec<ObjectDecl> = Vec::new();
    for o in parse_typed_list(items)? {
        check_name(&o.name, o.span, "object")?;
        let ty = o.ty.unwrap_or_else(|| OBJECT.to_string());
        if !domain.hierarchy.contains(&ty) {
            return Err(err(o.span, format!("object '{}' has undeclared type '{ty}'", o.name), format!("use a type from the domain instead of '{ty}'")));
        }
        if domain.hierarchy.contains(&o.name) {
            return Err(err(o.span, format!("object '{}' has the same name as a type", o.name), "rename the object"));
        }
        if objects.iter().any(|p| p.name == o.name) {
            return Err(err(o.span, format!("object '{}' declared twice", o.name), "declare each object once"));
        }
        objects.push(ObjectDecl { name: o.name, ty });
    }
    Ok(objects)
}

fn check_ground_types(
    s: &Sexp,
    decl: &PredicateDecl,
    args: &[String],
    objects: &[ObjectDecl],
    hierarchy: &TypeHierarchy,
) -> Result<(), ParseError> {
    for (arg, param) in args.iter().zip(&decl.params) {
        let ty = objects.iter().find(|o| &o.name == arg).map(|o| o.ty.as_str()).unwrap_or(OBJECT);
        if !hierarchy.is_subtype(ty, &param.ty).unwrap_or(false) {
            return Err(err(
                s.span,
                format!("object '{arg}' of type '{ty}' does not fit parameter '?{}' of type '{}' in '{}'", param.name, param.ty, decl.name),
                format!("pass an object of type '{}'", param.ty),
            ));
        }
    }
    Ok(())
}

/// Parses one init entry: a ground atom or `(= (total-cost) n)`.
pub fn parse_init_entry(
    s: &Sexp,
    domain: &DomainSpec,
    objects: &[ObjectDecl],
) -> Result<InitEntry, ParseError> {
    let items = expect_list(s, "init atom")?;
    let head = s
        .head()
        .ok_or_else(|| err(s.span, "empty init entry", "write a ground atom such as (clear b1)"))?;
    match head.as_str() {
        "=" => {
            let ok = items.len() == 3 && items[1].head().as_deref() == Some(TOTAL_COST);
            let value = items.get(2).and_then(Sexp::as_atom).and_then(|v| v.parse::<u64>().ok());
            match (ok, value) {
                (true, Some(v)) => Ok(InitEntry::Cost(v)),
                _ => Err(err(s.span, "only (= (total-cost) <n>) is supported in :init", "write (= (total-cost) 0)")),
            }
        }
        "not" => Err(err(s.span, "negated atoms are not allowed in :init", "leave false atoms out of :init")),
        "and" | "or" | "forall" | "exists" | "imply" | "when" => {
            Err(err(s.span, format!("'{head}' is not allowed in :init"), "list ground atoms only"))
        }
        _ => {
            let builder = Builder { hierarchy: &domain.hierarchy, predicates: &domain.predicates, objects: Some(objects) };
            let atom = builder.atom(s, items, &[])?;
            let args = atom
                .args
                .into_iter()
                .map(|t| match t {
                    Term::Object(o) => o,
                    Term::Var(v) => v,
                })
                .collect::<Vec<_>>();
            let decl = domain.predicate(&atom.predicate).expect("checked by builder");
            check_ground_types(s, decl, &args, objects, &domain.hierarchy)?;
            Ok(InitEntry::Atom(GroundAtom { predicate: atom.predicate, args }))
        }
    }
}

pub enum InitEntry {
    Atom(GroundAtom),
    Cost(u64),
}

/// Parses a goal formula whose terms refer to `objects`.
pub fn parse_goal(s: &Sexp, domain: &DomainSpec, objects: &[ObjectDecl]) -> Result<Formula, ParseError> {
    let builder = Builder { hierarchy: &domain.hierarchy, predicates: &domain.predicates, objects: Some(objects) };
    let goal = builder.formula(s, &mut Vec::new())?;
    let mut bad: Option<String> = None;
    goal.for_each_atom(&mut |a| {
        if bad.is_some() {
            return;
        }
        let decl = domain.predicate(&a.predicate).expect("checked by builder");
        for (arg, param) in a.args.iter().zip(&decl.params) {
            if let Term::Object(o) = arg {
                let ty = objects.iter().find(|x| &x.name == o).map(|x| x.ty.as_str()).unwrap_or(OBJECT);
                if !domain.hierarchy.is_subtype(ty, &param.ty).unwrap_or(false) {
                    bad = Some(format!("object '{o}' of type '{ty}' does not fit '{}' argument of type '{}'", a.predicate, param.ty));
                }
            }
        }
    });
    match bad {
        Some(m) => Err(err(s.span, m, "use objects of the declared parameter types")),
        None => Ok(goal),
    }
}

/// Parses a problem definition against a parsed domain.
pub fn parse_problem(text: &str, domain: &DomainSpec) -> Result<ProblemSpec, ParseError> {
    let root = read_one(text)?;
    let (name, sections) = define_header(&root, "problem")?;
    let mut domain_name: Option<String> = None;
    let mut objects_s: Option<&[Sexp]> = None;
    let mut init_s: Option<&[Sexp]> = None;
    let mut goal_s: Option<&Sexp> = None;
    for s in sections {
        let (head, body) = section_body(s)?;
        match head.as_str() {
            ":domain" => {
                let [d] = body else {
                    return Err(err(s.span, "expected (:domain <name>)", "write (:domain <name>)"));
                };
                domain_name = Some(lower(expect_atom(d, "a domain name")?));
            }
            ":objects" => objects_s = Some(body),
            ":init" => init_s = Some(body),
            ":goal" => {
                let [g] = body else {
                    return Err(err(s.span, "expected exactly one goal formula", "combine goals with (and ...)"));
                };
                goal_s = Some(g);
            }
            ":metric" => {
                let ok = body.len() == 2
                    && body[0].as_atom().map(lower).as_deref() == Some("minimize")
                    && body[1].head().as_deref() == Some(TOTAL_COST);
                if !ok {
                    return Err(err(s.span, "only (:metric minimize (total-cost)) is supported", "write (:metric minimize (total-cost))"));
                }
            }
            _ => return Err(err(s.span, format!("unknown section keyword '{head}'"), "use :domain, :objects, :init, :goal or :metric")),
        }
    }
    let domain_name = domain_name.ok_or_else(|| err(root.span, "missing (:domain ...)", "add (:domain <name>)"))?;
    if domain_name != domain.name {
        return Err(err(
            root.span,
            format!("problem is for domain '{domain_name}' but the domain is '{}'", domain.name),
            format!("write (:domain {})", domain.name),
        ));
    }
    let objects = parse_objects(objects_s.unwrap_or(&[]), domain)?;
    let mut init: Vec<GroundAtom> = Vec::new();
    let mut initial_cost = None;
    for s in init_s.unwrap_or(&[]) {
        match parse_init_entry(s, domain, &objects)? {
            InitEntry::Atom(a) => {
                if !init.contains(&a) {
                    init.push(a);
                }
            }
            InitEntry::Cost(c) => initial_cost = Some(c),
        }
    }
    let goal_s = goal_s.ok_or_else(|| err(root.span, "missing (:goal ...)", "add a (:goal ...) section"))?;
    let goal = parse_goal(goal_s, domain, &objects)?;
    Ok(ProblemSpec { name, domain: domain_name, objects, init, initial_cost, goal })
}
