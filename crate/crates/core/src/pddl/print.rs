use std::fmt::Write;

use super::model::*;

const INDENT: &str = "  ";

fn pad(depth: usize) -> String {
    INDENT.repeat(depth)
}

fn comment_suffix(description: &str) -> String {
    let d = normalize_description(description);
    if d.is_empty() {
        String::new()
    } else {
        format!(" ; {d}")
    }
}

fn typed_vars(vars: &[TypedVar]) -> String {
    vars.iter()
        .map(|v| format!("?{} - {}", v.name, v.ty))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Formulas short enough to stay on one line: atoms, equalities, negated atoms.
fn inline_formula(f: &Formula) -> Option<String> {
    match f {
        Formula::Atom(a) => Some(a.to_string()),
        Formula::Equality(a, b) => Some(format!("(= {a} {b})")),
        Formula::Not(inner) => inline_formula(inner)
            .filter(|_| matches!(**inner, Formula::Atom(_) | Formula::Equality(..)))
            .map(|s| format!("(not {s})")),
        Formula::And(items) if items.is_empty() => Some("(and)".into()),
        Formula::Or(items) if items.is_empty() => Some("(or)".into()),
        _ => None,
    }
}

pub fn write_formula(out: &mut String, f: &Formula, depth: usize) {
    if let Some(s) = inline_formula(f) {
        out.push_str(&s);
        return;
    }
    let (head, children): (String, Vec<&Formula>) = match f {
        Formula::And(items) => ("and".into(), items.iter().collect()),
        Formula::Or(items) => ("or".into(), items.iter().collect()),
        Formula::Not(inner) => ("not".into(), vec![inner]),
        Formula::Imply(a, b) => ("imply".into(), vec![a, b]),
        Formula::Forall(vars, body) => (format!("forall ({})", typed_vars(vars)), vec![body]),
        Formula::Exists(vars, body) => (format!("exists ({})", typed_vars(vars)), vec![body]),
        Formula::Atom(_) | Formula::Equality(..) => unreachable!("handled inline"),
    };
    let _ = write!(out, "({head}");
    for c in children {
        out.push('\n');
        out.push_str(&pad(depth + 1));
        write_formula(out, c, depth + 1);
    }
    out.push('\n');
    out.push_str(&pad(depth));
    out.push(')');
}

fn inline_effect(e: &Effect) -> Option<String> {
    match e {
        Effect::Add(a) => Some(a.to_string()),
        Effect::Delete(a) => Some(format!("(not {a})")),
        Effect::IncreaseCost(n) => Some(format!("(increase (total-cost) {n})")),
        Effect::And(items) if items.is_empty() => Some("(and)".into()),
        _ => None,
    }
}

pub fn write_effect(out: &mut String, e: &Effect, depth: usize) {
    if let Some(s) = inline_effect(e) {
        out.push_str(&s);
        return;
    }
    match e {
        Effect::And(items) => {
            out.push_str("(and");
            for c in items {
                out.push('\n');
                out.push_str(&pad(depth + 1));
                write_effect(out, c, depth + 1);
            }
        }
        Effect::Forall(vars, body) => {
            let _ = write!(out, "(forall ({})\n{}", typed_vars(vars), pad(depth + 1));
            write_effect(out, body, depth + 1);
        }
        Effect::When(cond, body) => {
            let _ = write!(out, "(when\n{}", pad(depth + 1));
            write_formula(out, cond, depth + 1);
            out.push('\n');
            out.push_str(&pad(depth + 1));
            write_effect(out, body, depth + 1);
        }
        _ => unreachable!("handled inline"),
    }
    out.push('\n');
    out.push_str(&pad(depth));
    out.push(')');
}

pub fn formula_to_string(f: &Formula) -> String {
    let mut s = String::new();
    write_formula(&mut s, f, 0);
    s
}

pub fn effect_to_string(e: &Effect) -> String {
    let mut s = String::new();
    write_effect(&mut s, e, 0);
    s
}

pub fn print_predicate(p: &PredicateDecl) -> String {
    let mut s = format!("({}", p.name);
    if !p.params.is_empty() {
        s.push(' ');
        s.push_str(&typed_vars(&p.params));
    }
    s.push(')');
    s.push_str(&comment_suffix(&p.description));
    s
}

pub fn print_types(h: &TypeHierarchy, depth: usize) -> String {
    let mut out = String::new();
    for (name, entry) in h.entries() {
        let _ = writeln!(
            out,
            "{}{name} - {}{}",
            pad(depth),
            entry.parent,
            comment_suffix(&entry.description)
        );
    }
    out
}

/// Prints one action at the given indentation depth.
pub fn print_action(a: &ActionSchema, depth: usize) -> String {
    let mut out = String::new();
    let d = pad(depth);
    let d1 = pad(depth + 1);
    let _ = writeln!(out, "{d}(:action {}{}", a.name, comment_suffix(&a.description));
    let _ = writeln!(out, "{d1}:parameters ({})", typed_vars(&a.params));
    let _ = write!(out, "{d1}:precondition ");
    write_formula(&mut out, &a.precondition, depth + 1);
    out.push('\n');
    let _ = write!(out, "{d1}:effect ");
    write_effect(&mut out, &a.effect, depth + 1);
    out.push('\n');
    let _ = writeln!(out, "{d})");
    out
}

/// Canonical domain text. Empty `:types` and `:predicates` sections are omitted.
pub fn print_domain(d: &DomainSpec) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "(define (domain {})", d.name);
    let _ = writeln!(out, "{INDENT}(:requirements {})", REQUIREMENTS.join(" "));
    if !d.hierarchy.is_empty() {
        let _ = writeln!(out, "{INDENT}(:types");
        out.push_str(&print_types(&d.hierarchy, 2));
        let _ = writeln!(out, "{INDENT})");
    }
    if !d.predicates.is_empty() {
        let _ = writeln!(out, "{INDENT}(:predicates");
        for p in &d.predicates {
            let _ = writeln!(out, "{INDENT}{INDENT}{}", print_predicate(p));
        }
        let _ = writeln!(out, "{INDENT})");
    }
    if d.uses_action_costs() {
        let _ = writeln!(out, "{INDENT}(:functions (total-cost) - number)");
    }
    for a in &d.actions {
        out.push('\n');
        out.push_str(&print_action(a, 1));
    }
    out.push_str(")\n");
    out
}

pub fn print_objects(objects: &[ObjectDecl], depth: usize) -> String {
    let mut out = String::new();
    for o in objects {
        let _ = writeln!(out, "{}{} - {}", pad(depth), o.name, o.ty);
    }
    out
}

/// Canonical problem text.
pub fn print_problem(p: &ProblemSpec) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "(define (problem {})", p.name);
    let _ = writeln!(out, "{INDENT}(:domain {})", p.domain);
    if p.objects.is_empty() {
        let _ = writeln!(out, "{INDENT}(:objects)");
    } else {
        let _ = writeln!(out, "{INDENT}(:objects");
        out.push_str(&print_objects(&p.objects, 2));
        let _ = writeln!(out, "{INDENT})");
    }
    if p.init.is_empty() && p.initial_cost.is_none() {
        let _ = writeln!(out, "{INDENT}(:init)");
    } else {
        let _ = writeln!(out, "{INDENT}(:init");
        for a in &p.init {
            let _ = writeln!(out, "{INDENT}{INDENT}{a}");
        }
        if let Some(c) = p.initial_cost {
            let _ = writeln!(out, "{INDENT}{INDENT}(= (total-cost) {c})");
        }
        let _ = writeln!(out, "{INDENT})");
    }
    let _ = write!(out, "{INDENT}(:goal ");
    write_formula(&mut out, &p.goal, 1);
    out.push_str(")\n");
    if p.initial_cost.is_some() {
        let _ = writeln!(out, "{INDENT}(:metric minimize (total-cost))");
    }
    out.push_str(")\n");
    out
}
