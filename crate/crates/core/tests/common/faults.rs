//! One fault per validator category on a small transport action; fault `i`
//! belongs to the `i`-th category of the action check order.

use nl2plan::pddl::parse_domain;
use nl2plan::validator::{validate_action, ActionDraft, Category};

pub const CONTEXT: &str = "(define (domain t) (:types package truck location)
  (:predicates (at ?o - object ?l - location) (loaded ?p - package ?t - truck)))";

pub fn mutated(faults: &[bool; 8]) -> String {
    let name = if faults[7] { "exists" } else { "load" };
    let l_type = if faults[1] { "place" } else { "location" };
    let cost = if faults[0] { ":cost 1" } else { "" };
    let mut pre = vec!["(at ?p ?l)", "(at ?t ?l)"];
    if faults[2] {
        pre.push("(fueled ?t)");
    }
    if faults[3] {
        pre.push("(loaded ?p)");
    }
    if faults[4] {
        pre.push("(at ?p ?dest)");
    }
    let mut eff = vec!["(loaded ?p ?t)", "(not (at ?p ?l))"];
    if faults[6] {
        eff.push("(or (at ?p ?l) (loaded ?p ?t))");
    }
    let decls = if faults[5] { "(:predicates (at ?o - object))" } else { "" };
    format!(
        "(:action {name} :parameters (?p - package ?t - truck ?l - {l_type}) {cost}
           :precondition (and {}) :effect (and {}))
         {decls}",
        pre.join(" "),
        eff.join(" ")
    )
}

pub fn category_of(faults: &[bool; 8]) -> Category {
    let domain = parse_domain(CONTEXT).unwrap();
    validate_action(&ActionDraft::parse(&mutated(faults)).unwrap(), &domain).checked_category
}

