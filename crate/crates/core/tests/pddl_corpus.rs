mod common;

use std::time::Instant;

use nl2plan::pddl::{
    parse_domain, parse_problem, print_domain, print_problem, Atom, DomainSpec, Effect, Formula, PredicateDecl, Term,
    TypeHierarchy, TypedVar, ActionSchema,
};
use proptest::prelude::*;

#[test]
fn corpus_round_trips() {
    let start = Instant::now();
    let mut files = 0;
    for (dname, probs) in common::corpus() {
        let text = common::read_fixture(&format!("pddl/{dname}"));
        let d = parse_domain(&text).unwrap_or_else(|e| panic!("{dname}: {e}"));
        let printed = print_domain(&d);
        let again = parse_domain(&printed).unwrap_or_else(|e| panic!("{dname} reprint: {e}\n{printed}"));
        assert_eq!(again, d, "{dname}");
        assert_eq!(print_domain(&again), printed, "{dname}: printing is not a fixpoint");
        files += 1;
        for pname in probs {
            let text = common::read_fixture(&format!("pddl/{pname}"));
            let p = parse_problem(&text, &d).unwrap_or_else(|e| panic!("{pname}: {e}"));
            let printed = print_problem(&p);
            let again = parse_problem(&printed, &d).unwrap_or_else(|e| panic!("{pname} reprint: {e}\n{printed}"));
            assert_eq!(again, p, "{pname}");
            assert_eq!(print_problem(&again), printed, "{pname}");
            files += 1;
        }
    }
    assert!(files >= 10, "corpus has only {files} files");
    assert!(start.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn blocksworld_hand_count() {
    let d = parse_domain(&common::read_fixture("pddl/blocksworld.domain.pddl")).unwrap();
    assert_eq!(d.actions.len(), 4);
    assert_eq!(d.predicates.len(), 5);
    assert_eq!(d.hierarchy.len(), 1);
    assert_eq!(print_domain(&d), print_domain(&d));
}

#[test]
fn isr_parses() {
    let d = parse_domain(&common::read_fixture("pddl/isr.domain.pddl")).unwrap();
    assert_eq!(d.actions.len(), 2);
    assert_eq!(d.predicates.len(), 2);
}

#[test]
fn three_blocks_on_table() {
    let d = parse_domain(&common::read_fixture("pddl/blocksworld.domain.pddl")).unwrap();
    let p = parse_problem(
        "(define (problem t) (:domain blocksworld) (:objects a b c - block)
          (:init (on_table a) (on_table b) (on_table c)) (:goal (and)))",
        &d,
    )
    .unwrap();
    assert_eq!(p.objects.len(), 3);
    assert_eq!(p.init.len(), 3);
}

#[test]
fn logistics_goal_is_conjunction() {
    let d = parse_domain(
        "(define (domain lg) (:types package location)
          (:predicates (at ?p - package ?l - location)))",
    )
    .unwrap();
    let p = parse_problem(
        "(define (problem g) (:domain lg) (:objects p1 p2 - package loc1 loc2 - location)
          (:init) (:goal (and (at p1 loc1) (at p2 loc2))))",
        &d,
    )
    .unwrap();
    let at = |a: &str, b: &str| Formula::Atom(Atom::new("at", vec![Term::Object(a.into()), Term::Object(b.into())]));
    assert_eq!(p.goal, Formula::And(vec![at("p1", "loc1"), at("p2", "loc2")]));
}

// Random well-formed actions over a fixed signature survive print and parse.

const TYPES: &[&str] = &["thing", "box", "crate"];

fn hierarchy() -> TypeHierarchy {
    TypeHierarchy::from_entries(vec![
        ("thing", "object", "anything"),
        ("box", "thing", ""),
        ("crate", "box", "a wooden box"),
    ])
    .unwrap()
}

fn preds() -> Vec<PredicateDecl> {
    vec![
        PredicateDecl { name: "flag".into(), params: vec![], description: "".into() },
        PredicateDecl { name: "has".into(), params: vec![TypedVar::new("x", "object")], description: "x is held".into() },
        PredicateDecl {
            name: "rel".into(),
            params: vec![TypedVar::new("a", "object"), TypedVar::new("b", "object")],
            description: "".into(),
        },
    ]
}

fn atom_over(vars: Vec<String>) -> impl Strategy<Value = Atom> {
    let v = vars.clone();
    let term = proptest::sample::select(v).prop_map(Term::Var);
    prop_oneof![
        Just(Atom::new("flag", vec![])),
        term.clone().prop_map(|t| Atom::new("has", vec![t])),
        (term.clone(), term).prop_map(|(a, b)| Atom::new("rel", vec![a, b])),
    ]
}

fn formula(vars: Vec<String>, depth: u32) -> BoxedStrategy<Formula> {
    let leaf = prop_oneof![
        atom_over(vars.clone()).prop_map(Formula::Atom),
        atom_over(vars.clone()).prop_map(|a| Formula::Not(Box::new(Formula::Atom(a)))),
        (proptest::sample::select(vars.clone()), proptest::sample::select(vars.clone()))
            .prop_map(|(a, b)| Formula::Equality(Term::Var(a), Term::Var(b))),
    ];
    if depth == 0 {
        return leaf.boxed();
    }
    let inner_vars = {
        let mut v = vars.clone();
        v.push(format!("q{depth}"));
        v
    };
    prop_oneof![
        2 => leaf,
        1 => proptest::collection::vec(formula(vars.clone(), depth - 1), 0..3).prop_map(Formula::And),
        1 => proptest::collection::vec(formula(vars.clone(), depth - 1), 1..3).prop_map(Formula::Or),
        1 => (formula(vars.clone(), depth - 1), formula(vars.clone(), depth - 1))
            .prop_map(|(a, b)| Formula::Imply(Box::new(a), Box::new(b))),
        1 => (proptest::sample::select(TYPES), formula(inner_vars.clone(), depth - 1), any::<bool>()).prop_map(
            move |(t, body, all)| {
                let vs = vec![TypedVar::new(format!("q{depth}"), t)];
                if all { Formula::Forall(vs, Box::new(body)) } else { Formula::Exists(vs, Box::new(body)) }
            }
        ),
    ]
    .boxed()
}

fn effect(vars: Vec<String>, depth: u32) -> BoxedStrategy<Effect> {
    let leaf = prop_oneof![
        atom_over(vars.clone()).prop_map(Effect::Add),
        atom_over(vars.clone()).prop_map(Effect::Delete),
        (0u64..20).prop_map(Effect::IncreaseCost),
    ];
    if depth == 0 {
        return leaf.boxed();
    }
    let inner_vars = {
        let mut v = vars.clone();
        v.push(format!("e{depth}"));
        v
    };
    prop_oneof![
        2 => leaf.clone(),
        1 => proptest::collection::vec(effect(vars.clone(), depth - 1), 0..3).prop_map(Effect::And),
        1 => (proptest::sample::select(TYPES), effect(inner_vars, depth - 1)).prop_map(move |(t, body)| {
            Effect::Forall(vec![TypedVar::new(format!("e{depth}"), t)], Box::new(body))
        }),
        1 => (formula(vars.clone(), 1), leaf).prop_map(|(c, e)| Effect::When(c, Box::new(e))),
    ]
    .boxed()
}

fn domain() -> impl Strategy<Value = DomainSpec> {
    let vars = vec!["p".to_string(), "r".to_string()];
    (formula(vars.clone(), 3), effect(vars, 3), "[a-z]{0,3}( [a-z]{1,4}){0,3}").prop_map(|(pre, eff, desc)| {
        let mut d = DomainSpec::new("gen");
        d.hierarchy = hierarchy();
        d.predicates = preds();
        d.actions.push(ActionSchema {
            name: "act".into(),
            params: vec![TypedVar::new("p", "box"), TypedVar::new("r", "thing")],
            precondition: pre,
            effect: eff,
            description: desc.trim().to_string(),
        });
        d
    })
}

/// The printer flattens nothing, but empty conjunction bodies and single
/// children are kept as written, so generated values compare directly.
fn normalized(d: &DomainSpec) -> DomainSpec {
    parse_domain(&print_domain(d)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn generated_domains_round_trip(d in domain()) {
        let text = print_domain(&d);
        let parsed = parse_domain(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(&parsed, &d, "{}", text);
        prop_assert_eq!(print_domain(&normalized(&d)), text);
    }
}
