//! One line per acceptance criterion. Everything runs offline: model answers
//! come from the shipped transcripts, runs go through the `nl2plan` binary.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::{corpus, fixture, load, read_fixture, Oracle};
use nl2plan::pddl::sexp::read_all;
use nl2plan::pddl::{parse_domain, parse_problem, print_action, print_domain, print_problem, DomainSpec, Plan, ProblemSpec};
use nl2plan::pipeline::{check_budgets, CallPurpose, RunConfig, StepId, StepRecord};
use nl2plan::planner::{plan, validate_plan, Outcome, PlannerConfig, SearchKind, Verdict};
use nl2plan::validator::{validate_action, validate_task, ActionDraft, Category, IssueCode, TaskDraft};
use nl2plan_service::cli::{CRASH_ENV, CRASH_EXIT};
use proptest::strategy::{Strategy, ValueTree};
use proptest::test_runner::TestRunner;
use serde_json::Value;

fn nl2plan(out: &Path, args: &[&str]) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_nl2plan"));
    c.current_dir(fixture("")).arg("--out").arg(out).args(args).env_remove(CRASH_ENV);
    c
}

fn ok(mut c: Command) -> String {
    let o = c.output().unwrap();
    assert!(o.status.success(), "{:?}\n{}", o.status, String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn replay_args(dir: &str) -> Vec<String> {
    let t = fixture("transcripts").join(dir);
    ["--provider", "replay", "--transcripts", t.to_str().unwrap(), "--feedback", "llm"].map(String::from).to_vec()
}

fn run_easy(out: &Path, env: Option<(&str, String)>) -> std::process::Output {
    let mut c = nl2plan(out, &["run", "--input", "tasks/blocksworld_easy.txt"]);
    c.args(replay_args("blocksworld"));
    if let Some((k, v)) = env {
        c.env(k, v);
    }
    c.output().unwrap()
}

fn run_id(stdout: &str) -> String {
    stdout.lines().next().unwrap().split_whitespace().nth(1).unwrap().to_string()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))).unwrap()
}

/// Step records, PDDL and plan of a run, byte for byte.
fn step_artifacts(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        let n = p.file_name().unwrap().to_string_lossy().into_owned();
        if n.starts_with("step_") || n.ends_with(".pddl") || n == "plan.txt" || n == "NO_PLAN" {
            out.insert(n, std::fs::read(&p).unwrap());
        }
    }
    out
}

fn outcome(dir: &Path) -> (DomainSpec, ProblemSpec, Plan) {
    let d = parse_domain(&std::fs::read_to_string(dir.join("domain.pddl")).unwrap()).unwrap();
    let p = parse_problem(&std::fs::read_to_string(dir.join("problem.pddl")).unwrap(), &d).unwrap();
    let pl = Plan::from_plan_file(&std::fs::read_to_string(dir.join("plan.txt")).unwrap()).unwrap();
    (d, p, pl)
}

/// The plan reaches the goal on the independent state model.
fn oracle_accepts(d: &DomainSpec, p: &ProblemSpec, pl: &Plan) -> u64 {
    let o = Oracle::new(d, p);
    let (mut s, mut cost) = (o.init(), 0);
    for step in &pl.steps {
        let (next, c) = o.apply(&s, step).unwrap_or_else(|| panic!("{step:?} not applicable"));
        s = next;
        cost += c;
    }
    assert!(o.goal(&s), "plan misses the goal");
    cost
}

// 1

fn parser_round_trip() -> String {
    let start = Instant::now();
    let mut files = 0;
    let mut seen = BTreeSet::new();
    for (dname, probs) in corpus() {
        let text = read_fixture(&format!("pddl/{dname}"));
        let d = parse_domain(&text).unwrap_or_else(|e| panic!("{dname}: {e}"));
        assert_eq!(parse_domain(&print_domain(&d)).unwrap(), d, "{dname}");
        seen.insert(dname.trim_end_matches(".domain.pddl").to_string());
        files += 1;
        for pname in probs {
            let p = parse_problem(&read_fixture(&format!("pddl/{pname}")), &d).unwrap_or_else(|e| panic!("{pname}: {e}"));
            assert_eq!(parse_problem(&print_problem(&p), &d).unwrap(), p, "{pname}");
            files += 1;
        }
    }
    let t = start.elapsed();
    assert!(files >= 10, "{files} files");
    assert!(seen.contains("blocksworld") && seen.contains("isr"));
    assert!(t < Duration::from_secs(5), "{t:?}");
    format!("{files} files in {} ms", t.as_millis())
}

// 2

#[derive(serde::Deserialize)]
struct Mutations {
    base_action: String,
    base_task: String,
    case: Vec<Case>,
}

#[derive(serde::Deserialize)]
struct Case {
    code: String,
    kind: String,
    draft: String,
}

fn validator_mutations() -> String {
    let m: Mutations = toml::from_str(&read_fixture("validator/mutations.toml")).unwrap();
    let logistics = parse_domain(&read_fixture("pddl/logistics.domain.pddl")).unwrap();
    let codes = |kind: &str, text: &str| -> Vec<IssueCode> {
        let r = match kind {
            "action" => validate_action(&ActionDraft::parse(text).unwrap(), &logistics),
            _ => validate_task(&TaskDraft::parse(text).unwrap(), &logistics),
        };
        r.issues.iter().map(|i| i.code).collect()
    };
    let mut covered = BTreeSet::new();
    for c in &m.case {
        let got = codes(&c.kind, &c.draft);
        assert!(!got.is_empty() && got.iter().all(|g| g.as_str() == c.code), "{}: {got:?}", c.code);
        covered.insert(c.code.as_str());
    }
    assert_eq!(covered.len(), IssueCode::ALL.len(), "codes without a single-fault case");
    assert!(codes("action", &m.base_action).is_empty() && codes("task", &m.base_task).is_empty());

    let mut valid = 0;
    for (dname, probs) in corpus() {
        let text = read_fixture(&format!("pddl/{dname}"));
        let domain = parse_domain(&text).unwrap();
        let root = read_all(&text).unwrap().remove(0);
        for a in root.as_list().unwrap().iter().filter(|s| s.head().as_deref() == Some(":action")) {
            let name = a.as_list().unwrap()[1].to_string();
            let mut context = domain.clone();
            context.actions.retain(|x| x.name != name);
            let r = validate_action(&ActionDraft { action: a.clone(), predicates: vec![] }, &context);
            assert!(r.issues.is_empty(), "{dname} {name}: {:?}", r.issues);
            valid += 1;
        }
        for pname in probs {
            let r = validate_task(&TaskDraft::parse(&read_fixture(&format!("pddl/{pname}"))).unwrap(), &domain);
            assert!(r.issues.is_empty(), "{pname}: {:?}", r.issues);
            valid += 1;
        }
    }

    let mut runner = TestRunner::deterministic();
    let pairs = (0..8usize, 0..8usize).prop_filter("two faults", |(i, j)| i != j);
    for _ in 0..50 {
        let (i, j) = pairs.new_tree(&mut runner).unwrap().current();
        let mut f = [false; 8];
        f[i] = true;
        f[j] = true;
        assert_eq!(common::faults::category_of(&f), Category::ACTION_ORDER[i.min(j)], "faults {i},{j}");
    }
    format!("{} single faults, {valid} valid fixtures, 50 double faults", m.case.len())
}

// 3

fn planner() -> String {
    let mut report = vec![];
    for (name, min) in [("easy", 4), ("medium", 8), ("hard", 12)] {
        let (d, p) = load("blocksworld", name);
        let start = Instant::now();
        let r = plan(&d, &p, &PlannerConfig::default());
        let t = start.elapsed();
        let pl = r.outcome.plan().unwrap_or_else(|| panic!("{name}: {:?}", r.outcome));
        assert!(t < Duration::from_secs(10), "{name}: {t:?}");
        assert!(pl.len() >= min, "{name}: {} steps", pl.len());
        assert!(validate_plan(&d, &p, pl).is_valid());
        oracle_accepts(&d, &p, pl);
        report.push(format!("{name} {}", pl.len()));
    }
    let bfs = PlannerConfig { search: SearchKind::Bfs, ..PlannerConfig::default() };
    let mut optimal = 0;
    for (dname, probs) in corpus() {
        let stem = dname.trim_end_matches(".domain.pddl");
        for pname in probs {
            let (d, p) = load(stem, pname.trim_start_matches(&format!("{stem}.")).trim_end_matches(".problem.pddl"));
            let Ok(best) = Oracle::new(&d, &p).optimal_cost(100_000) else { continue };
            assert_eq!(plan(&d, &p, &bfs).outcome.plan().map(|x| x.cost), best, "{pname}");
            optimal += 1;
        }
    }
    assert!(optimal >= 8, "only {optimal} instances");

    let (d, p) = load("blocksworld", "contradictory");
    let start = Instant::now();
    assert_eq!(plan(&d, &p, &PlannerConfig::default()).outcome, Outcome::Unsolvable);
    let t = start.elapsed();
    assert!(t < Duration::from_secs(5));
    let tmp = tempfile::tempdir().unwrap();
    let stdout = ok(nl2plan(
        tmp.path(),
        &[
            "run",
            "--input",
            "tasks/blocksworld_easy.txt",
            "--start-step",
            "planning",
            "--domain",
            "pddl/blocksworld.domain.pddl",
            "--problem",
            "pddl/blocksworld.contradictory.problem.pddl",
        ],
    ));
    assert!(stdout.contains("No plan found"), "{stdout}");
    format!("lengths {}, {optimal} optimal, unsolvable in {} ms", report.join("/"), t.as_millis())
}

// 4

fn replay_end_to_end() -> String {
    let tmp = tempfile::tempdir().unwrap();
    let a = ok({
        let mut c = nl2plan(tmp.path(), &["run", "--input", "tasks/blocksworld_easy.txt"]);
        c.args(replay_args("blocksworld"));
        c
    });
    let id = run_id(&a);
    let dir = tmp.path().join(&id);
    let m = read_json(&dir.join("manifest.json"));
    assert_eq!(m["status"], "done");
    let (d, p, pl) = outcome(&dir);
    assert!(matches!(validate_plan(&d, &p, &pl), Verdict::Valid { .. }));
    oracle_accepts(&d, &p, &pl);

    let b = run_id(&ok({
        let mut c = nl2plan(tmp.path(), &["run", "--input", "tasks/blocksworld_easy.txt"]);
        c.args(replay_args("blocksworld"));
        c
    }));
    assert_ne!(id, b);
    assert_eq!(step_artifacts(&dir), step_artifacts(&tmp.path().join(&b)));

    let config: RunConfig = serde_json::from_value(m["config"].clone()).unwrap();
    let mut actions = 0;
    for n in 1..=6u8 {
        let rec: StepRecord = serde_json::from_value(read_json(&dir.join(format!("step_{n}.json")))).unwrap();
        check_budgets(&rec, &config).unwrap();
        let count = |purpose: CallPurpose, action: Option<&str>| {
            rec.calls.iter().filter(|c| c.purpose == purpose && c.action.as_deref() == action).count()
        };
        assert!(count(CallPurpose::Feedback, None) <= 1);
        assert!(rec.validation.len() <= 8);
        for act in &rec.actions {
            assert_eq!(act.passes.len(), 2, "{}", act.name);
            for pass in [1, 2] {
                let template = format!("action_construction:pass{pass}:validation");
                let msgs = rec.calls.iter().filter(|c| c.action.as_deref() == Some(&*act.name) && c.template_id == template);
                assert!(msgs.count() <= 8);
            }
            assert!(count(CallPurpose::Feedback, Some(&act.name)) <= 1);
            actions += 1;
        }
    }

    // every predicate and type of the pruned domain is used somewhere
    let words: BTreeSet<String> = d
        .actions
        .iter()
        .flat_map(|a| {
            print_action(a, 0)
                .split(|c: char| c.is_whitespace() || c == '(' || c == ')')
                .filter(|t| !t.is_empty() && !t.starts_with('?') && !t.starts_with(':'))
                .map(str::to_string)
                .collect::<Vec<_>>()
        })
        .collect();
    let arg_types: BTreeSet<&str> = d.predicates.iter().flat_map(|p| p.params.iter().map(|v| v.ty.as_str())).collect();
    for pr in &d.predicates {
        assert!(words.contains(&pr.name), "predicate {}", pr.name);
    }
    for t in d.hierarchy.names() {
        let used_below = d.hierarchy.names().any(|u| {
            let mut x = Some(u);
            while let Some(y) = x.filter(|y| *y != t) {
                x = d.hierarchy.parent(y);
            }
            x.is_some() && (words.contains(u) || arg_types.contains(u))
        });
        assert!(used_below, "type {t}");
    }
    format!("plan of {} steps, {actions} actions within budget", pl.len())
}

// 5

fn domain_reuse() -> String {
    let tmp = tempfile::tempdir().unwrap();
    let stored = fixture("transcripts/blocksworld/domain.pddl");
    let mut c = nl2plan(
        tmp.path(),
        &["run", "--start-step", "task_extraction", "--domain", stored.to_str().unwrap(), "--input", "tasks/blocksworld_medium.txt"],
    );
    c.args(replay_args("blocksworld_reuse"));
    let id = run_id(&ok(c));
    let dir = tmp.path().join(&id);
    assert_eq!(read_json(&dir.join("manifest.json"))["status"], "done");
    let steps: BTreeSet<String> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("step_"))
        .collect();
    assert_eq!(steps, BTreeSet::from(["step_5.json".to_string(), "step_6.json".to_string()]));
    let transcripts: Vec<_> = std::fs::read_dir(dir.join("transcripts")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(transcripts, ["step_5.jsonl"]);
    let (d, p, pl) = outcome(&dir);
    assert_eq!(d, parse_domain(&std::fs::read_to_string(&stored).unwrap()).unwrap());
    assert!(validate_plan(&d, &p, &pl).is_valid());
    oracle_accepts(&d, &p, &pl);
    format!("steps 5-6 only, plan of {} steps", pl.len())
}

// 6

/// Sums the transcript lines without going through the library.
fn summed(dir: &Path) -> (BTreeMap<String, [u64; 3]>, [u64; 3]) {
    let mut steps: BTreeMap<String, [u64; 3]> = BTreeMap::new();
    let mut total = [0; 3];
    for e in std::fs::read_dir(dir.join("transcripts")).unwrap() {
        let p = e.unwrap().path();
        let name = p.file_name().unwrap().to_string_lossy().into_owned();
        let n: u8 = name["step_".len()..].split('.').next().unwrap().parse().unwrap();
        let step = StepId::from_number(n).unwrap().to_string();
        for line in std::fs::read_to_string(&p).unwrap().lines().filter(|l| !l.trim().is_empty()) {
            let v: Value = serde_json::from_str(line).unwrap();
            let io = [v["usage"]["input_tokens"].as_u64().unwrap(), v["usage"]["output_tokens"].as_u64().unwrap(), 1];
            let s = steps.entry(step.clone()).or_default();
            for k in 0..3 {
                s[k] += io[k];
                total[k] += io[k];
            }
        }
    }
    (steps, total)
}

fn token_accounting() -> String {
    let tmp = tempfile::tempdir().unwrap();
    let out = run_easy(tmp.path(), None);
    assert!(out.status.success());
    let id = run_id(&String::from_utf8(out.stdout).unwrap());
    let dir = tmp.path().join(&id);
    let (steps, total) = summed(&dir);
    let report: Value = serde_json::from_str(&ok(nl2plan(tmp.path(), &["report-usage", &id]))).unwrap();
    assert_eq!(report, read_json(&dir.join("usage.json")));
    let reported: BTreeSet<&String> = report["steps"].as_object().unwrap().keys().collect();
    assert_eq!(reported, steps.keys().collect());
    for (step, [i, o, n]) in &steps {
        let v = &report["steps"][step];
        assert_eq!(
            (v["input_tokens"].as_u64(), v["output_tokens"].as_u64(), v["total_tokens"].as_u64(), v["exchanges"].as_u64()),
            (Some(*i), Some(*o), Some(i + o), Some(*n)),
            "{step}"
        );
    }
    assert_eq!(report["total"]["input_tokens"].as_u64(), Some(total[0]));
    assert_eq!(report["total"]["output_tokens"].as_u64(), Some(total[1]));
    assert_eq!(report["total"]["exchanges"].as_u64(), Some(total[2]));
    format!("{} exchanges, {} in / {} out", total[2], total[0], total[1])
}

// 7

fn crash_safety() -> String {
    let tmp = tempfile::tempdir().unwrap();
    let reference = tmp.path().join("reference");
    let out = run_easy(&reference, None);
    let want = step_artifacts(&reference.join(run_id(&String::from_utf8(out.stdout).unwrap())));
    for n in 1..=5u8 {
        let root = tmp.path().join(format!("kill{n}"));
        let step = StepId::from_number(n).unwrap();
        let o = run_easy(&root, Some((CRASH_ENV, step.to_string())));
        assert_eq!(o.status.code(), Some(CRASH_EXIT.into()), "after {step}");
        let id = std::fs::read_dir(&root).unwrap().next().unwrap().unwrap().file_name().into_string().unwrap();
        assert_eq!(read_json(&root.join(&id).join("manifest.json"))["status"], "running");
        let stdout = ok(nl2plan(&root, &["resume", &id]));
        assert!(stdout.starts_with(&format!("run {id} done")), "after {step}: {stdout}");
        assert_eq!(step_artifacts(&root.join(&id)), want, "after {step}");
    }
    "killed after each of steps 1-5, all resumed identically".into()
}

type Check = fn() -> String;

fn main() {
    let criteria: [(&str, Check); 7] = [
        ("parser round-trip", parser_round_trip),
        ("validator mutation suite", validator_mutations),
        ("planner", planner),
        ("replay end-to-end", replay_end_to_end),
        ("domain reuse", domain_reuse),
        ("token accounting", token_accounting),
        ("crash safety", crash_safety),
    ];
    let mut failed = vec![];
    std::panic::set_hook(Box::new(|_| {}));
    for (name, check) in criteria {
        let start = Instant::now();
        match catch_unwind(AssertUnwindSafe(check)) {
            Ok(detail) => println!("PASS  {name}: {detail} ({} ms)", start.elapsed().as_millis()),
            Err(e) => {
                let why = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                println!("FAIL  {name}: {}", why.lines().next().unwrap_or(""));
                failed.push(name);
            }
        }
    }
    println!("acceptance: {} of {} passed", criteria.len() - failed.len(), criteria.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
