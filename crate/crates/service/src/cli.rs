use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use nl2plan::llm::{open_provider, ProviderKind};
use nl2plan::pddl::{parse_domain, parse_problem, print_action, DomainSpec, Plan};
use nl2plan::pipeline::{
    baseline_cot, usage_totals, FeedbackInput, FeedbackSource, ResumeRequest, RunConfig, RunManifest,
    RunStatus, Runner, Seed, StepId, NO_PLAN_FILE, PLAN_FILE,
};
use nl2plan::planner::{plan, validate_plan, Outcome, SearchKind, Verdict};
use nl2plan::validator::{render_feedback, validate_action, validate_task, ActionDraft, TaskDraft};

use crate::api::{router, AppState};
use crate::config::ServiceConfig;

/// Halts a run right after the named step is persisted, by exiting the
/// process, to exercise restart recovery.
pub const CRASH_ENV: &str = "NL2PLAN_CRASH_AFTER_STEP";
pub const CRASH_EXIT: u8 = 75;

#[derive(Debug, Parser)]
#[command(name = "nl2plan", version, about = "Turn natural-language planning descriptions into PDDL and plans")]
pub struct Cli {
    /// TOML file with run defaults and the provider setup.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory holding run directories.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ProviderArgs {
    #[arg(long, value_parser = parse_kind)]
    pub provider: Option<ProviderKind>,
    /// Transcript directory for replay and record.
    #[arg(long)]
    pub transcripts: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Start a run and drive it to the end.
    Run {
        /// Text file with the domain and task description.
        #[arg(long)]
        input: PathBuf,
        /// Feedback source for every LLM step.
        #[arg(long)]
        feedback: Option<FeedbackSource>,
        #[arg(long)]
        start_step: Option<StepId>,
        /// Stored domain PDDL, for starting at task extraction or planning.
        #[arg(long)]
        domain: Option<PathBuf>,
        /// Stored problem PDDL, for starting at planning.
        #[arg(long)]
        problem: Option<PathBuf>,
        /// Keep only this many most recent runs afterwards.
        #[arg(long)]
        keep: Option<usize>,
        #[command(flatten)]
        provider: ProviderArgs,
    },
    /// Continue a run: after a crash, after an edit, or from a given step.
    Resume {
        run: String,
        #[arg(long)]
        from: Option<StepId>,
        /// Replacement result for the `--from` step.
        #[arg(long)]
        edit: Option<PathBuf>,
        /// New task description; reruns task extraction on the stored domain.
        #[arg(long)]
        task: Option<PathBuf>,
    },
    /// Check a domain and problem, and optionally a plan.
    Validate {
        domain: PathBuf,
        problem: PathBuf,
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Search for a plan.
    Plan {
        domain: PathBuf,
        problem: PathBuf,
        #[arg(long, value_parser = parse_search)]
        search: Option<SearchKind>,
        /// Seconds before giving up.
        #[arg(long)]
        timeout: Option<u64>,
    },
    /// Ask the model for a plan in one shot, without PDDL.
    BaselineCot {
        /// Task description.
        #[arg(long)]
        input: PathBuf,
        /// Domain description, if kept apart from the task.
        #[arg(long)]
        domain_text: Option<PathBuf>,
        #[command(flatten)]
        provider: ProviderArgs,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Static review UI bundle served at `/`.
        #[arg(long)]
        ui: Option<PathBuf>,
        #[arg(long)]
        keep: Option<usize>,
        #[command(flatten)]
        provider: ProviderArgs,
    },
    /// Token usage of a run, summed from its transcripts.
    ReportUsage {
        /// Run id, or the path of a run directory.
        run: String,
    },
}

fn parse_kind(s: &str) -> Result<ProviderKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown provider '{s}' (live, replay, record)"))
}

fn parse_search(s: &str) -> Result<SearchKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown search '{s}' (greedy-best-first, astar, bfs)"))
}

fn read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Description files are used without their trailing whitespace.
fn read_description(path: &Path) -> anyhow::Result<String> {
    Ok(read(path)?.trim_end().to_string())
}

fn load_domain(path: &Path) -> anyhow::Result<DomainSpec> {
    parse_domain(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

impl ProviderArgs {
    fn apply(&self, c: &mut RunConfig) {
        if let Some(k) = self.provider {
            c.provider.kind = k;
        }
        if let Some(t) = &self.transcripts {
            c.provider.transcript_dir = Some(t.clone());
        }
        if let Some(m) = &self.model {
            c.provider.model = m.clone();
        }
    }
}

fn crash_hook() -> Option<nl2plan::pipeline::HaltHook> {
    let target: StepId = std::env::var(CRASH_ENV).ok()?.parse().ok()?;
    Some(Arc::new(move |id: &str, step: StepId| {
        if step == target {
            eprintln!("{CRASH_ENV}: stopping run {id} after {step}");
            std::process::exit(CRASH_EXIT.into());
        }
        false
    }))
}

fn runner(root: &Path) -> Runner {
    let r = Runner::new(root);
    match crash_hook() {
        Some(h) => r.with_halt_hook(h),
        None => r,
    }
}

/// Asks on the terminal for the feedback a parked run waits for. Returns
/// false when input ends.
fn ask(runner: &Runner, m: &RunManifest) -> anyhow::Result<bool> {
    let step = m.current_step.context("parked run has no current step")?;
    let rec = runner.store().load_step(&m.id, step)?.context("parked step has no record")?;
    let shown = match &m.pending_action {
        Some(a) => rec.actions.iter().find(|x| &x.name == a).map(|x| x.last_response.clone()).unwrap_or_default(),
        None => rec.calls.last().map(|c| c.response.clone()).unwrap_or_else(|| rec.response.clone()),
    };
    let what = m.pending_action.as_deref().map(|a| format!(" ({a})")).unwrap_or_default();
    eprintln!("\n== {step}{what} ==\n{}\n", shown.trim());
    eprint!("Feedback (empty line approves): ");
    std::io::stderr().flush()?;
    let mut line = String::new();
    if std::io::stdin().lock().read_line(&mut line)? == 0 {
        return Ok(false);
    }
    let text = line.trim();
    let input = if text.is_empty() || text.eq_ignore_ascii_case("approve") {
        FeedbackInput::Approve
    } else {
        FeedbackInput::Text(text.to_string())
    };
    runner.submit_feedback(&m.id, step, input)?;
    Ok(true)
}

fn drive(runner: &Runner, id: &str) -> anyhow::Result<RunManifest> {
    loop {
        let m = runner.execute(id)?;
        if m.status != RunStatus::AwaitingHumanFeedback || !ask(runner, &m)? {
            return Ok(m);
        }
    }
}

fn report(runner: &Runner, m: &RunManifest) -> anyhow::Result<ExitCode> {
    println!("run {} {}", m.id, serde_json::to_value(m.status)?.as_str().unwrap_or_default());
    match m.status {
        RunStatus::Done => {
            let store = runner.store();
            if let Some(p) = store.read_text(&m.id, PLAN_FILE)? {
                print!("{p}");
            } else if let Some(t) = store.read_text(&m.id, NO_PLAN_FILE)? {
                print!("{t}");
            }
            if m.degraded {
                eprintln!("warning: some artifacts were accepted with validator issues");
            }
            Ok(ExitCode::SUCCESS)
        }
        RunStatus::Failed => {
            let f = m.failure.as_ref();
            eprintln!("run failed at {}: {}", f.map_or("?".into(), |f| f.step.to_string()), f.map_or("", |f| &f.cause));
            Ok(ExitCode::FAILURE)
        }
        RunStatus::AwaitingHumanFeedback => {
            eprintln!("run parked for feedback; continue with `nl2plan resume {}`", m.id);
            Ok(ExitCode::SUCCESS)
        }
        RunStatus::Running => Ok(ExitCode::SUCCESS),
    }
}

/// Flags a domain or problem would raise in the pipeline's validator.
fn lint(domain: &DomainSpec, problem_text: Option<&str>) -> Vec<String> {
    let mut out = Vec::new();
    for a in &domain.actions {
        let mut context = domain.clone();
        context.actions.retain(|x| x.name != a.name);
        match ActionDraft::parse(&print_action(a, 0)) {
            Ok(d) => {
                if let Ok(f) = render_feedback(&validate_action(&d, &context)) {
                    out.push(format!("action {}:\n{f}", a.name));
                }
            }
            Err(e) => out.push(format!("action {}: {e}", a.name)),
        }
    }
    if let Some(t) = problem_text {
        match TaskDraft::parse(t) {
            Ok(d) => {
                if let Ok(f) = render_feedback(&validate_task(&d, domain)) {
                    out.push(format!("problem:\n{f}"));
                }
            }
            Err(e) => out.push(format!("problem: {e}")),
        }
    }
    out
}

pub fn main_with(cli: Cli) -> anyhow::Result<ExitCode> {
    let mut cfg = match &cli.config {
        Some(p) => ServiceConfig::load(p)?,
        None => ServiceConfig::default(),
    };
    if let Some(o) = &cli.out {
        cfg.runs_dir = o.clone();
    }
    match cli.command {
        Command::Run { input, feedback, start_step, domain, problem, keep, provider } => {
            let mut config = cfg.run.clone();
            provider.apply(&mut config);
            if let Some(f) = feedback {
                config = config.with_feedback(f);
            }
            if let Some(s) = start_step {
                config.start_step = s;
            }
            let domain = domain.as_deref().map(load_domain).transpose()?;
            let problem = match (&problem, &domain) {
                (Some(p), Some(d)) => Some(parse_problem(&read(p)?, d).with_context(|| format!("parsing {}", p.display()))?),
                (Some(_), None) => bail!("--problem needs --domain"),
                _ => None,
            };
            let runner = runner(&cfg.runs_dir);
            let m = runner.create(&read_description(&input)?, config, Seed { domain, problem })?;
            eprintln!("run {} in {}", m.id, runner.store().dir(&m.id).display());
            let m = drive(&runner, &m.id)?;
            if let Some(k) = keep {
                runner.store().prune(k)?;
            }
            report(&runner, &m)
        }
        Command::Resume { run, from, edit, task } => {
            let runner = runner(&cfg.runs_dir);
            let m = runner.store().load_manifest(&run)?;
            let plain = from.is_none() && edit.is_none() && task.is_none();
            if !(plain && m.status == RunStatus::Running) {
                // a running run with no request was left behind by a dead process
                let req = ResumeRequest {
                    from_step: from,
                    artifact_text: edit.as_deref().map(read).transpose()?,
                    task_description: task.as_deref().map(read_description).transpose()?,
                };
                if !plain || m.status != RunStatus::AwaitingHumanFeedback {
                    runner.prepare_resume(&run, req)?;
                }
            }
            let m = drive(&runner, &run)?;
            report(&runner, &m)
        }
        Command::Validate { domain, problem, plan: plan_file } => {
            let d = load_domain(&domain)?;
            let text = read(&problem)?;
            let p = parse_problem(&text, &d).with_context(|| format!("parsing {}", problem.display()))?;
            let mut issues = lint(&d, Some(&text));
            if let Some(f) = plan_file {
                let pl = Plan::from_plan_file(&read(&f)?).with_context(|| format!("parsing {}", f.display()))?;
                match validate_plan(&d, &p, &pl) {
                    Verdict::Valid { cost } => println!("plan valid, cost {cost}"),
                    v => issues.push(format!("plan: {}", serde_json::to_string(&v)?)),
                }
            }
            if issues.is_empty() {
                println!("ok");
                return Ok(ExitCode::SUCCESS);
            }
            for i in issues {
                println!("{i}");
            }
            Ok(ExitCode::FAILURE)
        }
        Command::Plan { domain, problem, search, timeout } => {
            let d = load_domain(&domain)?;
            let p = parse_problem(&read(&problem)?, &d).with_context(|| format!("parsing {}", problem.display()))?;
            let mut pc = cfg.run.planner.clone();
            if let Some(s) = search {
                pc.search = s;
            }
            if let Some(t) = timeout {
                pc.timeout = std::time::Duration::from_secs(t);
            }
            let r = plan(&d, &p, &pc);
            eprintln!("expanded {} states, generated {}, {} ms", r.stats.expansions, r.stats.generated, r.stats.elapsed_ms);
            match r.outcome {
                Outcome::Plan(pl) => {
                    print!("{}", pl.to_plan_file());
                    Ok(ExitCode::SUCCESS)
                }
                Outcome::Unsolvable => {
                    println!("No plan found");
                    Ok(ExitCode::SUCCESS)
                }
                Outcome::ResourceLimit { reason } => {
                    eprintln!("planner gave up: {reason}");
                    Ok(ExitCode::FAILURE)
                }
            }
        }
        Command::BaselineCot { input, domain_text, provider } => {
            let mut config = cfg.run.clone();
            provider.apply(&mut config);
            config.check()?;
            let p = open_provider(&config.provider)?;
            let domain = domain_text.as_deref().map(read_description).transpose()?.unwrap_or_default();
            let runner = Runner::new(&cfg.runs_dir);
            let e = baseline_cot(p.as_ref(), runner.templates(), &domain, &read_description(&input)?, &config)?;
            println!("{}", e.response.trim_end());
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve { port, host, ui, keep, provider } => {
            let mut config = cfg.run.clone();
            provider.apply(&mut config);
            config.check()?;
            let runner = runner(&cfg.runs_dir);
            if let Some(k) = keep {
                runner.store().prune(k)?;
            }
            let ui = ui.or(cfg.ui_dir.clone());
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let state = AppState::new(runner, config);
                let recovered = state.recover().map_err(|e| anyhow::anyhow!(e))?;
                if !recovered.is_empty() {
                    tracing::info!("resuming {} interrupted run(s)", recovered.len());
                }
                let app = router(state, ui.as_deref());
                let listener = tokio::net::TcpListener::bind((host.as_str(), port)).await?;
                tracing::info!("listening on {}", listener.local_addr()?);
                axum::serve(listener, app).await?;
                anyhow::Ok(())
            })?;
            Ok(ExitCode::SUCCESS)
        }
        Command::ReportUsage { run } => {
            let as_path = PathBuf::from(&run);
            let dir = if as_path.join("manifest.json").is_file() { as_path } else { cfg.runs_dir.join(&run) };
            if !dir.join("manifest.json").is_file() {
                bail!("no run {run} under {}", cfg.runs_dir.display());
            }
            println!("{}", serde_json::to_string_pretty(&usage_totals(&dir)?)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}
