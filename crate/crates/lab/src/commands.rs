//! The `liqlab` pipelines: `solve`, `bounds`, `converge`, `simulate`,
//! `verify` and `report`.
//!
//! Every run writes its artifacts plus a `manifest_<command>.json` into the
//! output directory. Exit status: 0 when all verdicts pass, 1 on invalid
//! input (with a JSON error object on stderr), 2 when a verdict fails.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use liquidation_core::model::MarketModel;
use liquidation_core::rng::scenario_rng;
use liquidation_core::simulate::{evolve_state, sample_scenario};
use liquidation_core::singular::{
    blowup_profile, bounds_envelope, extrapolate_singular, verify_sandwich, SandwichTolerance, DEFAULT_EPS_EVAL,
};
use liquidation_core::truncated::{default_levels, solve_truncated};
use liquidation_core::{LadderResult, SingularSolution, TimeGrid};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::load_model;
use crate::families::oracle_value;
use crate::io::{blowup_csv, envelope_csv, path_csv, singular_csv, to_json, truncated_csv, write_text};
use crate::montecarlo::{
    estimate_value, liquidation_profile, penalized_monotone_check, policy_suboptimality, solve_ladder_parallel,
    verification_suite, McOptions, Valuation, Verdict,
};
use crate::{LabError, Result};

/// Oracle tolerance for truncated solutions.
const ORACLE_TRUNCATED_TOL: f64 = 1e-8;
/// Relative oracle tolerance for the extrapolated singular solution.
const ORACLE_SINGULAR_TOL: f64 = 1e-4;
/// Scenario count cap for the pathwise and paired checks inside `verify`.
const VERIFY_SUITE_PATHS: usize = 10_000;

#[derive(Debug, Parser)]
#[command(name = "liqlab", version, about = "Optimal liquidation with dark pools under regime switching")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the penalized ladder and write one CSV per level.
    Solve(RunArgs),
    /// Closed-form envelope and the sandwich verdict for every level.
    Bounds(RunArgs),
    /// Extrapolate the ladder to the singular solution; blow-up profile.
    Converge(RunArgs),
    /// Monte Carlo value estimate (penalized with a single --L, else singular).
    Simulate(RunArgs),
    /// Run every applicable check and write a summary.
    Verify(RunArgs),
    /// Aggregate the JSON artifacts of an output directory.
    Report(RunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Solve(_) => "solve",
            Command::Bounds(_) => "bounds",
            Command::Converge(_) => "converge",
            Command::Simulate(_) => "simulate",
            Command::Verify(_) => "verify",
            Command::Report(_) => "report",
        }
    }

    pub fn args(&self) -> &RunArgs {
        match self {
            Command::Solve(a)
            | Command::Bounds(a)
            | Command::Converge(a)
            | Command::Simulate(a)
            | Command::Verify(a)
            | Command::Report(a) => a,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Model configuration (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Time steps of the solver grid.
    #[arg(long, default_value_t = 4096)]
    pub steps: usize,
    /// Penalization ladder, comma separated (default 1,2,4,...,1024).
    #[arg(long = "L", value_delimiter = ',')]
    pub levels: Option<Vec<f64>>,
    /// Monte Carlo paths.
    #[arg(long, default_value_t = 100_000)]
    pub paths: usize,
    /// Master RNG seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Evaluation cut-off before T for the singular solution (default 1e-4 T).
    #[arg(long = "epsilon-eval")]
    pub epsilon_eval: Option<f64>,
    /// Simulation cut-off before T in singular mode (default: epsilon-eval).
    #[arg(long = "epsilon-sim")]
    pub epsilon_sim: Option<f64>,
    /// Dump the first N simulated paths as CSV (N defaults to 10).
    #[arg(long = "dump-paths", num_args = 0..=1, default_missing_value = "10")]
    pub dump_paths: Option<usize>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Parameters after defaults are applied.
#[derive(Debug, Clone, Serialize)]
struct Resolved {
    steps: usize,
    levels: Vec<f64>,
    ladder_given: bool,
    paths: usize,
    seed: u64,
    epsilon_eval: f64,
    epsilon_sim: f64,
    dump_paths: usize,
    threads: Option<usize>,
}

impl Resolved {
    fn new(args: &RunArgs, model: &MarketModel) -> Result<Self> {
        let horizon = model.horizon();
        let epsilon_eval = args.epsilon_eval.unwrap_or(DEFAULT_EPS_EVAL * horizon);
        let epsilon_sim = args.epsilon_sim.unwrap_or(epsilon_eval);
        if !(epsilon_eval > 0.0 && epsilon_eval < horizon) {
            return Err(LabError::Parameter(format!("epsilon-eval {epsilon_eval} must lie in (0, T)")));
        }
        if !(epsilon_sim >= epsilon_eval && epsilon_sim < horizon) {
            return Err(LabError::Parameter(format!(
                "epsilon-sim {epsilon_sim} must lie in [epsilon-eval, T)"
            )));
        }
        if args.steps == 0 {
            return Err(LabError::Parameter("steps must be positive".into()));
        }
        if args.threads == Some(0) {
            return Err(LabError::Parameter("threads must be positive".into()));
        }
        let levels = args.levels.clone().unwrap_or_else(default_levels);
        if levels.is_empty() || levels.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(LabError::Parameter("--L levels must be positive and finite".into()));
        }
        if levels.windows(2).any(|w| w[1] <= w[0]) {
            return Err(LabError::Parameter("--L levels must be strictly increasing".into()));
        }
        Ok(Self {
            steps: args.steps,
            levels,
            ladder_given: args.levels.is_some(),
            paths: args.paths,
            seed: args.seed,
            epsilon_eval,
            epsilon_sim,
            dump_paths: args.dump_paths.unwrap_or(0),
            threads: args.threads,
        })
    }

    fn mc(&self, paths: usize) -> McOptions {
        McOptions { n_paths: paths, seed: self.seed, threads: self.threads }
    }
}

/// Output directory that remembers what was written.
struct Sink {
    dir: PathBuf,
    artifacts: Vec<String>,
}

impl Sink {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), artifacts: Vec::new() })
    }

    fn text(&mut self, name: &str, contents: &str) -> Result<()> {
        write_text(&self.dir.join(name), contents)?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        self.text(name, &to_json(value))
    }
}

struct Context {
    model: MarketModel,
    params: Resolved,
    grid: TimeGrid,
}

impl Context {
    fn load(args: &RunArgs) -> Result<Self> {
        let path = args.config.as_deref().ok_or_else(|| LabError::Parameter("--config is required".into()))?;
        let model = load_model(path)?;
        let params = Resolved::new(args, &model)?;
        let grid = TimeGrid::for_model(&model, params.steps, &[model.horizon() - params.epsilon_eval])?;
        Ok(Self { model, params, grid })
    }

    fn ladder(&self) -> Result<LadderResult> {
        solve_ladder_parallel(&self.model, &self.params.levels, &self.grid, self.params.threads)
    }

    fn singular(&self, ladder: &LadderResult) -> Result<SingularSolution> {
        Ok(extrapolate_singular(&self.model, ladder, self.params.epsilon_eval)?)
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            if code == 0 {
                print!("{e}");
            } else {
                emit_error("UsageError", &e.to_string(), "arguments");
            }
            return code;
        }
    };
    run(&cli.command)
}

fn emit_error(code: &str, message: &str, context: &str) {
    eprintln!("{}", json!({ "code": code, "message": message, "context": context }));
}

/// Runs one command, writing artifacts and manifest; returns the exit code.
pub fn run(command: &Command) -> i32 {
    let started = Instant::now();
    let args = command.args();
    let outcome = Sink::new(&args.out).and_then(|mut sink| {
        let (verdict, params) = dispatch(command, &mut sink)?;
        let manifest = json!({
            "command": command.name(),
            "config": args.config,
            "params": params,
            "out": args.out,
            "artifacts": sink.artifacts,
            "duration_seconds": started.elapsed().as_secs_f64(),
        });
        write_text(&sink.dir.join(format!("manifest_{}.json", command.name())), &to_json(&manifest))?;
        Ok(verdict)
    });
    match outcome {
        Ok(Verdict::Pass) => 0,
        Ok(Verdict::Fail) => 2,
        Err(e) => {
            let context = match &args.config {
                Some(p) => format!("{} --config {}", command.name(), p.display()),
                None => command.name().to_string(),
            };
            emit_error(e.kind(), &e.to_string(), &context);
            exit_code(&e)
        }
    }
}

/// Numerical checks that abort inside the solvers count as failed verdicts.
pub fn exit_code(e: &LabError) -> i32 {
    use liquidation_core::Error as E;
    match e {
        LabError::Model(E::MonotonicityViolation { .. } | E::ToleranceFailure { .. } | E::FitDiverged { .. }) => 2,
        _ => 1,
    }
}

fn dispatch(command: &Command, sink: &mut Sink) -> Result<(Verdict, Value)> {
    if let Command::Report(_) = command {
        return Ok((report(sink)?, json!({})));
    }
    let ctx = Context::load(command.args())?;
    let verdict = match command {
        Command::Solve(_) => solve(&ctx, sink)?,
        Command::Bounds(_) => bounds(&ctx, sink)?,
        Command::Converge(_) => converge(&ctx, sink)?,
        Command::Simulate(_) => simulate(&ctx, sink)?,
        Command::Verify(_) => verify(&ctx, sink)?,
        Command::Report(_) => unreachable!("handled above"),
    };
    let mut params = serde_json::to_value(&ctx.params)?;
    params["grid_size"] = json!(ctx.grid.len());
    Ok((verdict, params))
}

fn level_tag(level: f64) -> String {
    format!("{level}")
}

fn solve(ctx: &Context, sink: &mut Sink) -> Result<Verdict> {
    let ladder = ctx.ladder()?;
    let c_check = ctx.model.c_check();
    for sol in ladder.solutions() {
        sink.text(&format!("truncated_L{}.csv", level_tag(sol.level())), &truncated_csv(sol, c_check))?;
    }
    let y0: Vec<Vec<f64>> = ladder.solutions().iter().map(|s| s.values().iter().map(|r| r[0]).collect()).collect();
    sink.json(
        "ladder.json",
        &json!({
            "levels": ladder.levels(),
            "grid_size": ctx.grid.len(),
            "c_check": c_check,
            "y0": y0,
            "max_violation": ladder.max_violation(),
            "verdict": Verdict::Pass,
        }),
    )?;
    println!("solve: {} levels on {} nodes -> {}", ladder.levels().len(), ctx.grid.len(), sink.dir.display());
    Ok(Verdict::Pass)
}

fn sandwich_levels(ctx: &Context, ladder: &LadderResult) -> (Vec<Value>, Verdict) {
    let mut ok = true;
    let rows = ladder
        .solutions()
        .iter()
        .map(|sol| {
            let excess = sol.envelope_excess(&ctx.model);
            let slack = 1e-6 * (1.0 + sol.level());
            let inside = excess <= slack;
            ok &= inside;
            json!({ "level": sol.level(), "excess": excess, "slack": slack, "inside": inside })
        })
        .collect();
    (rows, Verdict::from_bool(ok))
}

fn bounds(ctx: &Context, sink: &mut Sink) -> Result<Verdict> {
    let ladder = ctx.ladder()?;
    let horizon = ctx.model.horizon();
    let envelope = bounds_envelope(&ctx.model, &ctx.grid.truncated(horizon - ctx.params.epsilon_eval)?)?;
    sink.text("envelope.csv", &envelope_csv(&envelope))?;
    let (levels, verdict) = sandwich_levels(ctx, &ladder);
    sink.json("sandwich.json", &json!({ "c_check": envelope.c_check(), "levels": levels, "verdict": verdict }))?;
    println!("bounds: sandwich {verdict:?} over {} levels", ladder.levels().len());
    Ok(verdict)
}

/// Largest relative error of the extrapolated solution against a closed form.
fn singular_oracle_error(model: &MarketModel, sol: &SingularSolution) -> Option<f64> {
    let nodes = sol.grid().nodes();
    let mut worst = 0.0f64;
    for (n, &t) in nodes.iter().enumerate() {
        let exact = oracle_value(model, f64::INFINITY, t)?;
        worst = worst.max((sol.regime(0)[n] - exact).abs() / exact);
    }
    Some(worst)
}

fn truncated_oracle_error(model: &MarketModel, ladder: &LadderResult) -> Option<f64> {
    let mut worst = 0.0f64;
    for sol in ladder.solutions() {
        for (n, &t) in sol.grid().nodes().iter().enumerate() {
            worst = worst.max((sol.regime(0)[n] - oracle_value(model, sol.level(), t)?).abs());
        }
    }
    Some(worst)
}

fn converge_summary(ctx: &Context, ladder: &LadderResult, sol: &SingularSolution) -> (Value, Verdict) {
    let tol = SandwichTolerance::default();
    let sandwich = verify_sandwich(sol, tol);
    let profile = blowup_profile(sol, tol);
    let blowup_inside = profile.iter().all(|r| r.inside);
    let oracle = singular_oracle_error(&ctx.model, sol);
    let oracle_ok = oracle.is_none_or(|e| e <= ORACLE_SINGULAR_TOL);
    let verdict = Verdict::from_bool(sandwich.pass && blowup_inside && oracle_ok);
    let max_gap = sol.ladder_gap().iter().flatten().copied().fold(0.0, f64::max);
    let summary = json!({
        "eps_eval": ctx.params.epsilon_eval,
        "levels": ladder.levels(),
        "y0_ladder": ladder.solutions().iter().map(|s| s.values().iter().map(|r| r[0]).collect::<Vec<_>>()).collect::<Vec<_>>(),
        "y0_singular": sol.values().iter().map(|r| r[0]).collect::<Vec<_>>(),
        "fallback_nodes": sol.fallback_nodes().len(),
        "max_fit_residual": max_gap,
        "sandwich": { "violations": sandwich.violations, "worst_slack": sandwich.worst_slack, "pass": sandwich.pass },
        "blowup_tail_nodes": profile.len(),
        "blowup_inside": blowup_inside,
        "oracle_max_relative_error": oracle,
        "verdict": verdict,
    });
    (summary, verdict)
}

fn converge(ctx: &Context, sink: &mut Sink) -> Result<Verdict> {
    let ladder = ctx.ladder()?;
    let sol = ctx.singular(&ladder)?;
    sink.text("singular.csv", &singular_csv(&sol))?;
    sink.text("blowup.csv", &blowup_csv(&blowup_profile(&sol, SandwichTolerance::default())))?;
    let (summary, verdict) = converge_summary(ctx, &ladder, &sol);
    sink.json("convergence.json", &summary)?;
    println!("converge: {verdict:?}, Y(0) = {:?}", summary["y0_singular"]);
    Ok(verdict)
}

fn simulate(ctx: &Context, sink: &mut Sink) -> Result<Verdict> {
    let p = &ctx.params;
    let penalized;
    let singular;
    let valuation = if p.ladder_given && p.levels.len() == 1 {
        penalized = solve_truncated(&ctx.model, p.levels[0], &ctx.grid)?;
        Valuation::Penalized(&penalized)
    } else {
        singular = ctx.singular(&ctx.ladder()?)?;
        Valuation::Singular { solution: &singular, eps_sim: p.epsilon_sim }
    };
    let report = estimate_value(&ctx.model, valuation, &p.mc(p.paths))?;
    sink.json("mc_report.json", &report)?;
    let end = valuation.end(&ctx.model);
    for k in 0..p.dump_paths.min(p.paths) {
        let scenario = sample_scenario(&ctx.model, &mut scenario_rng(p.seed, k as u64));
        let path = evolve_state(&ctx.model, valuation.surface(), &scenario, end)?;
        sink.text(&format!("paths/path_{k}.csv"), &path_csv(&path))?;
    }
    println!(
        "simulate ({}): estimate {} ± {} vs prediction {} -> {:?}",
        valuation.mode(),
        report.estimate,
        report.std_error,
        report.prediction,
        report.verdict
    );
    Ok(report.verdict)
}

#[derive(Serialize)]
struct Check {
    name: &'static str,
    verdict: Verdict,
    details: Value,
}

fn check<T: Serialize>(name: &'static str, verdict: Verdict, details: &T) -> Result<Check> {
    Ok(Check { name, verdict, details: serde_json::to_value(details)? })
}

fn verify(ctx: &Context, sink: &mut Sink) -> Result<Verdict> {
    let p = &ctx.params;
    let model = &ctx.model;
    let horizon = model.horizon();
    let suite = p.mc(p.paths.min(VERIFY_SUITE_PATHS));
    let mut checks = Vec::new();

    let ladder = ctx.ladder()?;
    checks.push(check("ladder_monotonicity", Verdict::Pass, &json!({ "max_violation": ladder.max_violation() }))?);
    let (levels, verdict) = sandwich_levels(ctx, &ladder);
    checks.push(check("ladder_sandwich", verdict, &levels)?);
    if let Some(err) = truncated_oracle_error(model, &ladder) {
        let verdict = Verdict::from_bool(err <= ORACLE_TRUNCATED_TOL);
        checks.push(check("truncated_closed_form", verdict, &json!({ "max_abs_error": err }))?);
    }

    let sol = ctx.singular(&ladder)?;
    let (summary, verdict) = converge_summary(ctx, &ladder, &sol);
    checks.push(check("singular_extrapolation", verdict, &summary)?);

    let lowest = &ladder.solutions()[0];
    let value_l = estimate_value(model, Valuation::Penalized(lowest), &p.mc(p.paths))?;
    checks.push(check("value_identity_penalized", value_l.verdict, &json!({ "level": lowest.level(), "report": value_l }))?);
    let singular = Valuation::Singular { solution: &sol, eps_sim: p.epsilon_sim };
    let value = estimate_value(model, singular, &p.mc(p.paths))?;
    checks.push(check("value_identity_singular", value.verdict, &value)?);

    let suite_report = verification_suite(model, &sol, p.epsilon_sim, &suite)?;
    checks.push(check("verification_suite", suite_report.verdict, &suite_report)?);
    for factor in [0.5, 1.5] {
        let r = policy_suboptimality(model, singular, factor, &suite)?;
        checks.push(check("policy_suboptimality", r.verdict, &r)?);
    }

    let eps: Vec<f64> = [1e-2, 1e-3, 1e-4].iter().map(|e| e * horizon).filter(|e| *e >= p.epsilon_eval).collect();
    if eps.len() >= 2 {
        let r = liquidation_profile(model, &sol, &eps, &suite)?;
        checks.push(check("liquidation_profile", r.verdict, &r)?);
    }
    let mono = penalized_monotone_check(model, &ladder, model.initial_position(), Some(value.prediction), &suite)?;
    checks.push(check("penalized_monotone", mono.verdict, &mono)?);

    let verdict = checks.iter().fold(Verdict::Pass, |v, c| v.and(c.verdict));
    sink.json("verify.json", &json!({ "seed": p.seed, "checks": checks, "verdict": verdict }))?;
    for c in &checks {
        println!("{:<28} {:?}", c.name, c.verdict);
    }
    println!("verify: {verdict:?}");
    Ok(verdict)
}

fn report(sink: &mut Sink) -> Result<Verdict> {
    let dir = sink.dir.clone();
    let entries = std::fs::read_dir(&dir).map_err(|e| LabError::io(&dir, e))?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".json") && !n.starts_with("manifest_") && n != "report.json")
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(LabError::Parameter(format!("no JSON artifacts in {}", dir.display())));
    }
    let mut artifacts = serde_json::Map::new();
    let mut verdict = Verdict::Pass;
    let mut lines = vec!["# liqlab report".to_string(), String::new(), "| artifact | verdict |".into(), "|---|---|".into()];
    for name in &names {
        let path = dir.join(name);
        let text = std::fs::read_to_string(&path).map_err(|e| LabError::io(&path, e))?;
        let value: Value = serde_json::from_str(&text)?;
        let v = value.get("verdict").and_then(|v| serde_json::from_value::<Verdict>(v.clone()).ok());
        if let Some(v) = v {
            verdict = verdict.and(v);
        }
        lines.push(format!("| {name} | {} |", v.map_or("-".to_string(), |v| format!("{v:?}").to_uppercase())));
        artifacts.insert(name.clone(), value);
    }
    lines.push(String::new());
    lines.push(format!("Overall: {}", format!("{verdict:?}").to_uppercase()));
    lines.push(String::new());
    sink.json("report.json", &json!({ "artifacts": artifacts, "verdict": verdict }))?;
    sink.text("report.md", &lines.join("\n"))?;
    println!("report: {} artifacts, {verdict:?}", names.len());
    Ok(verdict)
}
