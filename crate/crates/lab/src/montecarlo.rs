//! Parallel Monte Carlo estimation of cost functionals and statistical checks
//! of the value identities.
//!
//! Scenario `k` always draws from the substream `(seed, k)` and results are
//! collected in scenario order before a pairwise reduction, so every report
//! is bit-identical for a given seed whatever the number of worker threads.
//! All comparisons between policies, levels or initial positions reuse the
//! same scenarios (common random numbers).

use liquidation_core::model::MarketModel;
use liquidation_core::rng::scenario_rng;
use liquidation_core::simulate::{
    evolve_state, product_formula_path, run_scenario, sample_scenario, Policy, Scenario, ValueSurface,
};
use liquidation_core::stats::{summarize, Summary};
use liquidation_core::truncated::{solve_truncated, upper_limit, MONOTONE_TOL};
use liquidation_core::{LadderResult, SingularSolution, TimeGrid, TruncatedSolution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{LabError, Result};

/// Number of standard errors accepted by every statistical verdict.
pub const Z_THRESHOLD: f64 = 3.0;

/// Relative allowance for time-discretization bias in value comparisons.
/// Only matters when the dynamics are deterministic and the standard error
/// vanishes.
pub const QUADRATURE_SLACK: f64 = 1e-6;

/// Pathwise tolerance of the exact identities (scaling, product formula).
pub const PATHWISE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }

    pub fn and(self, other: Verdict) -> Verdict {
        Verdict::from_bool(self.passed() && other.passed())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McOptions {
    pub n_paths: usize,
    pub seed: u64,
    /// Worker threads; `None` uses rayon's default.
    pub threads: Option<usize>,
}

impl McOptions {
    pub fn new(n_paths: usize, seed: u64) -> Self {
        Self { n_paths, seed, threads: None }
    }

    pub fn with_threads(self, threads: usize) -> Self {
        Self { threads: Some(threads), ..self }
    }

    fn require_sample(&self) -> Result<()> {
        if self.n_paths < 2 {
            return Err(LabError::Parameter(format!(
                "n_paths = {} leaves the standard error undefined; need at least 2",
                self.n_paths
            )));
        }
        Ok(())
    }
}

fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(threads.unwrap_or(0)).build()?)
}

/// Runs `task(k, scenario_k)` for every scenario index in parallel and
/// returns the results in index order.
pub fn map_scenarios<T, F>(model: &MarketModel, opts: &McOptions, task: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64, &Scenario) -> Result<T> + Sync + Send,
{
    let pool = thread_pool(opts.threads)?;
    pool.install(|| {
        (0..opts.n_paths as u64)
            .into_par_iter()
            .map(|k| {
                let scenario = sample_scenario(model, &mut scenario_rng(opts.seed, k));
                task(k, &scenario)
            })
            .collect()
    })
}

/// Solves every ladder level concurrently on one grid and checks the ordering.
pub fn solve_ladder_parallel(
    model: &MarketModel,
    levels: &[f64],
    grid: &TimeGrid,
    threads: Option<usize>,
) -> Result<LadderResult> {
    if levels.is_empty() {
        return Err(LabError::Parameter("empty ladder".into()));
    }
    let pool = thread_pool(threads)?;
    let solutions = pool.install(|| {
        levels.par_iter().map(|&l| solve_truncated(model, l, grid)).collect::<liquidation_core::Result<Vec<_>>>()
    })?;
    Ok(LadderResult::from_solutions(solutions, MONOTONE_TOL)?)
}

/// Which value surface drives the feedback.
#[derive(Debug, Clone, Copy)]
pub enum Valuation<'a> {
    /// Truncated surface on `[0, T]`; costs include `L X_T^2`.
    Penalized(&'a TruncatedSolution),
    /// Singular surface simulated on `[0, T - eps_sim]`.
    Singular { solution: &'a SingularSolution, eps_sim: f64 },
}

impl<'a> Valuation<'a> {
    pub fn surface(&self) -> &'a (dyn ValueSurface + Sync) {
        match *self {
            Valuation::Penalized(s) => s,
            Valuation::Singular { solution, .. } => solution,
        }
    }

    /// Simulation end time.
    pub fn end(&self, model: &MarketModel) -> f64 {
        match *self {
            Valuation::Penalized(_) => model.horizon(),
            Valuation::Singular { eps_sim, .. } => model.horizon() - eps_sim,
        }
    }

    /// `Y^{i0}(0) x0^2`.
    pub fn prediction(&self, model: &MarketModel, x0: f64) -> f64 {
        self.surface().regime_values(model.initial_regime())[0] * x0 * x0
    }

    pub fn mode(&self) -> &'static str {
        match self {
            Valuation::Penalized(_) => "penalized",
            Valuation::Singular { .. } => "singular",
        }
    }
}

fn z_score(diff: f64, se: f64) -> f64 {
    if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY.copysign(diff)
    }
}

/// Monte Carlo estimate of the value against its `Y`-based prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub n_paths: usize,
    pub estimate: f64,
    pub std_error: f64,
    pub prediction: f64,
    pub z_score: f64,
    pub verdict: Verdict,
    /// Upper bound on the expected cost after `T - eps_sim` (singular mode).
    pub tail_bound: Option<f64>,
    pub seed: u64,
}

/// Penalized mode averages `running cost + L X_T^2`; singular mode averages
/// the running cost on `[0, T - eps_sim]` and reports the mean of
/// `upper(eps_sim) X(T - eps_sim)^2` as the tail bound. The verdict requires
/// `estimate - 3 SE <= prediction <= estimate + tail_bound + 3 SE`, widened by
/// [`QUADRATURE_SLACK`].
pub fn estimate_value(model: &MarketModel, valuation: Valuation<'_>, opts: &McOptions) -> Result<McReport> {
    estimate_value_paths(model, valuation, opts).map(|(report, _)| report)
}

/// [`estimate_value`] also returning the per-path samples (cost, tail).
pub fn estimate_value_paths(
    model: &MarketModel,
    valuation: Valuation<'_>,
    opts: &McOptions,
) -> Result<(McReport, Vec<(f64, f64)>)> {
    opts.require_sample()?;
    let surface = valuation.surface();
    let end = valuation.end(model);
    let x0 = model.initial_position();
    let coeffs = model.coefficients();
    let terminal = match valuation {
        Valuation::Penalized(sol) => sol.level(),
        Valuation::Singular { eps_sim, .. } => upper_limit(coeffs.eta_cap(), coeffs.lambda_cap(), eps_sim),
    };
    let samples = map_scenarios(model, opts, |_, scenario| {
        let out = run_scenario(model, surface, scenario, end, Policy::default(), x0, &[])?;
        let terminal_cost = terminal * out.x_end * out.x_end;
        Ok(match valuation {
            Valuation::Penalized(_) => (out.running_cost + terminal_cost, 0.0),
            Valuation::Singular { .. } => (out.running_cost, terminal_cost),
        })
    })?;
    let costs: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let s = summarize(&costs);
    let prediction = valuation.prediction(model, x0);
    let slack = Z_THRESHOLD * s.std_error + QUADRATURE_SLACK * prediction.abs();
    let (tail_bound, pass) = match valuation {
        Valuation::Penalized(_) => (None, (s.mean - prediction).abs() <= slack),
        Valuation::Singular { .. } => {
            let tails: Vec<f64> = samples.iter().map(|s| s.1).collect();
            let tail = summarize(&tails).mean;
            (Some(tail), s.mean - slack <= prediction && prediction <= s.mean + tail + slack)
        }
    };
    let report = McReport {
        n_paths: opts.n_paths,
        estimate: s.mean,
        std_error: s.std_error,
        prediction,
        z_score: z_score(s.mean - prediction, s.std_error),
        verdict: Verdict::from_bool(pass),
        tail_bound,
        seed: opts.seed,
    };
    Ok((report, samples))
}

/// Paired comparison of a perturbed market-order rate against the optimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuboptimalityReport {
    pub factor: f64,
    pub n_paths: usize,
    /// Mean of `cost(perturbed) - cost(optimal)` over paired paths.
    pub mean_difference: f64,
    pub std_error: f64,
    pub z_score: f64,
    /// The perturbed policy is worse at the 3 SE level.
    pub significant: bool,
    /// No evidence that the perturbed policy beats the optimum.
    pub verdict: Verdict,
}

/// Compares `xi = factor (Y/eta) X` (dark-pool orders unchanged) with the
/// optimal feedback on common scenarios. Costs are running cost plus the
/// terminal weight `Y(end) X(end)^2`.
pub fn policy_suboptimality(
    model: &MarketModel,
    valuation: Valuation<'_>,
    factor: f64,
    opts: &McOptions,
) -> Result<SuboptimalityReport> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(LabError::Parameter(format!("perturbation factor {factor} must be positive")));
    }
    opts.require_sample()?;
    let surface = valuation.surface();
    let end = valuation.end(model);
    let x0 = model.initial_position();
    let perturbed = Policy { xi_scale: factor };
    let diffs = map_scenarios(model, opts, |_, scenario| {
        let base = run_scenario(model, surface, scenario, end, Policy::default(), x0, &[])?;
        let alt = run_scenario(model, surface, scenario, end, perturbed, x0, &[])?;
        Ok(alt.cost_to_go() - base.cost_to_go())
    })?;
    let s = summarize(&diffs);
    let scale = QUADRATURE_SLACK * valuation.prediction(model, x0).abs();
    Ok(SuboptimalityReport {
        factor,
        n_paths: opts.n_paths,
        mean_difference: s.mean,
        std_error: s.std_error,
        z_score: z_score(s.mean, s.std_error),
        significant: s.mean > Z_THRESHOLD * s.std_error + scale,
        verdict: Verdict::from_bool(s.mean >= -(Z_THRESHOLD * s.std_error + scale)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub scale: f64,
    pub n_paths: usize,
    pub max_relative_error: f64,
    pub verdict: Verdict,
}

/// Pathwise `cost(c x0) = c^2 cost(x0)` on common scenarios.
pub fn quadratic_scaling_check(
    model: &MarketModel,
    valuation: Valuation<'_>,
    scale: f64,
    opts: &McOptions,
) -> Result<ScalingReport> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(LabError::Parameter(format!("scale {scale} must be positive")));
    }
    let surface = valuation.surface();
    let end = valuation.end(model);
    let x0 = model.initial_position();
    let errors = map_scenarios(model, opts, |_, scenario| {
        let base = run_scenario(model, surface, scenario, end, Policy::default(), x0, &[])?.cost_to_go();
        let scaled = run_scenario(model, surface, scenario, end, Policy::default(), scale * x0, &[])?.cost_to_go();
        let expected = scale * scale * base;
        Ok(relative_gap(scaled, expected))
    })?;
    let max_relative_error = errors.iter().copied().fold(0.0, f64::max);
    Ok(ScalingReport {
        scale,
        n_paths: opts.n_paths,
        max_relative_error,
        verdict: Verdict::from_bool(max_relative_error <= PATHWISE_TOL),
    })
}

fn relative_gap(a: f64, b: f64) -> f64 {
    let m = a.abs().max(b.abs());
    if m == 0.0 {
        0.0
    } else {
        (a - b).abs() / m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub t: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub z_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleReport {
    pub prediction: f64,
    pub checkpoints: Vec<Checkpoint>,
    pub verdict: Verdict,
}

/// `E[cost_t + Y^{alpha_t}_t X_t^2]` at `count` equally spaced interior times
/// must stay at `Y^{i0}(0) x0^2`.
pub fn martingale_check(
    model: &MarketModel,
    valuation: Valuation<'_>,
    count: usize,
    opts: &McOptions,
) -> Result<MartingaleReport> {
    opts.require_sample()?;
    if count == 0 {
        return Err(LabError::Parameter("need at least one checkpoint".into()));
    }
    let surface = valuation.surface();
    let end = valuation.end(model);
    let x0 = model.initial_position();
    let times: Vec<f64> = (1..=count).map(|j| end * j as f64 / (count + 1) as f64).collect();
    let observed = map_scenarios(model, opts, |_, scenario| {
        let out = run_scenario(model, surface, scenario, end, Policy::default(), x0, &times)?;
        Ok(out.observations.iter().map(|(x, cost, y)| cost + y * x * x).collect::<Vec<f64>>())
    })?;
    let prediction = valuation.prediction(model, x0);
    let slack = QUADRATURE_SLACK * prediction.abs();
    let mut pass = true;
    let checkpoints = times
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let column: Vec<f64> = observed.iter().map(|row| row[j]).collect();
            let s = summarize(&column);
            pass &= (s.mean - prediction).abs() <= Z_THRESHOLD * s.std_error + slack;
            Checkpoint { t, estimate: s.mean, std_error: s.std_error, z_score: z_score(s.mean - prediction, s.std_error) }
        })
        .collect();
    Ok(MartingaleReport { prediction, checkpoints, verdict: Verdict::from_bool(pass) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelEstimate {
    pub level: f64,
    pub estimate: f64,
    pub std_error: f64,
    pub prediction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneReport {
    pub levels: Vec<LevelEstimate>,
    pub singular_prediction: Option<f64>,
    pub failures: Vec<String>,
    pub verdict: Verdict,
}

/// Estimates `V^L` for every ladder level on common scenarios and checks that
/// the values increase with `L`: paired differences are nonnegative within
/// 3 SE, predictions `Y^L(0) x0^2` are nondecreasing, each estimate matches
/// its prediction within 3 SE, and (if given) none exceeds the singular value.
pub fn penalized_monotone_check(
    model: &MarketModel,
    ladder: &LadderResult,
    x0: f64,
    singular_prediction: Option<f64>,
    opts: &McOptions,
) -> Result<MonotoneReport> {
    opts.require_sample()?;
    let model = model.with_initial_position(x0)?;
    let solutions = ladder.solutions();
    let horizon = model.horizon();
    let costs = map_scenarios(&model, opts, |_, scenario| {
        solutions
            .iter()
            .map(|sol| {
                let out = run_scenario(&model, sol, scenario, horizon, Policy::default(), x0, &[])?;
                Ok(out.running_cost + sol.level() * out.x_end * out.x_end)
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    let mut failures = Vec::new();
    let mut levels = Vec::with_capacity(solutions.len());
    for (k, sol) in solutions.iter().enumerate() {
        let column: Vec<f64> = costs.iter().map(|row| row[k]).collect();
        let s = summarize(&column);
        let prediction = Valuation::Penalized(sol).prediction(&model, x0);
        let slack = Z_THRESHOLD * s.std_error + QUADRATURE_SLACK * prediction.abs();
        if (s.mean - prediction).abs() > slack {
            failures.push(format!("L={}: estimate {} vs prediction {prediction}", sol.level(), s.mean));
        }
        if let Some(v) = singular_prediction {
            if s.mean > v + slack {
                failures.push(format!("L={}: estimate {} above singular value {v}", sol.level(), s.mean));
            }
        }
        levels.push(LevelEstimate { level: sol.level(), estimate: s.mean, std_error: s.std_error, prediction });
    }
    for k in 1..solutions.len() {
        let diffs: Vec<f64> = costs.iter().map(|row| row[k] - row[k - 1]).collect();
        let s = summarize(&diffs);
        let (lo, hi) = (&levels[k - 1], &levels[k]);
        if s.mean < -(Z_THRESHOLD * s.std_error + QUADRATURE_SLACK * hi.prediction.abs()) {
            failures.push(format!("L={} -> L={}: paired difference {} (SE {})", lo.level, hi.level, s.mean, s.std_error));
        }
        if hi.prediction < lo.prediction - MONOTONE_TOL {
            failures.push(format!("L={} -> L={}: prediction decreases", lo.level, hi.level));
        }
    }
    Ok(MonotoneReport { levels, singular_prediction, verdict: Verdict::from_bool(failures.is_empty()), failures })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiquidationReport {
    pub n_paths: usize,
    pub eps: Vec<f64>,
    /// Mean of `X(T - eps)/x0` per `eps`.
    pub mean_ratio: Vec<f64>,
    pub std_error: Vec<f64>,
    /// Least-squares slope of `ln mean_ratio` against `ln eps`.
    pub slope: f64,
    pub min_slope: f64,
    pub verdict: Verdict,
}

/// Minimum accepted log-log slope of the residual position.
pub const MIN_LIQUIDATION_SLOPE: f64 = 0.9;

/// Residual position `X(T - eps)/x0` under the singular feedback for several
/// `eps`; the position must vanish at least linearly in `eps`.
pub fn liquidation_profile(
    model: &MarketModel,
    solution: &SingularSolution,
    eps: &[f64],
    opts: &McOptions,
) -> Result<LiquidationReport> {
    if eps.len() < 2 {
        return Err(LabError::Parameter("need at least two eps values".into()));
    }
    opts.require_sample()?;
    let mut eps = eps.to_vec();
    eps.sort_by(|a, b| b.total_cmp(a));
    let horizon = model.horizon();
    let end = horizon - eps[eps.len() - 1];
    let times: Vec<f64> = eps[..eps.len() - 1].iter().map(|e| horizon - e).collect();
    let x0 = model.initial_position();
    let rows = map_scenarios(model, opts, |_, scenario| {
        let out = run_scenario(model, solution, scenario, end, Policy::default(), x0, &times)?;
        let mut r: Vec<f64> = out.observations.iter().map(|o| o.0 / x0).collect();
        r.push(out.x_end / x0);
        Ok(r)
    })?;
    let stats: Vec<Summary> =
        (0..eps.len()).map(|j| summarize(&rows.iter().map(|r| r[j]).collect::<Vec<_>>())).collect();
    let mean_ratio: Vec<f64> = stats.iter().map(|s| s.mean).collect();
    let slope = if mean_ratio.iter().all(|m| *m > 0.0) {
        let lx: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
        let ly: Vec<f64> = mean_ratio.iter().map(|m| m.ln()).collect();
        least_squares_slope(&lx, &ly)
    } else {
        // fully liquidated before the last cut-off
        f64::INFINITY
    };
    Ok(LiquidationReport {
        n_paths: opts.n_paths,
        std_error: stats.iter().map(|s| s.std_error).collect(),
        eps,
        mean_ratio,
        slope,
        min_slope: MIN_LIQUIDATION_SLOPE,
        verdict: Verdict::from_bool(slope >= MIN_LIQUIDATION_SLOPE),
    })
}

fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub n_paths: usize,
    /// Paths where `X` increases or leaves `[0, x0]`.
    pub monotone_violations: usize,
    /// Largest relative gap between the stepped and product-formula positions.
    pub max_product_gap: f64,
    pub scaling: ScalingReport,
    pub martingale: MartingaleReport,
    pub verdict: Verdict,
}

/// Closed-loop properties of the singular feedback on common scenarios:
/// monotone bounded positions, agreement with the product formula, quadratic
/// scaling in `x0` and constancy of the value process in expectation.
pub fn verification_suite(
    model: &MarketModel,
    solution: &SingularSolution,
    eps_sim: f64,
    opts: &McOptions,
) -> Result<VerificationReport> {
    opts.require_sample()?;
    let end = model.horizon() - eps_sim;
    let x0 = model.initial_position();
    let per_path = map_scenarios(model, opts, |_, scenario| {
        let path = evolve_state(model, solution, scenario, end)?;
        let product = product_formula_path(model, solution, scenario, end)?;
        let xs: Vec<f64> = path.positions().collect();
        let bounded = xs.iter().all(|x| (0.0..=x0).contains(x)) && xs.windows(2).all(|w| w[1] <= w[0]);
        if product.points.len() != path.points.len() {
            return Ok((bounded, f64::INFINITY));
        }
        let gap = path.points.iter().zip(&product.points).map(|(a, b)| relative_gap(a.x, b.x)).fold(0.0, f64::max);
        Ok((bounded, gap))
    })?;
    let monotone_violations = per_path.iter().filter(|p| !p.0).count();
    let max_product_gap = per_path.iter().map(|p| p.1).fold(0.0, f64::max);
    let valuation = Valuation::Singular { solution, eps_sim };
    let scaling = quadratic_scaling_check(model, valuation, 2.0, opts)?;
    let martingale = martingale_check(model, valuation, 5, opts)?;
    let verdict = Verdict::from_bool(monotone_violations == 0 && max_product_gap <= PATHWISE_TOL)
        .and(scaling.verdict)
        .and(martingale.verdict);
    Ok(VerificationReport { n_paths: opts.n_paths, monotone_violations, max_product_gap, scaling, martingale, verdict })
}
