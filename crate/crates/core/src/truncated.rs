//! Truncated system `Y^i(T) = L`.
//!
//! Under deterministic coefficients the truncated backward system is the ODE
//! system `dY^i/dt = -f^i(t, Y, 0)`, integrated here backward from `T` with
//! classical RK4. Every grid step is checked against two half steps and is
//! subdivided until the two agree to the requested relative tolerance.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::driver::driver_with;
use crate::grid::TimeGrid;
use crate::model::MarketModel;
use crate::{Error, Result};

/// Default absolute tolerance for ladder ordering checks.
pub const MONOTONE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Relative step-halving discrepancy accepted per step.
    pub rel_tol: f64,
    /// Maximal number of successive halvings of one grid step.
    pub max_halvings: u32,
    /// When false, one plain RK4 step per grid step and no halving check.
    pub adaptive: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-10, max_halvings: 20, adaptive: true }
    }
}

/// `Y^{L,i}` on a grid reaching `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSolution {
    level: f64,
    grid: TimeGrid,
    y: Vec<Vec<f64>>,
}

impl TruncatedSolution {
    /// Assembles a solution from raw values, `y[regime][node]`.
    pub fn from_parts(level: f64, grid: TimeGrid, y: Vec<Vec<f64>>) -> Result<Self> {
        if y.is_empty() || y.iter().any(|row| row.len() != grid.len()) {
            return Err(Error::DimensionMismatch("solution rows must match the grid".into()));
        }
        Ok(Self { level, grid, y })
    }

    /// Penalization level `L`.
    pub fn level(&self) -> f64 {
        self.level
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Values of one regime at every node.
    pub fn regime(&self, i: usize) -> &[f64] {
        &self.y[i]
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.y
    }

    pub fn ell(&self) -> usize {
        self.y.len()
    }

    /// Largest violation of the closed-form envelope
    /// `lower(c_check, L, T - t) <= Y <= eta^*/(T - t) + lambda^*/3 (T - t)`;
    /// non-positive when the solution lies inside.
    pub fn envelope_excess(&self, model: &MarketModel) -> f64 {
        let c = model.c_check();
        let coeffs = model.coefficients();
        let horizon = model.horizon();
        let mut worst = f64::NEG_INFINITY;
        for row in &self.y {
            for (&t, &y) in self.grid.nodes().iter().zip(row) {
                let tau = horizon - t;
                let lower = closed_form_lower(c, self.level, tau);
                let mut excess = lower - y;
                if tau > 0.0 {
                    excess = excess.max(y - upper_limit(coeffs.eta_cap(), coeffs.lambda_cap(), tau));
                }
                worst = worst.max(excess);
            }
        }
        worst
    }
}

/// Solves the truncated system at level `L` with default options.
pub fn solve_truncated(model: &MarketModel, level: f64, grid: &TimeGrid) -> Result<TruncatedSolution> {
    solve_truncated_with(model, level, grid, SolverOptions::default())
}

pub fn solve_truncated_with(
    model: &MarketModel,
    level: f64,
    grid: &TimeGrid,
    opts: SolverOptions,
) -> Result<TruncatedSolution> {
    if !(level > 0.0 && level.is_finite()) {
        return Err(Error::InvalidArgument(format!("penalization level {level} must be positive and finite")));
    }
    let horizon = model.horizon();
    if grid.end() != horizon {
        return Err(Error::InvalidArgument(format!("grid ends at {}, horizon is {horizon}", grid.end())));
    }
    if let Some(b) = model.coefficients().breakpoints().iter().find(|&&b| !grid.contains(b)) {
        return Err(Error::InvalidArgument(format!("grid misses coefficient breakpoint {b}")));
    }

    let ell = model.ell();
    let nodes = grid.nodes();
    let mut y = vec![vec![0.0; nodes.len()]; ell];
    let mut state = vec![level; ell];
    for row in y.iter_mut() {
        row[nodes.len() - 1] = level;
    }
    let mut stepper = Stepper::new(model);
    for n in (0..nodes.len() - 1).rev() {
        let (t0, t1) = (nodes[n], nodes[n + 1]);
        let interval = model.coefficients().interval_index(0.5 * (t0 + t1));
        stepper.interval = interval;
        if opts.adaptive {
            stepper.adaptive_step(&mut state, t1 - t0, opts).map_err(|d| Error::ToleranceFailure { t: t0, discrepancy: d })?;
        } else {
            stepper.rk4(&mut state, t1 - t0);
        }
        if let Some(v) = state.iter().find(|v| !v.is_finite()) {
            return Err(Error::ToleranceFailure { t: t0, discrepancy: *v });
        }
        for (row, v) in y.iter_mut().zip(&state) {
            row[n] = *v;
        }
    }
    Ok(TruncatedSolution { level, grid: grid.clone(), y })
}

/// RK4 in reversed time `tau = T - t`, where `dY/dtau = f(Y)` with the
/// coefficients of one interval (autonomous within a grid step).
struct Stepper<'a> {
    model: &'a MarketModel,
    interval: usize,
    psi: Vec<f64>,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(model: &'a MarketModel) -> Self {
        let ell = model.ell();
        Self {
            model,
            interval: 0,
            psi: vec![0.0; model.measure().len()],
            k: [vec![0.0; ell], vec![0.0; ell], vec![0.0; ell], vec![0.0; ell]],
            tmp: vec![0.0; ell],
        }
    }

    fn rk4(&mut self, y: &mut [f64], h: f64) {
        let [k1, k2, k3, k4] = &mut self.k;
        let mut tmp = core::mem::take(&mut self.tmp);
        let rhs = |y: &[f64], out: &mut [f64]| {
            let coeffs = self.model.coefficients();
            for (i, o) in out.iter_mut().enumerate() {
                *o = driver_with(self.model, i, coeffs.on_interval(i, self.interval), y, &self.psi);
            }
        };
        rhs(y, k1);
        for i in 0..y.len() {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        rhs(&tmp, k2);
        for i in 0..y.len() {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        rhs(&tmp, k3);
        for i in 0..y.len() {
            tmp[i] = y[i] + h * k3[i];
        }
        rhs(&tmp, k4);
        for i in 0..y.len() {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        self.tmp = tmp;
    }

    /// Advances one grid step of length `h`, subdividing until every substep
    /// passes the step-halving check. Returns the last discrepancy on failure.
    fn adaptive_step(&mut self, y: &mut [f64], h: f64, opts: SolverOptions) -> core::result::Result<(), f64> {
        let start = y.to_vec();
        let mut full = vec![0.0; y.len()];
        let mut pieces = 1usize;
        let mut last = f64::NAN;
        for _ in 0..=opts.max_halvings {
            y.copy_from_slice(&start);
            let hs = h / pieces as f64;
            let mut ok = true;
            for _ in 0..pieces {
                full.copy_from_slice(y);
                self.rk4(&mut full, hs);
                self.rk4(y, 0.5 * hs);
                self.rk4(y, 0.5 * hs);
                let disc = y
                    .iter()
                    .zip(&full)
                    .map(|(a, b)| (a - b).abs() / (a.abs() + 1e-12))
                    .fold(0.0, f64::max);
                if !(disc <= opts.rel_tol) {
                    last = disc;
                    ok = false;
                    break;
                }
            }
            if ok {
                return Ok(());
            }
            pieces *= 2;
        }
        Err(last)
    }
}

/// Ordered penalization ladder `L_1 < L_2 < ...` with its solutions.
#[derive(Debug, Clone, PartialEq)]
pub struct LadderResult {
    levels: Vec<f64>,
    solutions: Vec<TruncatedSolution>,
    max_violation: f64,
}

impl LadderResult {
    /// Checks that levels increase, grids agree and values are ordered in `L`
    /// at every node within `tol`.
    pub fn from_solutions(solutions: Vec<TruncatedSolution>, tol: f64) -> Result<Self> {
        if solutions.is_empty() {
            return Err(Error::InvalidArgument("empty ladder".into()));
        }
        let levels: Vec<f64> = solutions.iter().map(|s| s.level).collect();
        check_levels(&levels)?;
        if solutions.iter().any(|s| s.grid != solutions[0].grid || s.ell() != solutions[0].ell()) {
            return Err(Error::InvalidArgument("ladder solutions must share one grid".into()));
        }
        let mut max_violation = 0.0f64;
        for pair in solutions.windows(2) {
            let (lo, hi) = (&pair[0], &pair[1]);
            for (i, (a, b)) in lo.y.iter().zip(&hi.y).enumerate() {
                for (n, (ya, yb)) in a.iter().zip(b).enumerate() {
                    let excess = ya - yb;
                    max_violation = max_violation.max(excess);
                    if excess > tol {
                        return Err(Error::MonotonicityViolation {
                            lower_level: lo.level,
                            upper_level: hi.level,
                            regime: i,
                            node: n,
                            excess,
                        });
                    }
                }
            }
        }
        Ok(Self { levels, solutions, max_violation })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn solutions(&self) -> &[TruncatedSolution] {
        &self.solutions
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.solutions[0].grid
    }

    /// Largest `Y_L - Y_{L'}` over consecutive levels `L < L'` (zero if ordered).
    pub fn max_violation(&self) -> f64 {
        self.max_violation
    }
}

pub(crate) fn check_levels(levels: &[f64]) -> Result<()> {
    if levels.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
        return Err(Error::InvalidArgument("ladder levels must be positive and finite".into()));
    }
    if levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("ladder levels must be strictly increasing".into()));
    }
    Ok(())
}

/// Solves every level on one grid; aborts on an ordering violation beyond [`MONOTONE_TOL`].
pub fn solve_ladder(model: &MarketModel, levels: &[f64], grid: &TimeGrid) -> Result<LadderResult> {
    if levels.is_empty() {
        return Err(Error::InvalidArgument("empty ladder".into()));
    }
    check_levels(levels)?;
    let solutions = levels.iter().map(|&l| solve_truncated(model, l, grid)).collect::<Result<Vec<_>>>()?;
    LadderResult::from_solutions(solutions, MONOTONE_TOL)
}

/// Default ladder `1, 2, 4, ..., 1024`.
pub fn default_levels() -> Vec<f64> {
    (0..=10).map(|k| f64::from(1u32 << k)).collect()
}

/// `L eta / (eta + L tau)`: the truncated solution for one regime with `lambda = 0`, no dark pool.
pub fn closed_form_single_regime(eta: f64, level: f64, tau: f64) -> f64 {
    if level.is_infinite() {
        return eta / tau;
    }
    level * eta / (eta + level * tau)
}

/// `1 / ((1 + 1/L) e^{c tau} - 1)`, the lower comparison solution; `L = inf` gives `1/(e^{c tau} - 1)`.
pub fn closed_form_lower(c_check: f64, level: f64, tau: f64) -> f64 {
    let growth = c_check * tau;
    1.0 / (libm::expm1(growth) + libm::exp(growth) / level)
}

/// `eta^*/tau + lambda^*/3 tau`, the upper bound in the limit `eps -> 0`.
pub fn upper_limit(eta_cap: f64, lambda_cap: f64, tau: f64) -> f64 {
    eta_cap / tau + lambda_cap / 3.0 * tau
}

/// Explicit solution of the upper comparison system on `[0, T - eps]` with
/// terminal value `tilde_c` at `T - eps`:
/// `(eps^2 tilde_c + lambda^* ((T-t)^3 - eps^3)/3 + eta^* (T - t - eps)) / (T - t)^2`.
pub fn closed_form_upper_path(
    eta_cap: f64,
    lambda_cap: f64,
    eps: f64,
    tilde_c: f64,
    horizon: f64,
    t: f64,
) -> Result<f64> {
    if !(eps > 0.0 && eps < horizon) || t < 0.0 || t > horizon - eps {
        return Err(Error::DomainError(format!("need 0 <= t <= T - eps (t = {t}, T = {horizon}, eps = {eps})")));
    }
    if t == horizon - eps {
        return Ok(tilde_c);
    }
    let tau = horizon - t;
    let num = eps * eps * tilde_c + lambda_cap * (tau * tau * tau - eps * eps * eps) / 3.0 + eta_cap * (tau - eps);
    Ok(num / (tau * tau))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CoefficientSet, MarkMeasure, RegimeGenerator};

    fn no_jump(eta: f64) -> MarketModel {
        let coeffs = CoefficientSet::constant(1.0, vec![eta], vec![0.0], vec![vec![]]).unwrap();
        MarketModel::new(RegimeGenerator::new(vec![vec![0.0]]).unwrap(), MarkMeasure::empty(), coeffs, 1.0, 0, 1.0)
            .unwrap()
    }

    fn lower_family() -> MarketModel {
        let coeffs = CoefficientSet::constant(1.0, vec![1.0], vec![0.0], vec![vec![0.0]]).unwrap();
        let nu = MarkMeasure::new(vec!["dark".into()], vec![1.0]).unwrap();
        MarketModel::new(RegimeGenerator::new(vec![vec![0.0]]).unwrap(), nu, coeffs, 1.0, 0, 1.0).unwrap()
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(closed_form_single_regime(1.0, 1.0, 0.0), 1.0);
        assert_eq!(closed_form_single_regime(2.0, 2.0, 1.0), 1.0);
        assert!((closed_form_single_regime(1.0, 10.0, 9.0) - 10.0 / 91.0).abs() < 1e-15);

        assert!((closed_form_lower(1.0, 1.0, 0.0) - 1.0).abs() < 1e-15);
        let e = core::f64::consts::E;
        assert!((closed_form_lower(1.0, 1.0, 1.0) - 1.0 / (2.0 * e - 1.0)).abs() < 1e-15);
        assert!((closed_form_lower(1.0, f64::INFINITY, 1.0) - 1.0 / (e - 1.0)).abs() < 1e-15);
        assert!((closed_form_lower(1.0, 1.0, 1.0) - 0.225399).abs() < 1e-6);
        assert!((closed_form_lower(1.0, f64::INFINITY, 1.0) - 0.581977).abs() < 1e-6);
    }

    #[test]
    fn upper_path_examples() {
        assert_eq!(closed_form_upper_path(1.0, 3.0, 0.1, 7.5, 1.0, 0.9).unwrap(), 7.5);
        // eps -> 0
        let small = closed_form_upper_path(1.0, 3.0, 1e-9, 0.0, 1.0, 0.0).unwrap();
        assert!((small - 2.0).abs() < 1e-8);
        assert_eq!(upper_limit(1.0, 3.0, 1.0), 2.0);
        assert!(matches!(closed_form_upper_path(1.0, 0.0, 0.1, 0.0, 1.0, 0.95), Err(Error::DomainError(_))));
    }

    #[test]
    fn upper_path_matches_integral_form() {
        // (1/Gamma_t) (Gamma_{T-eps} c + int_t^{T-eps} Gamma_s (lambda + eta/(T-s)^2) ds), Simpson quadrature
        let (eta, lambda, eps, c, horizon, t) = (1.3, 0.7, 0.05, 4.0, 1.0, 0.2);
        let gamma = |s: f64| ((horizon - s) / horizon).powi(2);
        let g = |s: f64| gamma(s) * (lambda + eta / (horizon - s).powi(2));
        let (a, b, n) = (t, horizon - eps, 2000);
        let h = (b - a) / n as f64;
        let mut sum = g(a) + g(b);
        for k in 1..n {
            sum += if k % 2 == 1 { 4.0 } else { 2.0 } * g(a + k as f64 * h);
        }
        let integral = sum * h / 3.0;
        let expected = (gamma(b) * c + integral) / gamma(t);
        let got = closed_form_upper_path(eta, lambda, eps, c, horizon, t).unwrap();
        assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
    }

    #[test]
    fn single_regime_oracle() {
        let m = no_jump(1.0);
        let grid = TimeGrid::for_model(&m, 4096, &[]).unwrap();
        let sol = solve_truncated(&m, 1.0, &grid).unwrap();
        assert!((sol.regime(0)[0] - 0.5).abs() < 1e-8);
        assert_eq!(*sol.regime(0).last().unwrap(), 1.0);
    }

    #[test]
    fn lower_family_oracle() {
        let m = lower_family();
        let grid = TimeGrid::for_model(&m, 4096, &[]).unwrap();
        let sol = solve_truncated(&m, 1.0, &grid).unwrap();
        let e = core::f64::consts::E;
        assert!((sol.regime(0)[0] - 1.0 / (2.0 * e - 1.0)).abs() < 1e-8);
    }

    #[test]
    fn rk4_order_on_uniform_grids() {
        let m = no_jump(1.0);
        let opts = SolverOptions { adaptive: false, ..Default::default() };
        let err = |steps: usize| {
            let grid = TimeGrid::uniform(1.0, steps, &[]).unwrap();
            let sol = solve_truncated_with(&m, 10.0, &grid, opts).unwrap();
            grid.nodes()
                .iter()
                .zip(sol.regime(0))
                .map(|(t, y)| (y - closed_form_single_regime(1.0, 10.0, 1.0 - t)).abs())
                .fold(0.0, f64::max)
        };
        let (coarse, fine) = (err(64), err(128));
        let order = libm::log2(coarse / fine);
        assert!(order >= 3.8, "order {order}");
        assert!(err(1000) <= 1e-8);
    }

    #[test]
    fn ladder_preconditions() {
        let m = no_jump(1.0);
        let grid = TimeGrid::for_model(&m, 256, &[]).unwrap();
        assert!(matches!(solve_ladder(&m, &[2.0, 1.0], &grid), Err(Error::InvalidArgument(_))));
        assert!(solve_ladder(&m, &[1.0], &grid).is_ok());
        let ladder = solve_ladder(&m, &[1.0, 2.0, 4.0], &grid).unwrap();
        let s = ladder.solutions();
        for n in 0..grid.len() {
            assert!(s[0].regime(0)[n] <= s[1].regime(0)[n] && s[1].regime(0)[n] <= s[2].regime(0)[n]);
        }
    }

    #[test]
    fn corrupted_ladder_is_rejected() {
        let m = no_jump(1.0);
        let grid = TimeGrid::for_model(&m, 64, &[]).unwrap();
        let a = solve_truncated(&m, 1.0, &grid).unwrap();
        let b = solve_truncated(&m, 2.0, &grid).unwrap();
        let mut y = b.values().to_vec();
        y[0][3] = a.regime(0)[3] - 0.1;
        let bad = TruncatedSolution::from_parts(2.0, grid.clone(), y).unwrap();
        assert!(matches!(
            LadderResult::from_solutions(vec![a, bad], MONOTONE_TOL),
            Err(Error::MonotonicityViolation { node: 3, .. })
        ));
    }

    #[test]
    fn rejects_grid_without_breakpoints() {
        let coeffs = CoefficientSet::new(
            vec![0.0, 0.37, 1.0],
            vec![vec![1.0, 2.0]],
            vec![vec![0.0, 0.0]],
            vec![vec![vec![], vec![]]],
            Default::default(),
        )
        .unwrap();
        let m = MarketModel::new(RegimeGenerator::new(vec![vec![0.0]]).unwrap(), MarkMeasure::empty(), coeffs, 1.0, 0, 1.0)
            .unwrap();
        let grid = TimeGrid::uniform(1.0, 10, &[]).unwrap();
        assert!(solve_truncated(&m, 1.0, &grid).is_err());
        assert!(solve_truncated(&m, 0.0, &TimeGrid::for_model(&m, 10, &[]).unwrap()).is_err());
    }
}
