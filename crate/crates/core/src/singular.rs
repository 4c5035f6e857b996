//! The singular solution `lim_{t -> T} Y^i_t = +inf`, built as the monotone
//! limit of a penalization ladder and bracketed by closed-form envelopes.
//!
//! Both closed-form families available (one regime without dark pool, and the
//! lower comparison solution) satisfy `1/Y^L = 1/Y^inf + c/L` exactly, so the
//! limit is extrapolated node by node from a least-squares line of `1/Y^L`
//! against `1/L` over the upper half of the ladder.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::grid::TimeGrid;
use crate::model::MarketModel;
use crate::truncated::{check_levels, closed_form_lower, upper_limit, LadderResult};
use crate::{Error, Result};

/// Default evaluation cut-off `eps_eval` as a fraction of the horizon.
pub const DEFAULT_EPS_EVAL: f64 = 1e-4;

/// Ratio of fit residual to inter-level gap above which the fit is rejected.
pub const FIT_DIVERGENCE_RATIO: f64 = 10.0;

/// Closed-form bounds `1/(e^{c (T-t)} - 1) <= Y^i_t <= eta^*/(T-t) + lambda^*/3 (T-t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsEnvelope {
    grid: TimeGrid,
    horizon: f64,
    c_check: f64,
    eta_cap: f64,
    lambda_cap: f64,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoundsEnvelope {
    pub fn new(grid: TimeGrid, horizon: f64, c_check: f64, eta_cap: f64, lambda_cap: f64) -> Result<Self> {
        if grid.end() >= horizon {
            return Err(Error::DomainError(format!("envelope grid reaches {} >= T = {horizon}", grid.end())));
        }
        if !(c_check > 0.0) {
            return Err(Error::DomainError(format!("c_check = {c_check} must be positive")));
        }
        let taus = grid.nodes().iter().map(|t| horizon - t);
        let lower = taus.clone().map(|tau| closed_form_lower(c_check, f64::INFINITY, tau)).collect();
        let upper = taus.map(|tau| upper_limit(eta_cap, lambda_cap, tau)).collect();
        Ok(Self { grid, horizon, c_check, eta_cap, lambda_cap, lower, upper })
    }

    /// Same envelope with different caps (for loosened comparisons).
    pub fn with_caps(&self, eta_cap: f64, lambda_cap: f64) -> Result<Self> {
        Self::new(self.grid.clone(), self.horizon, self.c_check, eta_cap, lambda_cap)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn c_check(&self) -> f64 {
        self.c_check
    }

    pub fn eta_cap(&self) -> f64 {
        self.eta_cap
    }

    pub fn lambda_cap(&self) -> f64 {
        self.lambda_cap
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }
}

/// Envelope of a model on a grid ending strictly before `T`, with the
/// minimal admissible `c_check = max(1/eta_floor, nu(E))`.
pub fn bounds_envelope(model: &MarketModel, grid: &TimeGrid) -> Result<BoundsEnvelope> {
    let coeffs = model.coefficients();
    BoundsEnvelope::new(grid.clone(), model.horizon(), model.c_check(), coeffs.eta_cap(), coeffs.lambda_cap())
}

/// Slack allowed when comparing against an envelope: `abs + rel * |bound|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SandwichTolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Default for SandwichTolerance {
    fn default() -> Self {
        Self { abs: 1e-7, rel: 1e-6 }
    }
}

impl SandwichTolerance {
    pub fn slack(&self, bound: f64) -> f64 {
        self.abs + self.rel * bound.abs()
    }
}

/// Extrapolated limit of a ladder on `[0, T - eps_eval]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularSolution {
    grid: TimeGrid,
    y: Vec<Vec<f64>>,
    ladder_gap: Vec<Vec<f64>>,
    fallback: Vec<(usize, usize)>,
    envelope: BoundsEnvelope,
}

impl SingularSolution {
    /// Assembles a solution from raw values (mainly for tests and imports).
    pub fn from_parts(y: Vec<Vec<f64>>, ladder_gap: Vec<Vec<f64>>, envelope: BoundsEnvelope) -> Result<Self> {
        let n = envelope.grid.len();
        if y.is_empty() || y.len() != ladder_gap.len() || y.iter().chain(&ladder_gap).any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch("solution rows must match the envelope grid".into()));
        }
        Ok(Self { grid: envelope.grid.clone(), y, ladder_gap, fallback: Vec::new(), envelope })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn regime(&self, i: usize) -> &[f64] {
        &self.y[i]
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.y
    }

    pub fn ell(&self) -> usize {
        self.y.len()
    }

    /// Fit residual per `(regime, node)`, in units of `Y`.
    pub fn ladder_gap(&self) -> &[Vec<f64>] {
        &self.ladder_gap
    }

    pub fn envelope(&self) -> &BoundsEnvelope {
        &self.envelope
    }

    pub fn horizon(&self) -> f64 {
        self.envelope.horizon
    }

    /// `(regime, node)` pairs where the fit was rejected and the top ladder value is used.
    pub fn fallback_nodes(&self) -> &[(usize, usize)] {
        &self.fallback
    }

    /// Errors with [`Error::FitDiverged`] if any node fell back to the raw supremum.
    pub fn require_converged(&self) -> Result<()> {
        match self.fallback.first() {
            None => Ok(()),
            Some(&(regime, node)) => Err(Error::FitDiverged {
                regime,
                node,
                residual: self.ladder_gap[regime][node],
                gap: f64::NAN,
            }),
        }
    }

    /// Same values against another envelope on the same grid.
    pub fn with_envelope(&self, envelope: BoundsEnvelope) -> Result<Self> {
        if envelope.grid != self.grid {
            return Err(Error::InvalidArgument("envelope grid differs from the solution grid".into()));
        }
        Ok(Self { envelope, ..self.clone() })
    }

    /// Mutable access for constructing corrupted fixtures.
    pub fn values_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.y
    }
}

/// Least-squares line `z = a + b x`; returns `(a, b)`.
fn fit_line(x: &[f64], z: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let mz = z.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxz: f64 = x.iter().zip(z).map(|(a, b)| (a - mx) * (b - mz)).sum();
    let b = sxz / sxx;
    (mz - b * mx, b)
}

/// Extrapolates the ladder to `L = inf` on the nodes `t <= T - eps_eval`.
///
/// Nodes where the `1/L` line fails (non-positive intercept, or residual above
/// [`FIT_DIVERGENCE_RATIO`] times the top inter-level gap) keep the top ladder
/// value and are listed in [`SingularSolution::fallback_nodes`]. The result
/// never drops below the largest ladder value.
pub fn extrapolate_singular(model: &MarketModel, ladder: &LadderResult, eps_eval: f64) -> Result<SingularSolution> {
    let levels = ladder.levels();
    if levels.len() < 3 {
        return Err(Error::InvalidArgument(format!("extrapolation needs at least 3 levels, got {}", levels.len())));
    }
    check_levels(levels)?;
    let horizon = model.horizon();
    if !(eps_eval > 0.0 && eps_eval < horizon) {
        return Err(Error::InvalidArgument(format!("eps_eval = {eps_eval} must lie in (0, T)")));
    }
    let grid = ladder.grid().truncated(horizon - eps_eval)?;
    let envelope = bounds_envelope(model, &grid)?;

    let used = (levels.len().div_ceil(2)).max(3);
    let top = &ladder.solutions()[levels.len() - used..];
    let x: Vec<f64> = top.iter().map(|s| 1.0 / s.level()).collect();
    let ell = model.ell();
    let mut y = vec![vec![0.0; grid.len()]; ell];
    let mut gap = vec![vec![0.0; grid.len()]; ell];
    let mut fallback = Vec::new();
    let mut z = vec![0.0; used];
    for i in 0..ell {
        for n in 0..grid.len() {
            let raw: Vec<f64> = top.iter().map(|s| s.regime(i)[n]).collect();
            let sup = raw[used - 1];
            for (zj, r) in z.iter_mut().zip(&raw) {
                *zj = 1.0 / r;
            }
            let (a, b) = fit_line(&x, &z);
            let residual = x.iter().zip(&raw).map(|(xj, r)| (r - 1.0 / (a + b * xj)).abs()).fold(0.0, f64::max);
            let step = sup - raw[used - 2];
            gap[i][n] = residual;
            if !(a > 0.0) || residual > FIT_DIVERGENCE_RATIO * step.abs() && residual > 0.0 {
                fallback.push((i, n));
                y[i][n] = sup;
            } else {
                y[i][n] = (1.0 / a).max(sup);
            }
        }
    }
    Ok(SingularSolution { grid, y, ladder_gap: gap, fallback, envelope })
}

/// One row of the blow-up table.
#[derive(Debug, Clone, PartialEq)]
pub struct BlowupRow {
    pub tau: f64,
    /// `(T - t) Y^i_t` per regime.
    pub scaled: Vec<f64>,
    pub lower_scaled: f64,
    pub upper_scaled: f64,
    pub inside: bool,
}

/// Default tail: nodes with `T - t <= 0.1 T`.
pub const BLOWUP_TAIL_FRACTION: f64 = 0.1;

/// `(T - t) Y` against the rescaled envelope on the tail of the grid.
pub fn blowup_profile(sol: &SingularSolution, tol: SandwichTolerance) -> Vec<BlowupRow> {
    let horizon = sol.horizon();
    let env = &sol.envelope;
    sol.grid
        .nodes()
        .iter()
        .enumerate()
        .filter(|(_, t)| horizon - **t <= BLOWUP_TAIL_FRACTION * horizon)
        .map(|(n, t)| {
            let tau = horizon - t;
            let (lo, hi) = (env.lower[n], env.upper[n]);
            let inside = sol.y.iter().all(|row| row[n] >= lo - tol.slack(lo) && row[n] <= hi + tol.slack(hi));
            BlowupRow {
                tau,
                scaled: sol.y.iter().map(|row| tau * row[n]).collect(),
                lower_scaled: tau * lo,
                upper_scaled: tau * hi,
                inside,
            }
        })
        .collect()
}

/// Per-node sandwich verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct SandwichReport {
    /// `inside[regime][node]`.
    pub inside: Vec<Vec<bool>>,
    /// Smallest of `Y - lower` and `upper - Y` over all nodes (negative on violation).
    pub worst_slack: f64,
    pub worst_node: (usize, usize),
    pub violations: usize,
    pub pass: bool,
}

pub fn verify_sandwich(sol: &SingularSolution, tol: SandwichTolerance) -> SandwichReport {
    let env = &sol.envelope;
    let mut worst_slack = f64::INFINITY;
    let mut worst_node = (0, 0);
    let mut violations = 0;
    let inside = sol
        .y
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(n, &y)| {
                    let (lo, hi) = (env.lower[n], env.upper[n]);
                    let slack = (y - lo).min(hi - y);
                    if slack < worst_slack {
                        worst_slack = slack;
                        worst_node = (i, n);
                    }
                    let ok = y >= lo - tol.slack(lo) && y <= hi + tol.slack(hi);
                    if !ok {
                        violations += 1;
                    }
                    ok
                })
                .collect()
        })
        .collect();
    SandwichReport { inside, worst_slack, worst_node, violations, pass: violations == 0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CoefficientSet, MarkMeasure, RegimeGenerator};
    use crate::truncated::solve_ladder;

    fn unit_model(nu: f64) -> MarketModel {
        let (measure, gamma) = if nu > 0.0 {
            (MarkMeasure::new(vec!["dark".into()], vec![nu]).unwrap(), vec![vec![0.0]])
        } else {
            (MarkMeasure::empty(), vec![vec![]])
        };
        let coeffs = CoefficientSet::constant(2.0, vec![1.0], vec![0.0], gamma).unwrap();
        MarketModel::new(RegimeGenerator::new(vec![vec![0.0]]).unwrap(), measure, coeffs, 2.0, 0, 1.0).unwrap()
    }

    #[test]
    fn envelope_examples() {
        let m = unit_model(1.0);
        let grid = TimeGrid::from_nodes(vec![0.0, 1.0, 2.0 - 1e-6]).unwrap();
        let env = bounds_envelope(&m, &grid).unwrap();
        assert!((env.lower()[1] - 0.581977).abs() < 1e-6);
        assert_eq!(env.upper()[1], 1.0);
        // lambda^* = 0: upper is exactly eta^*/(T - t)
        assert_eq!(env.upper()[0], 0.5);
        assert!((1e-6 * env.upper()[2] - 1.0).abs() < 1e-3);
        assert!(env.lower().iter().zip(env.upper()).all(|(l, u)| l < u));
        let full = TimeGrid::uniform(2.0, 4, &[]).unwrap();
        assert!(matches!(bounds_envelope(&m, &full), Err(Error::DomainError(_))));
    }

    #[test]
    fn extrapolates_single_regime_family() {
        let m = unit_model(0.0);
        let grid = TimeGrid::for_model(&m, 1024, &[1.0]).unwrap();
        let ladder = solve_ladder(&m, &[10.0, 20.0, 40.0, 80.0], &grid).unwrap();
        let sol = extrapolate_singular(&m, &ladder, 2e-4).unwrap();
        let n = sol.grid().index_of(1.0).unwrap();
        assert!((sol.regime(0)[n] - 1.0).abs() < 1e-4);
        assert!(sol.fallback_nodes().is_empty());
        assert!(verify_sandwich(&sol, SandwichTolerance::default()).pass);
    }

    #[test]
    fn extrapolation_preconditions() {
        let m = unit_model(0.0);
        let grid = TimeGrid::for_model(&m, 64, &[]).unwrap();
        let ladder = solve_ladder(&m, &[1.0, 2.0], &grid).unwrap();
        assert!(matches!(extrapolate_singular(&m, &ladder, 1e-3), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn corrupted_node_fails_sandwich() {
        let m = unit_model(1.0);
        let grid = TimeGrid::for_model(&m, 512, &[]).unwrap();
        let ladder = solve_ladder(&m, &[1.0, 4.0, 16.0, 64.0], &grid).unwrap();
        let mut sol = extrapolate_singular(&m, &ladder, 2e-4).unwrap();
        let tol = SandwichTolerance::default();
        assert!(verify_sandwich(&sol, tol).pass);
        let loose = sol.with_envelope(sol.envelope().with_caps(1.0, 10.0 * 3.0).unwrap()).unwrap();
        assert!(verify_sandwich(&loose, tol).pass);
        let lo = sol.envelope().lower()[10];
        sol.values_mut()[0][10] = 0.5 * lo;
        let report = verify_sandwich(&sol, tol);
        assert!(!report.pass);
        assert_eq!(report.violations, 1);
        assert!(!report.inside[0][10]);
        assert_eq!(report.worst_node, (0, 10));
    }

    #[test]
    fn blowup_rows_stay_in_bracket() {
        let m = unit_model(1.0);
        let grid = TimeGrid::for_model(&m, 2048, &[]).unwrap();
        let levels: Vec<f64> = crate::truncated::default_levels();
        let ladder = solve_ladder(&m, &levels, &grid).unwrap();
        let sol = extrapolate_singular(&m, &ladder, 2e-4).unwrap();
        let rows = blowup_profile(&sol, SandwichTolerance::default());
        assert!(!rows.is_empty());
        assert!(rows.iter().all(|r| r.inside));
        let last = rows.last().unwrap();
        assert!((last.scaled[0] - 1.0).abs() < 1e-3);
    }
}
