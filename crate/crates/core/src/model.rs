//! Problem data: regime generator, dark-pool mark measure, piecewise-constant
//! coefficients and the liquidation task itself.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Absolute tolerance on generator row sums.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Generator `Q = (q^{ij})` of the regime Markov chain.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeGenerator {
    q: Vec<Vec<f64>>,
}

impl RegimeGenerator {
    /// Validates a raw rate matrix; see [`validate_generator`].
    pub fn new(raw: Vec<Vec<f64>>) -> Result<Self> {
        validate_generator(&raw)
    }

    /// Number of regimes.
    pub fn ell(&self) -> usize {
        self.q.len()
    }

    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.q[i][j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.q[i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.q
    }

    /// Total rate `-q^{ii}` of leaving regime `i`.
    pub fn exit_rate(&self, i: usize) -> f64 {
        -self.q[i][i]
    }
}

/// Checks off-diagonal signs and zero row sums. Rows whose sum is within
/// [`ROW_SUM_TOL`] of zero get their diagonal snapped so the sum is exactly zero.
pub fn validate_generator(raw: &[Vec<f64>]) -> Result<RegimeGenerator> {
    let ell = raw.len();
    if ell == 0 {
        return Err(Error::DimensionMismatch("generator has no regimes".into()));
    }
    let mut q = Vec::with_capacity(ell);
    for (i, row) in raw.iter().enumerate() {
        if row.len() != ell {
            return Err(Error::DimensionMismatch(format!(
                "generator row {i} has {} entries, expected {ell}",
                row.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::AssumptionViolated(format!("generator row {i} has a non-finite rate")));
        }
        for (j, &v) in row.iter().enumerate() {
            if j != i && v < 0.0 {
                return Err(Error::NegativeOffDiagonal { row: i, col: j, value: v });
            }
        }
        let sum: f64 = row.iter().sum();
        if sum.abs() > ROW_SUM_TOL {
            return Err(Error::RowSumNonzero { row: i, sum });
        }
        let mut snapped = row.clone();
        let off: f64 = row.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, v)| v).sum();
        snapped[i] = -off;
        q.push(snapped);
    }
    Ok(RegimeGenerator { q })
}

/// Finite discrete intensity measure of dark-pool executions: `nu = sum_k w_k delta_{e_k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkMeasure {
    labels: Vec<String>,
    weights: Vec<f64>,
}

impl MarkMeasure {
    pub fn new(labels: Vec<String>, weights: Vec<f64>) -> Result<Self> {
        if labels.len() != weights.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} mark labels for {} weights",
                labels.len(),
                weights.len()
            )));
        }
        if let Some((k, w)) = weights.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::AssumptionViolated(format!("mark {k} has non-positive weight {w}")));
        }
        Ok(Self { labels, weights })
    }

    /// The no-dark-pool measure.
    pub fn empty() -> Self {
        Self { labels: Vec::new(), weights: Vec::new() }
    }

    /// Number of marks `K`.
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `nu(E)`.
    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Optional user-supplied bounds of the coefficient boxes. Missing entries are
/// computed from the data; supplied ones must dominate the data.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CoefficientCaps {
    pub eta_floor: Option<f64>,
    pub eta_cap: Option<f64>,
    pub lambda_cap: Option<f64>,
    pub gamma_cap: Option<f64>,
}

/// Coefficients at one `(regime, time)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients<'a> {
    pub eta: f64,
    pub lambda: f64,
    pub gamma: &'a [f64],
}

/// Piecewise-constant, right-continuous coefficients on `[t_m, t_{m+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    breakpoints: Vec<f64>,
    eta: Vec<Vec<f64>>,
    lambda: Vec<Vec<f64>>,
    gamma: Vec<Vec<Vec<f64>>>,
    eta_floor: f64,
    eta_cap: f64,
    lambda_cap: f64,
    gamma_cap: f64,
}

impl CoefficientSet {
    /// `eta` and `lambda` are indexed `[regime][interval]`, `gamma` is
    /// `[regime][interval][mark]`.
    pub fn new(
        breakpoints: Vec<f64>,
        eta: Vec<Vec<f64>>,
        lambda: Vec<Vec<f64>>,
        gamma: Vec<Vec<Vec<f64>>>,
        caps: CoefficientCaps,
    ) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::DimensionMismatch("need at least two breakpoints".into()));
        }
        if breakpoints[0] != 0.0 {
            return Err(Error::InvalidArgument(format!("first breakpoint is {}, expected 0", breakpoints[0])));
        }
        if breakpoints.iter().any(|b| !b.is_finite()) || breakpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("breakpoints must be finite and strictly increasing".into()));
        }
        let intervals = breakpoints.len() - 1;
        let ell = eta.len();
        if ell == 0 {
            return Err(Error::DimensionMismatch("eta has no regimes".into()));
        }
        if lambda.len() != ell || gamma.len() != ell {
            return Err(Error::DimensionMismatch(format!(
                "eta/lambda/gamma regime counts {ell}/{}/{}",
                lambda.len(),
                gamma.len()
            )));
        }
        let marks = gamma[0].first().map_or(0, Vec::len);
        for i in 0..ell {
            if eta[i].len() != intervals || lambda[i].len() != intervals || gamma[i].len() != intervals {
                return Err(Error::DimensionMismatch(format!(
                    "regime {i}: expected {intervals} intervals in eta, lambda and gamma"
                )));
            }
            if let Some(m) = gamma[i].iter().position(|row| row.len() != marks) {
                return Err(Error::DimensionMismatch(format!("gamma[{i}][{m}] has a different mark count")));
            }
        }

        let mut eta_min = f64::INFINITY;
        let mut eta_max = 0.0f64;
        let mut lambda_max = 0.0f64;
        let mut gamma_max = 0.0f64;
        for i in 0..ell {
            for m in 0..intervals {
                let e = eta[i][m];
                if !(e.is_finite() && e > 0.0) {
                    return Err(Error::AssumptionViolated(format!("eta[{i}][{m}] = {e} is not positive")));
                }
                let l = lambda[i][m];
                if !(l.is_finite() && l >= 0.0) {
                    return Err(Error::AssumptionViolated(format!("lambda[{i}][{m}] = {l} is negative")));
                }
                eta_min = eta_min.min(e);
                eta_max = eta_max.max(e);
                lambda_max = lambda_max.max(l);
                for (k, &g) in gamma[i][m].iter().enumerate() {
                    if !(g.is_finite() && g >= 0.0) {
                        return Err(Error::AssumptionViolated(format!("gamma[{i}][{m}][{k}] = {g} is negative")));
                    }
                    gamma_max = gamma_max.max(g);
                }
            }
        }

        let eta_floor = match caps.eta_floor {
            Some(v) if !(v > 0.0 && v <= eta_min) => {
                return Err(Error::AssumptionViolated(format!("eta floor {v} must lie in (0, {eta_min}]")))
            }
            Some(v) => v,
            None => eta_min,
        };
        let dominate = |name: &str, given: Option<f64>, computed: f64| -> Result<f64> {
            match given {
                Some(v) if !(v.is_finite() && v >= computed) => {
                    Err(Error::AssumptionViolated(format!("{name} {v} is below the data maximum {computed}")))
                }
                Some(v) => Ok(v),
                None => Ok(computed),
            }
        };
        let eta_cap = dominate("eta cap", caps.eta_cap, eta_max)?;
        let lambda_cap = dominate("lambda cap", caps.lambda_cap, lambda_max)?;
        let gamma_cap = dominate("gamma cap", caps.gamma_cap, gamma_max)?;

        Ok(Self { breakpoints, eta, lambda, gamma, eta_floor, eta_cap, lambda_cap, gamma_cap })
    }

    /// Time-constant coefficients on `[0, horizon]`.
    pub fn constant(horizon: f64, eta: Vec<f64>, lambda: Vec<f64>, gamma: Vec<Vec<f64>>) -> Result<Self> {
        let wrap = |v: Vec<f64>| v.into_iter().map(|x| alloc::vec![x]).collect();
        Self::new(
            alloc::vec![0.0, horizon],
            wrap(eta),
            wrap(lambda),
            gamma.into_iter().map(|row| alloc::vec![row]).collect(),
            CoefficientCaps::default(),
        )
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn regimes(&self) -> usize {
        self.eta.len()
    }

    pub fn intervals(&self) -> usize {
        self.breakpoints.len() - 1
    }

    pub fn marks(&self) -> usize {
        self.gamma[0][0].len()
    }

    /// Index `m` of the interval `[t_m, t_{m+1})` containing `t`; the last
    /// interval is closed at its right end.
    pub fn interval_index(&self, t: f64) -> usize {
        let above = self.breakpoints.partition_point(|&b| b <= t);
        above.saturating_sub(1).min(self.intervals() - 1)
    }

    /// Coefficients of `regime` on interval `m`.
    pub fn on_interval(&self, regime: usize, m: usize) -> Coefficients<'_> {
        Coefficients { eta: self.eta[regime][m], lambda: self.lambda[regime][m], gamma: &self.gamma[regime][m] }
    }

    pub fn eta_floor(&self) -> f64 {
        self.eta_floor
    }

    pub fn eta_cap(&self) -> f64 {
        self.eta_cap
    }

    pub fn lambda_cap(&self) -> f64 {
        self.lambda_cap
    }

    pub fn gamma_cap(&self) -> f64 {
        self.gamma_cap
    }

    /// True when every stored `(i, m, k)` entry lies in the assumption boxes.
    pub fn within_caps(&self) -> bool {
        (0..self.regimes()).all(|i| {
            (0..self.intervals()).all(|m| {
                let e = self.eta[i][m];
                let l = self.lambda[i][m];
                self.eta_floor <= e
                    && e <= self.eta_cap
                    && (0.0..=self.lambda_cap).contains(&l)
                    && self.gamma[i][m].iter().all(|g| (0.0..=self.gamma_cap).contains(g))
            })
        })
    }
}

/// A complete liquidation problem.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketModel {
    generator: RegimeGenerator,
    measure: MarkMeasure,
    coefficients: CoefficientSet,
    horizon: f64,
    initial_regime: usize,
    initial_position: f64,
}

impl MarketModel {
    pub fn new(
        generator: RegimeGenerator,
        measure: MarkMeasure,
        coefficients: CoefficientSet,
        horizon: f64,
        initial_regime: usize,
        initial_position: f64,
    ) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidArgument(format!("horizon {horizon} must be positive")));
        }
        if !(initial_position.is_finite() && initial_position > 0.0) {
            return Err(Error::InvalidArgument(format!("initial position {initial_position} must be positive")));
        }
        let ell = generator.ell();
        if initial_regime >= ell {
            return Err(Error::DimensionMismatch(format!("initial regime {initial_regime} with {ell} regimes")));
        }
        if coefficients.regimes() != ell {
            return Err(Error::DimensionMismatch(format!(
                "coefficients have {} regimes, generator has {ell}",
                coefficients.regimes()
            )));
        }
        if coefficients.marks() != measure.len() {
            return Err(Error::DimensionMismatch(format!(
                "gamma has {} marks, measure has {}",
                coefficients.marks(),
                measure.len()
            )));
        }
        let last = *coefficients.breakpoints.last().expect("validated breakpoints");
        if (last - horizon).abs() > 1e-12 * horizon {
            return Err(Error::DimensionMismatch(format!("last breakpoint {last} differs from horizon {horizon}")));
        }
        let mut coefficients = coefficients;
        *coefficients.breakpoints.last_mut().expect("validated breakpoints") = horizon;
        Ok(Self { generator, measure, coefficients, horizon, initial_regime, initial_position })
    }

    pub fn generator(&self) -> &RegimeGenerator {
        &self.generator
    }

    pub fn measure(&self) -> &MarkMeasure {
        &self.measure
    }

    pub fn coefficients(&self) -> &CoefficientSet {
        &self.coefficients
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn initial_regime(&self) -> usize {
        self.initial_regime
    }

    pub fn initial_position(&self) -> f64 {
        self.initial_position
    }

    pub fn ell(&self) -> usize {
        self.generator.ell()
    }

    /// Same model with another initial position.
    pub fn with_initial_position(&self, x0: f64) -> Result<Self> {
        if !(x0.is_finite() && x0 > 0.0) {
            return Err(Error::InvalidArgument(format!("initial position {x0} must be positive")));
        }
        Ok(Self { initial_position: x0, ..self.clone() })
    }

    /// Right-continuous coefficient lookup.
    pub fn coefficient_at(&self, regime: usize, t: f64) -> Result<Coefficients<'_>> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::OutOfHorizon { t });
        }
        if regime >= self.ell() {
            return Err(Error::InvalidArgument(format!("regime {regime} out of range")));
        }
        Ok(self.coefficients.on_interval(regime, self.coefficients.interval_index(t)))
    }

    /// Smallest admissible lower-bound constant `max(1/eta_floor, nu(E))`.
    pub fn c_check(&self) -> f64 {
        (1.0 / self.coefficients.eta_floor).max(self.measure.total_mass())
    }
}
