//! Reference models: the two closed-form families, a fixed two-regime jump
//! model, and seeded random models drawn from bounded coefficient boxes.

use liquidation_core::model::{
    validate_generator, CoefficientCaps, CoefficientSet, MarkMeasure, MarketModel, RegimeGenerator,
};
use liquidation_core::rng::{scenario_rng, uniform_open};
use liquidation_core::truncated::{closed_form_lower, closed_form_single_regime};

use crate::Result;

/// One regime, constant `eta`, no running penalty, no dark pool.
/// Truncated solution `L eta / (eta + L (T - t))`, singular limit `eta / (T - t)`.
pub fn no_jump(eta: f64, horizon: f64, x0: f64) -> Result<MarketModel> {
    let coeffs = CoefficientSet::constant(horizon, vec![eta], vec![0.0], vec![vec![]])?;
    Ok(MarketModel::new(RegimeGenerator::new(vec![vec![0.0]])?, MarkMeasure::empty(), coeffs, horizon, 0, x0)?)
}

/// One regime with `eta = 1/c`, a single mark of weight `c` and `gamma = 0`:
/// the lower comparison system itself. Truncated solution
/// `1/((1 + 1/L) e^{c (T-t)} - 1)`.
pub fn lower_family(c: f64, horizon: f64, x0: f64) -> Result<MarketModel> {
    let coeffs = CoefficientSet::constant(horizon, vec![1.0 / c], vec![0.0], vec![vec![0.0]])?;
    let measure = MarkMeasure::new(vec!["dark".into()], vec![c])?;
    Ok(MarketModel::new(RegimeGenerator::new(vec![vec![0.0]])?, measure, coeffs, horizon, 0, x0)?)
}

/// Closed-form truncated value of a recognised oracle model, if it is one.
pub fn oracle_value(model: &MarketModel, level: f64, t: f64) -> Option<f64> {
    let coeffs = model.coefficients();
    if model.ell() != 1 || coeffs.intervals() != 1 {
        return None;
    }
    let c = coeffs.on_interval(0, 0);
    if c.lambda != 0.0 {
        return None;
    }
    let tau = model.horizon() - t;
    let measure = model.measure();
    if measure.is_empty() {
        return Some(closed_form_single_regime(c.eta, level, tau));
    }
    let mass = measure.total_mass();
    let tight = c.gamma.iter().all(|g| *g == 0.0) && (c.eta * mass - 1.0).abs() <= 1e-15;
    tight.then(|| closed_form_lower(mass, level, tau))
}

/// Two regimes with time-dependent coefficients and two dark-pool marks.
pub fn two_regime_jump(x0: f64) -> Result<MarketModel> {
    let generator = validate_generator(&[vec![-1.5, 1.5], vec![2.0, -2.0]])?;
    let measure = MarkMeasure::new(vec!["small".into(), "block".into()], vec![1.2, 0.6])?;
    let coeffs = CoefficientSet::new(
        vec![0.0, 0.4, 1.0],
        vec![vec![1.0, 0.8], vec![1.6, 1.3]],
        vec![vec![0.2, 0.5], vec![0.0, 0.3]],
        vec![vec![vec![0.5, 1.5], vec![0.4, 1.0]], vec![vec![0.8, 2.0], vec![0.6, 1.2]]],
        CoefficientCaps::default(),
    )?;
    Ok(MarketModel::new(generator, measure, coeffs, 1.0, 0, x0)?)
}

/// Seeded random model: up to four regimes, up to three marks, up to three
/// coefficient intervals; `eta in [0.5, 2]`, `lambda in [0, 2]`,
/// `gamma in [0, 1]`, mark weights in `[0.2, 2]`, rates in `[0, 2]`,
/// horizon in `[0.5, 1.5]`.
pub fn random_model(seed: u64) -> Result<MarketModel> {
    let mut rng = scenario_rng(seed, u64::MAX);
    let mut u = move || uniform_open(&mut rng);
    let ell = 1 + (u() * 4.0) as usize % 4;
    let marks = (u() * 4.0) as usize % 4;
    let intervals = 1 + (u() * 3.0) as usize % 3;
    let horizon = 0.5 + u();
    let mut q = vec![vec![0.0; ell]; ell];
    for (i, row) in q.iter_mut().enumerate() {
        for (j, rate) in row.iter_mut().enumerate() {
            if i != j {
                *rate = 2.0 * u();
            }
        }
        row[i] = -row.iter().sum::<f64>();
    }
    let mut breakpoints = vec![0.0];
    for m in 1..intervals {
        breakpoints.push(horizon * (m as f64 - 0.3 + 0.6 * u()) / intervals as f64);
    }
    breakpoints.push(horizon);
    let eta = (0..ell).map(|_| (0..intervals).map(|_| 0.5 + 1.5 * u()).collect()).collect();
    let lambda = (0..ell).map(|_| (0..intervals).map(|_| 2.0 * u()).collect()).collect();
    let gamma = (0..ell).map(|_| (0..intervals).map(|_| (0..marks).map(|_| u()).collect()).collect()).collect();
    let weights = (0..marks).map(|_| 0.2 + 1.8 * u()).collect();
    let labels = (0..marks).map(|k| format!("mark{k}")).collect();
    let coeffs = CoefficientSet::new(breakpoints, eta, lambda, gamma, CoefficientCaps::default())?;
    Ok(MarketModel::new(validate_generator(&q)?, MarkMeasure::new(labels, weights)?, coeffs, horizon, 0, 1.0)?)
}
