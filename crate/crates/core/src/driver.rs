//! The driver of the backward system,
//!
//! ```text
//! f^i(t, y, psi) = lambda^i_t - (y^i)^2 / eta^i_t
//!                - sum_k w_k (y^i + psi_k)^2 / (gamma^i_t(k) + y^i + psi_k) 1{y^i + psi_k > 0}
//!                + sum_j q^{ij} y^j
//! ```
//!
//! With deterministic coefficients the jump component `psi` vanishes along
//! solutions, but the functions here keep it so the estimates that involve it
//! can be exercised directly.

use alloc::format;

use crate::model::{Coefficients, MarketModel};
use crate::{Error, Result};

/// `s^2 / (gamma + s)` for `s > 0`, zero otherwise. For `gamma = 0` this is `s`.
#[inline]
pub fn dark_pool_summand(s: f64, gamma: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if gamma == 0.0 {
        s
    } else {
        s * s / (gamma + s)
    }
}

/// `sum_k w_k (y + psi_k)^2 / (gamma_k + y + psi_k) 1{y + psi_k > 0}`.
pub fn dark_pool_term(y: f64, psi: &[f64], gamma: &[f64], weights: &[f64]) -> f64 {
    debug_assert_eq!(psi.len(), weights.len());
    debug_assert_eq!(gamma.len(), weights.len());
    weights.iter().zip(gamma).zip(psi).map(|((w, g), p)| w * dark_pool_summand(y + p, *g)).sum()
}

/// Arguments of a driver evaluation.
#[derive(Debug, Clone, Copy)]
pub struct DriverInput<'a> {
    pub regime: usize,
    pub t: f64,
    /// Candidate values for all regimes.
    pub y: &'a [f64],
    /// Candidate jump values, one per mark.
    pub psi: &'a [f64],
}

/// Driver with the coefficients already resolved.
#[inline]
pub fn driver_with(model: &MarketModel, regime: usize, coeffs: Coefficients<'_>, y: &[f64], psi: &[f64]) -> f64 {
    let yi = y[regime];
    let coupling: f64 = model.generator().row(regime).iter().zip(y).map(|(q, yj)| q * yj).sum();
    coeffs.lambda - yi * yi / coeffs.eta - dark_pool_term(yi, psi, coeffs.gamma, model.measure().weights())
        + coupling
}

/// `f^i(t, y, psi)`.
pub fn driver_eval(model: &MarketModel, input: DriverInput<'_>) -> Result<f64> {
    if input.y.len() != model.ell() || input.psi.len() != model.measure().len() {
        return Err(Error::DimensionMismatch(format!(
            "driver input has {} y and {} psi entries for {} regimes and {} marks",
            input.y.len(),
            input.psi.len(),
            model.ell(),
            model.measure().len()
        )));
    }
    let coeffs = model.coefficient_at(input.regime, input.t)?;
    Ok(driver_with(model, input.regime, coeffs, input.y, input.psi))
}

/// `inf_{-2 <= u <= 0} [(gamma + s) u^2 + 2 s u]`, evaluated at the minimiser
/// `u* = -s / (gamma + s)`. Equals `-s^2 / (gamma + s)`.
pub fn inf_representation(s: f64, gamma: f64) -> Result<f64> {
    if !(s >= 0.0) || !(gamma + s > 0.0) || gamma < 0.0 {
        return Err(Error::DomainError(format!("need s >= 0, gamma >= 0, gamma + s > 0 (s = {s}, gamma = {gamma})")));
    }
    let a = gamma + s;
    let u = (-s / a).clamp(-2.0, 0.0);
    Ok(u * (a * u + 2.0 * s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CoefficientSet, MarkMeasure, RegimeGenerator};
    use alloc::vec;
    use alloc::vec::Vec;

    fn model(q: Vec<Vec<f64>>, eta: f64, lambda: f64, marks: &[(f64, f64)]) -> MarketModel {
        let ell = q.len();
        let labels = (0..marks.len()).map(|k| format!("m{k}")).collect();
        let nu = MarkMeasure::new(labels, marks.iter().map(|m| m.0).collect()).unwrap();
        let gamma = marks.iter().map(|m| m.1).collect::<Vec<_>>();
        let coeffs =
            CoefficientSet::constant(1.0, vec![eta; ell], vec![lambda; ell], vec![gamma; ell]).unwrap();
        MarketModel::new(RegimeGenerator::new(q).unwrap(), nu, coeffs, 1.0, 0, 1.0).unwrap()
    }

    #[test]
    fn dark_pool_examples() {
        assert_eq!(dark_pool_term(1.0, &[0.0], &[1.0], &[1.0]), 0.5);
        assert_eq!(dark_pool_term(-1.0, &[0.0, 0.0], &[0.3, 0.0], &[1.0, 4.0]), 0.0);
        assert_eq!(dark_pool_term(2.0, &[0.0], &[0.0], &[3.0]), 6.0);
        // boundary y + psi = 0
        assert_eq!(dark_pool_term(1.0, &[-1.0], &[0.0], &[1.0]), 0.0);
        assert_eq!(dark_pool_term(5.0, &[], &[], &[]), 0.0);
    }

    #[test]
    fn driver_examples() {
        let m = model(vec![vec![0.0]], 1.0, 1.0, &[]);
        let f = driver_eval(&m, DriverInput { regime: 0, t: 0.3, y: &[1.0], psi: &[] }).unwrap();
        assert_eq!(f, 0.0);

        let m = model(vec![vec![-1.0, 1.0], vec![1.0, -1.0]], 1.0, 0.0, &[]);
        let f = driver_eval(&m, DriverInput { regime: 0, t: 0.0, y: &[1.0, 2.0], psi: &[] }).unwrap();
        assert_eq!(f, 0.0);

        let m = model(vec![vec![0.0]], 2.0, 0.0, &[(1.0, 1.0)]);
        let f = driver_eval(&m, DriverInput { regime: 0, t: 1.0, y: &[2.0], psi: &[0.0] }).unwrap();
        assert!((f + 10.0 / 3.0).abs() < 1e-15);

        assert!(matches!(
            driver_eval(&m, DriverInput { regime: 0, t: 1.5, y: &[2.0], psi: &[0.0] }),
            Err(Error::OutOfHorizon { .. })
        ));
        assert!(driver_eval(&m, DriverInput { regime: 0, t: 0.5, y: &[2.0], psi: &[] }).is_err());
    }

    #[test]
    fn inf_representation_examples() {
        assert!((inf_representation(1.0, 1.0).unwrap() + 0.5).abs() < 1e-15);
        assert_eq!(inf_representation(0.0, 1.0).unwrap(), 0.0);
        assert!((inf_representation(3.0, 0.0).unwrap() + 3.0).abs() < 1e-15);
        assert!(matches!(inf_representation(-1.0, 1.0), Err(Error::DomainError(_))));
        assert!(matches!(inf_representation(0.0, 0.0), Err(Error::DomainError(_))));
    }

    #[test]
    fn inf_representation_matches_grid_search() {
        let (s, gamma) = (1.0, 1.0);
        let n = 1_000_000;
        let brute = (0..=n)
            .map(|j| -2.0 + 2.0 * j as f64 / n as f64)
            .map(|u| (gamma + s) * u * u + 2.0 * s * u)
            .fold(f64::INFINITY, f64::min);
        assert!((brute - inf_representation(s, gamma).unwrap()).abs() < 1e-9);
    }
}
