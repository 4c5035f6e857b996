//! JSON model configuration.
//!
//! ```json
//! {
//!   "regimes": [[-1.0, 1.0], [2.0, -2.0]],
//!   "horizon": 1.0,
//!   "x0": 1.0,
//!   "initial_regime": 0,
//!   "breakpoints": [0.0, 0.5, 1.0],
//!   "eta": [[1.0, 1.5], [0.8, 0.8]],
//!   "lambda": [[0.0, 0.1], [0.2, 0.2]],
//!   "marks": [{ "label": "dark", "weight": 2.0, "gamma": [[0.5, 0.5], [1.0, 1.0]] }]
//! }
//! ```
//!
//! `eta`, `lambda` and each mark's `gamma` are regime-major: one row per
//! regime, one entry per breakpoint interval. Regime indices are 0-based.
//! `breakpoints` defaults to `[0, horizon]`. The optional `eta_floor`,
//! `eta_cap`, `lambda_cap` and `gamma_cap` override the data-derived bounds.

use std::path::Path;

use liquidation_core::model::{CoefficientCaps, CoefficientSet, MarkMeasure, MarketModel, RegimeGenerator};
use serde::{Deserialize, Serialize};

use crate::{LabError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkConfig {
    pub label: String,
    pub weight: f64,
    pub gamma: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub regimes: Vec<Vec<f64>>,
    pub horizon: f64,
    pub x0: f64,
    #[serde(default)]
    pub initial_regime: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breakpoints: Option<Vec<f64>>,
    pub eta: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
    #[serde(default)]
    pub marks: Vec<MarkConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_floor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_cap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_cap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_cap: Option<f64>,
}

impl ModelConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn build(&self) -> Result<MarketModel> {
        let generator = RegimeGenerator::new(self.regimes.clone())?;
        let ell = generator.ell();
        let breakpoints = self.breakpoints.clone().unwrap_or_else(|| vec![0.0, self.horizon]);
        let intervals = breakpoints.len().saturating_sub(1);
        for mark in &self.marks {
            if mark.gamma.len() != ell || mark.gamma.iter().any(|row| row.len() != intervals) {
                return Err(liquidation_core::Error::DimensionMismatch(format!(
                    "gamma of mark '{}' must be {ell} x {intervals}",
                    mark.label
                ))
                .into());
            }
        }
        // [regime][interval][mark]
        let gamma = (0..ell)
            .map(|i| (0..intervals).map(|m| self.marks.iter().map(|mk| mk.gamma[i][m]).collect()).collect())
            .collect();
        let caps = CoefficientCaps {
            eta_floor: self.eta_floor,
            eta_cap: self.eta_cap,
            lambda_cap: self.lambda_cap,
            gamma_cap: self.gamma_cap,
        };
        let coefficients = CoefficientSet::new(breakpoints, self.eta.clone(), self.lambda.clone(), gamma, caps)?;
        let measure = MarkMeasure::new(
            self.marks.iter().map(|m| m.label.clone()).collect(),
            self.marks.iter().map(|m| m.weight).collect(),
        )?;
        Ok(MarketModel::new(generator, measure, coefficients, self.horizon, self.initial_regime, self.x0)?)
    }

    /// Config describing an existing model (data-derived caps are written out).
    pub fn from_model(model: &MarketModel) -> Self {
        let c = model.coefficients();
        let intervals = c.intervals();
        let ell = model.ell();
        let on = |i: usize, m: usize| c.on_interval(i, m);
        Self {
            regimes: model.generator().rows().to_vec(),
            horizon: model.horizon(),
            x0: model.initial_position(),
            initial_regime: model.initial_regime(),
            breakpoints: Some(c.breakpoints().to_vec()),
            eta: (0..ell).map(|i| (0..intervals).map(|m| on(i, m).eta).collect()).collect(),
            lambda: (0..ell).map(|i| (0..intervals).map(|m| on(i, m).lambda).collect()).collect(),
            marks: (0..model.measure().len())
                .map(|k| MarkConfig {
                    label: model.measure().labels()[k].clone(),
                    weight: model.measure().weights()[k],
                    gamma: (0..ell).map(|i| (0..intervals).map(|m| on(i, m).gamma[k]).collect()).collect(),
                })
                .collect(),
            eta_floor: Some(c.eta_floor()),
            eta_cap: Some(c.eta_cap()),
            lambda_cap: Some(c.lambda_cap()),
            gamma_cap: Some(c.gamma_cap()),
        }
    }
}

/// Parses and validates a JSON config document.
pub fn build_model(text: &str) -> Result<MarketModel> {
    ModelConfig::from_json(text)?.build()
}

pub fn load_model(path: &Path) -> Result<MarketModel> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    build_model(&text)
}
