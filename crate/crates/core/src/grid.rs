//! Time grids on `[0, T]`, clustered toward the terminal time where the
//! solutions steepen.

use alloc::format;
use alloc::vec::Vec;

use crate::model::MarketModel;
use crate::{Error, Result};

/// Default clustering floor as a fraction of the horizon.
pub const DEFAULT_TAIL_FLOOR: f64 = 1e-5;

/// Relative distance below which a base node is replaced by a required node.
const MERGE_TOL: f64 = 1e-12;

/// Strictly increasing time nodes starting at 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
    tail_floor: f64,
}

impl TimeGrid {
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidArgument("a grid needs at least two nodes".into()));
        }
        if nodes[0] != 0.0 {
            return Err(Error::InvalidArgument(format!("grid starts at {}, expected 0", nodes[0])));
        }
        if nodes.iter().any(|t| !t.is_finite()) || nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("grid nodes must be finite and strictly increasing".into()));
        }
        Ok(Self { nodes, tail_floor: 0.0 })
    }

    /// `steps` uniform steps plus the required nodes.
    pub fn uniform(horizon: f64, steps: usize, required: &[f64]) -> Result<Self> {
        check_spacing(horizon, steps)?;
        let base = (0..=steps).map(|n| horizon * n as f64 / steps as f64);
        merge(horizon, base, required, 0.0)
    }

    /// `steps` steps uniform in `ln(T - t + tau0)` with `tau0 = tail_floor * T`,
    /// so steps shrink geometrically toward `T` and the ratio `h / (T - t)`
    /// stays near `ln(1 + 1/tail_floor) / steps`. Required nodes (breakpoints,
    /// evaluation cut-offs) are merged in exactly.
    pub fn clustered(horizon: f64, steps: usize, tail_floor: f64, required: &[f64]) -> Result<Self> {
        check_spacing(horizon, steps)?;
        if !(tail_floor > 0.0 && tail_floor.is_finite()) {
            return Err(Error::InvalidArgument(format!("tail floor {tail_floor} must be positive")));
        }
        let tau0 = tail_floor * horizon;
        let top = horizon + tau0;
        let ratio = tau0 / top;
        let base = (0..=steps).map(move |n| {
            if n == 0 {
                0.0
            } else if n == steps {
                horizon
            } else {
                let u = n as f64 / steps as f64;
                horizon - (top * libm::pow(ratio, u) - tau0)
            }
        });
        merge(horizon, base, required, tail_floor)
    }

    /// Clustered grid on the model horizon containing every coefficient
    /// breakpoint and the extra nodes.
    pub fn for_model(model: &MarketModel, steps: usize, extra: &[f64]) -> Result<Self> {
        let mut required: Vec<f64> = model.coefficients().breakpoints().to_vec();
        required.extend_from_slice(extra);
        Self::clustered(model.horizon(), steps, DEFAULT_TAIL_FLOOR, &required)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of steps (`len - 1`).
    pub fn steps(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn end(&self) -> f64 {
        *self.nodes.last().expect("grid is non-empty")
    }

    /// Clustering floor `tau0 / T`; zero for grids built from explicit nodes.
    pub fn tail_floor(&self) -> f64 {
        self.tail_floor
    }

    pub fn contains(&self, t: f64) -> bool {
        self.nodes.binary_search_by(|n| n.total_cmp(&t)).is_ok()
    }

    /// Index of the node equal to `t`, if any.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.nodes.binary_search_by(|n| n.total_cmp(&t)).ok()
    }

    /// Nodes `<= t_end`, keeping the clustering metadata.
    pub fn truncated(&self, t_end: f64) -> Result<Self> {
        let keep = self.nodes.partition_point(|&t| t <= t_end);
        if keep < 2 {
            return Err(Error::InvalidArgument(format!("truncating at {t_end} leaves fewer than two nodes")));
        }
        Ok(Self { nodes: self.nodes[..keep].to_vec(), tail_floor: self.tail_floor })
    }

    /// Index `n` with `nodes[n] <= t <= nodes[n + 1]` (the last step for `t = end`).
    pub fn locate(&self, t: f64) -> Option<usize> {
        if !(self.nodes[0]..=self.end()).contains(&t) {
            return None;
        }
        let above = self.nodes.partition_point(|&s| s <= t);
        Some(above.saturating_sub(1).min(self.steps() - 1))
    }
}

fn check_spacing(horizon: f64, steps: usize) -> Result<()> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("horizon {horizon} must be positive")));
    }
    if steps == 0 {
        return Err(Error::InvalidArgument("grid needs at least one step".into()));
    }
    Ok(())
}

fn merge(horizon: f64, base: impl Iterator<Item = f64>, required: &[f64], tail_floor: f64) -> Result<TimeGrid> {
    if let Some(r) = required.iter().find(|r| !(0.0..=horizon).contains(*r)) {
        return Err(Error::OutOfHorizon { t: *r });
    }
    let tol = MERGE_TOL * horizon;
    let mut req: Vec<f64> = required.to_vec();
    req.sort_by(f64::total_cmp);
    let near_required = |t: f64| {
        let i = req.partition_point(|&r| r < t);
        (i < req.len() && req[i] - t <= tol) || (i > 0 && t - req[i - 1] <= tol)
    };
    let mut nodes: Vec<f64> = base.filter(|&t| !near_required(t)).collect();
    nodes.extend_from_slice(&req);
    nodes.sort_by(f64::total_cmp);
    nodes.dedup();
    // keep the end points exact
    if nodes[0] != 0.0 {
        nodes.insert(0, 0.0);
    }
    if *nodes.last().expect("non-empty") != horizon {
        nodes.push(horizon);
    }
    let mut grid = TimeGrid::from_nodes(nodes)?;
    grid.tail_floor = tail_floor;
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clustered_grid_is_geometric_near_terminal_time() {
        let g = TimeGrid::clustered(1.0, 4096, 1e-5, &[]).unwrap();
        assert_eq!(g.len(), 4097);
        assert_eq!(g.nodes()[0], 0.0);
        assert_eq!(g.end(), 1.0);
        let n = g.nodes();
        // spacing shrinks monotonically toward T
        assert!(n.windows(3).all(|w| w[2] - w[1] <= w[1] - w[0] + 1e-15));
        let last = n[n.len() - 1] - n[n.len() - 2];
        assert!(last < 1e-7, "last step {last}");
    }

    #[test]
    fn required_nodes_are_exact() {
        let req = [0.25, 0.5, 1.0 - 1e-4];
        let g = TimeGrid::clustered(1.0, 100, 1e-5, &req).unwrap();
        for r in req {
            assert!(g.contains(r));
        }
        assert!(TimeGrid::clustered(1.0, 100, 1e-5, &[1.5]).is_err());
    }

    #[test]
    fn locate_and_truncate() {
        let g = TimeGrid::uniform(1.0, 4, &[]).unwrap();
        assert_eq!(g.locate(0.0), Some(0));
        assert_eq!(g.locate(0.25), Some(1));
        assert_eq!(g.locate(0.3), Some(1));
        assert_eq!(g.locate(1.0), Some(3));
        assert_eq!(g.locate(1.1), None);
        let t = g.truncated(0.6).unwrap();
        assert_eq!(t.nodes(), &[0.0, 0.25, 0.5]);
    }

    #[test]
    fn rejects_bad_nodes() {
        assert!(TimeGrid::from_nodes(alloc::vec![0.0, 0.5, 0.5]).is_err());
        assert!(TimeGrid::from_nodes(alloc::vec![0.1, 0.5]).is_err());
    }
}
