//! Closed-loop liquidation paths.
//!
//! A scenario is the exogenous randomness of one path: the regime chain and
//! the dark-pool execution times with their marks. Given a value surface `Y`
//! the feedback controls are `xi = (Y/eta) X` and `beta_k = Y/(gamma_k + Y) X`.
//! Between consecutive time points (grid nodes, regime switches, fills) the
//! position decays by `exp(-int Y/eta)`, integrated exactly for the linearly
//! interpolated surface, and jumps by the factor `gamma_k/(gamma_k + Y)` at a
//! fill. Running costs use Simpson's rule on each step. The adverse-selection
//! cost is accumulated in its compensator form
//! `int sum_k w_k gamma_k beta_k^2 dt`.

use alloc::format;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::grid::TimeGrid;
use crate::model::{MarkMeasure, MarketModel, RegimeGenerator};
use crate::rng::{categorical, exponential};
use crate::singular::SingularSolution;
use crate::truncated::TruncatedSolution;
use crate::{Error, Result};

/// Grid-valued `Y^i`, linearly interpolated in time.
pub trait ValueSurface {
    fn grid(&self) -> &TimeGrid;

    fn regime_values(&self, regime: usize) -> &[f64];

    fn regimes(&self) -> usize;

    /// Linear interpolation; [`Error::OutOfGrid`] outside the grid span.
    fn value_at(&self, regime: usize, t: f64) -> Result<f64> {
        let grid = self.grid();
        let cell = grid.locate(t).ok_or(Error::OutOfGrid { t })?;
        Ok(interpolate(grid.nodes(), self.regime_values(regime), cell, t))
    }
}

impl ValueSurface for TruncatedSolution {
    fn grid(&self) -> &TimeGrid {
        TruncatedSolution::grid(self)
    }

    fn regime_values(&self, regime: usize) -> &[f64] {
        self.regime(regime)
    }

    fn regimes(&self) -> usize {
        self.ell()
    }
}

impl ValueSurface for SingularSolution {
    fn grid(&self) -> &TimeGrid {
        SingularSolution::grid(self)
    }

    fn regime_values(&self, regime: usize) -> &[f64] {
        self.regime(regime)
    }

    fn regimes(&self) -> usize {
        self.ell()
    }
}

#[inline]
fn interpolate(nodes: &[f64], values: &[f64], cell: usize, t: f64) -> f64 {
    let (t0, t1) = (nodes[cell], nodes[cell + 1]);
    let (y0, y1) = (values[cell], values[cell + 1]);
    if t == t1 {
        return y1;
    }
    y0 + (y1 - y0) * ((t - t0) / (t1 - t0))
}

/// Piecewise-constant, right-continuous regime trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimePath {
    switch_times: Vec<f64>,
    states: Vec<usize>,
}

impl RegimePath {
    /// `states` has one entry more than `switch_times`.
    pub fn new(switch_times: Vec<f64>, states: Vec<usize>) -> Result<Self> {
        if states.len() != switch_times.len() + 1 {
            return Err(Error::DimensionMismatch("need one more state than switch times".into()));
        }
        if switch_times.windows(2).any(|w| w[1] <= w[0]) || states.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("switch times must increase and states must change".into()));
        }
        Ok(Self { switch_times, states })
    }

    pub fn constant(state: usize) -> Self {
        Self { switch_times: Vec::new(), states: alloc::vec![state] }
    }

    pub fn switch_times(&self) -> &[f64] {
        &self.switch_times
    }

    pub fn states(&self) -> &[usize] {
        &self.states
    }

    pub fn switches(&self) -> usize {
        self.switch_times.len()
    }

    /// Regime in force at `t` (right-continuous).
    pub fn regime_at(&self, t: f64) -> usize {
        self.states[self.switch_times.partition_point(|&s| s <= t)]
    }
}

/// Dark-pool execution times with the mark of each execution.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FillEvents {
    times: Vec<f64>,
    marks: Vec<usize>,
}

impl FillEvents {
    pub fn new(times: Vec<f64>, marks: Vec<usize>) -> Result<Self> {
        if times.len() != marks.len() {
            return Err(Error::DimensionMismatch("one mark per fill time".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("fill times must be strictly increasing".into()));
        }
        Ok(Self { times, marks })
    }

    pub fn none() -> Self {
        Self::default()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn marks(&self) -> &[usize] {
        &self.marks
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Exact simulation of the regime chain on `[0, horizon]`: exponential holding
/// times with rate `-q^{ii}`, jumps to `j` with probability `q^{ij}/(-q^{ii})`.
pub fn sample_regime_path<R: RngCore + ?Sized>(
    generator: &RegimeGenerator,
    initial: usize,
    horizon: f64,
    rng: &mut R,
) -> RegimePath {
    let mut switch_times = Vec::new();
    let mut states = alloc::vec![initial];
    let mut t = 0.0;
    let mut state = initial;
    loop {
        let rate = generator.exit_rate(state);
        if rate <= 0.0 {
            break;
        }
        t += exponential(rng, rate);
        if t >= horizon {
            break;
        }
        let row = generator.row(state);
        let mut jump: Vec<f64> = row.to_vec();
        jump[state] = 0.0;
        state = categorical(rng, &jump, rate);
        switch_times.push(t);
        states.push(state);
    }
    RegimePath { switch_times, states }
}

/// Compound-Poisson executions on `[0, horizon]` with rate `nu(E)` and marks
/// drawn with probability `w_k / nu(E)`.
pub fn sample_fills<R: RngCore + ?Sized>(measure: &MarkMeasure, horizon: f64, rng: &mut R) -> FillEvents {
    let total = measure.total_mass();
    let mut fills = FillEvents::none();
    if measure.is_empty() || total <= 0.0 {
        return fills;
    }
    let mut t = 0.0;
    loop {
        t += exponential(rng, total);
        if t >= horizon {
            break;
        }
        let mark = categorical(rng, measure.weights(), total);
        fills.times.push(t);
        fills.marks.push(mark);
    }
    fills
}

/// Exogenous randomness of one path.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub regimes: RegimePath,
    pub fills: FillEvents,
}

/// Regime path first, then fills, from one stream.
pub fn sample_scenario<R: RngCore + ?Sized>(model: &MarketModel, rng: &mut R) -> Scenario {
    let regimes = sample_regime_path(model.generator(), model.initial_regime(), model.horizon(), rng);
    let fills = sample_fills(model.measure(), model.horizon(), rng);
    Scenario { regimes, fills }
}

/// Optimal feedback `(xi, beta)` at `(t, regime, x_pre)`; `beta` is zero without a mark.
pub fn feedback_controls<S: ValueSurface + ?Sized>(
    model: &MarketModel,
    surface: &S,
    t: f64,
    regime: usize,
    x_pre: f64,
    mark: Option<usize>,
) -> Result<(f64, f64)> {
    let y = surface.value_at(regime, t)?;
    let coeffs = model.coefficient_at(regime, t)?;
    let xi = y / coeffs.eta * x_pre;
    let beta = match mark {
        None => 0.0,
        Some(k) => {
            let gamma = *coeffs
                .gamma
                .get(k)
                .ok_or_else(|| Error::InvalidArgument(format!("mark {k} out of range")))?;
            y / (gamma + y) * x_pre
        }
    };
    Ok((xi, beta))
}

/// Feedback used in a simulation: `xi = xi_scale (Y/eta) X`, `beta` optimal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Policy {
    pub xi_scale: f64,
}

impl Default for Policy {
    fn default() -> Self {
        Self { xi_scale: 1.0 }
    }
}

/// What happened at a recorded time point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Event {
    Start,
    Node,
    Switch,
    Fill { mark: usize, beta: f64 },
    Observation,
    End,
}

/// State right after a time point (post-jump at fills, new regime at switches).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub t: f64,
    pub x: f64,
    pub xi: f64,
    pub regime: usize,
    pub cost: f64,
    /// `Y^{regime}(t)`.
    pub y: f64,
    pub event: Event,
}

/// One simulated trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePath {
    pub points: Vec<PathPoint>,
    pub scenario: Scenario,
    pub running_cost: f64,
}

impl StatePath {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.t)
    }

    pub fn positions(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.x)
    }

    /// Executed dark-pool quantities, one per fill.
    pub fn beta_applied(&self) -> Vec<f64> {
        self.points
            .iter()
            .filter_map(|p| match p.event {
                Event::Fill { beta, .. } => Some(beta),
                _ => None,
            })
            .collect()
    }

    pub fn last(&self) -> &PathPoint {
        self.points.last().expect("paths contain the start point")
    }
}

/// `running_cost + L X(T)^2`.
pub fn penalized_cost(path: &StatePath, level: f64) -> f64 {
    let x = path.last().x;
    path.running_cost + level * x * x
}

/// Sorted time points of a path on `[0, end]`: grid nodes, switches, fills,
/// observations and `end`, with their kinds.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Kind {
    Node,
    Switch,
    Fill(usize),
    Observation,
    End,
}

struct Timeline {
    points: Vec<(f64, Kind)>,
}

impl Timeline {
    fn build(grid: &TimeGrid, scenario: &Scenario, end: f64, observations: &[f64]) -> Self {
        let mut points: Vec<(f64, Kind)> = grid
            .nodes()
            .iter()
            .skip(1)
            .take_while(|&&t| t < end)
            .map(|&t| (t, Kind::Node))
            .collect();
        let before_end = |t: &&f64| **t > 0.0 && **t < end;
        points.extend(scenario.regimes.switch_times.iter().filter(before_end).map(|&t| (t, Kind::Switch)));
        points.extend(
            scenario.fills.times.iter().zip(&scenario.fills.marks).filter(|(t, _)| **t > 0.0 && **t < end).map(|(&t, &k)| (t, Kind::Fill(k))),
        );
        points.extend(observations.iter().filter(before_end).map(|&t| (t, Kind::Observation)));
        points.push((end, Kind::End));
        // fills at a switch instant use the pre-switch regime
        let rank = |k: &Kind| match k {
            Kind::Node | Kind::Observation => 0,
            Kind::Fill(_) => 1,
            Kind::Switch => 2,
            Kind::End => 3,
        };
        points.sort_by(|a, b| a.0.total_cmp(&b.0).then(rank(&a.1).cmp(&rank(&b.1))));
        Self { points }
    }
}

fn check_span<S: ValueSurface + ?Sized>(model: &MarketModel, surface: &S, end: f64) -> Result<()> {
    if surface.regimes() != model.ell() {
        return Err(Error::DimensionMismatch("surface regimes differ from the model".into()));
    }
    if !(end > 0.0) || end > surface.grid().end() || end > model.horizon() {
        return Err(Error::OutOfGrid { t: end });
    }
    Ok(())
}

/// Running-cost density per unit `X^2`.
#[inline]
fn cost_density(y: f64, eta: f64, lambda: f64, gamma: &[f64], weights: &[f64], xi_scale: f64) -> f64 {
    let dark: f64 = gamma
        .iter()
        .zip(weights)
        .map(|(g, w)| {
            let frac = y / (g + y);
            w * g * frac * frac
        })
        .sum();
    xi_scale * xi_scale * y * y / eta + lambda + dark
}

/// Steps the closed loop through a timeline, reporting every point.
#[allow(clippy::too_many_arguments)]
fn drive<S, F>(
    model: &MarketModel,
    surface: &S,
    scenario: &Scenario,
    end: f64,
    policy: Policy,
    x0: f64,
    observations: &[f64],
    mut observe: F,
) -> Result<f64>
where
    S: ValueSurface + ?Sized,
    F: FnMut(PathPoint),
{
    check_span(model, surface, end)?;
    let nodes = surface.grid().nodes();
    let coeffs = model.coefficients();
    let weights = model.measure().weights();
    let timeline = Timeline::build(surface.grid(), scenario, end, observations);

    let mut regime = scenario.regimes.states[0];
    let mut cell = 0usize;
    let mut t = 0.0;
    let mut x = x0;
    let mut cost = 0.0;
    let mut y = surface.regime_values(regime)[0];
    let first = coeffs.on_interval(regime, coeffs.interval_index(0.0));
    observe(PathPoint { t, x, xi: policy.xi_scale * y / first.eta * x, regime, cost, y, event: Event::Start });

    for &(b, kind) in &timeline.points {
        if b > t {
            let c = coeffs.on_interval(regime, coeffs.interval_index(0.5 * (t + b)));
            let values = surface.regime_values(regime);
            let ya = interpolate(nodes, values, cell, t);
            let yb = interpolate(nodes, values, cell, b);
            let h = b - t;
            let ym = 0.5 * (ya + yb);
            let rate = policy.xi_scale / c.eta;
            let xm = x * libm::exp(-rate * 0.25 * h * (ya + ym));
            let xb = x * libm::exp(-rate * 0.5 * h * (ya + yb));
            let density = |y: f64| cost_density(y, c.eta, c.lambda, c.gamma, weights, policy.xi_scale);
            let (ga, gm, gb) = (x * x * density(ya), xm * xm * density(ym), xb * xb * density(yb));
            cost += h / 6.0 * (ga + 4.0 * gm + gb);
            x = xb;
            t = b;
        }
        let event = match kind {
            Kind::Node => {
                if cell + 2 < nodes.len() {
                    cell += 1;
                }
                Event::Node
            }
            Kind::Switch => {
                let next = scenario.regimes.switch_times.partition_point(|&s| s <= t);
                regime = scenario.regimes.states[next];
                Event::Switch
            }
            Kind::Fill(mark) => {
                let yf = interpolate(nodes, surface.regime_values(regime), cell, t);
                let gamma = coeffs.on_interval(regime, coeffs.interval_index(t.min(model.horizon()))).gamma[mark];
                let after = x * (gamma / (gamma + yf));
                let beta = x - after;
                x = after;
                Event::Fill { mark, beta }
            }
            Kind::Observation => Event::Observation,
            Kind::End => Event::End,
        };
        y = interpolate(nodes, surface.regime_values(regime), cell, t);
        let eta = coeffs.on_interval(regime, coeffs.interval_index(t)).eta;
        observe(PathPoint { t, x, xi: policy.xi_scale * y / eta * x, regime, cost, y, event });
    }
    Ok(cost)
}

/// Optimal closed-loop path on `[0, end]` from the model's initial position.
pub fn evolve_state<S: ValueSurface + ?Sized>(
    model: &MarketModel,
    surface: &S,
    scenario: &Scenario,
    end: f64,
) -> Result<StatePath> {
    evolve_state_with(model, surface, scenario, end, Policy::default(), model.initial_position())
}

pub fn evolve_state_with<S: ValueSurface + ?Sized>(
    model: &MarketModel,
    surface: &S,
    scenario: &Scenario,
    end: f64,
    policy: Policy,
    x0: f64,
) -> Result<StatePath> {
    let mut points = Vec::with_capacity(surface.grid().len() + scenario.fills.len() + 4);
    let running_cost = drive(model, surface, scenario, end, policy, x0, &[], |p| points.push(p))?;
    Ok(StatePath { points, scenario: scenario.clone(), running_cost })
}

/// Position from the closed-form expression
/// `X_s = x0 exp(-int_0^s Y/eta dr) prod_{fills r <= s} gamma/(gamma + Y_{r-})`,
/// on the same time points as [`evolve_state`]. Costs are not computed
/// (`cost` and `running_cost` are NaN).
pub fn product_formula_path<S: ValueSurface + ?Sized>(
    model: &MarketModel,
    surface: &S,
    scenario: &Scenario,
    end: f64,
) -> Result<StatePath> {
    check_span(model, surface, end)?;
    let grid = surface.grid();
    let coeffs = model.coefficients();
    let x0 = model.initial_position();
    let timeline = Timeline::build(grid, scenario, end, &[]);
    let y_at = |regime: usize, t: f64| surface.value_at(regime, t);

    let mut integral = 0.0;
    let mut product = 1.0;
    let mut t = 0.0;
    let regime_of = |s: f64| scenario.regimes.regime_at(s);
    let r0 = regime_of(0.0);
    let y0 = y_at(r0, 0.0)?;
    let eta0 = coeffs.on_interval(r0, coeffs.interval_index(0.0)).eta;
    let mut points = alloc::vec![PathPoint {
        t: 0.0,
        x: x0,
        xi: y0 / eta0 * x0,
        regime: r0,
        cost: f64::NAN,
        y: y0,
        event: Event::Start,
    }];
    for &(b, kind) in &timeline.points {
        // regime in force on [t, b) is the one right after t
        let active = regime_of(t);
        if b > t {
            let eta = coeffs.on_interval(active, coeffs.interval_index(0.5 * (t + b))).eta;
            integral += 0.5 * (b - t) * (y_at(active, t)? + y_at(active, b)?) / eta;
            t = b;
        }
        let event = match kind {
            Kind::Fill(mark) => {
                let before = x0 * libm::exp(-integral) * product;
                let yf = y_at(active, t)?;
                let gamma = coeffs.on_interval(active, coeffs.interval_index(t)).gamma[mark];
                product *= 1.0 - yf / (gamma + yf);
                Event::Fill { mark, beta: before - x0 * libm::exp(-integral) * product }
            }
            Kind::Node => Event::Node,
            Kind::Switch => Event::Switch,
            Kind::Observation => Event::Observation,
            Kind::End => Event::End,
        };
        let regime = regime_of(t);
        let x = x0 * libm::exp(-integral) * product;
        let y = y_at(regime, t)?;
        let eta = coeffs.on_interval(regime, coeffs.interval_index(t)).eta;
        points.push(PathPoint { t, x, xi: y / eta * x, regime, cost: f64::NAN, y, event });
    }
    Ok(StatePath { points, scenario: scenario.clone(), running_cost: f64::NAN })
}

/// Summary of one path without storing its points.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub running_cost: f64,
    pub x_end: f64,
    /// `Y^{alpha_end}(end)`.
    pub y_end: f64,
    /// `(x, cost, Y)` at each requested observation time, in order.
    pub observations: Vec<(f64, f64, f64)>,
}

impl Outcome {
    /// Running cost plus the terminal weight `Y(end) X(end)^2`; equals the
    /// penalized cost for a truncated surface evaluated up to `T`.
    pub fn cost_to_go(&self) -> f64 {
        self.running_cost + self.y_end * self.x_end * self.x_end
    }
}

/// Runs one scenario, recording state at the sorted observation times in `(0, end)`.
pub fn run_scenario<S: ValueSurface + ?Sized>(
    model: &MarketModel,
    surface: &S,
    scenario: &Scenario,
    end: f64,
    policy: Policy,
    x0: f64,
    observations: &[f64],
) -> Result<Outcome> {
    let mut obs = Vec::with_capacity(observations.len());
    let mut last = None;
    let running_cost = drive(model, surface, scenario, end, policy, x0, observations, |p| {
        if p.event == Event::Observation {
            obs.push((p.x, p.cost, p.y));
        }
        last = Some(p);
    })?;
    let last = last.expect("the end point is always reported");
    Ok(Outcome { running_cost, x_end: last.x, y_end: last.y, observations: obs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CoefficientSet;
    use crate::rng::scenario_rng;
    use crate::singular::{bounds_envelope, SingularSolution};

    fn one_regime(eta: f64, lambda: f64, marks: &[(f64, f64)]) -> MarketModel {
        let labels = (0..marks.len()).map(|k| format!("m{k}")).collect();
        let nu = MarkMeasure::new(labels, marks.iter().map(|m| m.0).collect()).unwrap();
        let gamma = marks.iter().map(|m| m.1).collect::<Vec<_>>();
        let coeffs = CoefficientSet::constant(1.0, alloc::vec![eta], alloc::vec![lambda], alloc::vec![gamma]).unwrap();
        MarketModel::new(RegimeGenerator::new(alloc::vec![alloc::vec![0.0]]).unwrap(), nu, coeffs, 1.0, 0, 1.0)
            .unwrap()
    }

    /// Surface with exact values `f(t)` on a grid truncated before `T`.
    fn exact_surface(model: &MarketModel, grid: &TimeGrid, f: impl Fn(f64) -> f64) -> SingularSolution {
        let env = bounds_envelope(model, grid).unwrap();
        let y = alloc::vec![grid.nodes().iter().map(|&t| f(t)).collect::<Vec<_>>()];
        let gap = alloc::vec![alloc::vec![0.0; grid.len()]];
        SingularSolution::from_parts(y, gap, env).unwrap()
    }

    #[test]
    fn regime_path_examples() {
        let single = RegimeGenerator::new(alloc::vec![alloc::vec![0.0]]).unwrap();
        let mut rng = scenario_rng(3, 0);
        let p = sample_regime_path(&single, 0, 1.0, &mut rng);
        assert_eq!(p.switches(), 0);
        // absorbing second state
        let gen = RegimeGenerator::new(alloc::vec![alloc::vec![-5.0, 5.0], alloc::vec![0.0, 0.0]]).unwrap();
        for s in 0..200 {
            let p = sample_regime_path(&gen, 0, 10.0, &mut scenario_rng(9, s));
            assert!(p.switches() <= 1);
            if p.switches() == 1 {
                assert_eq!(p.regime_at(9.99), 1);
            }
        }
    }

    #[test]
    fn fill_examples() {
        let mut rng = scenario_rng(1, 1);
        assert!(sample_fills(&MarkMeasure::empty(), 1.0, &mut rng).is_empty());
    }

    #[test]
    fn feedback_examples() {
        let m = one_regime(1.0, 0.0, &[(1.0, 1.0)]);
        let grid = TimeGrid::uniform(1.0, 4, &[]).unwrap().truncated(0.75).unwrap();
        let s = exact_surface(&m, &grid, |_| 1.0);
        assert_eq!(feedback_controls(&m, &s, 0.3, 0, 1.0, None).unwrap(), (1.0, 0.0));
        let (_, beta) = feedback_controls(&m, &s, 0.3, 0, 2.0, Some(0)).unwrap();
        assert_eq!(beta, 1.0);
        assert_eq!(feedback_controls(&m, &s, 0.3, 0, 0.0, Some(0)).unwrap(), (0.0, 0.0));
        assert!(matches!(feedback_controls(&m, &s, 0.9, 0, 1.0, None), Err(Error::OutOfGrid { .. })));
    }

    #[test]
    fn zero_control_keeps_position() {
        let m = one_regime(1.0, 2.0, &[]);
        let grid = TimeGrid::uniform(1.0, 10, &[]).unwrap().truncated(0.9).unwrap();
        let s = exact_surface(&m, &grid, |_| 0.0);
        let scen = Scenario { regimes: RegimePath::constant(0), fills: FillEvents::none() };
        let path = evolve_state(&m, &s, &scen, 0.9).unwrap();
        assert!(path.positions().all(|x| x == 1.0));
        // int_0^0.9 lambda X^2 dt
        assert!((path.running_cost - 1.8).abs() < 1e-14);
        assert!((penalized_cost(&path, 3.0) - 4.8).abs() < 1e-14);
        assert_eq!(penalized_cost(&path, 0.0), path.running_cost);
    }

    #[test]
    fn fill_with_y_equal_gamma_halves_position() {
        let m = one_regime(1.0, 0.0, &[(1.0, 2.0)]);
        let grid = TimeGrid::uniform(1.0, 10, &[]).unwrap().truncated(0.9).unwrap();
        let s = exact_surface(&m, &grid, |_| 2.0);
        let fills = FillEvents::new(alloc::vec![0.35], alloc::vec![0]).unwrap();
        let scen = Scenario { regimes: RegimePath::constant(0), fills };
        let path = evolve_state(&m, &s, &scen, 0.9).unwrap();
        let k = path.points.iter().position(|p| matches!(p.event, Event::Fill { .. })).unwrap();
        let beta = path.beta_applied();
        assert_eq!(beta.len(), 1);
        let before = path.points[k].x + beta[0];
        assert!((path.points[k].x / before - 0.5).abs() < 1e-15);
        // pre-fill position is the exponential decay exp(-2 * 0.35) of x0 = 1
        assert!((before - libm::exp(-0.7)).abs() < 1e-14);
    }

    #[test]
    fn singular_decay_is_linear_in_time() {
        // Y = 1/(T - t): X(t) = x0 (T - t)/T
        let m = one_regime(1.0, 0.0, &[]);
        let full = TimeGrid::clustered(1.0, 1 << 15, 1e-5, &[0.99]).unwrap();
        let grid = full.truncated(0.99).unwrap();
        let s = exact_surface(&m, &grid, |t| 1.0 / (1.0 - t));
        let scen = Scenario { regimes: RegimePath::constant(0), fills: FillEvents::none() };
        let path = evolve_state(&m, &s, &scen, 0.99).unwrap();
        let worst = path.points.iter().map(|p| (p.x - (1.0 - p.t)).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn product_formula_agrees_with_stepping() {
        let m = one_regime(0.7, 0.4, &[(1.5, 0.3), (0.5, 0.0)]);
        let grid = TimeGrid::uniform(1.0, 200, &[]).unwrap().truncated(0.95).unwrap();
        let s = exact_surface(&m, &grid, |t| 0.5 / (1.0 - t) + 0.2);
        for k in 0..50 {
            let scen = sample_scenario(&m, &mut scenario_rng(5, k));
            let a = evolve_state(&m, &s, &scen, 0.95).unwrap();
            let b = product_formula_path(&m, &s, &scen, 0.95).unwrap();
            assert_eq!(a.points.len(), b.points.len());
            for (p, q) in a.points.iter().zip(&b.points) {
                assert_eq!(p.t, q.t);
                let scale = p.x.abs().max(q.x.abs());
                assert!(scale == 0.0 || (p.x - q.x).abs() <= 1e-10 * scale);
            }
        }
    }

    #[test]
    fn out_of_grid_end_is_rejected() {
        let m = one_regime(1.0, 0.0, &[]);
        let grid = TimeGrid::uniform(1.0, 10, &[]).unwrap().truncated(0.9).unwrap();
        let s = exact_surface(&m, &grid, |_| 1.0);
        let scen = Scenario { regimes: RegimePath::constant(0), fills: FillEvents::none() };
        assert!(matches!(evolve_state(&m, &s, &scen, 0.95), Err(Error::OutOfGrid { .. })));
    }
}
