//! Discrete transport dynamics on the network: a unit-Courant left-sided
//! upwind scheme and the exact characteristics solution used as its oracle.
//!
//! Grid convention (0-based): `t_j = j*dt` for `j < J` and, on arc `(i)`,
//! `x_q = q * velocity * dt` for `q < L`. The spatial step is tied to the
//! velocity so the Courant number is exactly one and the scheme is a pure
//! lattice shift; grid construction rejects any `dt` that does not divide
//! every arc's travel time.

use crate::network::NetworkTree;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("time step must be positive and finite, got {0}")]
    NonPositiveDt(f64),
    #[error("time horizon must be positive and finite, got {0}")]
    NonPositiveHorizon(f64),
    #[error("horizon {horizon} is not an integer multiple of dt {dt}")]
    HorizonMismatch { horizon: f64, dt: f64 },
    #[error("arc {arc}: length/(velocity*dt) = {ratio} is not a positive integer")]
    CflMismatch { arc: usize, ratio: f64 },
}

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("grid does not match network: {0}")]
    GridMismatch(String),
}

const RATIO_TOL: f64 = 1e-9;

/// Shared time grid plus per-arc spatial point counts.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizationGrid {
    dt: f64,
    time_points: usize,
    arc_steps: Vec<usize>,
}

impl DiscretizationGrid {
    pub fn new(net: &NetworkTree, dt: f64, horizon: f64) -> Result<Self, GridError> {
        if dt <= 0.0 || !dt.is_finite() {
            return Err(GridError::NonPositiveDt(dt));
        }
        if horizon <= 0.0 || !horizon.is_finite() {
            return Err(GridError::NonPositiveHorizon(horizon));
        }
        let mut arc_steps = Vec::with_capacity(net.arc_count());
        for id in 1..=net.arc_count() {
            let ratio = net.arc_length() / (net.arc(id).velocity * dt);
            let steps = ratio.round();
            if steps < 1.0 || (ratio - steps).abs() > RATIO_TOL * ratio.max(1.0) {
                return Err(GridError::CflMismatch { arc: id, ratio });
            }
            arc_steps.push(steps as usize);
        }
        let ratio_t = horizon / dt;
        let steps_t = ratio_t.round();
        if steps_t < 1.0 || (ratio_t - steps_t).abs() > RATIO_TOL * ratio_t.max(1.0) {
            return Err(GridError::HorizonMismatch { horizon, dt });
        }
        Ok(Self {
            dt,
            time_points: steps_t as usize + 1,
            arc_steps,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of time points `J`; the horizon is `(J-1)*dt`.
    pub fn time_points(&self) -> usize {
        self.time_points
    }

    pub fn horizon(&self) -> f64 {
        (self.time_points - 1) as f64 * self.dt
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.dt
    }

    pub fn arc_count(&self) -> usize {
        self.arc_steps.len()
    }

    /// Cells along arc `id`, i.e. the shift applied by one full traversal.
    pub fn arc_steps(&self, id: usize) -> usize {
        self.arc_steps[id - 1]
    }

    /// Spatial points on arc `id` (`arc_steps + 1`).
    pub fn arc_points(&self, id: usize) -> usize {
        self.arc_steps[id - 1] + 1
    }

    /// Total shift (in time steps) from the source to the start of arc `id`.
    pub fn path_delay_steps(&self, net: &NetworkTree, id: usize) -> usize {
        net.path_from_source(id)
            .iter()
            .filter(|&&a| a != id)
            .map(|&a| self.arc_steps(a))
            .sum()
    }

    pub fn is_consistent_with(&self, net: &NetworkTree) -> bool {
        if net.arc_count() != self.arc_steps.len() {
            return false;
        }
        (1..=net.arc_count()).all(|id| {
            let travel = self.arc_steps(id) as f64 * net.arc(id).velocity * self.dt;
            (travel - net.arc_length()).abs() <= RATIO_TOL * net.arc_length().max(1.0)
        })
    }

    pub(crate) fn ensure_matches(&self, net: &NetworkTree) -> Result<(), DynamicsError> {
        if self.is_consistent_with(net) {
            Ok(())
        } else {
            Err(DynamicsError::GridMismatch(format!(
                "grid with {} arcs does not satisfy the unit-Courant relation for this network",
                self.arc_steps.len()
            )))
        }
    }
}

/// Inflow samples `u_j = u(t_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InflowSignal {
    samples: Vec<f64>,
}

impl InflowSignal {
    pub fn new(samples: Vec<f64>) -> Self {
        Self { samples }
    }

    pub fn from_fn(grid: &DiscretizationGrid, f: impl Fn(f64) -> f64) -> Self {
        Self {
            samples: (0..grid.time_points()).map(|j| f(grid.time(j))).collect(),
        }
    }

    pub fn zero(grid: &DiscretizationGrid) -> Self {
        Self {
            samples: vec![0.0; grid.time_points()],
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }
}

/// Densities on one arc, row-major over `(time, space)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArcField {
    time_points: usize,
    space_points: usize,
    values: Vec<f64>,
}

impl ArcField {
    fn zeros(time_points: usize, space_points: usize) -> Self {
        Self {
            time_points,
            space_points,
            values: vec![0.0; time_points * space_points],
        }
    }

    pub fn time_points(&self) -> usize {
        self.time_points
    }

    pub fn space_points(&self) -> usize {
        self.space_points
    }

    #[inline]
    pub fn value(&self, j: usize, q: usize) -> f64 {
        debug_assert!(j < self.time_points && q < self.space_points);
        self.values[j * self.space_points + q]
    }

    #[inline]
    fn set(&mut self, j: usize, q: usize, v: f64) {
        debug_assert!(j < self.time_points && q < self.space_points);
        self.values[j * self.space_points + q] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Densities at the last spatial point over time.
    pub fn end_trace(&self) -> Vec<f64> {
        (0..self.time_points)
            .map(|j| self.value(j, self.space_points - 1))
            .collect()
    }
}

/// Densities on all arcs of a network, indexed by arc id.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteState {
    arcs: Vec<ArcField>,
}

impl DiscreteState {
    pub fn zeros(net: &NetworkTree, grid: &DiscretizationGrid) -> Self {
        Self {
            arcs: (1..=net.arc_count())
                .map(|id| ArcField::zeros(grid.time_points(), grid.arc_points(id)))
                .collect(),
        }
    }

    pub fn arc_count(&self) -> usize {
        self.arcs.len()
    }

    pub fn arc_field(&self, id: usize) -> &ArcField {
        &self.arcs[id - 1]
    }

    pub(crate) fn arc_field_mut(&mut self, id: usize) -> &mut ArcField {
        &mut self.arcs[id - 1]
    }

    pub fn value(&self, arc: usize, j: usize, q: usize) -> f64 {
        self.arc_field(arc).value(j, q)
    }

    pub fn max_abs(&self) -> f64 {
        self.arcs
            .iter()
            .flat_map(|f| f.values().iter())
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
    }
}

/// Advance the conservation law with the left-sided upwind scheme. The first
/// grid point of each arc carries the junction coupling (or the scaled inflow
/// on the root arc) at every time index including the initial one; interior
/// points start at zero.
pub fn simulate_upwind(
    net: &NetworkTree,
    grid: &DiscretizationGrid,
    inflow: &InflowSignal,
) -> Result<DiscreteState, DynamicsError> {
    grid.ensure_matches(net)?;
    if inflow.len() != grid.time_points() {
        return Err(DynamicsError::GridMismatch(format!(
            "inflow has {} samples, grid has {} time points",
            inflow.len(),
            grid.time_points()
        )));
    }
    let steps = grid.time_points();
    let mut state = DiscreteState::zeros(net, grid);
    for arc in net.arcs_topological() {
        let boundary: Vec<f64> = match arc.parent {
            None => inflow.samples().iter().map(|&u| u / arc.velocity).collect(),
            Some(parent_id) => {
                let parent = net.arc(parent_id);
                let factor = arc.alpha * parent.velocity / arc.velocity;
                state
                    .arc_field(parent_id)
                    .end_trace()
                    .into_iter()
                    .map(|v| factor * v)
                    .collect()
            }
        };
        // With dx = velocity*dt the Courant factor is exactly one and the
        // update reduces to a shift; written out in full regardless.
        let dx = arc.velocity * grid.dt();
        let courant = arc.velocity * grid.dt() / dx;
        let field = state.arc_field_mut(arc.id);
        let space = field.space_points();
        field.set(0, 0, boundary[0]);
        for j in 1..steps {
            field.set(j, 0, boundary[j]);
            for q in 1..space {
                let v = field.value(j - 1, q)
                    - courant * (field.value(j - 1, q) - field.value(j - 1, q - 1));
                field.set(j, q, v);
            }
        }
    }
    Ok(state)
}

/// Exact transport solution sampled on the grid: on arc `(i)` the value at
/// `(t_j, x_q)` is the path gain times the inflow sample delayed by the travel
/// time from the source, zero before the signal arrives. Sample index 0 (time
/// zero) is included, matching the boundary treatment of the scheme.
pub fn characteristics_state(
    net: &NetworkTree,
    grid: &DiscretizationGrid,
    inflow: &InflowSignal,
) -> Result<DiscreteState, DynamicsError> {
    grid.ensure_matches(net)?;
    if inflow.len() != grid.time_points() {
        return Err(DynamicsError::GridMismatch(format!(
            "inflow has {} samples, grid has {} time points",
            inflow.len(),
            grid.time_points()
        )));
    }
    let steps = grid.time_points();
    let samples = inflow.samples();
    let mut state = DiscreteState::zeros(net, grid);
    for arc in net.arcs_topological() {
        let delay = grid.path_delay_steps(net, arc.id);
        let gain = net.path_gain(arc.id);
        let field = state.arc_field_mut(arc.id);
        let space = field.space_points();
        for j in 0..steps {
            for q in 0..space {
                let shift = delay + q;
                if j >= shift {
                    field.set(j, q, gain * samples[j - shift]);
                }
            }
        }
    }
    Ok(state)
}
