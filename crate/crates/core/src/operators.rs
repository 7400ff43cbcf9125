//! Explicit linear maps extracted from the dynamics: per-arc end-of-arc
//! response matrices (assembled by impulse response) and the three
//! observation operators used by the reconstruction problem.

use crate::dynamics::{
    simulate_upwind, DiscreteState, DiscretizationGrid, DynamicsError, InflowSignal,
};
use crate::network::NetworkTree;
use crate::numerics::DenseMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("unknown arc {0}")]
    UnknownArc(usize),
    #[error("bad observation weights: {0}")]
    BadKappa(String),
    #[error("observation window start {t_hat} must lie in [0, {horizon})")]
    BadWindow { t_hat: f64, horizon: f64 },
}

impl From<DynamicsError> for OperatorError {
    fn from(err: DynamicsError) -> Self {
        OperatorError::GridMismatch(err.to_string())
    }
}

/// Dense `J x J` map from inflow samples to the densities at the last spatial
/// point of one arc. For the unit-Courant scheme this is a single
/// subdiagonal band: every nonzero entry equals the arc's path gain and sits
/// `delay` rows below the diagonal.
#[derive(Debug, Clone)]
pub struct ArcEndOperator {
    arc: usize,
    matrix: DenseMatrix,
}

impl ArcEndOperator {
    pub fn arc(&self) -> usize {
        self.arc
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.matrix
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        self.matrix.matvec(u)
    }
}

/// Assemble end-of-arc operators for several arcs with one sweep of impulse
/// simulations (column `j` is the end trace of the response to the `j`-th
/// unit impulse).
pub fn assemble_arc_end_operators(
    net: &NetworkTree,
    grid: &DiscretizationGrid,
    arcs: &[usize],
) -> Result<Vec<ArcEndOperator>, OperatorError> {
    for &arc in arcs {
        if !net.contains_arc(arc) {
            return Err(OperatorError::UnknownArc(arc));
        }
    }
    let steps = grid.time_points();
    let mut matrices: Vec<DenseMatrix> = arcs
        .iter()
        .map(|_| DenseMatrix::zeros(steps, steps))
        .collect();
    for j in 0..steps {
        let mut samples = vec![0.0; steps];
        samples[j] = 1.0;
        let state = simulate_upwind(net, grid, &InflowSignal::new(samples))?;
        for (k, &arc) in arcs.iter().enumerate() {
            let trace = state.arc_field(arc).end_trace();
            for (r, &v) in trace.iter().enumerate() {
                if v != 0.0 {
                    matrices[k].set(r, j, v);
                }
            }
        }
    }
    Ok(arcs
        .iter()
        .zip(matrices)
        .map(|(&arc, matrix)| ArcEndOperator { arc, matrix })
        .collect())
}

pub fn assemble_arc_end_operator(
    net: &NetworkTree,
    grid: &DiscretizationGrid,
    arc: usize,
) -> Result<ArcEndOperator, OperatorError> {
    Ok(assemble_arc_end_operators(net, grid, &[arc])?
        .pop()
        .unwrap())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservationKind {
    /// End-of-arc points of the demand arcs plus the first grid point of the
    /// root arc.
    C1,
    /// `C1` plus all demand-arc points on the downstream half of the arc.
    C2,
    /// `C1` restricted to times at or after the window start.
    C3,
}

impl std::fmt::Display for ObservationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ObservationKind::C1 => write!(f, "C1"),
            ObservationKind::C2 => write!(f, "C2"),
            ObservationKind::C3 => write!(f, "C3"),
        }
    }
}

/// One observed state entry: `weight * z(arc, time_idx, space_idx)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObsRow {
    pub arc: usize,
    pub time_idx: usize,
    pub space_idx: usize,
    pub weight: f64,
}

/// Sparse row-selection observation operator. Rows are ordered by arc id,
/// then time, then space; arcs with zero weight contribute no rows.
#[derive(Debug, Clone)]
pub struct ObservationOperator {
    kind: ObservationKind,
    kappa: Vec<f64>,
    t_hat: f64,
    rows: Vec<ObsRow>,
}

impl ObservationOperator {
    pub fn kind(&self) -> ObservationKind {
        self.kind
    }

    pub fn kappa(&self) -> &[f64] {
        &self.kappa
    }

    pub fn t_hat(&self) -> f64 {
        self.t_hat
    }

    pub fn rows(&self) -> &[ObsRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub fn build_observation(
    net: &NetworkTree,
    grid: &DiscretizationGrid,
    kind: ObservationKind,
    kappa: &[f64],
    t_hat: f64,
) -> Result<ObservationOperator, OperatorError> {
    if kappa.len() != net.arc_count() {
        return Err(OperatorError::BadKappa(format!(
            "{} weights for {} arcs",
            kappa.len(),
            net.arc_count()
        )));
    }
    if let Some(bad) = kappa.iter().find(|k| !k.is_finite() || **k < 0.0) {
        return Err(OperatorError::BadKappa(format!(
            "weight {bad} is negative or not finite"
        )));
    }
    if !(0.0..grid.horizon()).contains(&t_hat) {
        return Err(OperatorError::BadWindow {
            t_hat,
            horizon: grid.horizon(),
        });
    }
    grid.ensure_matches(net)?;

    let time_eps = 1e-9 * t_hat.abs().max(1.0);
    let mut rows = Vec::new();
    for id in 1..=net.arc_count() {
        let weight = kappa[id - 1];
        if weight == 0.0 {
            continue;
        }
        let arc = net.arc(id);
        let steps = grid.arc_steps(id);
        let mut points = std::collections::BTreeSet::new();
        if arc.parent.is_none() {
            points.insert(0);
        }
        if arc.children.is_empty() {
            match kind {
                ObservationKind::C1 | ObservationKind::C3 => {
                    points.insert(steps);
                }
                ObservationKind::C2 => {
                    // x_q >= length/2, boundary included: 2q >= steps.
                    for q in 0..=steps {
                        if 2 * q >= steps {
                            points.insert(q);
                        }
                    }
                }
            }
        }
        if points.is_empty() {
            continue;
        }
        for j in 0..grid.time_points() {
            if kind == ObservationKind::C3 && grid.time(j) < t_hat - time_eps {
                continue;
            }
            for &q in &points {
                rows.push(ObsRow {
                    arc: id,
                    time_idx: j,
                    space_idx: q,
                    weight,
                });
            }
        }
    }
    Ok(ObservationOperator {
        kind,
        kappa: kappa.to_vec(),
        t_hat,
        rows,
    })
}

/// Apply the observation rows to a state.
pub fn apply_observation(
    obs: &ObservationOperator,
    state: &DiscreteState,
) -> Result<Vec<f64>, OperatorError> {
    let mut out = Vec::with_capacity(obs.rows.len());
    for row in &obs.rows {
        if row.arc > state.arc_count() {
            return Err(OperatorError::GridMismatch(format!(
                "state has {} arcs, observation references arc {}",
                state.arc_count(),
                row.arc
            )));
        }
        let field = state.arc_field(row.arc);
        if row.time_idx >= field.time_points() || row.space_idx >= field.space_points() {
            return Err(OperatorError::GridMismatch(format!(
                "observation point (arc {}, t {}, x {}) outside the state grid",
                row.arc, row.time_idx, row.space_idx
            )));
        }
        out.push(row.weight * field.value(row.time_idx, row.space_idx));
    }
    Ok(out)
}

/// The observation applied to the state generated by each unit impulse of
/// inflow: a dense `rows x J` matrix mapping inflow samples directly to the
/// observation vector.
pub fn observation_inflow_matrix(
    net: &NetworkTree,
    grid: &DiscretizationGrid,
    obs: &ObservationOperator,
) -> Result<DenseMatrix, OperatorError> {
    let steps = grid.time_points();
    let mut matrix = DenseMatrix::zeros(obs.len(), steps);
    for j in 0..steps {
        let mut samples = vec![0.0; steps];
        samples[j] = 1.0;
        let state = simulate_upwind(net, grid, &InflowSignal::new(samples))?;
        let column = apply_observation(obs, &state)?;
        for (r, &v) in column.iter().enumerate() {
            if v != 0.0 {
                matrix.set(r, j, v);
            }
        }
    }
    Ok(matrix)
}
