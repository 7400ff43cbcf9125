//! Discrete lower-level optimality system: demand bases sampled from step
//! functions, the normal-equations matrix `A = sum MᵀM + sigma*I`, the
//! demand-to-rhs matrix `B`, and the linear solution operator mapping demand
//! weights to the optimal inflow.

use crate::dynamics::{DiscretizationGrid, InflowSignal};
use crate::network::NetworkTree;
use crate::numerics::{spd_factorize, DenseMatrix, SpdFactorization};
use crate::operators::{assemble_arc_end_operators, ArcEndOperator, OperatorError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LowerLevelError {
    #[error("bad demand breakpoints: {0}")]
    BadBreakpoints(String),
    #[error("bad demand basis: {0}")]
    BadBasis(String),
    #[error("regularization must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("demand basis does not match the network: {0}")]
    BasisMismatch(String),
    #[error("factorization of the optimality system failed: {0}")]
    Factorization(String),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// Piecewise-constant demand prototypes: `delta[l][k]` is the level of
/// profile `l` on `[breakpoints[k], breakpoints[k+1])`; the final piece is
/// closed at the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandStepSpec {
    pub breakpoints: Vec<f64>,
    pub levels: Vec<ArcLevels>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArcLevels {
    pub arc: usize,
    pub delta: Vec<Vec<f64>>,
}

/// Demand prototypes sampled on the time grid, one `J x m` matrix per demand
/// arc (columns are the profiles).
#[derive(Debug, Clone)]
pub struct DemandBasis {
    arcs: Vec<usize>,
    m: usize,
    profiles: Vec<DenseMatrix>,
}

impl DemandBasis {
    pub fn arcs(&self) -> &[usize] {
        &self.arcs
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn profile_matrix(&self, arc: usize) -> &DenseMatrix {
        let idx = self
            .arcs
            .iter()
            .position(|&a| a == arc)
            .unwrap_or_else(|| panic!("arc {arc} not in demand basis"));
        &self.profiles[idx]
    }

    /// Sampled profile `l` (0-based) for one arc.
    pub fn profile(&self, arc: usize, l: usize) -> Vec<f64> {
        self.profile_matrix(arc).column(l)
    }

    /// Weighted combination `sum_l beta_l * D_l` for one arc.
    pub fn combine(&self, arc: usize, beta_block: &[f64]) -> Vec<f64> {
        assert_eq!(beta_block.len(), self.m);
        self.profile_matrix(arc).matvec(beta_block)
    }
}

/// Sample the step-function prototypes at the grid times. Pieces are
/// left-closed; a time equal to a breakpoint belongs to the later piece.
pub fn sample_demand_basis(
    spec: &DemandStepSpec,
    grid: &DiscretizationGrid,
) -> Result<DemandBasis, LowerLevelError> {
    let breaks = &spec.breakpoints;
    if breaks.len() < 2 {
        return Err(LowerLevelError::BadBreakpoints(
            "need at least two breakpoints".into(),
        ));
    }
    if breaks.iter().any(|b| !b.is_finite()) {
        return Err(LowerLevelError::BadBreakpoints(
            "non-finite breakpoint".into(),
        ));
    }
    if breaks.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LowerLevelError::BadBreakpoints(
            "breakpoints must be strictly increasing".into(),
        ));
    }
    let horizon = grid.horizon();
    let eps = 1e-9 * horizon.max(1.0);
    if breaks[0].abs() > eps {
        return Err(LowerLevelError::BadBreakpoints(format!(
            "first breakpoint {} must be 0",
            breaks[0]
        )));
    }
    if (breaks[breaks.len() - 1] - horizon).abs() > eps {
        return Err(LowerLevelError::BadBreakpoints(format!(
            "last breakpoint {} must equal the horizon {horizon}",
            breaks[breaks.len() - 1]
        )));
    }
    let pieces = breaks.len() - 1;

    if spec.levels.is_empty() {
        return Err(LowerLevelError::BadBasis("no demand arcs in spec".into()));
    }
    let mut arcs: Vec<usize> = spec.levels.iter().map(|l| l.arc).collect();
    arcs.sort_unstable();
    if arcs.windows(2).any(|w| w[0] == w[1]) {
        return Err(LowerLevelError::BadBasis(
            "duplicate arc in demand spec".into(),
        ));
    }
    let m = spec.levels[0].delta.len();
    if m < 2 {
        return Err(LowerLevelError::BadBasis(format!(
            "need at least two prototypes per arc, got {m}"
        )));
    }
    for levels in &spec.levels {
        if levels.delta.len() != m {
            return Err(LowerLevelError::BadBasis(format!(
                "arc {}: expected {m} profiles, got {}",
                levels.arc,
                levels.delta.len()
            )));
        }
        for row in &levels.delta {
            if row.len() != pieces {
                return Err(LowerLevelError::BadBasis(format!(
                    "arc {}: profile has {} levels for {pieces} pieces",
                    levels.arc,
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(LowerLevelError::BadBasis(format!(
                    "arc {}: non-finite level",
                    levels.arc
                )));
            }
        }
    }

    let mut sorted: Vec<&ArcLevels> = spec.levels.iter().collect();
    sorted.sort_by_key(|l| l.arc);
    let steps = grid.time_points();
    let mut profiles = Vec::with_capacity(sorted.len());
    for levels in &sorted {
        let mut matrix = DenseMatrix::zeros(steps, m);
        for j in 0..steps {
            let t = grid.time(j);
            let mut piece = 0;
            while piece + 1 < pieces && t >= breaks[piece + 1] {
                piece += 1;
            }
            for l in 0..m {
                matrix.set(j, l, levels.delta[l][piece]);
            }
        }
        profiles.push(matrix);
    }
    Ok(DemandBasis { arcs, m, profiles })
}

/// The assembled optimality system `A u = B beta` together with its cached
/// factorization and the per-arc end operators it was built from.
#[derive(Debug, Clone)]
pub struct LowerLevelSystem {
    a: DenseMatrix,
    b: DenseMatrix,
    sigma: f64,
    factorization: SpdFactorization,
    arc_ops: Vec<ArcEndOperator>,
    m: usize,
    demand_arcs: Vec<usize>,
}

pub fn assemble_lower_system(
    net: &NetworkTree,
    grid: &DiscretizationGrid,
    basis: &DemandBasis,
    sigma: f64,
) -> Result<LowerLevelSystem, LowerLevelError> {
    if sigma <= 0.0 || !sigma.is_finite() {
        return Err(LowerLevelError::NonPositiveSigma(sigma));
    }
    if basis.arcs() != net.demand_arcs() {
        return Err(LowerLevelError::BasisMismatch(format!(
            "basis covers arcs {:?}, network demand arcs are {:?}",
            basis.arcs(),
            net.demand_arcs()
        )));
    }
    let steps = grid.time_points();
    if basis.profiles.iter().any(|p| p.rows() != steps) {
        return Err(LowerLevelError::BasisMismatch(format!(
            "basis sampled on {} time points, grid has {steps}",
            basis.profiles[0].rows()
        )));
    }
    let arc_ops = assemble_arc_end_operators(net, grid, net.demand_arcs())?;

    let mut a = DenseMatrix::identity(steps);
    a.scale(sigma);
    for op in &arc_ops {
        let gram = op.matrix().tr_matmul(op.matrix());
        a.add_scaled(&gram, 1.0);
    }

    let m = basis.m();
    let block_count = basis.arcs().len();
    let mut b = DenseMatrix::zeros(steps, m * block_count);
    for (k, op) in arc_ops.iter().enumerate() {
        let block = op.matrix().tr_matmul(basis.profile_matrix(op.arc()));
        for r in 0..steps {
            for c in 0..m {
                b.set(r, k * m + c, block.get(r, c));
            }
        }
    }

    let factorization =
        spd_factorize(&a).map_err(|e| LowerLevelError::Factorization(e.to_string()))?;
    Ok(LowerLevelSystem {
        a,
        b,
        sigma,
        factorization,
        arc_ops,
        m,
        demand_arcs: basis.arcs().to_vec(),
    })
}

impl LowerLevelSystem {
    pub fn matrix_a(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn matrix_b(&self) -> &DenseMatrix {
        &self.b
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn demand_arcs(&self) -> &[usize] {
        &self.demand_arcs
    }

    pub fn arc_operators(&self) -> &[ArcEndOperator] {
        &self.arc_ops
    }

    /// Length of a weight vector: one simplex block per demand arc.
    pub fn beta_dim(&self) -> usize {
        self.m * self.demand_arcs.len()
    }

    pub fn time_points(&self) -> usize {
        self.a.rows()
    }

    /// Optimal inflow for the given weights. The map is linear on all of
    /// R^(m*blocks); simplex membership is not required here.
    pub fn solve_lower_level(&self, beta: &[f64]) -> InflowSignal {
        assert_eq!(beta.len(), self.beta_dim(), "weight vector length mismatch");
        let rhs = self.b.matvec(beta);
        InflowSignal::new(self.factorization.solve(&rhs))
    }

    /// Residual `‖A u - B beta‖₂` for a candidate inflow.
    pub fn residual(&self, u: &InflowSignal, beta: &[f64]) -> f64 {
        let rhs = self.b.matvec(beta);
        self.factorization.residual_norm(u.samples(), &rhs)
    }

    /// Dense solution operator `A⁻¹ B`, one linear solve per column.
    pub fn reduced_map(&self) -> DenseMatrix {
        let steps = self.a.rows();
        let dim = self.beta_dim();
        let mut psi = DenseMatrix::zeros(steps, dim);
        for c in 0..dim {
            let column = self.factorization.solve(&self.b.column(c));
            for r in 0..steps {
                psi.set(r, c, column[r]);
            }
        }
        psi
    }
}
