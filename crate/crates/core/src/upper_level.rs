//! Reduction of the weight-reconstruction problem to a convex quadratic
//! program over a product of standard simplices, plus its solver.
//!
//! With `K` the lower-level solution operator and `G` the observation of the
//! state generated by the optimal inflow, the objective over `p` observed
//! pairs collapses to `1/2 b'Hb + g'b + c` with `H = p (G'G + K'K)`. `H` is
//! typically rank-deficient on the feasible set (the prototypes span a much
//! smaller space than the weights), so the solver certifies optimality via
//! the block KKT conditions rather than uniqueness of the minimizer.

use crate::dynamics::{
    simulate_upwind, DiscreteState, DiscretizationGrid, DynamicsError, InflowSignal,
};
use crate::lower_level::LowerLevelSystem;
use crate::network::NetworkTree;
use crate::numerics::{dot, lu_solve, operator_norm_estimate, symmetric_eigenvalues, DenseMatrix};
use crate::operators::{
    apply_observation, observation_inflow_matrix, ObservationOperator, OperatorError,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum UpperLevelError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

pub const DEFAULT_QP_TOL: f64 = 1e-8;
pub const DEFAULT_QP_MAX_ITER: usize = 200_000;

/// One observed pair: an inflow record and the state belonging to it.
#[derive(Debug, Clone)]
pub struct ObservationRecord {
    pub inflow: InflowSignal,
    pub state: DiscreteState,
}

#[derive(Debug, Clone)]
pub struct ObservationSet {
    pub records: Vec<ObservationRecord>,
}

impl ObservationSet {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Produce observation pairs from weight rows: each row is solved at the
/// lower level and the resulting inflow is propagated through the network.
/// Rows are not required to lie in the simplex.
pub fn generate_observations(
    net: &NetworkTree,
    grid: &DiscretizationGrid,
    sys: &LowerLevelSystem,
    beta_rows: &[Vec<f64>],
) -> Result<ObservationSet, UpperLevelError> {
    if beta_rows.is_empty() {
        return Err(UpperLevelError::DimensionMismatch(
            "need at least one weight row".into(),
        ));
    }
    let mut records = Vec::with_capacity(beta_rows.len());
    for (r, row) in beta_rows.iter().enumerate() {
        if row.len() != sys.beta_dim() {
            return Err(UpperLevelError::DimensionMismatch(format!(
                "weight row {r} has length {}, expected {}",
                row.len(),
                sys.beta_dim()
            )));
        }
        let inflow = sys.solve_lower_level(row);
        let state = simulate_upwind(net, grid, &inflow)?;
        records.push(ObservationRecord { inflow, state });
    }
    Ok(ObservationSet { records })
}

/// Convex QP over `(Λ^m)^blocks`: minimize `1/2 b'Hb + g'b + c` subject to
/// each consecutive block of size `block_size` lying in the standard simplex.
#[derive(Debug, Clone)]
pub struct BlockSimplexQP {
    pub hessian: DenseMatrix,
    pub linear: Vec<f64>,
    pub constant: f64,
    pub block_size: usize,
    pub num_blocks: usize,
}

impl BlockSimplexQP {
    pub fn dim(&self) -> usize {
        self.block_size * self.num_blocks
    }

    pub fn objective(&self, beta: &[f64]) -> f64 {
        assert_eq!(beta.len(), self.dim());
        0.5 * dot(&self.hessian.matvec(beta), beta) + dot(&self.linear, beta) + self.constant
    }

    pub fn gradient(&self, beta: &[f64]) -> Vec<f64> {
        let mut g = self.hessian.matvec(beta);
        for (gi, li) in g.iter_mut().zip(&self.linear) {
            *gi += li;
        }
        g
    }

    /// Uniform weights, the canonical feasible start.
    pub fn uniform_point(&self) -> Vec<f64> {
        vec![1.0 / self.block_size as f64; self.dim()]
    }

    /// Smallest eigenvalue of the Hessian restricted to the directions that
    /// keep every block sum fixed; values near zero mean the minimizer is not
    /// unique.
    pub fn feasible_subspace_min_eig(&self) -> f64 {
        let m = self.block_size;
        if m < 2 {
            return f64::INFINITY;
        }
        let reduced_dim = (m - 1) * self.num_blocks;
        // Block-diagonal orthonormal basis of the zero-sum subspace.
        let mut basis = DenseMatrix::zeros(self.dim(), reduced_dim);
        for block in 0..self.num_blocks {
            for k in 1..m {
                let col = block * (m - 1) + (k - 1);
                let scale = 1.0 / ((k * (k + 1)) as f64).sqrt();
                for i in 0..k {
                    basis.set(block * m + i, col, scale);
                }
                basis.set(block * m + k, col, -(k as f64) * scale);
            }
        }
        let reduced = basis.tr_matmul(&self.hessian.matmul(&basis));
        symmetric_eigenvalues(&reduced)[0]
    }
}

/// Assemble the reduced QP from the lower-level system, its solution
/// operator, the observed pairs, and an observation operator.
pub fn assemble_upper_qp(
    sys: &LowerLevelSystem,
    psi: &DenseMatrix,
    obs: &ObservationSet,
    obsop: &ObservationOperator,
    net: &NetworkTree,
    grid: &DiscretizationGrid,
) -> Result<BlockSimplexQP, UpperLevelError> {
    let dim = sys.beta_dim();
    if psi.rows() != sys.time_points() || psi.cols() != dim {
        return Err(UpperLevelError::DimensionMismatch(format!(
            "solution operator is {}x{}, expected {}x{dim}",
            psi.rows(),
            psi.cols(),
            sys.time_points()
        )));
    }
    if obs.is_empty() {
        return Err(UpperLevelError::DimensionMismatch(
            "empty observation set".into(),
        ));
    }
    let p = obs.len() as f64;

    let state_map = observation_inflow_matrix(net, grid, obsop)?;
    let observed_psi = state_map.matmul(psi);

    let mut hessian = observed_psi.tr_matmul(&observed_psi);
    let gram_psi = psi.tr_matmul(psi);
    hessian.add_scaled(&gram_psi, 1.0);
    hessian.scale(p);

    let mut linear = vec![0.0; dim];
    let mut constant = 0.0;
    for record in &obs.records {
        if record.inflow.len() != sys.time_points() {
            return Err(UpperLevelError::DimensionMismatch(
                "observed inflow length differs from the grid".into(),
            ));
        }
        let observed_state = apply_observation(obsop, &record.state)?;
        let gt_y = observed_psi.tr_matvec(&observed_state);
        let kt_u = psi.tr_matvec(record.inflow.samples());
        for i in 0..dim {
            linear[i] -= gt_y[i] + kt_u[i];
        }
        constant += 0.5
            * (dot(&observed_state, &observed_state)
                + dot(record.inflow.samples(), record.inflow.samples()));
    }
    Ok(BlockSimplexQP {
        hessian,
        linear,
        constant,
        block_size: sys.m(),
        num_blocks: sys.demand_arcs().len(),
    })
}

/// Euclidean projection onto the standard simplex (sorted threshold scan).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    assert!(!v.is_empty());
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut threshold = 0.0;
    for (i, &vi) in sorted.iter().enumerate() {
        cumulative += vi;
        let candidate = (cumulative - 1.0) / (i as f64 + 1.0);
        if vi - candidate > 0.0 {
            threshold = candidate;
        }
    }
    v.iter().map(|&vi| (vi - threshold).max(0.0)).collect()
}

/// Project each consecutive block onto its simplex.
pub fn project_block_simplex(v: &[f64], block_size: usize) -> Vec<f64> {
    assert_eq!(v.len() % block_size, 0);
    let mut out = Vec::with_capacity(v.len());
    for block in v.chunks(block_size) {
        out.extend(project_simplex(block));
    }
    out
}

/// Block KKT residual: within every block the gradient must be constant on
/// the support (`beta > support_tol`) and no smaller off the support.
pub fn kkt_residual(qp: &BlockSimplexQP, beta: &[f64], support_tol: f64) -> f64 {
    let grad = qp.gradient(beta);
    let m = qp.block_size;
    let mut worst = 0.0f64;
    for block in 0..qp.num_blocks {
        let b = &beta[block * m..(block + 1) * m];
        let g = &grad[block * m..(block + 1) * m];
        let support: Vec<usize> = (0..m).filter(|&i| b[i] > support_tol).collect();
        if support.is_empty() {
            // Cannot happen for feasible blocks; treat as maximally violated.
            return f64::INFINITY;
        }
        let mu: f64 = support.iter().map(|&i| g[i]).sum::<f64>() / support.len() as f64;
        for i in 0..m {
            if support.contains(&i) {
                worst = worst.max((g[i] - mu).abs());
            } else {
                worst = worst.max((mu - g[i]).max(0.0));
            }
        }
    }
    worst
}

#[derive(Debug, Clone)]
pub struct QpDiagnostics {
    pub iterations: usize,
    pub kkt_residual: f64,
    pub converged: bool,
    pub objective: f64,
    /// Smallest eigenvalue of the Hessian on the feasible subspace.
    pub degeneracy_min_eig: f64,
}

/// Try to solve the problem exactly on the support of the current iterate:
/// equality-constrained QP via its KKT system, with a tiny Tikhonov term so
/// rank-deficient Hessian blocks do not break the solve. The candidate is
/// only accepted if it is feasible, certified, and no worse than `current`.
fn active_set_polish(qp: &BlockSimplexQP, current: &[f64], tol: f64) -> Option<Vec<f64>> {
    let m = qp.block_size;
    let support: Vec<usize> = (0..qp.dim()).filter(|&i| current[i] > tol).collect();
    if support.is_empty() {
        return None;
    }
    let s = support.len();
    let k = qp.num_blocks;
    let size = s + k;
    let ridge = 1e-13 * (qp.hessian.max_abs() + 1.0);
    let mut kkt = DenseMatrix::zeros(size, size);
    for (row, &i) in support.iter().enumerate() {
        for (col, &j) in support.iter().enumerate() {
            let mut v = qp.hessian.get(i, j);
            if row == col {
                v += ridge;
            }
            kkt.set(row, col, v);
        }
        let block = i / m;
        kkt.set(row, s + block, 1.0);
        kkt.set(s + block, row, 1.0);
    }
    let mut rhs = vec![0.0; size];
    for (row, &i) in support.iter().enumerate() {
        rhs[row] = -qp.linear[i];
    }
    for block in 0..k {
        rhs[s + block] = 1.0;
    }
    let solution = lu_solve(&kkt, &rhs)?;

    let mut candidate = vec![0.0; qp.dim()];
    for (row, &i) in support.iter().enumerate() {
        let v = solution[row];
        if v < -1e-10 {
            return None;
        }
        candidate[i] = v.max(0.0);
    }
    // Clamping may leave a roundoff-sized feasibility defect; rescale blocks.
    for block in 0..k {
        let slice = &mut candidate[block * m..(block + 1) * m];
        let sum: f64 = slice.iter().sum();
        if sum <= 0.0 {
            return None;
        }
        slice.iter_mut().for_each(|v| *v /= sum);
    }
    let certified = kkt_residual(qp, &candidate, tol) <= tol;
    let improving = qp.objective(&candidate)
        <= qp.objective(current) + 1e-9 * (1.0 + qp.objective(current).abs());
    (certified && improving).then_some(candidate)
}

/// Accelerated projected gradient (with restarts) on the block simplex,
/// stopping on the KKT certificate. When the limit is reached the best
/// iterate is returned with `converged = false`.
pub fn solve_block_simplex_qp(
    qp: &BlockSimplexQP,
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, QpDiagnostics) {
    assert!(tol > 0.0, "tolerance must be positive");
    let m = qp.block_size;
    let lipschitz = operator_norm_estimate(&qp.hessian);
    let step = 1.0 / (1.05 * lipschitz).max(1e-12);

    let mut x = qp.uniform_point();
    let mut y = x.clone();
    let mut theta = 1.0f64;
    let mut iterations = 0;
    let mut residual = kkt_residual(qp, &x, tol);

    while iterations < max_iter && residual > tol {
        let grad = qp.gradient(&y);
        let candidate: Vec<f64> = y.iter().zip(&grad).map(|(yi, gi)| yi - step * gi).collect();
        let x_next = project_block_simplex(&candidate, m);
        let settled: f64 = x
            .iter()
            .zip(&x_next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);

        // Restart the momentum when it points against the new step.
        let against: f64 = y
            .iter()
            .zip(&x_next)
            .zip(x.iter())
            .map(|((yi, ni), xi)| (yi - ni) * (ni - xi))
            .sum();
        if against > 0.0 {
            theta = 1.0;
            y = x_next.clone();
        } else {
            let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
            let momentum = (theta - 1.0) / theta_next;
            y = x_next
                .iter()
                .zip(x.iter())
                .map(|(ni, xi)| ni + momentum * (ni - xi))
                .collect();
            theta = theta_next;
        }
        x = x_next;
        iterations += 1;

        if iterations % 20 == 0 || iterations == max_iter {
            residual = kkt_residual(qp, &x, tol);
            if residual > tol && (iterations % 2000 == 0 || settled <= 1e-15) {
                if let Some(polished) = active_set_polish(qp, &x, tol) {
                    x = polished;
                    residual = kkt_residual(qp, &x, tol);
                    break;
                }
                if settled <= 1e-15 {
                    // Fixed point of the projected step that still misses the
                    // certificate; further iterations cannot improve it.
                    break;
                }
            }
        }
    }
    if residual > tol {
        if let Some(polished) = active_set_polish(qp, &x, tol) {
            x = polished;
            residual = kkt_residual(qp, &x, tol);
        }
    }
    let diagnostics = QpDiagnostics {
        iterations,
        kkt_residual: residual,
        converged: residual <= tol,
        objective: qp.objective(&x),
        degeneracy_min_eig: qp.feasible_subspace_min_eig(),
    };
    (x, diagnostics)
}
