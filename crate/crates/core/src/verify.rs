//! Self-check oracle suites: independent reference computations that the
//! main algorithms are validated against, both in the test suite and via the
//! `oracle` CLI subcommand. None of these call the implementation they check.

use crate::dynamics::{characteristics_state, simulate_upwind, DiscretizationGrid, InflowSignal};
use crate::network::NetworkTree;
use crate::numerics::DenseMatrix;
use crate::upper_level::{solve_block_simplex_qp, BlockSimplexQP};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Outcome of one oracle suite.
#[derive(Debug, Clone)]
pub struct OracleReport {
    pub name: String,
    pub passed: bool,
    pub worst: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl OracleReport {
    pub fn summary(&self) -> String {
        format!(
            "{}: {} (worst {:.3e}, tolerance {:.1e}; {})",
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.worst,
            self.tolerance,
            self.detail
        )
    }
}

fn random_inflow(rng: &mut ChaCha8Rng, len: usize) -> InflowSignal {
    InflowSignal::new((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Entry-wise agreement of the upwind scheme with the exact characteristics
/// solution on random inflow signals.
pub fn upwind_matches_characteristics(
    net: &NetworkTree,
    grid: &DiscretizationGrid,
    runs: usize,
    seed: u64,
) -> OracleReport {
    let tolerance = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..runs {
        let u = random_inflow(&mut rng, grid.time_points());
        let scheme = simulate_upwind(net, grid, &u).expect("grid mismatch");
        let exact = characteristics_state(net, grid, &u).expect("grid mismatch");
        for id in 1..=net.arc_count() {
            for (a, b) in scheme
                .arc_field(id)
                .values()
                .iter()
                .zip(exact.arc_field(id).values())
            {
                worst = worst.max((a - b).abs());
            }
        }
    }
    OracleReport {
        name: "upwind vs characteristics".into(),
        passed: worst <= tolerance,
        worst,
        tolerance,
        detail: format!("{runs} random inflow signals"),
    }
}

/// Discrete flux balance at every junction for random inflow signals.
pub fn junction_flux_balance(
    net: &NetworkTree,
    grid: &DiscretizationGrid,
    runs: usize,
    seed: u64,
) -> OracleReport {
    let tolerance = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..runs {
        let u = random_inflow(&mut rng, grid.time_points());
        let state = simulate_upwind(net, grid, &u).expect("grid mismatch");
        for arc in net.arcs_topological() {
            if arc.children.is_empty() {
                continue;
            }
            let end = grid.arc_points(arc.id) - 1;
            for j in 0..grid.time_points() {
                let incoming = arc.velocity * state.value(arc.id, j, end);
                let outgoing: f64 = arc
                    .children
                    .iter()
                    .map(|&k| net.arc(k).velocity * state.value(k, j, 0))
                    .sum();
                worst = worst.max((incoming - outgoing).abs());
            }
        }
    }
    OracleReport {
        name: "junction flux balance".into(),
        passed: worst <= tolerance,
        worst,
        tolerance,
        detail: format!("{runs} random inflow signals, all junctions"),
    }
}

/// Independent simplex projection: for every support size of the descending
/// sort, build the thresholded candidate and keep the feasible one closest to
/// the input.
pub fn project_simplex_oracle(v: &[f64]) -> Vec<f64> {
    let m = v.len();
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut best: Option<(f64, Vec<f64>)> = None;
    for k in 1..=m {
        let top_sum: f64 = sorted.iter().take(k).sum();
        let threshold = (top_sum - 1.0) / k as f64;
        let candidate: Vec<f64> = v.iter().map(|&x| (x - threshold).max(0.0)).collect();
        let total: f64 = candidate.iter().sum();
        if (total - 1.0).abs() <= 1e-9 {
            let dist: f64 = candidate
                .iter()
                .zip(v)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if best.as_ref().is_none_or(|(d, _)| dist < *d) {
                best = Some((dist, candidate));
            }
        }
    }
    best.expect("at least one support size is feasible").1
}

/// Compare the fast projection against the exhaustive oracle on random
/// vectors of varying dimension.
pub fn simplex_projection_matches_oracle(samples: usize, seed: u64) -> OracleReport {
    let tolerance = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let m = rng.gen_range(2..=8);
        let v: Vec<f64> = (0..m).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let fast = crate::upper_level::project_simplex(&v);
        let slow = project_simplex_oracle(&v);
        for (a, b) in fast.iter().zip(&slow) {
            worst = worst.max((a - b).abs());
        }
    }
    OracleReport {
        name: "simplex projection vs sort-threshold oracle".into(),
        passed: worst <= tolerance,
        worst,
        tolerance,
        detail: format!("{samples} random vectors, dimensions 2..=8"),
    }
}

/// Dense grid search over the product of simplices. Exponential in the
/// number of blocks; intended for tiny instances.
pub fn grid_search_block_simplex(qp: &BlockSimplexQP, step: f64) -> (Vec<f64>, f64) {
    let slots = (1.0 / step).round() as usize;
    let m = qp.block_size;
    // All block candidates with coordinates on the step lattice.
    let mut block_candidates: Vec<Vec<f64>> = Vec::new();
    let mut partial = vec![0usize; m];
    enumerate_compositions(slots, m, 0, &mut partial, &mut |comp| {
        block_candidates.push(comp.iter().map(|&c| c as f64 / slots as f64).collect());
    });
    let mut best_beta = Vec::new();
    let mut best_value = f64::INFINITY;
    let mut assembly = vec![0usize; qp.num_blocks];
    search_blocks(
        qp,
        &block_candidates,
        0,
        &mut assembly,
        &mut best_beta,
        &mut best_value,
    );
    (best_beta, best_value)
}

fn enumerate_compositions(
    remaining: usize,
    slots_left: usize,
    index: usize,
    partial: &mut Vec<usize>,
    emit: &mut impl FnMut(&[usize]),
) {
    if slots_left == 1 {
        partial[index] = remaining;
        emit(partial);
        return;
    }
    for take in 0..=remaining {
        partial[index] = take;
        enumerate_compositions(remaining - take, slots_left - 1, index + 1, partial, emit);
    }
}

fn search_blocks(
    qp: &BlockSimplexQP,
    candidates: &[Vec<f64>],
    block: usize,
    assembly: &mut Vec<usize>,
    best_beta: &mut Vec<f64>,
    best_value: &mut f64,
) {
    if block == qp.num_blocks {
        let beta: Vec<f64> = assembly
            .iter()
            .flat_map(|&i| candidates[i].iter().copied())
            .collect();
        let value = qp.objective(&beta);
        if value < *best_value {
            *best_value = value;
            *best_beta = beta;
        }
        return;
    }
    for i in 0..candidates.len() {
        assembly[block] = i;
        search_blocks(qp, candidates, block + 1, assembly, best_beta, best_value);
    }
}

/// Random small QP instances solved both ways; the solver objective must not
/// exceed the grid-search value by more than the tolerance.
pub fn qp_matches_grid_search(instances: usize, seed: u64) -> OracleReport {
    let tolerance = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for trial in 0..instances {
        let num_blocks = 1 + trial % 2;
        let dim = 2 * num_blocks;
        let x = DenseMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-0.5..0.5));
        let qp = BlockSimplexQP {
            hessian: x.tr_matmul(&x),
            linear: (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            constant: 0.0,
            block_size: 2,
            num_blocks,
        };
        let (beta, _) = solve_block_simplex_qp(&qp, 1e-10, 100_000);
        let (_, grid_value) = grid_search_block_simplex(&qp, 1e-3);
        worst = worst.max(qp.objective(&beta) - grid_value);
    }
    OracleReport {
        name: "block-simplex QP vs dense grid search".into(),
        passed: worst <= tolerance,
        worst,
        tolerance,
        detail: format!("{instances} random instances, step 1e-3"),
    }
}
