//! Property tests over randomized tree topologies, velocities, and inflow
//! signals: scheme exactness, junction conservation, linearity, operator
//! consistency, and projection geometry.

use proptest::prelude::*;
use treeflow::dynamics::{DiscretizationGrid, InflowSignal};
use treeflow::network::{ArcSpec, NetworkTree};
use treeflow::operators::assemble_arc_end_operators;
use treeflow::upper_level::project_simplex;
use treeflow::{characteristics_state, simulate_upwind};

/// Velocities whose travel times over length 2 are all multiples of 1/4.
const VELOCITIES: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

#[derive(Debug, Clone)]
struct TreeCase {
    net: NetworkTree,
    grid: DiscretizationGrid,
    inflow: Vec<f64>,
}

fn tree_strategy() -> impl Strategy<Value = TreeCase> {
    (2usize..7)
        .prop_flat_map(|n| {
            // Vertex i > 1 attaches below any earlier non-source vertex.
            let parents = proptest::collection::vec(1usize..n.max(2), n.saturating_sub(2));
            let velocity_picks = proptest::collection::vec(0usize..VELOCITIES.len(), n);
            let alpha_raw = proptest::collection::vec(0.05f64..1.0, n);
            (Just(n), parents, velocity_picks, alpha_raw)
        })
        .prop_flat_map(|(n, parents, velocity_picks, alpha_raw)| {
            let mut specs = Vec::with_capacity(n);
            for i in 1..=n {
                let start = match i {
                    1 => 0,
                    2 => 1,
                    _ => parents[i - 3].min(i - 1),
                };
                specs.push((
                    i,
                    start,
                    VELOCITIES[velocity_picks[i - 1]],
                    alpha_raw[i - 1],
                ));
            }
            // Normalize the raw weights per junction so they sum to one.
            let mut arc_specs = Vec::with_capacity(n);
            for &(id, start, velocity, raw) in &specs {
                let alpha = if start == 0 {
                    None
                } else {
                    let total: f64 = specs
                        .iter()
                        .filter(|(_, s, _, _)| *s == start)
                        .map(|(_, _, _, r)| r)
                        .sum();
                    Some(raw / total)
                };
                arc_specs.push(ArcSpec {
                    id,
                    start,
                    velocity,
                    alpha,
                });
            }
            let net = NetworkTree::build_tree(&arc_specs, 2.0).expect("generated tree is valid");
            let grid =
                DiscretizationGrid::new(&net, 0.25, 5.0).expect("0.25 divides all travel times");
            let steps = grid.time_points();
            (
                Just(net),
                Just(grid),
                proptest::collection::vec(-2.0f64..2.0, steps),
            )
        })
        .prop_map(|(net, grid, inflow)| TreeCase { net, grid, inflow })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn upwind_equals_characteristics_on_random_trees(case in tree_strategy()) {
        let u = InflowSignal::new(case.inflow.clone());
        let scheme = simulate_upwind(&case.net, &case.grid, &u).unwrap();
        let exact = characteristics_state(&case.net, &case.grid, &u).unwrap();
        for id in 1..=case.net.arc_count() {
            for (a, b) in scheme.arc_field(id).values().iter().zip(exact.arc_field(id).values()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn junctions_conserve_flux_on_random_trees(case in tree_strategy()) {
        let u = InflowSignal::new(case.inflow.clone());
        let state = simulate_upwind(&case.net, &case.grid, &u).unwrap();
        for arc in case.net.arcs_topological() {
            if arc.children.is_empty() {
                continue;
            }
            let end = case.grid.arc_points(arc.id) - 1;
            for j in 0..case.grid.time_points() {
                let incoming = arc.velocity * state.value(arc.id, j, end);
                let outgoing: f64 = arc
                    .children
                    .iter()
                    .map(|&k| case.net.arc(k).velocity * state.value(k, j, 0))
                    .sum();
                prop_assert!((incoming - outgoing).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn demand_shares_cover_the_inflow(case in tree_strategy()) {
        let total: f64 = case
            .net
            .demand_arcs()
            .iter()
            .map(|&a| case.net.alpha_product(a))
            .sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn end_operators_reproduce_simulated_traces(case in tree_strategy()) {
        let demand: Vec<usize> = case.net.demand_arcs().to_vec();
        let ops = assemble_arc_end_operators(&case.net, &case.grid, &demand).unwrap();
        let u = InflowSignal::new(case.inflow.clone());
        let state = simulate_upwind(&case.net, &case.grid, &u).unwrap();
        for op in &ops {
            let trace = state.arc_field(op.arc()).end_trace();
            for (a, b) in op.apply(u.samples()).iter().zip(&trace) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn simulation_is_linear(case in tree_strategy(), factor in -3.0f64..3.0) {
        let u1 = InflowSignal::new(case.inflow.clone());
        let reversed: Vec<f64> = case.inflow.iter().rev().copied().collect();
        let u2 = InflowSignal::new(reversed.clone());
        let mixed = InflowSignal::new(
            case.inflow.iter().zip(&reversed).map(|(a, b)| a + factor * b).collect(),
        );
        let s1 = simulate_upwind(&case.net, &case.grid, &u1).unwrap();
        let s2 = simulate_upwind(&case.net, &case.grid, &u2).unwrap();
        let s3 = simulate_upwind(&case.net, &case.grid, &mixed).unwrap();
        for id in 1..=case.net.arc_count() {
            for ((a, b), c) in s1
                .arc_field(id)
                .values()
                .iter()
                .zip(s2.arc_field(id).values())
                .zip(s3.arc_field(id).values())
            {
                prop_assert!((a + factor * b - c).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn projection_is_idempotent_and_nonexpansive(
        v in proptest::collection::vec(-5.0f64..5.0, 2..9),
        w in proptest::collection::vec(-5.0f64..5.0, 2..9),
    ) {
        let p = project_simplex(&v);
        let sum: f64 = p.iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|&x| x >= -1e-12));
        let again = project_simplex(&p);
        for (a, b) in p.iter().zip(&again) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        if v.len() == w.len() {
            let q = project_simplex(&w);
            let dist_before: f64 = v.iter().zip(&w).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let dist_after: f64 = p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            prop_assert!(dist_after <= dist_before + 1e-12);
        }
    }
}
