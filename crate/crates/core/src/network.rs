//! Directed tree networks with per-arc velocities and junction distribution
//! weights.
//!
//! Vertices are numbered `0..=n` with vertex 0 the unique source; the arc
//! ending at vertex `i` carries id `i`, so arc ids are exactly `1..=n`.
//! Demand arcs are the arcs ending at vertices without outgoing arcs.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("arc specification is empty")]
    EmptySpec,
    #[error("invalid arc specification: {0}")]
    InvalidSpec(String),
    #[error("network contains a cycle through vertex {vertex}")]
    Cycle { vertex: usize },
    #[error("distribution weights at vertex {vertex} sum to {sum}, expected 1")]
    AlphaSum { vertex: usize, sum: f64 },
    #[error("arc {arc} has non-positive velocity {velocity}")]
    NonPositiveVelocity { arc: usize, velocity: f64 },
    #[error("arc length must be positive and finite, got {0}")]
    NonPositiveLength(f64),
    #[error("source vertex must have exactly one outgoing arc, found {count}")]
    SourceNotLeaf { count: usize },
}

/// Raw description of one arc: the arc id doubles as its end vertex.
/// `alpha` is the share of the upstream flux routed into this arc and must be
/// absent exactly on the arc leaving the source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArcSpec {
    pub id: usize,
    pub start: usize,
    pub velocity: f64,
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct NetworkArc {
    pub id: usize,
    pub start: usize,
    pub velocity: f64,
    /// Distribution weight applied at the start junction; 1 for the root arc.
    pub alpha: f64,
    /// Arc id of the incoming arc at `start`, `None` for the root arc.
    pub parent: Option<usize>,
    /// Arc ids leaving the end vertex, ascending.
    pub children: Vec<usize>,
}

/// Validated tree network, immutable after construction.
#[derive(Debug, Clone)]
pub struct NetworkTree {
    arc_length: f64,
    arcs: Vec<NetworkArc>,
    position: Vec<usize>,
    demand: Vec<usize>,
    root: usize,
}

const ALPHA_SUM_TOL: f64 = 1e-12;

impl NetworkTree {
    /// Validate an arc list and assemble the tree, topologically ordered from
    /// the source.
    pub fn build_tree(spec: &[ArcSpec], arc_length: f64) -> Result<Self, NetworkError> {
        if spec.is_empty() {
            return Err(NetworkError::EmptySpec);
        }
        if arc_length <= 0.0 || !arc_length.is_finite() {
            return Err(NetworkError::NonPositiveLength(arc_length));
        }
        let n = spec.len();
        let mut by_id: Vec<Option<&ArcSpec>> = vec![None; n + 1];
        for arc in spec {
            if arc.id == 0 || arc.id > n {
                return Err(NetworkError::InvalidSpec(format!(
                    "arc id {} outside 1..={n} (ids must be the end-vertex numbers)",
                    arc.id
                )));
            }
            if by_id[arc.id].is_some() {
                return Err(NetworkError::InvalidSpec(format!(
                    "duplicate arc id {}",
                    arc.id
                )));
            }
            if arc.start > n {
                return Err(NetworkError::InvalidSpec(format!(
                    "arc {} starts at unknown vertex {}",
                    arc.id, arc.start
                )));
            }
            if arc.start == arc.id {
                return Err(NetworkError::Cycle { vertex: arc.id });
            }
            if arc.velocity <= 0.0 || !arc.velocity.is_finite() {
                return Err(NetworkError::NonPositiveVelocity {
                    arc: arc.id,
                    velocity: arc.velocity,
                });
            }
            by_id[arc.id] = Some(arc);
        }
        let roots: Vec<usize> = spec.iter().filter(|a| a.start == 0).map(|a| a.id).collect();
        if roots.len() != 1 {
            return Err(NetworkError::SourceNotLeaf { count: roots.len() });
        }
        let root = roots[0];

        // Every parent chain must reach the source; a chain longer than n arcs
        // has revisited a vertex.
        for arc in spec {
            let mut current = arc.start;
            let mut hops = 0;
            while current != 0 {
                current = by_id[current].unwrap().start;
                hops += 1;
                if hops > n {
                    return Err(NetworkError::Cycle { vertex: arc.id });
                }
            }
        }

        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
        for arc in spec {
            children[arc.start].push(arc.id);
        }
        for list in children.iter_mut() {
            list.sort_unstable();
        }

        for arc in spec {
            match arc.alpha {
                None if arc.start == 0 => {}
                None => {
                    return Err(NetworkError::InvalidSpec(format!(
                        "arc {} needs a distribution weight (it does not leave the source)",
                        arc.id
                    )))
                }
                Some(_) if arc.start == 0 => {
                    return Err(NetworkError::InvalidSpec(format!(
                        "arc {} leaves the source and must not carry a distribution weight",
                        arc.id
                    )))
                }
                Some(a) if a <= 0.0 || a > 1.0 || !a.is_finite() => {
                    return Err(NetworkError::InvalidSpec(format!(
                        "arc {}: distribution weight {a} outside (0, 1]",
                        arc.id
                    )))
                }
                Some(_) => {}
            }
        }
        for vertex in 1..=n {
            if children[vertex].is_empty() {
                continue;
            }
            let sum: f64 = children[vertex]
                .iter()
                .map(|&k| by_id[k].unwrap().alpha.unwrap())
                .sum();
            if (sum - 1.0).abs() > ALPHA_SUM_TOL {
                return Err(NetworkError::AlphaSum { vertex, sum });
            }
        }

        // Breadth-first from the root arc so parents precede children.
        let mut order = Vec::with_capacity(n);
        let mut queue = std::collections::VecDeque::from([root]);
        while let Some(id) = queue.pop_front() {
            order.push(id);
            queue.extend(children[id].iter().copied());
        }
        debug_assert_eq!(order.len(), n);

        let mut arcs = Vec::with_capacity(n);
        let mut position = vec![usize::MAX; n];
        for (pos, &id) in order.iter().enumerate() {
            let raw = by_id[id].unwrap();
            position[id - 1] = pos;
            arcs.push(NetworkArc {
                id,
                start: raw.start,
                velocity: raw.velocity,
                alpha: raw.alpha.unwrap_or(1.0),
                parent: if raw.start == 0 {
                    None
                } else {
                    Some(raw.start)
                },
                children: children[id].clone(),
            });
        }
        let demand: Vec<usize> = (1..=n).filter(|&id| children[id].is_empty()).collect();
        debug_assert!(!demand.is_empty());
        Ok(Self {
            arc_length,
            arcs,
            position,
            demand,
            root,
        })
    }

    pub fn arc_count(&self) -> usize {
        self.arcs.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.arcs.len() + 1
    }

    pub fn arc_length(&self) -> f64 {
        self.arc_length
    }

    pub fn root_arc(&self) -> usize {
        self.root
    }

    pub fn arc(&self, id: usize) -> &NetworkArc {
        &self.arcs[self.position[id - 1]]
    }

    pub fn contains_arc(&self, id: usize) -> bool {
        id >= 1 && id <= self.arcs.len()
    }

    /// Arcs ordered so that every arc appears after its parent.
    pub fn arcs_topological(&self) -> &[NetworkArc] {
        &self.arcs
    }

    /// Demand arc ids, ascending. Never empty for a valid tree.
    pub fn demand_arcs(&self) -> &[usize] {
        &self.demand
    }

    /// Arc ids on the unique source-to-arc path, root first, inclusive.
    pub fn path_from_source(&self, id: usize) -> Vec<usize> {
        let mut path = Vec::new();
        let mut current = Some(id);
        while let Some(c) = current {
            path.push(c);
            current = self.arc(c).parent;
        }
        path.reverse();
        path
    }

    /// Product of the distribution weights along the source path.
    pub fn alpha_product(&self, id: usize) -> f64 {
        self.path_from_source(id)
            .iter()
            .map(|&a| self.arc(a).alpha)
            .product()
    }

    /// Amplitude carried from the inflow signal to arc `id`: the junction
    /// factors together with the inflow scaling telescope to
    /// `alpha_product / velocity`.
    pub fn path_gain(&self, id: usize) -> f64 {
        self.alpha_product(id) / self.arc(id).velocity
    }

    /// Transport time from the source to the start of arc `id`.
    pub fn path_delay_time(&self, id: usize) -> f64 {
        self.path_from_source(id)
            .iter()
            .filter(|&&a| a != id)
            .map(|&a| self.arc_length / self.arc(a).velocity)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::one_two_network;

    #[test]
    fn one_two_network_is_valid() {
        let net = one_two_network();
        assert_eq!(net.arc_count(), 3);
        assert_eq!(net.demand_arcs(), &[2, 3]);
        assert_eq!(net.root_arc(), 1);
        assert_eq!(net.arc(2).parent, Some(1));
        assert_eq!(net.arc(1).children, vec![2, 3]);
    }

    #[test]
    fn single_arc_network() {
        let net = NetworkTree::build_tree(
            &[ArcSpec {
                id: 1,
                start: 0,
                velocity: 1.0,
                alpha: None,
            }],
            1.0,
        )
        .unwrap();
        assert_eq!(net.demand_arcs(), &[1]);
        assert_eq!(net.path_gain(1), 1.0);
    }

    #[test]
    fn alpha_sum_violation_is_rejected() {
        let err = NetworkTree::build_tree(
            &[
                ArcSpec {
                    id: 1,
                    start: 0,
                    velocity: 2.0,
                    alpha: None,
                },
                ArcSpec {
                    id: 2,
                    start: 1,
                    velocity: 4.0,
                    alpha: Some(0.45),
                },
                ArcSpec {
                    id: 3,
                    start: 1,
                    velocity: 1.0,
                    alpha: Some(0.45),
                },
            ],
            2.0,
        )
        .unwrap_err();
        match err {
            NetworkError::AlphaSum { vertex, sum } => {
                assert_eq!(vertex, 1);
                assert!((sum - 0.9).abs() < 1e-12);
            }
            other => panic!("expected AlphaSum, got {other:?}"),
        }
    }

    #[test]
    fn six_arc_network_demand_arcs() {
        // Two junctions: v1 -> {v2, v3}, v2 -> {v4, v5}, v3 -> {v6}.
        let net = NetworkTree::build_tree(
            &[
                ArcSpec {
                    id: 1,
                    start: 0,
                    velocity: 1.0,
                    alpha: None,
                },
                ArcSpec {
                    id: 2,
                    start: 1,
                    velocity: 2.0,
                    alpha: Some(0.5),
                },
                ArcSpec {
                    id: 3,
                    start: 1,
                    velocity: 1.0,
                    alpha: Some(0.5),
                },
                ArcSpec {
                    id: 4,
                    start: 2,
                    velocity: 1.0,
                    alpha: Some(0.25),
                },
                ArcSpec {
                    id: 5,
                    start: 2,
                    velocity: 1.0,
                    alpha: Some(0.75),
                },
                ArcSpec {
                    id: 6,
                    start: 3,
                    velocity: 2.0,
                    alpha: Some(1.0),
                },
            ],
            2.0,
        )
        .unwrap();
        assert_eq!(net.demand_arcs(), &[4, 5, 6]);
        assert_eq!(net.path_from_source(5), vec![1, 2, 5]);
        // Flow shares over all demand arcs account for the whole inflow.
        let total: f64 = net
            .demand_arcs()
            .iter()
            .map(|&a| net.alpha_product(a))
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cycles_and_bad_sources_are_rejected() {
        let err = NetworkTree::build_tree(
            &[
                ArcSpec {
                    id: 1,
                    start: 0,
                    velocity: 1.0,
                    alpha: None,
                },
                ArcSpec {
                    id: 2,
                    start: 3,
                    velocity: 1.0,
                    alpha: Some(1.0),
                },
                ArcSpec {
                    id: 3,
                    start: 2,
                    velocity: 1.0,
                    alpha: Some(1.0),
                },
            ],
            1.0,
        )
        .unwrap_err();
        assert!(matches!(err, NetworkError::Cycle { .. }));

        let err = NetworkTree::build_tree(
            &[
                ArcSpec {
                    id: 1,
                    start: 0,
                    velocity: 1.0,
                    alpha: None,
                },
                ArcSpec {
                    id: 2,
                    start: 0,
                    velocity: 1.0,
                    alpha: Some(1.0),
                },
            ],
            1.0,
        )
        .unwrap_err();
        assert!(matches!(err, NetworkError::SourceNotLeaf { count: 2 }));
    }

    #[test]
    fn bad_velocity_and_length_are_rejected() {
        let err = NetworkTree::build_tree(
            &[ArcSpec {
                id: 1,
                start: 0,
                velocity: 0.0,
                alpha: None,
            }],
            1.0,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            NetworkError::NonPositiveVelocity { arc: 1, .. }
        ));
        let err = NetworkTree::build_tree(
            &[ArcSpec {
                id: 1,
                start: 0,
                velocity: 1.0,
                alpha: None,
            }],
            0.0,
        )
        .unwrap_err();
        assert!(matches!(err, NetworkError::NonPositiveLength(_)));
    }

    #[test]
    fn paths_are_unique_and_gains_telescope() {
        let net = one_two_network();
        assert_eq!(net.path_from_source(3), vec![1, 3]);
        assert!((net.path_gain(1) - 0.5).abs() < 1e-15);
        assert!((net.path_gain(2) - 0.1125).abs() < 1e-15);
        assert!((net.path_gain(3) - 0.55).abs() < 1e-15);
        assert!((net.path_delay_time(3) - 1.0).abs() < 1e-15);
    }
}
