//! Shared fixtures for the unit tests.

use crate::dynamics::DiscretizationGrid;
use crate::lower_level::{ArcLevels, DemandStepSpec};
use crate::network::{ArcSpec, NetworkTree};

/// The 1-2 network used across the crate's tests: three arcs, velocities
/// (2, 4, 1), split 0.45/0.55, arc length 2.
pub(crate) fn one_two_network() -> NetworkTree {
    NetworkTree::build_tree(
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
                alpha: Some(0.55),
            },
        ],
        2.0,
    )
    .unwrap()
}

pub(crate) fn reference_grid(net: &NetworkTree) -> DiscretizationGrid {
    DiscretizationGrid::new(net, 0.1, 10.0).unwrap()
}

/// Six step-function prototypes per demand arc on pieces [0,4), [4,7), [7,10].
pub(crate) fn reference_step_spec() -> DemandStepSpec {
    DemandStepSpec {
        breakpoints: vec![0.0, 4.0, 7.0, 10.0],
        levels: vec![
            ArcLevels {
                arc: 2,
                delta: vec![
                    vec![1.0, 2.0, 3.0],
                    vec![3.0, 2.0, 1.0],
                    vec![1.0, 3.0, 2.0],
                    vec![2.0, 1.0, 3.0],
                    vec![2.0, 3.0, 1.0],
                    vec![3.0, 1.0, 2.0],
                ],
            },
            ArcLevels {
                arc: 3,
                delta: vec![
                    vec![1.0, 2.0, 4.0],
                    vec![4.0, 2.0, 1.0],
                    vec![1.0, 4.0, 2.0],
                    vec![2.0, 1.0, 4.0],
                    vec![2.0, 4.0, 1.0],
                    vec![4.0, 1.0, 2.0],
                ],
            },
        ],
    }
}
