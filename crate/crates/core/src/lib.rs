//! Reconstruction of demand weights for inflow control on tree-shaped
//! transport networks.
//!
//! The crate simulates linear transport on a directed tree with a unit-Courant
//! upwind scheme, assembles the optimality system of the regularized
//! demand-tracking control problem, reduces the weight-reconstruction problem
//! over observed inflow/state pairs to a convex quadratic program on a product
//! of simplices, and solves it with a certified projected-gradient method.
//! The `treeflow` binary drives the whole pipeline from a JSON configuration
//! and writes CSV tables and curve series.

// Index loops mirror the matrix formulas throughout the numeric kernels.
#![allow(clippy::needless_range_loop)]

pub mod config;
pub mod dynamics;
pub mod experiment;
pub mod lower_level;
pub mod network;
pub mod numerics;
pub mod operators;
pub mod upper_level;
pub mod verify;

#[cfg(test)]
pub(crate) mod testutil;

pub use config::{load_config, validate_config, ExperimentConfig};
pub use dynamics::{
    characteristics_state, simulate_upwind, DiscreteState, DiscretizationGrid, InflowSignal,
};
pub use experiment::{emit_csv, run_experiment, ExperimentReport};
pub use lower_level::{
    assemble_lower_system, sample_demand_basis, DemandBasis, DemandStepSpec, LowerLevelSystem,
};
pub use network::{ArcSpec, NetworkTree};
pub use operators::{
    apply_observation, assemble_arc_end_operator, build_observation, ArcEndOperator,
    ObservationKind, ObservationOperator,
};
pub use upper_level::{
    assemble_upper_qp, generate_observations, project_simplex, solve_block_simplex_qp,
    BlockSimplexQP, ObservationSet, QpDiagnostics,
};
