//! Federated learning with merit-weighted aggregation.
//!
//! The server picks simplex weights over client gradients each round by
//! approximately minimizing validation loss at the candidate next iterate,
//! then steps along the weighted gradient. Baseline aggregators and
//! Byzantine attack models are provided for comparison.

pub mod aggregators;
pub mod clients;
pub mod engine;
pub mod error;
pub mod rng;
pub mod shard_io;
pub mod simplex;
pub mod tasks;
pub mod vecops;

pub use aggregators::{MethodConfig, MethodKind, MethodState};
pub use clients::{AlieSign, AttackSpec, ClientRole, GradientSet, RoleKind};
pub use engine::{
    run_experiment, DeltaEstimator, ExperimentOutcome, ExperimentSpec, GradientOracle, TaskSpec,
};
pub use error::{Error, Result};
pub use simplex::{Estimator, MdConfig, SimplexWeights};
pub use tasks::{ModelPoint, Shard, ValidationMode};
