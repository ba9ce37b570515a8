//! Decentralized projected gradient: networks, feasible sets, local costs,
//! the iteration itself, theoretical bounds and reproducible experiments.

pub mod costs;
pub mod dpg;
pub mod experiments;
pub mod geometry;
pub mod linalg;
pub mod network;
pub mod rng;
pub mod serde_util;
pub mod state;
pub mod theory;

pub use costs::{CostError, LocalCost, ProblemInstance};
pub use geometry::{ConvexSet, GeometryError};
pub use network::{Graph, MixingMatrix, NetworkError};
pub use state::AgentStates;
pub use experiments::{ExperimentConfig, ExperimentError, ExperimentKind, StepSpec};
pub use dpg::{DpgError, IterateRecord, StepSchedule};
pub use theory::{TheoryConstants, TheoryError, Variant};
