//! Online end-to-end network slice reconfiguration.
//!
//! Slices share link bandwidth and server CPU. When a new high-priority
//! slice is admitted, [`osra`] moves resources to it from lower-priority
//! slices by projected gradient steps. The new slice's QoE response is
//! unknown, so its gradient is estimated by probing a stochastic oracle
//! (the discrete-event simulator in [`sim`]); existing slices use an
//! analytic M/M/1 model. [`baseline`] provides the static M/M/1 sizing used
//! for comparison, and [`cli`] the experiment harness.

// `!(x > 0.0)` is how NaN inputs get rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod cli;
pub mod domain;
pub mod error;
pub mod oracle;
pub mod osra;
pub mod penalty;
pub mod projection;
pub mod scenario;
pub mod seed;
pub mod sim;

pub use domain::{
    validate_alloc, validate_scenario, AllocationMatrix, AllocationVector, Core, DelayBound, Edge,
    QoeRequirement, QoeSample, Scenario, SizeDist, SliceId, SliceSpec, Topology, TrafficKind,
    TrafficModel,
};
pub use error::{Error, Result};
pub use osra::{run_osra, OsraConfig, OsraOutcome, TransferRule};
pub use projection::{project_capped_simplex, project_constraint_set, ConstraintSet};
pub use scenario::{ScenarioConfig, ValidConfig};
pub use sim::{run_sim, SimConfig, Statistic};
