//! Priority-priced offloading for a multi-access edge computing cell.
//!
//! - [`model`]: per-user costs, utility and demand.
//! - [`solvers`]: social optimum with two priority classes and the
//!   single-queue social and selfish baselines.
//! - [`pricing`]: externality prices, incentive checks and the learning
//!   loop that finds prices from observed congestion alone.
//! - [`queue_sim`]: discrete-event preemptive-priority M/M/1 simulator.
//! - [`experiments`]: scenario generation, scheme comparison and CSV output.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiments;
pub mod model;
pub mod pricing;
pub mod queue_sim;
pub mod solvers;

pub use error::{Error, Result};
pub use model::{
    EquilibriumOutcome, LoadState, MarketSignal, PriorityClass, SystemParams, UserProfile,
};
pub use solvers::{Scenario, SolverConfig};
