//! Admission control for inelastic flows sharing a link with a
//! deadline-driven elastic transfer, solved as a stochastic shortest path
//! problem over (remaining size, time) cells.
//!
//! Typical use: parse a [`Scenario`], build its [`SspModel`] with
//! [`build_model`], [`solve`] it, then inspect risk with the [`chain`]
//! helpers or simulate trajectories with [`sim`].

pub mod chain;
pub mod error;
pub mod robustness;
pub mod scenario;
pub mod sim;
pub mod ssp;
pub mod stateful;

pub use error::{Error, Result};
pub use scenario::{
    build_control_space, ActionSpec, ControlSpace, Discretization, ElasticReward,
    InelasticFlowSpec, LinkScenario, Scenario, ScenarioDocument, SoftDeadline, TrueModelSpec,
};
pub use ssp::{
    build_model, decompose_cost, evaluate_policy, lambda_sweep, solve, CostVector, Decomposition,
    Policy, Solution, SspModel,
};
pub use stateful::{CountingSpec, InelasticStateSpec, LevelChain};
