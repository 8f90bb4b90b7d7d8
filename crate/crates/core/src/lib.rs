//! Trajectory optimization and actor-critic learning combined in one loop:
//! an iLQR solver produces value and value-gradient targets for a critic,
//! an actor trained against the critic warm-starts the next batch of
//! solves, and a std-critic trained on the critic's residuals biases the
//! choice of initial states toward value-function discontinuities.
//!
//! Every numeric routine is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases at the crate root fix the scalar to `f64`.

pub mod buffer;
pub mod config;
pub mod envs;
pub mod error;
pub mod ilqr;
pub mod nets;
pub mod problem;
mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use problem::{CostDerivatives, Problem, TerminalDerivatives};
pub use scalar::{lit, sigmoid, softplus, to_f64, Scalar};

pub type TimeState64 = envs::TimeState<f64>;
pub type ModelSpec64 = envs::ModelSpec<f64>;
pub type CostField64 = envs::CostField<f64>;
pub type Task64 = envs::Task<f64>;
pub type Trajectory64 = ilqr::Trajectory<f64>;
pub type SolveOptions64 = ilqr::SolveOptions<f64>;
pub type SolveResult64 = ilqr::SolveResult<f64>;
pub type MlpParams64 = nets::MlpParams<f64>;
pub type AdamState64 = nets::AdamState<f64>;
pub type TOSample64 = nets::TOSample<f64>;
pub type ReplayBuffer64 = buffer::ReplayBuffer<f64>;
pub type Trainer64 = trainer::Trainer<f64>;
pub type TrainOutcome64 = trainer::TrainOutcome<f64>;
