//! Fixed-iteration iLQR with eigenvalue-clip regularization.
//!
//! The solver is Gauss-Newton (no second-order dynamics terms), enforces the
//! control box by clamping inside the line-search rollout, and reports the
//! cost-to-go and its state gradient along the accepted trajectory.

mod backward;
mod boxqp;
mod calibrate;
mod regularize;
mod solve;
mod targets;

use nalgebra::DVector;

pub use backward::{backward_pass, backward_pass_with, BackwardPass, ControlLimits, Gain};
pub use calibrate::{calibrate_max_iter, nearest_rank_percentile, Calibration};
pub use regularize::{regularize_psd, RegularizerConfig};
pub use solve::{
    forward_rollout, naive_warm_start, solve, solve_batch, solve_traced, write_trace_csv, SolveOptions, SolveResult,
    TraceRow,
};
pub use targets::kstep_targets;

use crate::envs::TimeState;
use crate::error::check_dim;
use crate::{Error, Problem, Result, Scalar};

/// States `x_0..x_T`, controls `u_0..u_{T-1}` and per-step costs, the last
/// entry of `step_costs` being the terminal cost.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T: Scalar> {
    pub states: Vec<TimeState<T>>,
    pub controls: Vec<DVector<T>>,
    pub step_costs: Vec<T>,
}

impl<T: Scalar> Trajectory<T> {
    /// Open-loop rollout of `controls` from `x0`. Controls are used as given.
    pub fn rollout<P: Problem<T> + ?Sized>(problem: &P, x0: &TimeState<T>, controls: Vec<DVector<T>>) -> Result<Self> {
        check_dim("initial state", problem.state_dim(), x0.x.len())?;
        let steps = problem
            .horizon()
            .checked_sub(x0.t)
            .ok_or(Error::TimeOutOfRange {
                t: x0.t,
                horizon: problem.horizon(),
            })?;
        check_dim("warm-start length", steps, controls.len())?;
        let mut states = Vec::with_capacity(steps + 1);
        let mut step_costs = Vec::with_capacity(steps + 1);
        states.push(x0.clone());
        for (k, u) in controls.iter().enumerate() {
            check_dim("control", problem.control_dim(), u.len())?;
            let cur = &states[k];
            step_costs.push(problem.running_cost(&cur.x, u, cur.t));
            let next = TimeState::new(problem.dynamics(&cur.x, u, cur.t), cur.t + 1);
            states.push(next);
        }
        step_costs.push(problem.terminal_cost(&states[steps].x));
        Ok(Self {
            states,
            controls,
            step_costs,
        })
    }

    /// Number of control steps.
    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    pub fn total_cost(&self) -> T {
        self.step_costs.iter().fold(T::zero(), |acc, &c| acc + c)
    }

    pub fn initial_state(&self) -> &TimeState<T> {
        &self.states[0]
    }

    pub fn final_state(&self) -> &TimeState<T> {
        self.states.last().expect("trajectory has at least one state")
    }

    /// Largest deviation between stored successor states and a re-simulation.
    pub fn feasibility_error<P: Problem<T> + ?Sized>(&self, problem: &P) -> T {
        let mut worst = T::zero();
        for (k, u) in self.controls.iter().enumerate() {
            let cur = &self.states[k];
            let next = problem.dynamics(&cur.x, u, cur.t);
            worst = worst.max((next - &self.states[k + 1].x).amax());
        }
        worst
    }
}
