use std::path::Path;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use super::{backward_pass_with, ControlLimits, Gain, RegularizerConfig, Trajectory};
use crate::envs::TimeState;
use crate::error::check_dim;
use crate::{lit, to_f64, Error, Problem, Result, Scalar};

/// Number of halvings tried by the backtracking line search (`alpha = 1 .. 2^-10`).
const LINE_SEARCH_HALVINGS: i32 = 10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOptions<T: Scalar> {
    pub max_iter: usize,
    pub reg: RegularizerConfig<T>,
    /// Relative cost decrease below which the solve counts as converged.
    pub tol: T,
    pub limits: ControlLimits,
}

impl<T: Scalar> SolveOptions<T> {
    pub fn new(max_iter: usize) -> Self {
        Self {
            max_iter,
            ..Self::default()
        }
    }

    pub fn with_max_iter(self, max_iter: usize) -> Self {
        Self { max_iter, ..self }
    }
}

impl<T: Scalar> Default for SolveOptions<T> {
    fn default() -> Self {
        Self {
            max_iter: 100,
            reg: RegularizerConfig::default(),
            tol: lit(1e-6),
            limits: ControlLimits::Clamp,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveResult<T: Scalar> {
    pub traj: Trajectory<T>,
    pub cost: T,
    /// Cost-to-go from every step, `V_bar[T]` being the terminal cost.
    pub v_bar: Vec<T>,
    /// Gradient of the cost-to-go with respect to the state at every step.
    pub v_bar_x: Vec<DVector<T>>,
    pub iters_used: usize,
    pub converged: bool,
}

/// One line of the optional per-solve trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub cost: f64,
    /// Accepted step size, `None` when the line search found no decrease.
    pub alpha: Option<f64>,
}

pub fn write_trace_csv(path: impl AsRef<Path>, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// All-zero controls from `x0` to the horizon.
pub fn naive_warm_start<T: Scalar, P: Problem<T> + ?Sized>(problem: &P, x0: &TimeState<T>) -> Vec<DVector<T>> {
    let steps = problem.horizon().saturating_sub(x0.t);
    vec![DVector::zeros(problem.control_dim()); steps]
}

/// Closed-loop rollout of `u_k = clamp(û_k + alpha k_k + K_k (x_k - x̂_k))`
/// around the nominal trajectory `traj`.
pub fn forward_rollout<T: Scalar, P: Problem<T> + ?Sized>(
    problem: &P,
    traj: &Trajectory<T>,
    gains: &[Gain<T>],
    alpha: T,
) -> Trajectory<T> {
    let steps = traj.len();
    let mut states = Vec::with_capacity(steps + 1);
    let mut controls = Vec::with_capacity(steps);
    let mut step_costs = Vec::with_capacity(steps + 1);
    states.push(traj.states[0].clone());
    for (k, gain) in gains.iter().enumerate().take(steps) {
        let cur = &states[k];
        let dx = &cur.x - &traj.states[k].x;
        let mut u = &traj.controls[k] + &gain.feedforward * alpha + &gain.feedback * dx;
        problem.clamp_control(&mut u);
        step_costs.push(problem.running_cost(&cur.x, &u, cur.t));
        let next = TimeState::new(problem.dynamics(&cur.x, &u, cur.t), cur.t + 1);
        states.push(next);
        controls.push(u);
    }
    step_costs.push(problem.terminal_cost(&states[steps].x));
    Trajectory {
        states,
        controls,
        step_costs,
    }
}

/// Solves from `x0`, starting from the control sequence `warm_start`.
pub fn solve<T: Scalar, P: Problem<T> + ?Sized>(
    problem: &P,
    x0: &TimeState<T>,
    warm_start: Vec<DVector<T>>,
    opts: &SolveOptions<T>,
) -> Result<SolveResult<T>> {
    solve_impl(problem, x0, warm_start, opts, None)
}

/// As [`solve`], appending one [`TraceRow`] per iteration to `trace`.
pub fn solve_traced<T: Scalar, P: Problem<T> + ?Sized>(
    problem: &P,
    x0: &TimeState<T>,
    warm_start: Vec<DVector<T>>,
    opts: &SolveOptions<T>,
    trace: &mut Vec<TraceRow>,
) -> Result<SolveResult<T>> {
    solve_impl(problem, x0, warm_start, opts, Some(trace))
}

fn solve_impl<T: Scalar, P: Problem<T> + ?Sized>(
    problem: &P,
    x0: &TimeState<T>,
    mut warm_start: Vec<DVector<T>>,
    opts: &SolveOptions<T>,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> Result<SolveResult<T>> {
    if opts.max_iter < 1 {
        return Err(Error::InvalidArgument("max_iter must be at least one".into()));
    }
    check_dim("initial state", problem.state_dim(), x0.x.len())?;
    for u in warm_start.iter_mut() {
        check_dim("warm-start control", problem.control_dim(), u.len())?;
        problem.clamp_control(u);
    }
    let mut traj = Trajectory::rollout(problem, x0, warm_start)?;
    let mut cost = traj.total_cost();
    if !cost.is_finite() {
        return Err(Error::NonFinite {
            what: "cost of the warm-start trajectory",
            step: 0,
        });
    }
    if let Some(trace) = trace.as_deref_mut() {
        trace.push(TraceRow {
            iteration: 0,
            cost: to_f64(cost),
            alpha: None,
        });
    }

    let mut iters_used = 0;
    let mut converged = false;
    while iters_used < opts.max_iter {
        iters_used += 1;
        let bp = backward_pass_with(problem, &traj, &opts.reg, opts.limits)?;
        let mut accepted = None;
        let mut alpha = T::one();
        for _ in 0..=LINE_SEARCH_HALVINGS {
            let candidate = forward_rollout(problem, &traj, &bp.gains, alpha);
            let new_cost = candidate.total_cost();
            if new_cost.is_finite() && new_cost < cost {
                accepted = Some((candidate, new_cost, alpha));
                break;
            }
            alpha *= lit::<T>(0.5);
        }
        match accepted {
            Some((candidate, new_cost, alpha)) => {
                let decrease = cost - new_cost;
                converged = decrease < opts.tol * cost.abs();
                traj = candidate;
                cost = new_cost;
                if let Some(trace) = trace.as_deref_mut() {
                    trace.push(TraceRow {
                        iteration: iters_used,
                        cost: to_f64(cost),
                        alpha: Some(to_f64(alpha)),
                    });
                }
            }
            None => {
                // A repeat from the same trajectory would be identical.
                converged = true;
                if let Some(trace) = trace.as_deref_mut() {
                    trace.push(TraceRow {
                        iteration: iters_used,
                        cost: to_f64(cost),
                        alpha: None,
                    });
                }
            }
        }
        if converged {
            break;
        }
    }

    let (v_bar, v_bar_x) = value_along(problem, &traj);
    Ok(SolveResult {
        cost,
        traj,
        v_bar,
        v_bar_x,
        iters_used,
        converged,
    })
}

/// Suffix sums of the step costs and the costate recursion
/// `λ_T = ∇l_T`, `λ_k = l_x + f_x^T λ_{k+1}` along a fixed trajectory.
fn value_along<T: Scalar, P: Problem<T> + ?Sized>(problem: &P, traj: &Trajectory<T>) -> (Vec<T>, Vec<DVector<T>>) {
    let steps = traj.len();
    let mut v_bar = vec![T::zero(); steps + 1];
    let mut acc = T::zero();
    for k in (0..=steps).rev() {
        acc += traj.step_costs[k];
        v_bar[k] = acc;
    }
    let mut v_bar_x = Vec::with_capacity(steps + 1);
    let mut lambda = problem.terminal_cost_derivatives(&traj.final_state().x).l_x;
    v_bar_x.push(lambda.clone());
    for k in (0..steps).rev() {
        let s = &traj.states[k];
        lambda = costate_step(problem, &s.x, &traj.controls[k], s.t, &lambda);
        v_bar_x.push(lambda.clone());
    }
    v_bar_x.reverse();
    (v_bar, v_bar_x)
}

pub(super) fn costate_step<T: Scalar, P: Problem<T> + ?Sized>(
    problem: &P,
    x: &DVector<T>,
    u: &DVector<T>,
    t: usize,
    next: &DVector<T>,
) -> DVector<T> {
    let l_x = problem.running_cost_derivatives(x, u, t).l_x;
    let (f_x, _) = problem.dynamics_jacobians(x, u, t);
    l_x + f_x.tr_mul(next)
}

/// Solves every `(start, warm start)` pair with the same options. Problems
/// run on the current rayon pool; results come back in input order and
/// equal the corresponding sequential [`solve`] bit for bit.
pub fn solve_batch<T: Scalar, P: Problem<T> + ?Sized>(
    problem: &P,
    starts: &[TimeState<T>],
    warm_starts: &[Vec<DVector<T>>],
    opts: &SolveOptions<T>,
) -> Result<Vec<Result<SolveResult<T>>>> {
    check_dim("warm-start count", starts.len(), warm_starts.len())?;
    Ok(starts
        .par_iter()
        .zip(warm_starts.par_iter())
        .enumerate()
        .map(|(index, (x0, warm))| {
            solve(problem, x0, warm.clone(), opts).map_err(|e| Error::Problem {
                index,
                source: Box::new(e),
            })
        })
        .collect())
}
