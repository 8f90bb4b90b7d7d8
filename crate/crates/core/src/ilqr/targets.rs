use nalgebra::DVector;

use super::solve::costate_step;
use super::SolveResult;
use crate::envs::TimeState;
use crate::nets::TOSample;
use crate::{Error, Problem, Result, Scalar};

/// Critic evaluation hook: value and state gradient at an augmented state.
pub type CriticEval<'a, T> = dyn Fn(&TimeState<T>) -> (T, DVector<T>) + 'a;

/// Builds one replay sample per control step of a solved trajectory.
///
/// `v_bar` is the raw `K'`-step partial sum with `K' = min(K, T - k)`, plus
/// the terminal cost when the window reaches the horizon. `v_bar_x` runs the
/// costate recursion back over the window, seeded with the critic's gradient
/// when a critic is supplied and the window ends before the horizon, and with
/// the solver's own gradient otherwise.
pub fn kstep_targets<T: Scalar, P: Problem<T> + ?Sized>(
    problem: &P,
    result: &SolveResult<T>,
    lookahead: usize,
    critic: Option<&CriticEval<'_, T>>,
) -> Result<Vec<TOSample<T>>> {
    if lookahead < 1 {
        return Err(Error::InvalidArgument("lookahead K must be at least one".into()));
    }
    let traj = &result.traj;
    let steps = traj.len();
    let mut samples = Vec::with_capacity(steps);
    for k in 0..steps {
        let window = lookahead.min(steps - k);
        let end = k + window;
        let mut v_bar = traj.step_costs[k..end].iter().fold(T::zero(), |acc, &c| acc + c);
        if end == steps {
            v_bar += traj.step_costs[steps];
        }
        let mut grad = match critic {
            Some(eval) if end < steps => eval(&traj.states[end]).1,
            _ => result.v_bar_x[end].clone(),
        };
        for i in (k..end).rev() {
            let s = &traj.states[i];
            grad = costate_step(problem, &s.x, &traj.controls[i], s.t, &grad);
        }
        samples.push(TOSample {
            state: traj.states[k].clone(),
            control: traj.controls[k].clone(),
            v_bar,
            v_bar_x: grad,
            state_after: traj.states[end].clone(),
        });
    }
    Ok(samples)
}
