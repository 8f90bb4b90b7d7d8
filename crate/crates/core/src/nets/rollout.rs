use nalgebra::DVector;

use super::mlp::{augment_batch, MlpParams};
use crate::envs::TimeState;
use crate::ilqr::Trajectory;
use crate::{Error, Problem, Result, Scalar};

/// Closed-loop rollout of `u_k = μ(x̃_k)` for `steps` steps from `x0`.
pub fn actor_rollout<T: Scalar, P: Problem<T> + ?Sized>(
    actor: &MlpParams<T>,
    problem: &P,
    x0: &TimeState<T>,
    steps: usize,
) -> Result<Trajectory<T>> {
    if x0.t + steps > problem.horizon() {
        return Err(Error::TimeOutOfRange {
            t: x0.t + steps,
            horizon: problem.horizon(),
        });
    }
    let mut controls: Vec<DVector<T>> = Vec::with_capacity(steps);
    let mut state = x0.clone();
    for _ in 0..steps {
        let mut u = actor.forward(&super::mlp::augment(&state))?;
        problem.clamp_control(&mut u);
        state = TimeState::new(problem.dynamics(&state.x, &u, state.t), state.t + 1);
        controls.push(u);
    }
    Trajectory::rollout(problem, x0, controls)
}

/// Rollouts from many starts to the horizon, evaluating the actor once per
/// time step for all still-running starts.
pub fn actor_rollout_batch<T: Scalar, P: Problem<T> + ?Sized>(
    actor: &MlpParams<T>,
    problem: &P,
    starts: &[TimeState<T>],
) -> Result<Vec<Trajectory<T>>> {
    let horizon = problem.horizon();
    if let Some(s) = starts.iter().find(|s| s.t > horizon) {
        return Err(Error::TimeOutOfRange { t: s.t, horizon });
    }
    let mut current: Vec<TimeState<T>> = starts.to_vec();
    let mut controls: Vec<Vec<DVector<T>>> = starts.iter().map(|s| Vec::with_capacity(horizon - s.t)).collect();
    loop {
        let active: Vec<usize> = (0..current.len()).filter(|&i| current[i].t < horizon).collect();
        if active.is_empty() {
            break;
        }
        let batch: Vec<TimeState<T>> = active.iter().map(|&i| current[i].clone()).collect();
        let out = actor.forward_batch(&augment_batch(&batch))?;
        for (col, &i) in active.iter().enumerate() {
            let mut u = out.column(col).into_owned();
            problem.clamp_control(&mut u);
            let s = &current[i];
            current[i] = TimeState::new(problem.dynamics(&s.x, &u, s.t), s.t + 1);
            controls[i].push(u);
        }
    }
    starts
        .iter()
        .zip(controls)
        .map(|(x0, us)| Trajectory::rollout(problem, x0, us))
        .collect()
}
