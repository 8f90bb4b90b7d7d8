//! The three training objectives with exact parameter gradients.

use nalgebra::{DMatrix, DVector};

use super::mlp::{augment_batch, Gradients, MlpParams, OutputMap};
use super::TOSample;
use crate::envs::TimeState;
use crate::{lit, Error, Problem, Result, Scalar};

#[derive(Clone, Debug)]
pub struct LossOutput<T: Scalar> {
    pub loss: T,
    pub grads: Gradients<T>,
}

#[derive(Clone, Debug)]
pub struct ActorLossOutput<T: Scalar> {
    pub loss: T,
    pub grads: Gradients<T>,
    /// States at the horizon, which have no action to improve.
    pub skipped: usize,
}

/// Slowly-updated critic used to bootstrap targets at `state_after`.
#[derive(Clone, Copy, Debug)]
pub struct Bootstrap<'a, T: Scalar> {
    pub critic: &'a MlpParams<T>,
    pub horizon: usize,
}

/// Regression targets `y = V_bar (+ V_target(state_after) before the horizon)`.
pub fn value_targets<T: Scalar>(batch: &[TOSample<T>], bootstrap: Option<Bootstrap<'_, T>>) -> Result<DVector<T>> {
    let mut y = DVector::from_iterator(batch.len(), batch.iter().map(|s| s.v_bar));
    if let Some(b) = bootstrap {
        let idx: Vec<usize> = (0..batch.len())
            .filter(|&i| batch[i].state_after.t < b.horizon)
            .collect();
        if !idx.is_empty() {
            let after: Vec<TimeState<T>> = idx.iter().map(|&i| batch[i].state_after.clone()).collect();
            let values = b.critic.forward_batch(&augment_batch(&after))?;
            for (col, &i) in idx.iter().enumerate() {
                y[i] += values[(0, col)];
            }
        }
    }
    Ok(y)
}

fn linear_scale<T: Scalar>(critic: &MlpParams<T>) -> Result<T> {
    match critic.output {
        OutputMap::Linear { scale, .. } => Ok(scale),
        _ => Err(Error::InvalidArgument("critic must have a linear output map".into())),
    }
}

/// Sobolev critic objective
/// `mean[(y - V(x̃))² + k_s |V̄_x - S_x ∇V(x̃)|²]`, where `S_x` drops the time partial.
pub fn critic_loss<T: Scalar>(
    critic: &MlpParams<T>,
    target_critic: &MlpParams<T>,
    batch: &[TOSample<T>],
    k_s: T,
    bootstrap: bool,
    horizon: usize,
) -> Result<LossOutput<T>> {
    if batch.is_empty() {
        return Err(Error::Empty("critic minibatch"));
    }
    let scale = linear_scale(critic)?;
    let bs = batch.len();
    let n = batch[0].state.x.len();
    let inv_b = T::one() / lit::<T>(bs as f64);
    let two = lit::<T>(2.0);

    let states: Vec<TimeState<T>> = batch.iter().map(|s| s.state.clone()).collect();
    let inputs = augment_batch(&states);
    let targets = value_targets(
        batch,
        bootstrap.then_some(Bootstrap {
            critic: target_critic,
            horizon,
        }),
    )?;

    let cache = critic.forward_cache(&inputs);
    let raw = cache.raw_output();
    let values = critic.map_output(raw);
    let residual = DVector::from_fn(bs, |i, _| targets[i] - values[(0, i)]);
    let value_loss = residual.norm_squared() * inv_b;
    let value_adjoint = DMatrix::from_fn(1, bs, |_, i| -two * residual[i] * scale * inv_b);

    if k_s == T::zero() {
        let (grads, _) = critic.backward(&cache, value_adjoint, false);
        return Ok(LossOutput {
            loss: value_loss,
            grads,
        });
    }

    let (_, input_grad) = critic.backward(&cache, critic.output_derivative(raw), true);
    let input_grad = input_grad.expect("input adjoint requested");
    let mut grad_residual = DMatrix::zeros(n, bs);
    for (i, s) in batch.iter().enumerate() {
        for j in 0..n {
            grad_residual[(j, i)] = s.v_bar_x[j] - input_grad[(j, i)];
        }
    }
    let grad_loss = grad_residual.norm_squared() * inv_b;

    // r^T S_x ∇V equals `scale` times the raw-output tangent along r / input_scale.
    let mut direction = DMatrix::zeros(n + 1, bs);
    for i in 0..bs {
        for j in 0..n {
            direction[(j, i)] = grad_residual[(j, i)] / critic.input_scale[j];
        }
    }
    let tangent = critic.tangent(&cache, direction);
    let tangent_adjoint = DMatrix::from_element(1, bs, -two * k_s * scale * inv_b);
    let (grads, _) = critic.backward_dual(&cache, Some(&tangent), value_adjoint, Some(tangent_adjoint), false);
    Ok(LossOutput {
        loss: value_loss + k_s * grad_loss,
        grads,
    })
}

/// One-step Q objective `mean[l(x, μ(x̃)) + V(f(x, μ(x̃)), t + 1)]`.
///
/// When the successor reaches the horizon the terminal cost replaces the critic.
pub fn actor_loss<T: Scalar, P: Problem<T> + ?Sized>(
    actor: &MlpParams<T>,
    critic: &MlpParams<T>,
    problem: &P,
    states: &[TimeState<T>],
) -> Result<ActorLossOutput<T>> {
    let horizon = problem.horizon();
    let kept: Vec<TimeState<T>> = states.iter().filter(|s| s.t < horizon).cloned().collect();
    let skipped = states.len() - kept.len();
    if skipped > 0 {
        log::warn!("actor loss skipped {skipped} states at the horizon");
    }
    if kept.is_empty() {
        return Ok(ActorLossOutput {
            loss: T::zero(),
            grads: Gradients::zeros_like(actor),
            skipped,
        });
    }
    let bs = kept.len();
    let n = problem.state_dim();
    let m = problem.control_dim();
    let inv_b = T::one() / lit::<T>(bs as f64);

    let cache = actor.forward_cache(&augment_batch(&kept));
    let raw = cache.raw_output();
    let controls = actor.map_output(raw);
    let control_slope = actor.output_derivative(raw);

    let mut q_total = T::zero();
    let mut dq_du = DMatrix::zeros(m, bs);
    let mut successors = Vec::with_capacity(bs);
    let mut input_jacobians = Vec::with_capacity(bs);
    for (i, s) in kept.iter().enumerate() {
        let u = controls.column(i).into_owned();
        let c = problem.running_cost_derivatives(&s.x, &u, s.t);
        let (_, f_u) = problem.dynamics_jacobians(&s.x, &u, s.t);
        q_total += c.l;
        dq_du.set_column(i, &c.l_u);
        successors.push(TimeState::new(problem.dynamics(&s.x, &u, s.t), s.t + 1));
        input_jacobians.push(f_u);
    }

    let inner: Vec<usize> = (0..bs).filter(|&i| successors[i].t < horizon).collect();
    if !inner.is_empty() {
        let next: Vec<TimeState<T>> = inner.iter().map(|&i| successors[i].clone()).collect();
        let (values, grads) = critic.value_and_gradient_batch(&augment_batch(&next))?;
        for (col, &i) in inner.iter().enumerate() {
            q_total += values[col];
            let g = grads.column(col).rows(0, n).into_owned();
            let contrib = input_jacobians[i].tr_mul(&g);
            let mut column = dq_du.column_mut(i);
            column += contrib;
        }
    }
    for i in (0..bs).filter(|&i| successors[i].t >= horizon) {
        let term = problem.terminal_cost_derivatives(&successors[i].x);
        q_total += term.l;
        let contrib = input_jacobians[i].tr_mul(&term.l_x);
        let mut column = dq_du.column_mut(i);
        column += contrib;
    }

    let adjoint = dq_du.zip_map(&control_slope, |g, s| g * s * inv_b);
    let (grads, _) = actor.backward(&cache, adjoint, false);
    Ok(ActorLossOutput {
        loss: q_total * inv_b,
        grads,
        skipped,
    })
}

/// Gaussian negative log-likelihood of the critic residual,
/// `mean[ln σ + (y - V)² / (2σ²)]`; the critic is held fixed.
pub fn std_critic_loss<T: Scalar>(
    std_critic: &MlpParams<T>,
    critic: &MlpParams<T>,
    batch: &[TOSample<T>],
    bootstrap: Option<Bootstrap<'_, T>>,
) -> Result<LossOutput<T>> {
    if batch.is_empty() {
        return Err(Error::Empty("std-critic minibatch"));
    }
    let bs = batch.len();
    let inv_b = T::one() / lit::<T>(bs as f64);
    let half = lit::<T>(0.5);
    let states: Vec<TimeState<T>> = batch.iter().map(|s| s.state.clone()).collect();
    let inputs = augment_batch(&states);
    let targets = value_targets(batch, bootstrap)?;
    let values = critic.forward_batch(&inputs)?;

    let cache = std_critic.forward_cache(&inputs);
    let raw = cache.raw_output();
    let sigma = std_critic.map_output(raw);
    let slope = std_critic.output_derivative(raw);

    let mut loss = T::zero();
    let mut adjoint = DMatrix::zeros(1, bs);
    for i in 0..bs {
        let e = targets[i] - values[(0, i)];
        let s = sigma[(0, i)];
        let e_sq = e * e;
        loss += s.ln() + half * e_sq / (s * s);
        let d_sigma = T::one() / s - e_sq / (s * s * s);
        adjoint[(0, i)] = d_sigma * slope[(0, i)] * inv_b;
    }
    let (grads, _) = std_critic.backward(&cache, adjoint, false);
    Ok(LossOutput {
        loss: loss * inv_b,
        grads,
    })
}
