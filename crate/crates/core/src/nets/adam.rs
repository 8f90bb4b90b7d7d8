use super::mlp::{Gradients, MlpParams};
use crate::{lit, Error, Result, Scalar};

/// Adam moments and hyperparameters for one network.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Scalar> {
    pub first_moment: Gradients<T>,
    pub second_moment: Gradients<T>,
    pub step: u64,
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &MlpParams<T>, learning_rate: T) -> Self {
        Self {
            first_moment: Gradients::zeros_like(params),
            second_moment: Gradients::zeros_like(params),
            step: 0,
            learning_rate,
            beta1: lit(0.9),
            beta2: lit(0.999),
            eps: lit(1e-8),
        }
    }
}

/// One bias-corrected Adam update; returns the new parameters and state.
pub fn adam_step<T: Scalar>(
    params: &MlpParams<T>,
    state: &AdamState<T>,
    grads: &Gradients<T>,
) -> Result<(MlpParams<T>, AdamState<T>)> {
    if !grads.shape_matches(params) || !state.first_moment.shape_matches(params) {
        return Err(Error::InvalidArgument("gradient shape does not match the network".into()));
    }
    let mut next_params = params.clone();
    let mut next = state.clone();
    next.step += 1;
    let t = lit::<T>(next.step as f64);
    let (b1, b2) = (state.beta1, state.beta2);
    let one = T::one();
    let correction1 = one - b1.powf(t);
    let correction2 = one - b2.powf(t);
    let (lr, eps) = (state.learning_rate, state.eps);

    let update = |p: &mut T, m: &mut T, v: &mut T, g: T| {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / correction1;
        let v_hat = *v / correction2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    };

    for (((layer, m), v), g) in next_params
        .layers
        .iter_mut()
        .zip(next.first_moment.layers.iter_mut())
        .zip(next.second_moment.layers.iter_mut())
        .zip(&grads.layers)
    {
        for (((p, m), v), &g) in layer
            .weight
            .iter_mut()
            .zip(m.weight.iter_mut())
            .zip(v.weight.iter_mut())
            .zip(g.weight.iter())
        {
            update(p, m, v, g);
        }
        for (((p, m), v), &g) in layer
            .bias
            .iter_mut()
            .zip(m.bias.iter_mut())
            .zip(v.bias.iter_mut())
            .zip(g.bias.iter())
        {
            update(p, m, v, g);
        }
    }
    Ok((next_params, next))
}
