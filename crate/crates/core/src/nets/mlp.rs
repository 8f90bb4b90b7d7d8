//! Fully connected networks with hand-written reverse mode, including the
//! forward-over-reverse pass needed to train on input gradients.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::TimeState;
use crate::error::check_dim;
use crate::{lit, sigmoid, softplus, Error, Result, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Elu,
    Tanh,
    Softplus,
}

impl Activation {
    #[inline]
    pub fn value<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Elu => {
                if z > T::zero() {
                    z
                } else {
                    z.exp() - T::one()
                }
            }
            Activation::Tanh => z.tanh(),
            Activation::Softplus => softplus(z),
        }
    }

    #[inline]
    pub fn derivative<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Elu => {
                if z > T::zero() {
                    T::one()
                } else {
                    z.exp()
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                T::one() - t * t
            }
            Activation::Softplus => sigmoid(z),
        }
    }

    #[inline]
    pub fn second_derivative<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Elu => {
                if z > T::zero() {
                    T::zero()
                } else {
                    z.exp()
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                -(t + t) * (T::one() - t * t)
            }
            Activation::Softplus => {
                let s = sigmoid(z);
                s * (T::one() - s)
            }
        }
    }
}

/// Map from the last affine layer to the network output.
#[derive(Clone, Debug, PartialEq)]
pub enum OutputMap<T: Scalar> {
    /// `y = scale * z + offset` (critic).
    Linear { scale: T, offset: T },
    /// `y_i = bound_i * tanh(z_i)` (actor, keeps `|y_i| <= bound_i`).
    ScaledTanh { bound: DVector<T> },
    /// `y = scale * softplus(z) + floor` (std-critic, keeps `y >= floor`).
    PositiveSoftplus { scale: T, floor: T },
}

impl<T: Scalar> OutputMap<T> {
    #[inline]
    fn apply(&self, row: usize, z: T) -> T {
        match self {
            OutputMap::Linear { scale, offset } => *scale * z + *offset,
            OutputMap::ScaledTanh { bound } => bound[row] * z.tanh(),
            OutputMap::PositiveSoftplus { scale, floor } => *scale * softplus(z) + *floor,
        }
    }

    #[inline]
    fn derivative(&self, row: usize, z: T) -> T {
        match self {
            OutputMap::Linear { scale, .. } => *scale,
            OutputMap::ScaledTanh { bound } => {
                let t = z.tanh();
                bound[row] * (T::one() - t * t)
            }
            OutputMap::PositiveSoftplus { scale, .. } => *scale * sigmoid(z),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T: Scalar> {
    /// `out × in`.
    pub weight: DMatrix<T>,
    pub bias: DVector<T>,
}

/// Parameters of one network plus its fixed input normalization and output map.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<T: Scalar> {
    pub layers: Vec<Layer<T>>,
    pub activation: Activation,
    pub output: OutputMap<T>,
    /// Inputs enter the first layer as `(input - input_offset) / input_scale`.
    pub input_offset: DVector<T>,
    pub input_scale: DVector<T>,
}

/// Parameter-shaped container for gradients and optimizer moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T: Scalar> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(params: &MlpParams<T>) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| Layer {
                    weight: DMatrix::zeros(l.weight.nrows(), l.weight.ncols()),
                    bias: DVector::zeros(l.bias.len()),
                })
                .collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        flat_len(&self.layers)
    }

    pub fn get(&self, index: usize) -> T {
        *flat_ref(&self.layers, index)
    }

    pub fn shape_matches(&self, params: &MlpParams<T>) -> bool {
        self.layers.len() == params.layers.len()
            && self.layers.iter().zip(&params.layers).all(|(g, l)| {
                g.weight.shape() == l.weight.shape() && g.bias.len() == l.bias.len()
            })
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| *v == T::zero()))
    }
}

fn flat_len<T: Scalar>(layers: &[Layer<T>]) -> usize {
    layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
}

fn flat_ref<T: Scalar>(layers: &[Layer<T>], mut index: usize) -> &T {
    for l in layers {
        if index < l.weight.len() {
            return &l.weight.as_slice()[index];
        }
        index -= l.weight.len();
        if index < l.bias.len() {
            return &l.bias[index];
        }
        index -= l.bias.len();
    }
    panic!("parameter index out of range")
}

fn flat_mut<T: Scalar>(layers: &mut [Layer<T>], mut index: usize) -> &mut T {
    for l in layers {
        if index < l.weight.len() {
            return &mut l.weight.as_mut_slice()[index];
        }
        index -= l.weight.len();
        if index < l.bias.len() {
            return &mut l.bias[index];
        }
        index -= l.bias.len();
    }
    panic!("parameter index out of range")
}

/// Intermediate values of a batched forward pass.
pub(crate) struct ForwardCache<T: Scalar> {
    /// Input to every affine layer; `inputs[0]` is the normalized network input.
    pub inputs: Vec<DMatrix<T>>,
    /// Pre-activations of every layer; the last one is the raw output.
    pub pre: Vec<DMatrix<T>>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn raw_output(&self) -> &DMatrix<T> {
        self.pre.last().expect("network has at least one layer")
    }
}

fn add_bias<T: Scalar>(z: &mut DMatrix<T>, bias: &DVector<T>) {
    for mut col in z.column_iter_mut() {
        col += bias;
    }
}

impl<T: Scalar> MlpParams<T> {
    /// Glorot-uniform weights, zero biases; the output layer is scaled down so
    /// a fresh network starts close to its output offset.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        activation: Activation,
        output: OutputMap<T>,
        input_offset: DVector<T>,
        input_scale: DVector<T>,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidArgument("a network needs input and output sizes".into()));
        }
        check_dim("input offset", sizes[0], input_offset.len())?;
        check_dim("input scale", sizes[0], input_scale.len())?;
        if let OutputMap::ScaledTanh { bound } = &output {
            check_dim("actor output bound", sizes[sizes.len() - 1], bound.len())?;
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let mut limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                if i == last {
                    limit *= 0.1;
                }
                let weight = DMatrix::from_fn(fan_out, fan_in, |_, _| lit::<T>(rng.random_range(-limit..limit)));
                Layer {
                    weight,
                    bias: DVector::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self {
            layers,
            activation,
            output,
            input_offset,
            input_scale,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.nrows()
    }

    pub fn num_params(&self) -> usize {
        flat_len(&self.layers)
    }

    /// Flat parameter access: layer by layer, column-major weights then bias.
    pub fn param(&self, index: usize) -> T {
        *flat_ref(&self.layers, index)
    }

    pub fn set_param(&mut self, index: usize, value: T) {
        *flat_mut(&mut self.layers, index) = value;
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// `self <- tau * source + (1 - tau) * self`.
    pub fn polyak_toward(&mut self, source: &Self, tau: T) {
        let keep = T::one() - tau;
        for (dst, src) in self.layers.iter_mut().zip(&source.layers) {
            dst.weight.zip_apply(&src.weight, |d, s| *d = *d * keep + s * tau);
            dst.bias.zip_apply(&src.bias, |d, s| *d = *d * keep + s * tau);
        }
    }

    fn normalize(&self, input: &DMatrix<T>) -> DMatrix<T> {
        let mut out = input.clone();
        for mut col in out.column_iter_mut() {
            for i in 0..col.len() {
                col[i] = (col[i] - self.input_offset[i]) / self.input_scale[i];
            }
        }
        out
    }

    pub(crate) fn forward_cache(&self, input: &DMatrix<T>) -> ForwardCache<T> {
        let depth = self.layers.len();
        let mut inputs = Vec::with_capacity(depth);
        let mut pre = Vec::with_capacity(depth);
        inputs.push(self.normalize(input));
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.weight * &inputs[l];
            add_bias(&mut z, &layer.bias);
            if l + 1 < depth {
                inputs.push(z.map(|v| self.activation.value(v)));
            }
            pre.push(z);
        }
        ForwardCache { inputs, pre }
    }

    pub(crate) fn map_output(&self, raw: &DMatrix<T>) -> DMatrix<T> {
        DMatrix::from_fn(raw.nrows(), raw.ncols(), |r, c| self.output.apply(r, raw[(r, c)]))
    }

    pub(crate) fn output_derivative(&self, raw: &DMatrix<T>) -> DMatrix<T> {
        DMatrix::from_fn(raw.nrows(), raw.ncols(), |r, c| self.output.derivative(r, raw[(r, c)]))
    }

    /// Reverse pass from an adjoint on the raw output. Returns parameter
    /// gradients and, when requested, the adjoint of the un-normalized input.
    pub(crate) fn backward(
        &self,
        cache: &ForwardCache<T>,
        raw_adjoint: DMatrix<T>,
        want_input: bool,
    ) -> (Gradients<T>, Option<DMatrix<T>>) {
        self.backward_dual(cache, None, raw_adjoint, None, want_input)
    }

    /// Forward-mode tangent of the raw output along normalized input
    /// directions `direction` (one column per sample). Returns the tangents
    /// of every layer input and pre-activation.
    pub(crate) fn tangent(&self, cache: &ForwardCache<T>, direction: DMatrix<T>) -> TangentCache<T> {
        let depth = self.layers.len();
        let mut inputs = Vec::with_capacity(depth);
        let mut pre = Vec::with_capacity(depth);
        inputs.push(direction);
        for (l, layer) in self.layers.iter().enumerate() {
            let zdot = &layer.weight * &inputs[l];
            if l + 1 < depth {
                let act = self.activation;
                let hdot = cache.pre[l].zip_map(&zdot, |z, zd| act.derivative(z) * zd);
                inputs.push(hdot);
            }
            pre.push(zdot);
        }
        TangentCache { inputs, pre }
    }

    /// Reverse pass through the primal and (optionally) tangent computation.
    pub(crate) fn backward_dual(
        &self,
        cache: &ForwardCache<T>,
        tangent: Option<&TangentCache<T>>,
        raw_adjoint: DMatrix<T>,
        tangent_adjoint: Option<DMatrix<T>>,
        want_input: bool,
    ) -> (Gradients<T>, Option<DMatrix<T>>) {
        let depth = self.layers.len();
        let act = self.activation;
        let mut grads: Vec<Option<Layer<T>>> = vec![None; depth];
        let mut gz = raw_adjoint;
        let mut gzd = tangent_adjoint;
        let mut input_adjoint = None;
        for l in (0..depth).rev() {
            let layer = &self.layers[l];
            let mut d_weight = &gz * cache.inputs[l].transpose();
            if let (Some(gzd), Some(tc)) = (&gzd, tangent) {
                d_weight += gzd * tc.inputs[l].transpose();
            }
            let d_bias = gz.column_sum();
            grads[l] = Some(Layer {
                weight: d_weight,
                bias: d_bias,
            });
            if l == 0 {
                if want_input {
                    let mut g = layer.weight.tr_mul(&gz);
                    for mut col in g.column_iter_mut() {
                        for i in 0..col.len() {
                            col[i] /= self.input_scale[i];
                        }
                    }
                    input_adjoint = Some(g);
                }
                break;
            }
            let gh = layer.weight.tr_mul(&gz);
            let z_prev = &cache.pre[l - 1];
            let mut new_gz = gh.zip_map(z_prev, |g, z| g * act.derivative(z));
            if let (Some(gzd_cur), Some(tc)) = (&gzd, tangent) {
                let ghd = layer.weight.tr_mul(gzd_cur);
                let zd_prev = &tc.pre[l - 1];
                for ((gz_v, &ghd_v), (&z, &zd)) in new_gz
                    .iter_mut()
                    .zip(ghd.iter())
                    .zip(z_prev.iter().zip(zd_prev.iter()))
                {
                    *gz_v += ghd_v * act.second_derivative(z) * zd;
                }
                gzd = Some(ghd.zip_map(z_prev, |g, z| g * act.derivative(z)));
            }
            gz = new_gz;
        }
        (
            Gradients {
                layers: grads.into_iter().map(|g| g.expect("every layer visited")).collect(),
            },
            input_adjoint,
        )
    }

    /// Batched forward pass: one input per column, one output per column.
    pub fn forward_batch(&self, inputs: &DMatrix<T>) -> Result<DMatrix<T>> {
        check_dim("network input", self.input_dim(), inputs.nrows())?;
        let cache = self.forward_cache(inputs);
        Ok(self.map_output(cache.raw_output()))
    }

    pub fn forward(&self, input: &DVector<T>) -> Result<DVector<T>> {
        check_dim("network input", self.input_dim(), input.len())?;
        let out = self.forward_batch(&DMatrix::from_column_slice(input.len(), 1, input.as_slice()))?;
        Ok(out.column(0).into_owned())
    }

    /// Exact Jacobian of [`MlpParams::forward`] with respect to its input (`out × in`).
    pub fn input_gradient(&self, input: &DVector<T>) -> Result<DMatrix<T>> {
        check_dim("network input", self.input_dim(), input.len())?;
        let cache = self.forward_cache(&DMatrix::from_column_slice(input.len(), 1, input.as_slice()));
        let raw = cache.raw_output();
        let out_dim = self.output_dim();
        let mut jac = DMatrix::zeros(out_dim, self.input_dim());
        for r in 0..out_dim {
            let mut adj = DMatrix::zeros(out_dim, 1);
            adj[(r, 0)] = self.output.derivative(r, raw[(r, 0)]);
            let (_, g) = self.backward(&cache, adj, true);
            jac.set_row(r, &g.expect("input adjoint requested").column(0).transpose());
        }
        Ok(jac)
    }

    /// Values and input gradients of a scalar-output network over a batch
    /// (gradients are one column per sample).
    pub fn value_and_gradient_batch(&self, inputs: &DMatrix<T>) -> Result<(DVector<T>, DMatrix<T>)> {
        check_dim("network input", self.input_dim(), inputs.nrows())?;
        check_dim("scalar network output", 1, self.output_dim())?;
        let cache = self.forward_cache(inputs);
        let raw = cache.raw_output();
        let values = self.map_output(raw).row(0).transpose();
        let adj = self.output_derivative(raw);
        let (_, g) = self.backward(&cache, adj, true);
        Ok((values, g.expect("input adjoint requested")))
    }

    /// Scalar output at an augmented state.
    pub fn value_at(&self, state: &TimeState<T>) -> Result<T> {
        Ok(self.forward(&augment(state))?[0])
    }

    /// Scalar output and its gradient with respect to the physical state only.
    pub fn value_and_state_gradient(&self, state: &TimeState<T>) -> Result<(T, DVector<T>)> {
        let (v, g) = self.value_and_gradient_batch(&augment_batch(std::slice::from_ref(state)))?;
        let n = state.x.len();
        Ok((v[0], g.column(0).rows(0, n).into_owned()))
    }
}

pub(crate) struct TangentCache<T: Scalar> {
    pub inputs: Vec<DMatrix<T>>,
    pub pre: Vec<DMatrix<T>>,
}

/// `[x, t]` as a network input vector.
pub fn augment<T: Scalar>(state: &TimeState<T>) -> DVector<T> {
    let n = state.x.len();
    DVector::from_fn(n + 1, |i, _| if i < n { state.x[i] } else { lit(state.t as f64) })
}

/// Augmented states as matrix columns.
pub fn augment_batch<T: Scalar>(states: &[TimeState<T>]) -> DMatrix<T> {
    let n = states.first().map_or(0, |s| s.x.len());
    DMatrix::from_fn(n + 1, states.len(), |i, j| {
        if i < n {
            states[j].x[i]
        } else {
            lit(states[j].t as f64)
        }
    })
}
