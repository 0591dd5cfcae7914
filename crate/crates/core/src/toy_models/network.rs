use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_mismatch, KdError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative given the pre-activation value. ReLU uses 0 at the kink.
    fn derivative<T: Scalar>(self, pre: T) -> T {
        match self {
            Activation::Relu => {
                if pre > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                T::one() - t * t
            }
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Layer widths `[d_in, h_1, ..., h_L, d_embed]` with one activation per hidden layer.
/// The output layer is affine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenseNetSpec {
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub seed: u64,
}

impl DenseNetSpec {
    pub fn new(widths: Vec<usize>, activation: Activation, seed: u64) -> Self {
        let hidden = widths.len().saturating_sub(2);
        Self {
            widths,
            activations: vec![activation; hidden],
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.iter().any(|&w| w == 0) {
            return Err(KdError::InvalidParam(format!(
                "network widths need at least input and output, all positive: {:?}",
                self.widths
            )));
        }
        if self.activations.len() != self.widths.len() - 2 {
            return Err(KdError::InvalidParam(format!(
                "{} hidden layers but {} activations",
                self.widths.len() - 2,
                self.activations.len()
            )));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated spec")
    }
}

/// Affine map `y = x W + b`, `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Layer<T> {
    fn zeros_like(&self) -> Self {
        Self {
            weight: Array2::zeros(self.weight.dim()),
            bias: Array1::zeros(self.bias.len()),
        }
    }
}

/// Gradients for every layer, same layout as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGrads<T> {
    pub layers: Vec<Layer<T>>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    version: u64,
    /// Input to each layer.
    inputs: Vec<Array2<T>>,
    /// Pre-activation output of each hidden layer.
    pre: Vec<Array2<T>>,
}

impl<T> ForwardCache<T> {
    pub fn pre_activations(&self) -> &[Array2<T>] {
        &self.pre
    }
}

/// Parameters of a dense encoder together with its momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState<T> {
    spec: DenseNetSpec,
    layers: Vec<Layer<T>>,
    velocity: Vec<Layer<T>>,
    version: u64,
}

impl<T: Scalar> NetworkState<T> {
    /// He initialization for ReLU layers, Xavier-style `1/fan_in` otherwise;
    /// zero biases. Deterministic in `spec.seed`.
    ///
    /// Inputs are expected to be unit-norm rows, so the first layer is scaled
    /// by the input's total second moment (1) instead of its width; otherwise
    /// the embeddings start out tiny and the first normalized-loss steps blow up.
    pub fn init(spec: DenseNetSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut layers = Vec::with_capacity(spec.widths.len() - 1);
        for (l, pair) in spec.widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let gain = match spec.activations.get(l) {
                Some(Activation::Relu) => 2.0,
                _ => 1.0,
            };
            let fan = if l == 0 { 1.0 } else { fan_in as f64 };
            let normal = Normal::new(0.0, (gain / fan).sqrt()).expect("valid std");
            let weight = Array2::from_shape_simple_fn((fan_in, fan_out), || T::lit(normal.sample(&mut rng)));
            layers.push(Layer {
                weight,
                bias: Array1::zeros(fan_out),
            });
        }
        Self::from_layers(spec, layers)
    }

    pub fn from_layers(spec: DenseNetSpec, layers: Vec<Layer<T>>) -> Result<Self> {
        spec.validate()?;
        if layers.len() != spec.widths.len() - 1 {
            return Err(shape_mismatch("layer count", spec.widths.len() - 1, layers.len()));
        }
        for (l, layer) in layers.iter().enumerate() {
            let want = (spec.widths[l], spec.widths[l + 1]);
            if layer.weight.dim() != want || layer.bias.len() != want.1 {
                return Err(shape_mismatch("layer shape", want, (layer.weight.dim(), layer.bias.len())));
            }
        }
        let velocity = layers.iter().map(Layer::zeros_like).collect();
        Ok(Self {
            spec,
            layers,
            velocity,
            version: 0,
        })
    }

    pub fn spec(&self) -> &DenseNetSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn velocity(&self) -> &[Layer<T>] {
        &self.velocity
    }

    /// Mutable parameter access; invalidates outstanding caches.
    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        self.version += 1;
        &mut self.layers
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn zero_grads(&self) -> NetworkGrads<T> {
        NetworkGrads {
            layers: self.layers.iter().map(Layer::zeros_like).collect(),
        }
    }

    fn check_input(&self, x: &ArrayView2<'_, T>) -> Result<()> {
        if x.ncols() != self.spec.input_dim() {
            return Err(shape_mismatch("forward input", self.spec.input_dim(), x.ncols()));
        }
        Ok(())
    }

    /// Forward pass without caching.
    pub fn embed(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        self.check_input(&x)?;
        let mut h = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            h = h.dot(&layer.weight) + &layer.bias;
            if let Some(act) = self.spec.activations.get(l) {
                h.mapv_inplace(|v| act.apply(v));
            }
        }
        Ok(h)
    }

    pub fn forward(&self, x: ArrayView2<'_, T>) -> Result<(Array2<T>, ForwardCache<T>)> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.spec.activations.len());
        let mut h = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = h.dot(&layer.weight) + &layer.bias;
            inputs.push(h);
            h = match self.spec.activations.get(l) {
                Some(&act) => {
                    let a = z.mapv(|v| act.apply(v));
                    pre.push(z);
                    a
                }
                None => z,
            };
        }
        Ok((
            h,
            ForwardCache {
                version: self.version,
                inputs,
                pre,
            },
        ))
    }

    /// Exact chain-rule gradients for every parameter and the input.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        grad_out: ArrayView2<'_, T>,
    ) -> Result<(NetworkGrads<T>, Array2<T>)> {
        if cache.version != self.version || cache.inputs.len() != self.layers.len() {
            return Err(KdError::StaleCache);
        }
        let m = cache.inputs[0].nrows();
        if grad_out.dim() != (m, self.spec.output_dim()) {
            return Err(shape_mismatch("backward grad_out", (m, self.spec.output_dim()), grad_out.dim()));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.to_owned();
        for l in (0..self.layers.len()).rev() {
            if let Some(&act) = self.spec.activations.get(l) {
                ndarray::Zip::from(&mut g)
                    .and(&cache.pre[l])
                    .for_each(|gv, &p| *gv = *gv * act.derivative(p));
            }
            let weight = cache.inputs[l].t().dot(&g);
            let bias = g.sum_axis(Axis(0));
            let next = g.dot(&self.layers[l].weight.t());
            grads.push(Layer { weight, bias });
            g = next;
        }
        grads.reverse();
        Ok((NetworkGrads { layers: grads }, g))
    }

    /// Adds `wd * W` to every weight gradient. Biases are not decayed.
    pub fn add_weight_decay(&self, grads: &mut NetworkGrads<T>, wd: T) {
        if wd == T::zero() {
            return;
        }
        for (g, layer) in grads.layers.iter_mut().zip(&self.layers) {
            g.weight.scaled_add(wd, &layer.weight);
        }
    }

    /// `v <- momentum * v + g; theta <- theta - lr * v`.
    pub fn apply_sgd(&mut self, grads: &NetworkGrads<T>, lr: T, momentum: T) -> Result<()> {
        if grads.layers.len() != self.layers.len() {
            return Err(shape_mismatch("sgd layers", self.layers.len(), grads.layers.len()));
        }
        for (layer, g) in self.layers.iter().zip(&grads.layers) {
            if layer.weight.dim() != g.weight.dim() || layer.bias.len() != g.bias.len() {
                return Err(shape_mismatch(
                    "sgd layer",
                    (layer.weight.dim(), layer.bias.len()),
                    (g.weight.dim(), g.bias.len()),
                ));
            }
        }
        for ((layer, vel), g) in self.layers.iter_mut().zip(&mut self.velocity).zip(&grads.layers) {
            super::optim::sgd_momentum_step(&mut layer.weight, &mut vel.weight, &g.weight, lr, momentum)?;
            super::optim::sgd_momentum_step(&mut layer.bias, &mut vel.bias, &g.bias, lr, momentum)?;
        }
        self.version += 1;
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Order-sensitive hash of the parameter bits; used to assert a frozen teacher.
    pub fn param_fingerprint(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        for l in &self.layers {
            for v in l.weight.iter().chain(l.bias.iter()) {
                v.as_f64().to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}
