//! Small fully connected networks with hand-written reverse mode.
//!
//! Batches are stored `(examples, features)`. Weight matrices are `(out, in)`.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Linear,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Linear => z,
        }
    }

    /// Derivative written in terms of the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layers: Vec<Layer>,
}

/// Activations kept from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input fed to each layer.
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.post.last().expect("cache has at least one layer")
    }

    pub fn pre_activations(&self) -> &[Array2<f64>] {
        &self.pre
    }
}

/// Parameter gradients (summed over the batch) and per-example input gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub input: Array2<f64>,
}

impl GradientBundle {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            weights: params.layers.iter().map(|l| Array2::zeros(l.weights.raw_dim())).collect(),
            biases: params.layers.iter().map(|l| Array1::zeros(l.bias.raw_dim())).collect(),
            input: Array2::zeros((0, params.input_dim())),
        }
    }

    /// Accumulate parameter gradients; input gradients are not merged.
    pub fn add_params(&mut self, other: &GradientBundle) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }

    pub fn scale_params(&mut self, s: f64) {
        for w in &mut self.weights {
            *w *= s;
        }
        for b in &mut self.biases {
            *b *= s;
        }
    }

    /// Parameter gradients flattened in the same order as [`MlpParams::flat`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }
}

/// Uniform `±1/√fan_in` weights, zero biases.
pub fn init_mlp<R: Rng + ?Sized>(
    layer_sizes: &[usize],
    activations: &[Activation],
    rng: &mut R,
) -> Result<MlpParams> {
    if layer_sizes.len() < 2 {
        return Err(Error::BadArchitecture(
            "need an input size and at least one layer".into(),
        ));
    }
    if activations.len() != layer_sizes.len() - 1 {
        return Err(Error::BadArchitecture(format!(
            "{} layers but {} activations",
            layer_sizes.len() - 1,
            activations.len()
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::BadArchitecture("zero-width layer".into()));
    }
    let layers = layer_sizes
        .windows(2)
        .zip(activations)
        .map(|(dims, &activation)| {
            let (fan_in, fan_out) = (dims[0], dims[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let weights =
                Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-bound..=bound));
            Layer {
                weights,
                bias: Array1::zeros(fan_out),
                activation,
            }
        })
        .collect();
    Ok(MlpParams { layers })
}

impl MlpParams {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::BadArchitecture("no layers".into()));
        }
        for l in &layers {
            if l.bias.len() != l.outputs() {
                return Err(Error::BadArchitecture(format!(
                    "bias length {} does not match {} outputs",
                    l.bias.len(),
                    l.outputs()
                )));
            }
        }
        for pair in layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::BadArchitecture(format!(
                    "layer of width {} feeds a layer expecting {}",
                    pair[0].outputs(),
                    pair[1].inputs()
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().outputs()
    }

    /// `[in, hidden..., out]`.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim()];
        sizes.extend(self.layers.iter().map(Layer::outputs));
        sizes
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn same_architecture(&self, other: &MlpParams) -> bool {
        self.layer_sizes() == other.layer_sizes() && self.activations() == other.activations()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// All parameters, layer by layer, weights (row-major) then biases.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(l.weights.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} parameters",
                values.len(),
                self.param_count()
            )));
        }
        let mut it = values.iter();
        for l in &mut self.layers {
            for w in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *w = *it.next().unwrap();
            }
        }
        Ok(())
    }

    /// Batched forward pass.
    pub fn forward_batch(&self, input: ArrayView2<'_, f64>) -> Result<ForwardCache> {
        if input.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input width {} for a network expecting {}",
                input.ncols(),
                self.input_dim()
            )));
        }
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut post = Vec::with_capacity(n);
        let mut x = input.to_owned();
        for layer in &self.layers {
            let mut z = x.dot(&layer.weights.t());
            z += &layer.bias;
            let act = layer.activation;
            let a = z.mapv(|v| act.apply(v));
            inputs.push(x);
            pre.push(z);
            x = a.clone();
            post.push(a);
        }
        Ok(ForwardCache { inputs, pre, post })
    }

    /// Batched reverse pass for the scalar `Σ ⟨upstream, output⟩`.
    pub fn backward_batch(
        &self,
        cache: &ForwardCache,
        upstream: ArrayView2<'_, f64>,
    ) -> Result<GradientBundle> {
        self.reverse(cache, upstream, true, true)
    }

    /// Parameter gradients only; `input` of the result is empty.
    pub fn param_gradients(
        &self,
        cache: &ForwardCache,
        upstream: ArrayView2<'_, f64>,
    ) -> Result<GradientBundle> {
        self.reverse(cache, upstream, true, false)
    }

    /// Gradient with respect to the network input only.
    pub fn input_gradient(&self, cache: &ForwardCache, upstream: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.reverse(cache, upstream, false, true)?.input)
    }

    fn reverse(
        &self,
        cache: &ForwardCache,
        upstream: ArrayView2<'_, f64>,
        params: bool,
        input: bool,
    ) -> Result<GradientBundle> {
        let out = cache.output();
        if upstream.dim() != out.dim() || cache.pre.len() != self.layers.len() {
            return Err(Error::ShapeMismatch(format!(
                "upstream {:?} does not match output {:?}",
                upstream.dim(),
                out.dim()
            )));
        }
        let n = self.layers.len();
        let mut weights = Vec::with_capacity(n);
        let mut biases = Vec::with_capacity(n);
        let mut delta = upstream.to_owned();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let act = layer.activation;
            Zip::from(&mut delta)
                .and(&cache.pre[k])
                .and(&cache.post[k])
                .for_each(|d, &z, &a| *d *= act.derivative(z, a));
            if params {
                weights.push(delta.t().dot(&cache.inputs[k]));
                biases.push(delta.sum_axis(Axis(0)));
            }
            if k > 0 || input {
                delta = delta.dot(&layer.weights);
            } else {
                delta = Array2::zeros((0, layer.inputs()));
            }
        }
        weights.reverse();
        biases.reverse();
        Ok(GradientBundle {
            weights,
            biases,
            input: delta,
        })
    }
}

/// Single-example forward pass.
pub fn forward(params: &MlpParams, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
    let view = ArrayView2::from_shape((1, input.len()), input)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let cache = params.forward_batch(view)?;
    Ok((cache.output().row(0).to_vec(), cache))
}

/// Single-example reverse pass.
pub fn backward(params: &MlpParams, cache: &ForwardCache, upstream: &[f64]) -> Result<GradientBundle> {
    let view = ArrayView2::from_shape((1, upstream.len()), upstream)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    params.backward_batch(cache, view)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_w: Vec<Array2<f64>>,
    v_b: Vec<Array1<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        let zw = || params.layers.iter().map(|l| Array2::zeros(l.weights.raw_dim())).collect();
        let zb = || params.layers.iter().map(|l| Array1::zeros(l.bias.raw_dim())).collect();
        Self {
            config: AdamConfig::default(),
            m_w: zw(),
            m_b: zb(),
            v_w: zw(),
            v_b: zb(),
            step: 0,
        }
    }

    pub fn first_moment_norm(&self) -> f64 {
        self.m_w
            .iter()
            .flat_map(|m| m.iter())
            .chain(self.m_b.iter().flat_map(|m| m.iter()))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// One bias-corrected Adam descent step on `params`.
pub fn adam_step(params: &mut MlpParams, grads: &GradientBundle, state: &mut AdamState, lr: f64) -> Result<()> {
    if grads.weights.len() != params.layers.len() {
        return Err(Error::ShapeMismatch("gradient layer count".into()));
    }
    state.step += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let update = |p: &mut f64, m: &mut f64, v: &mut f64, &g: &f64| {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    };
    for (k, layer) in params.layers.iter_mut().enumerate() {
        if grads.weights[k].dim() != layer.weights.dim() || grads.biases[k].dim() != layer.bias.dim() {
            return Err(Error::ShapeMismatch(format!("gradient shape at layer {k}")));
        }
        Zip::from(&mut layer.weights)
            .and(&mut state.m_w[k])
            .and(&mut state.v_w[k])
            .and(&grads.weights[k])
            .for_each(update);
        Zip::from(&mut layer.bias)
            .and(&mut state.m_b[k])
            .and(&mut state.v_b[k])
            .and(&grads.biases[k])
            .for_each(update);
    }
    Ok(())
}

/// Soft target update `target ← τ·online + (1 − τ)·target`.
pub fn polyak_update(target: &mut MlpParams, online: &MlpParams, tau: f64) -> Result<()> {
    if !target.same_architecture(online) {
        return Err(Error::ShapeMismatch(format!(
            "target {:?} vs online {:?}",
            target.layer_sizes(),
            online.layer_sizes()
        )));
    }
    for (t, o) in target.layers.iter_mut().zip(&online.layers) {
        Zip::from(&mut t.weights)
            .and(&o.weights)
            .for_each(|t, &o| *t = tau * o + (1.0 - tau) * *t);
        Zip::from(&mut t.bias)
            .and(&o.bias)
            .for_each(|t, &o| *t = tau * o + (1.0 - tau) * *t);
    }
    Ok(())
}
