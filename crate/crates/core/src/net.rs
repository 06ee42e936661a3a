//! Dense feedforward networks evaluated in double precision.
//!
//! Parameters live in one flat vector. The layout is layer-major: for each
//! layer the weight matrix comes first, stored row-major with shape
//! `fan_out x fan_in`, followed by its `fan_out` biases. A `[2, 3, 1]` network
//! therefore stores `W1[0][0], W1[0][1], W1[1][0], ..., b1[0..3], W2[0][0..3], b2[0]`.

use std::ops::{Deref, DerefMut};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    /// Exponential linear unit with `alpha = 1`.
    Elu,
    Linear,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
            Activation::Linear => z,
        }
    }

    /// Derivative at pre-activation `z` given the already computed `a = apply(z)`.
    #[inline]
    fn derivative_given(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Elu if z <= 0.0 => a + 1.0,
            _ => self.derivative(z),
        }
    }

    /// Derivative with respect to the pre-activation `z`.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    z.exp()
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Sum of squared residuals over all samples and outputs.
    Sse,
    /// `Sse` divided by the number of samples.
    Mse,
    /// Softmax cross-entropy on logits, averaged over samples.
    CategoricalCrossEntropy,
    /// Sigmoid cross-entropy on logits, averaged over all entries.
    BinaryCrossEntropyFromLogits,
}

impl LossKind {
    pub fn is_classification(self) -> bool {
        matches!(
            self,
            LossKind::CategoricalCrossEntropy | LossKind::BinaryCrossEntropyFromLogits
        )
    }
}

/// Position of one layer's parameters inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
    pub activation: Activation,
}

impl LayerShape {
    pub fn weight_len(&self) -> usize {
        self.fan_in * self.fan_out
    }

    pub fn end(&self) -> usize {
        self.bias_offset + self.fan_out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTopology", into = "RawTopology")]
pub struct Topology {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
    layers: Vec<LayerShape>,
}

#[derive(Serialize, Deserialize)]
struct RawTopology {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
}

impl TryFrom<RawTopology> for Topology {
    type Error = Error;

    fn try_from(raw: RawTopology) -> Result<Self> {
        Topology::new(raw.layer_sizes, raw.activations)
    }
}

impl From<Topology> for RawTopology {
    fn from(t: Topology) -> Self {
        RawTopology {
            layer_sizes: t.layer_sizes,
            activations: t.activations,
        }
    }
}

impl Topology {
    pub fn new(layer_sizes: Vec<usize>, activations: Vec<Activation>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidTopology(format!(
                "need at least 2 layers, got {}",
                layer_sizes.len()
            )));
        }
        if let Some(pos) = layer_sizes.iter().position(|&n| n == 0) {
            return Err(Error::InvalidTopology(format!("layer {pos} has zero width")));
        }
        if activations.len() != layer_sizes.len() - 1 {
            return Err(Error::InvalidTopology(format!(
                "{} activations for {} non-input layers",
                activations.len(),
                layer_sizes.len() - 1
            )));
        }
        let mut layers = Vec::with_capacity(activations.len());
        let mut offset = 0;
        for (pair, &activation) in layer_sizes.windows(2).zip(&activations) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let shape = LayerShape {
                fan_in,
                fan_out,
                weight_offset: offset,
                bias_offset: offset + fan_in * fan_out,
                activation,
            };
            offset = shape.end();
            layers.push(shape);
        }
        Ok(Topology {
            layer_sizes,
            activations,
            layers,
        })
    }

    /// Hidden layers share one activation; the output layer gets its own.
    pub fn uniform(layer_sizes: Vec<usize>, hidden: Activation, output: Activation) -> Result<Self> {
        let n = layer_sizes.len().saturating_sub(1);
        let activations = (0..n)
            .map(|i| if i + 1 == n { output } else { hidden })
            .collect();
        Topology::new(layer_sizes, activations)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated non-empty")
    }

    pub fn param_count(&self) -> usize {
        self.layers.last().map_or(0, LayerShape::end)
    }

    pub fn weights<'a>(&self, params: &'a [f64], layer: usize) -> ArrayView2<'a, f64> {
        let l = &self.layers[layer];
        ArrayView2::from_shape(
            (l.fan_out, l.fan_in),
            &params[l.weight_offset..l.bias_offset],
        )
        .expect("layout is consistent with the topology")
    }

    pub fn biases<'a>(&self, params: &'a [f64], layer: usize) -> ArrayView1<'a, f64> {
        let l = &self.layers[layer];
        ArrayView1::from(&params[l.bias_offset..l.end()])
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::shape(
                format!("{} parameters", self.param_count()),
                format!("{} parameters", params.len()),
            ));
        }
        Ok(())
    }

    fn check_inputs(&self, inputs: &ArrayView2<f64>) -> Result<()> {
        if inputs.ncols() != self.input_dim() {
            return Err(Error::shape(
                format!("{} input columns", self.input_dim()),
                format!("{} input columns", inputs.ncols()),
            ));
        }
        Ok(())
    }
}

/// Flat parameter vector; see the module docs for the layout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Initializer {
    #[default]
    GlorotNormal,
    StratifiedGlorot,
}

impl Initializer {
    pub fn init(self, topology: &Topology, seed: u64, replicate: u32) -> ParamVector {
        let mut rng = rng::stream(seed, Purpose::Init, replicate);
        match self {
            Initializer::GlorotNormal => glorot_normal_with(topology, &mut rng),
            Initializer::StratifiedGlorot => stratified_glorot_with(topology, &mut rng),
        }
    }
}

fn glorot_sigma(l: &LayerShape) -> f64 {
    (2.0 / (l.fan_in + l.fan_out) as f64).sqrt()
}

/// Weights `N(0, 2 / (fan_in + fan_out))`, biases zero.
pub fn init_glorot_normal(topology: &Topology, seed: u64) -> ParamVector {
    Initializer::GlorotNormal.init(topology, seed, 0)
}

/// Glorot-scaled weights whose means are spread over `[-2 sigma, 2 sigma]`.
///
/// The interval is cut into `fan_in` equal segments and weight `(o, i)` is
/// drawn from a normal of width `sigma / 2` centred on the midpoint of segment
/// `i`. The layer-wide mean is zero; biases are zero.
pub fn init_stratified_glorot(topology: &Topology, seed: u64) -> ParamVector {
    Initializer::StratifiedGlorot.init(topology, seed, 0)
}

fn glorot_normal_with<R: Rng>(topology: &Topology, rng: &mut R) -> ParamVector {
    let mut params = ParamVector::zeros(topology.param_count());
    for l in topology.layers() {
        let sigma = glorot_sigma(l);
        for w in &mut params[l.weight_offset..l.bias_offset] {
            let z: f64 = StandardNormal.sample(rng);
            *w = sigma * z;
        }
    }
    params
}

/// Segment midpoints of `[-2 sigma, 2 sigma]` split into `n` equal parts.
pub fn stratified_midpoints(sigma: f64, n: usize) -> Vec<f64> {
    let width = 4.0 * sigma / n as f64;
    (0..n)
        .map(|j| -2.0 * sigma + (j as f64 + 0.5) * width)
        .collect()
}

fn stratified_glorot_with<R: Rng>(topology: &Topology, rng: &mut R) -> ParamVector {
    let mut params = ParamVector::zeros(topology.param_count());
    for l in topology.layers() {
        let sigma = glorot_sigma(l);
        let mids = stratified_midpoints(sigma, l.fan_in);
        let spread = Normal::new(0.0, sigma / 2.0).expect("positive width");
        let weights = &mut params[l.weight_offset..l.bias_offset];
        for (k, w) in weights.iter_mut().enumerate() {
            *w = mids[k % l.fan_in] + spread.sample(rng);
        }
    }
    params
}

/// Pre-activations and activations of every layer for one batch.
struct ForwardCache {
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
}

fn forward_cached(topology: &Topology, params: &[f64], inputs: ArrayView2<f64>) -> ForwardCache {
    let mut pre = Vec::with_capacity(topology.layers().len());
    let mut post: Vec<Array2<f64>> = Vec::with_capacity(topology.layers().len());
    for (idx, l) in topology.layers().iter().enumerate() {
        let w = topology.weights(params, idx);
        let b = topology.biases(params, idx);
        let a_prev = match post.last() {
            Some(a) => a.view(),
            None => inputs,
        };
        let z = a_prev.dot(&w.t()) + b;
        let act = l.activation;
        let a = z.mapv(|v| act.apply(v));
        pre.push(z);
        post.push(a);
    }
    ForwardCache { pre, post }
}

/// Output-layer activations for each input row.
pub fn forward(topology: &Topology, params: &[f64], inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
    topology.check_params(params)?;
    topology.check_inputs(&inputs)?;
    let mut a: Option<Array2<f64>> = None;
    for (idx, l) in topology.layers().iter().enumerate() {
        let w = topology.weights(params, idx);
        let mut z = match &a {
            Some(prev) => prev.dot(&w.t()),
            None => inputs.dot(&w.t()),
        };
        z += &topology.biases(params, idx);
        let act = l.activation;
        if act != Activation::Linear {
            z.mapv_inplace(|v| act.apply(v));
        }
        a = Some(z);
    }
    Ok(a.expect("at least one layer"))
}

fn check_loss_inputs(outputs: &ArrayView2<f64>, targets: &ArrayView2<f64>) -> Result<()> {
    if outputs.dim() != targets.dim() {
        return Err(Error::shape(
            format!("{:?}", targets.dim()),
            format!("{:?}", outputs.dim()),
        ));
    }
    if outputs.nrows() == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if !outputs.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("network outputs".into()));
    }
    if !targets.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("targets".into()));
    }
    Ok(())
}

fn log_sum_exp(row: ArrayView1<f64>) -> f64 {
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln()
}

/// `max(z, 0) - z y + ln(1 + e^{-|z|})`.
fn bce_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn loss(kind: LossKind, outputs: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<f64> {
    check_loss_inputs(&outputs, &targets)?;
    let samples = outputs.nrows() as f64;
    let value = match kind {
        LossKind::Sse => sse(outputs, targets),
        LossKind::Mse => sse(outputs, targets) / samples,
        LossKind::CategoricalCrossEntropy => {
            let mut total = 0.0;
            for (z, y) in outputs.outer_iter().zip(targets.outer_iter()) {
                let lse = log_sum_exp(z);
                total += z
                    .iter()
                    .zip(y.iter())
                    .map(|(&zk, &yk)| yk * (lse - zk))
                    .sum::<f64>();
            }
            total / samples
        }
        LossKind::BinaryCrossEntropyFromLogits => {
            let total: f64 = outputs
                .iter()
                .zip(targets.iter())
                .map(|(&z, &y)| bce_logit(z, y))
                .sum();
            total / outputs.len() as f64
        }
    };
    if !value.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok(value)
}

fn sse(outputs: ArrayView2<f64>, targets: ArrayView2<f64>) -> f64 {
    outputs
        .iter()
        .zip(targets.iter())
        .map(|(o, t)| (o - t) * (o - t))
        .sum()
}

/// Derivative of the loss with respect to the network outputs.
fn loss_output_gradient(kind: LossKind, outputs: ArrayView2<f64>, targets: ArrayView2<f64>) -> Array2<f64> {
    let samples = outputs.nrows() as f64;
    match kind {
        LossKind::Sse => (&outputs - &targets) * 2.0,
        LossKind::Mse => (&outputs - &targets) * (2.0 / samples),
        LossKind::CategoricalCrossEntropy => {
            let mut grad = Array2::zeros(outputs.dim());
            for ((z, y), mut g) in outputs
                .outer_iter()
                .zip(targets.outer_iter())
                .zip(grad.outer_iter_mut())
            {
                let lse = log_sum_exp(z);
                let mass = y.sum();
                Zip::from(&mut g)
                    .and(&z)
                    .and(&y)
                    .for_each(|g, &zk, &yk| *g = ((zk - lse).exp() * mass - yk) / samples);
            }
            grad
        }
        LossKind::BinaryCrossEntropyFromLogits => {
            let n = outputs.len() as f64;
            let mut grad = Array2::zeros(outputs.dim());
            Zip::from(&mut grad)
                .and(&outputs)
                .and(&targets)
                .for_each(|g, &z, &y| *g = (sigmoid(z) - y) / n);
            grad
        }
    }
}

/// Loss value and its exact gradient, written into `grad`.
pub fn loss_and_gradient_into(
    topology: &Topology,
    params: &[f64],
    inputs: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    kind: LossKind,
    grad: &mut [f64],
) -> Result<f64> {
    topology.check_params(params)?;
    topology.check_inputs(&inputs)?;
    if grad.len() != params.len() {
        return Err(Error::shape(params.len(), grad.len()));
    }
    if inputs.nrows() == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let cache = forward_cached(topology, params, inputs);
    let outputs = cache.post.last().expect("at least one layer").view();
    let value = loss(kind, outputs, targets)?;

    let layers = topology.layers();
    let last = layers.len() - 1;
    let mut delta = loss_output_gradient(kind, outputs, targets);
    let act = layers[last].activation;
    Zip::from(&mut delta)
        .and(&cache.pre[last])
        .and(&cache.post[last])
        .for_each(|d, &z, &a| *d *= act.derivative_given(z, a));

    for idx in (0..layers.len()).rev() {
        let l = &layers[idx];
        let a_prev = if idx == 0 {
            inputs
        } else {
            cache.post[idx - 1].view()
        };
        let gw = delta.t().dot(&a_prev);
        let gb: Array1<f64> = delta.sum_axis(Axis(0));
        grad[l.weight_offset..l.bias_offset]
            .iter_mut()
            .zip(gw.iter())
            .for_each(|(g, &v)| *g = v);
        grad[l.bias_offset..l.end()]
            .iter_mut()
            .zip(gb.iter())
            .for_each(|(g, &v)| *g = v);
        if idx > 0 {
            let w = topology.weights(params, idx);
            let mut next = delta.dot(&w);
            let act = layers[idx - 1].activation;
            Zip::from(&mut next)
                .and(&cache.pre[idx - 1])
                .and(&cache.post[idx - 1])
                .for_each(|d, &z, &a| *d *= act.derivative_given(z, a));
            delta = next;
        }
    }
    if !grad.iter().all(|g| g.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok(value)
}

/// Exact reverse-mode gradient of the loss in [`ParamVector`] layout.
pub fn gradient(
    topology: &Topology,
    params: &[f64],
    inputs: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    kind: LossKind,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; params.len()];
    loss_and_gradient_into(topology, params, inputs, targets, kind, &mut grad)?;
    Ok(grad)
}
