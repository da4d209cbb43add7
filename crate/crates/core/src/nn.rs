//! Dense feedforward network with exact backpropagation.
//!
//! Hosts the task function: a stack of fully connected layers mapping a
//! preprocessed state change to a reward vector. The output layer is always
//! `tanh`, so every reward component lies in `[-1, 1]`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Hidden widths of the default five-layer task network.
pub const DEFAULT_HIDDEN: [usize; 4] = [512, 256, 128, 64];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    /// Code used by the weights file format.
    pub fn code(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Identity => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Identity),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => libm::tanh(z),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `a`.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub const fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        LayerSpec {
            in_dim,
            out_dim,
            activation,
        }
    }
}

/// `input -> 512 -> 256 -> 128 -> 64 -> dof`, tanh everywhere.
pub fn default_specs(input_dim: usize, dof: usize) -> Vec<LayerSpec> {
    layer_specs(input_dim, &DEFAULT_HIDDEN, dof)
}

/// Chain `input -> hidden.. -> dof` with tanh activations.
pub fn layer_specs(input_dim: usize, hidden: &[usize], dof: usize) -> Vec<LayerSpec> {
    let mut dims = Vec::with_capacity(hidden.len() + 2);
    dims.push(input_dim);
    dims.extend_from_slice(hidden);
    dims.push(dof);
    dims.windows(2)
        .map(|w| LayerSpec::new(w[0], w[1], Activation::Tanh))
        .collect()
}

/// Checks the dimension chain and the tanh output requirement.
pub fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    let last = specs
        .last()
        .ok_or_else(|| Error::config("network needs at least one layer"))?;
    for (i, s) in specs.iter().enumerate() {
        if s.in_dim == 0 || s.out_dim == 0 {
            return Err(Error::config(format!("layer {i} has a zero dimension")));
        }
    }
    for (i, w) in specs.windows(2).enumerate() {
        if w[0].out_dim != w[1].in_dim {
            return Err(Error::config(format!(
                "layer {} output dim {} does not feed layer {} input dim {}",
                i,
                w[0].out_dim,
                i + 1,
                w[1].in_dim
            )));
        }
    }
    if last.activation != Activation::Tanh {
        return Err(Error::config("output layer activation must be tanh"));
    }
    Ok(())
}

/// One fully connected layer. `weights` is row-major `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(spec: LayerSpec) -> Self {
        Layer {
            spec,
            weights: vec![0.0; spec.in_dim * spec.out_dim],
            bias: vec![0.0; spec.out_dim],
        }
    }
}

/// Network parameters (the task function weights).
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

/// Activations recorded by [`Network::forward`], consumed by backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input; `activations[l + 1]` is layer `l`'s output.
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn layer_count(&self) -> usize {
        self.activations.len() - 1
    }

    pub fn output(&self) -> &[f64] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Per-layer weight and bias gradients, shape-congruent with a [`Network`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub layers: Vec<LayerGradient>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Gradient {
    pub fn zeros_like(net: &Network) -> Self {
        Gradient {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
    }

    /// Componentwise `self += other`.
    pub fn add_assign(&mut self, other: &Gradient) -> Result<()> {
        self.check_congruent(other)?;
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }

    fn check_congruent(&self, other: &Gradient) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::shape("gradient layers", self.layers.len(), other.layers.len()));
        }
        for (a, b) in self.layers.iter().zip(&other.layers) {
            if a.weights.len() != b.weights.len() {
                return Err(Error::shape("gradient weights", a.weights.len(), b.weights.len()));
            }
            if a.bias.len() != b.bias.len() {
                return Err(Error::shape("gradient bias", a.bias.len(), b.bias.len()));
            }
        }
        Ok(())
    }
}

impl Network {
    /// Glorot-uniform weights, zero biases. Deterministic in `seed`.
    pub fn new(specs: &[LayerSpec], seed: u64) -> Result<Self> {
        validate_specs(specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs
            .iter()
            .map(|&spec| {
                let limit = libm::sqrt(6.0 / (spec.in_dim + spec.out_dim) as f64);
                let mut layer = Layer::zeros(spec);
                for w in &mut layer.weights {
                    *w = rng.random_range(-limit..=limit);
                }
                layer
            })
            .collect();
        Ok(Network { layers })
    }

    /// All weights and biases zero.
    pub fn zeros(specs: &[LayerSpec]) -> Result<Self> {
        validate_specs(specs)?;
        Ok(Network {
            layers: specs.iter().map(|&s| Layer::zeros(s)).collect(),
        })
    }

    /// Assembles a network from explicit layers, checking shapes and finiteness.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let specs: Vec<LayerSpec> = layers.iter().map(|l| l.spec).collect();
        validate_specs(&specs)?;
        for l in &layers {
            let expected = l.spec.in_dim * l.spec.out_dim;
            if l.weights.len() != expected {
                return Err(Error::shape("layer weights", expected, l.weights.len()));
            }
            if l.bias.len() != l.spec.out_dim {
                return Err(Error::shape("layer bias", l.spec.out_dim, l.bias.len()));
            }
            if !l.weights.iter().chain(&l.bias).all(|v| v.is_finite()) {
                return Err(Error::Numeric("network parameters"));
            }
        }
        Ok(Network { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.out_dim
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn parameters(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
    }

    /// Mutable access to the `index`-th scalar parameter in layer order
    /// (weights then bias, per layer).
    pub fn parameter_mut(&mut self, mut index: usize) -> Option<&mut f64> {
        for l in &mut self.layers {
            let n = l.weights.len();
            if index < n {
                return l.weights.get_mut(index);
            }
            index -= n;
            if index < l.bias.len() {
                return l.bias.get_mut(index);
            }
            index -= l.bias.len();
        }
        None
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        for layer in &self.layers {
            let out = layer_forward(layer, activations.last().unwrap());
            activations.push(out);
        }
        let output = activations.last().unwrap().clone();
        Ok((output, ForwardCache { activations }))
    }

    /// Forward pass without keeping the cache.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut a = layer_forward(&self.layers[0], x);
        for layer in &self.layers[1..] {
            a = layer_forward(layer, &a);
        }
        Ok(a)
    }

    /// Gradient of `output_error · y(x)` with respect to every parameter.
    pub fn backprop(&self, cache: &ForwardCache, output_error: &[f64]) -> Result<Gradient> {
        let mut grad = Gradient::zeros_like(self);
        self.backprop_accumulate(cache, output_error, &mut grad)?;
        Ok(grad)
    }

    /// Like [`Network::backprop`] but adds into an existing gradient buffer.
    pub fn backprop_accumulate(
        &self,
        cache: &ForwardCache,
        output_error: &[f64],
        grad: &mut Gradient,
    ) -> Result<()> {
        if output_error.len() != self.output_dim() {
            return Err(Error::shape("output error", self.output_dim(), output_error.len()));
        }
        if cache.layer_count() != self.layers.len() {
            return Err(Error::shape("forward cache", self.layers.len(), cache.layer_count()));
        }
        if grad.layers.len() != self.layers.len() {
            return Err(Error::shape("gradient layers", self.layers.len(), grad.layers.len()));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if cache.activations[l + 1].len() != layer.spec.out_dim {
                return Err(Error::shape(
                    "forward cache",
                    layer.spec.out_dim,
                    cache.activations[l + 1].len(),
                ));
            }
            if grad.layers[l].weights.len() != layer.weights.len() {
                return Err(Error::shape(
                    "gradient weights",
                    layer.weights.len(),
                    grad.layers[l].weights.len(),
                ));
            }
        }

        let last = self.layers.len() - 1;
        let mut delta: Vec<f64> = output_error
            .iter()
            .zip(&cache.activations[last + 1])
            .map(|(e, &a)| e * self.layers[last].spec.activation.derivative_from_output(a))
            .collect();

        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &cache.activations[l];
            let in_dim = layer.spec.in_dim;
            let g = &mut grad.layers[l];
            for (o, &d) in delta.iter().enumerate() {
                g.bias[o] += d;
                if d == 0.0 {
                    continue;
                }
                let row = &mut g.weights[o * in_dim..(o + 1) * in_dim];
                for (gw, &a) in row.iter_mut().zip(input) {
                    *gw += d * a;
                }
            }
            if l == 0 {
                break;
            }
            let prev_act = self.layers[l - 1].spec.activation;
            let mut next = vec![0.0; in_dim];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * in_dim..(o + 1) * in_dim];
                for (n, &w) in next.iter_mut().zip(row) {
                    *n += w * d;
                }
            }
            for (n, &a) in next.iter_mut().zip(input) {
                *n *= prev_act.derivative_from_output(a);
            }
            delta = next;
        }
        Ok(())
    }

    /// Returns `self + lr * grad` (gradient ascent).
    pub fn ascent_step(&self, grad: &Gradient, lr: f64) -> Result<Network> {
        let mut next = self.clone();
        next.apply_ascent(grad, lr)?;
        Ok(next)
    }

    /// In-place `θ += lr * grad`.
    pub fn apply_ascent(&mut self, grad: &Gradient, lr: f64) -> Result<()> {
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(Error::config("learning rate must be finite and non-negative"));
        }
        if grad.layers.len() != self.layers.len() {
            return Err(Error::shape("gradient layers", self.layers.len(), grad.layers.len()));
        }
        for (layer, g) in self.layers.iter().zip(&grad.layers) {
            if g.weights.len() != layer.weights.len() {
                return Err(Error::shape("gradient weights", layer.weights.len(), g.weights.len()));
            }
            if g.bias.len() != layer.bias.len() {
                return Err(Error::shape("gradient bias", layer.bias.len(), g.bias.len()));
            }
        }
        if lr == 0.0 {
            return Ok(());
        }
        for (layer, g) in self.layers.iter_mut().zip(&grad.layers) {
            layer
                .weights
                .iter_mut()
                .zip(&g.weights)
                .for_each(|(w, d)| *w += lr * d);
            layer
                .bias
                .iter_mut()
                .zip(&g.bias)
                .for_each(|(b, d)| *b += lr * d);
        }
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::shape("network input", self.input_dim(), x.len()));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("network input"));
        }
        Ok(())
    }
}

fn layer_forward(layer: &Layer, input: &[f64]) -> Vec<f64> {
    let in_dim = layer.spec.in_dim;
    layer
        .weights
        .chunks_exact(in_dim)
        .zip(&layer.bias)
        .map(|(row, &b)| {
            let z = row.iter().zip(input).fold(b, |acc, (w, x)| acc + w * x);
            layer.spec.activation.apply(z)
        })
        .collect()
}
