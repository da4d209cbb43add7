//! Incremental maximum-entropy IRL over observed transitions.
//!
//! Each demonstrated transition contributes the log Boltzmann factor
//! between its forward change `ds+` and the reversed change `ds-`:
//!
//! ```text
//! ll = (r+ - r-) + (r+ - r-)^2 / (2 σ0^2)
//! ```
//!
//! where `r±` are the scalarized task-function outputs. The partition
//! function cancels in the ratio, so training is plain stochastic gradient
//! ascent on `ll`, one transition at a time.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nn::{Gradient, Network};
use crate::sim::{in_workspace, render, CameraModel, Scene, Vec3};
use crate::uvs::{uniform_weights, TaskFunction};
use crate::vision::{inverse_change, modular_subtract, preprocess, StateChange, TransitionDataset};

/// Lower clamp on σ0 so the objective stays bounded for fully confident
/// demonstrators.
pub const SIGMA_MIN: f64 = 0.05;

/// `σ0 = max(SIGMA_MIN, 1 - α)`.
pub fn sigma_from_confidence(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::config(format!("confidence alpha {alpha} outside (0, 1]")));
    }
    Ok((1.0 - alpha).max(SIGMA_MIN))
}

pub fn scalarize(r: &[f64], v: &[f64]) -> Result<f64> {
    if r.len() != v.len() {
        return Err(Error::shape("scalarize", v.len(), r.len()));
    }
    Ok(r.iter().zip(v).map(|(a, b)| a * b).sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionReward {
    pub r_plus: f64,
    pub r_minus: f64,
    pub ll: f64,
    pub beta: f64,
}

pub fn transition_objective(r_plus: f64, r_minus: f64, sigma0: f64) -> TransitionReward {
    let gap = r_plus - r_minus;
    let ll = gap + gap * gap / (2.0 * sigma0 * sigma0);
    TransitionReward {
        r_plus,
        r_minus,
        ll,
        beta: libm::exp(ll),
    }
}

/// `(∂ll/∂r+, ∂ll/∂r-)`.
pub fn objective_gradients(r_plus: f64, r_minus: f64, sigma0: f64) -> (f64, f64) {
    let g = 1.0 + (r_plus - r_minus) / (sigma0 * sigma0);
    (g, -g)
}

/// Largest attainable `ll`, reached at `r+ = 1, r- = -1`.
pub fn cost_upper_bound(sigma0: f64) -> f64 {
    2.0 * (1.0 + 1.0 / (sigma0 * sigma0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub dof: usize,
    pub alpha: f64,
    pub sigma0: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Network initialization seed.
    pub seed: u64,
}

impl TrainerConfig {
    pub fn new(dof: usize, alpha: f64, epochs: usize, learning_rate: f64, seed: u64) -> Result<Self> {
        let cfg = TrainerConfig {
            dof,
            alpha,
            sigma0: sigma_from_confidence(alpha)?,
            epochs,
            learning_rate,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dof == 0 {
            return Err(Error::config("dof must be at least 1"));
        }
        sigma_from_confidence(self.alpha)?;
        if !(self.sigma0 >= SIGMA_MIN) {
            return Err(Error::config("sigma0 below the minimum"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning_rate must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn scalarization(&self) -> Vec<f64> {
        uniform_weights(self.dof)
    }

    pub fn upper_bound(&self) -> f64 {
        cost_upper_bound(self.sigma0)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearningCurve {
    pub mean_ll: Vec<f64>,
    pub bound_fraction: Vec<f64>,
    pub seconds: Vec<f64>,
}

impl LearningCurve {
    pub fn len(&self) -> usize {
        self.mean_ll.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean_ll.is_empty()
    }

    pub fn final_mean_ll(&self) -> Option<f64> {
        self.mean_ll.last().copied()
    }

    /// Trailing moving average with the given window.
    pub fn smoothed(&self, window: usize) -> Vec<f64> {
        let w = window.max(1);
        (0..self.mean_ll.len())
            .map(|i| {
                let lo = (i + 1).saturating_sub(w);
                let s = &self.mean_ll[lo..=i];
                s.iter().sum::<f64>() / s.len() as f64
            })
            .collect()
    }
}

/// [`train_with_clock`] with the wall-clock column left at zero.
pub fn train(dataset: &TransitionDataset, net: Network, config: &TrainerConfig) -> Result<(Network, LearningCurve)> {
    train_with_clock(dataset, net, config, &mut || 0.0)
}

/// Stochastic gradient ascent over the transition pairs in dataset order.
/// `clock` returns elapsed seconds; it is sampled once per epoch.
pub fn train_with_clock(
    dataset: &TransitionDataset,
    mut net: Network,
    config: &TrainerConfig,
    clock: &mut dyn FnMut() -> f64,
) -> Result<(Network, LearningCurve)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::config("transition dataset is empty"));
    }
    let input_dim = dataset.input_dim().unwrap_or(0);
    if net.input_dim() != input_dim {
        return Err(Error::shape("network input vs dataset", net.input_dim(), input_dim));
    }
    if net.output_dim() != config.dof {
        return Err(Error::shape("network output vs dof", config.dof, net.output_dim()));
    }
    let v = config.scalarization();
    let bound = config.upper_bound();
    let mut curve = LearningCurve::default();
    let mut grad = Gradient::zeros_like(&net);
    let start = clock();
    for _ in 0..config.epochs {
        let mut sum_ll = 0.0;
        for pair in &dataset.pairs {
            let (y_plus, cache_plus) = net.forward(pair.plus.values())?;
            let (y_minus, cache_minus) = net.forward(pair.minus.values())?;
            let r_plus = scalarize(&y_plus, &v)?;
            let r_minus = scalarize(&y_minus, &v)?;
            sum_ll += transition_objective(r_plus, r_minus, config.sigma0).ll;
            let (g_plus, g_minus) = objective_gradients(r_plus, r_minus, config.sigma0);
            let err_plus: Vec<f64> = v.iter().map(|w| g_plus * w).collect();
            let err_minus: Vec<f64> = v.iter().map(|w| g_minus * w).collect();
            grad.fill_zero();
            net.backprop_accumulate(&cache_plus, &err_plus, &mut grad)?;
            net.backprop_accumulate(&cache_minus, &err_minus, &mut grad)?;
            net.apply_ascent(&grad, config.learning_rate)?;
        }
        let mean = sum_ll / dataset.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Numeric("training objective"));
        }
        curve.mean_ll.push(mean);
        curve.bound_fraction.push(mean / bound);
        curve.seconds.push(clock() - start);
    }
    Ok((net, curve))
}

/// A trained network used as the controller's task function.
#[derive(Debug, Clone)]
pub struct TaskNetwork {
    net: Network,
    side: usize,
}

impl TaskNetwork {
    pub fn new(net: Network, side: usize) -> Result<Self> {
        if side * side != net.input_dim() {
            return Err(Error::shape("task network input", net.input_dim(), side * side));
        }
        Ok(TaskNetwork { net, side })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn scalar_reward(&self, change: &StateChange) -> Result<f64> {
        let r = self.reward(change)?;
        scalarize(&r, &uniform_weights(r.len()))
    }
}

impl TaskFunction for TaskNetwork {
    fn dof(&self) -> usize {
        self.net.output_dim()
    }

    fn reward(&self, change: &StateChange) -> Result<Vec<f64>> {
        let x = preprocess(change, self.side)?;
        self.net.predict(x.values())
    }
}

/// `n` nearly uniform unit vectors on the sphere (golden-angle spiral).
pub fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = core::f64::consts::PI * (3.0 - libm::sqrt(5.0));
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = libm::sqrt((1.0 - z * z).max(0.0));
            let phi = golden * i as f64;
            Vec3::new(r * libm::cos(phi), r * libm::sin(phi), z)
        })
        .collect()
}

/// Reads a task function through its odd part,
/// `(T(ds) - T(inverse ds)) / 2`.
///
/// The trained objective only constrains the difference between a change
/// and its reverse, so the even part of the output is unconstrained and
/// can swamp the signal the controller needs.
#[derive(Debug, Clone)]
pub struct Antisymmetric<T>(pub T);

impl<T: TaskFunction> TaskFunction for Antisymmetric<T> {
    fn dof(&self) -> usize {
        self.0.dof()
    }

    fn reward(&self, change: &StateChange) -> Result<Vec<f64>> {
        let fwd = self.0.reward(change)?;
        let rev = self.0.reward(&inverse_change(change)?)?;
        Ok(fwd.iter().zip(&rev).map(|(a, b)| 0.5 * (a - b)).collect())
    }
}

/// Scalar reward of moving the object by `step` from `center` along each
/// sampled direction.
pub fn reward_field<T: TaskFunction>(
    task: &T,
    scene: &Scene,
    camera: &CameraModel,
    center: &Vec3,
    n_dirs: usize,
    step: f64,
) -> Result<Vec<(Vec3, f64)>> {
    if n_dirs < 4 {
        return Err(Error::config("reward field needs at least 4 directions"));
    }
    if !in_workspace(center) {
        return Err(Error::config("reward field center outside workspace"));
    }
    let mut at_center = scene.clone();
    at_center.object_pos = *center;
    let before = render(&at_center, camera)?;
    fibonacci_sphere(n_dirs)
        .into_iter()
        .map(|dir| {
            let mut moved = at_center.clone();
            moved.object_pos = center + dir * step;
            let after = render(&moved, camera)?;
            let ds = modular_subtract(&after, &before)?;
            let r = task.reward(&ds)?;
            Ok((dir, scalarize(&r, &uniform_weights(r.len()))?))
        })
        .collect()
}

/// Direction with the highest reward in a field.
pub fn argmax_direction(field: &[(Vec3, f64)]) -> Option<Vec3> {
    field
        .iter()
        .fold(None, |best: Option<&(Vec3, f64)>, item| match best {
            Some(b) if b.1 >= item.1 => Some(b),
            _ => Some(item),
        })
        .map(|(d, _)| *d)
}
