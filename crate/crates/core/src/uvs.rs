//! Uncalibrated visual servoing driven by a task function.
//!
//! The controller sees the world only through [`Environment`] (joint
//! commands in, frames out) and scores motions only through a
//! [`TaskFunction`]. Ground truth enters [`run_execution`] through a
//! separate judge closure used for logging and termination.

use alloc::collections::VecDeque;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::irl::scalarize;
use crate::vision::{modular_subtract, ImageState, StateChange};

/// Opaque handle to the robot + camera pair.
pub trait Environment {
    fn joint_count(&self) -> usize;
    /// Joint encoder readings.
    fn joints(&self) -> Vec<f64>;
    /// Current camera frame.
    fn observe(&self) -> Result<ImageState>;
    /// Executes a joint displacement and returns the frame after it.
    fn step(&mut self, dq: &[f64]) -> Result<ImageState>;
}

/// Maps an observed state change to a reward vector in `[-1, 1]^d`.
pub trait TaskFunction {
    fn dof(&self) -> usize;
    fn reward(&self, change: &StateChange) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobianEstimate {
    /// `d x m`: reward-vector response per unit joint displacement.
    pub j: DMatrix<f64>,
    pub steps_since_calibration: usize,
    pub calibration_count: usize,
}

impl JacobianEstimate {
    pub fn new(j: DMatrix<f64>) -> Self {
        JacobianEstimate {
            j,
            steps_since_calibration: 0,
            calibration_count: 0,
        }
    }

    pub fn smallest_singular_value(&self) -> f64 {
        let sv = self.j.clone().singular_values();
        let full = self.j.nrows().min(self.j.ncols());
        if sv.len() < full {
            return 0.0;
        }
        sv.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProbeMode {
    /// One `+eps` probe per joint axis, undone after observation.
    Axis,
    /// `probes` random unit-direction probes of length `eps`, combined by
    /// least squares.
    Random { probes: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    pub r_max: Vec<f64>,
    /// Step gain λ applied to the pseudoinverse action.
    pub step_gain: f64,
    /// Tikhonov damping μ.
    pub damping: f64,
    pub r_thres: Vec<f64>,
    /// Number of consecutive low rewards that forces re-calibration.
    pub recalib_patience: usize,
    pub min_singular: f64,
    pub probe_eps: f64,
    pub probe_mode: ProbeMode,
    /// Broyden updates are skipped when `|dq|^2` falls below this.
    pub broyden_eps_min: f64,
    pub max_steps: usize,
    pub success_threshold_px: f64,
    pub dt: f64,
}

impl ControllerConfig {
    pub fn with_dof(dof: usize) -> Self {
        ControllerConfig {
            r_max: vec![1.0; dof],
            step_gain: 1.0,
            damping: 1e-3,
            r_thres: vec![0.0; dof],
            recalib_patience: 5,
            min_singular: 1e-4,
            probe_eps: 4.0,
            probe_mode: ProbeMode::Axis,
            broyden_eps_min: 1e-9,
            max_steps: 100,
            success_threshold_px: crate::sim::scaled_success_threshold(crate::sim::DEFAULT_IMAGE_SIDE),
            dt: 1.0,
        }
    }

    pub fn dof(&self) -> usize {
        self.r_max.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.r_max.is_empty() {
            return Err(Error::config("r_max must be non-empty"));
        }
        if self.r_thres.len() != self.r_max.len() {
            return Err(Error::shape("r_thres", self.r_max.len(), self.r_thres.len()));
        }
        if !(self.step_gain > 0.0) {
            return Err(Error::config("step_gain must be positive"));
        }
        if !(self.damping >= 0.0) {
            return Err(Error::config("damping must be non-negative"));
        }
        if !(self.probe_eps > 0.0) {
            return Err(Error::config("probe_eps must be positive"));
        }
        if self.recalib_patience == 0 {
            return Err(Error::config("recalib_patience must be at least 1"));
        }
        if !(self.min_singular > 0.0) {
            return Err(Error::config("min_singular must be positive"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::config("dt must be positive"));
        }
        if let ProbeMode::Random { probes, .. } = self.probe_mode {
            if probes == 0 {
                return Err(Error::config("random probing needs at least one probe"));
            }
        }
        Ok(())
    }

    fn threshold_scalar(&self) -> f64 {
        let v = uniform_weights(self.dof());
        scalarize(&self.r_thres, &v).unwrap_or(0.0)
    }
}

pub(crate) fn uniform_weights(d: usize) -> Vec<f64> {
    vec![1.0 / d as f64; d]
}

fn observe_change<E: Environment, T: TaskFunction>(
    env: &mut E,
    taskfn: &T,
    dq: &[f64],
) -> Result<(Vec<f64>, ImageState)> {
    let before = env.observe()?;
    let after = env.step(dq)?;
    let ds = modular_subtract(&after, &before)?;
    let r = taskfn.reward(&ds)?;
    if r.len() != taskfn.dof() {
        return Err(Error::shape("reward vector", taskfn.dof(), r.len()));
    }
    Ok((r, after))
}

/// Probes the environment and returns a fresh Jacobian estimate. The
/// environment is returned to (approximately) its starting joints: each
/// probe is undone with the opposite command. Uses `2 * probes` env steps.
pub fn estimate_initial_jacobian<E: Environment, T: TaskFunction>(
    env: &mut E,
    taskfn: &T,
    config: &ControllerConfig,
) -> Result<JacobianEstimate> {
    config.validate()?;
    let m = env.joint_count();
    let d = taskfn.dof();
    if d != config.dof() {
        return Err(Error::shape("task dof", config.dof(), d));
    }
    let eps = config.probe_eps;
    match config.probe_mode {
        ProbeMode::Axis => {
            let mut j = DMatrix::zeros(d, m);
            for axis in 0..m {
                let mut dq = vec![0.0; m];
                dq[axis] = eps;
                let (r, _) = observe_change(env, taskfn, &dq)?;
                dq[axis] = -eps;
                env.step(&dq)?;
                for (row, v) in r.iter().enumerate() {
                    j[(row, axis)] = v / eps;
                }
            }
            Ok(JacobianEstimate::new(j))
        }
        ProbeMode::Random { probes, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut dqs = DMatrix::zeros(probes, m);
            let mut rs = DMatrix::zeros(probes, d);
            for k in 0..probes {
                let dir: Vec<f64> = loop {
                    let v: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let n = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
                    if n > 1e-3 {
                        break v.iter().map(|x| x * eps / n).collect();
                    }
                };
                let (r, _) = observe_change(env, taskfn, &dir)?;
                let back: Vec<f64> = dir.iter().map(|x| -x).collect();
                env.step(&back)?;
                for (c, v) in dir.iter().enumerate() {
                    dqs[(k, c)] = *v;
                }
                for (c, v) in r.iter().enumerate() {
                    rs[(k, c)] = *v;
                }
            }
            // R ≈ DQ Jᵀ  =>  Jᵀ = (DQᵀDQ + δI)⁻¹ DQᵀ R
            let gram = dqs.transpose() * &dqs + DMatrix::identity(m, m) * 1e-9;
            let rhs = dqs.transpose() * rs;
            let jt = gram
                .cholesky()
                .ok_or(Error::Singular("random probe design"))?
                .solve(&rhs);
            Ok(JacobianEstimate::new(jt.transpose()))
        }
    }
}

/// Damped pseudoinverse action `λ Jᵀ (J Jᵀ + μ I)⁻¹ R_max`.
pub fn compute_action(jac: &JacobianEstimate, config: &ControllerConfig) -> Result<Vec<f64>> {
    let j = &jac.j;
    if config.r_max.len() != j.nrows() {
        return Err(Error::shape("r_max", j.nrows(), config.r_max.len()));
    }
    if !j.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("jacobian"));
    }
    let d = j.nrows();
    let gram = j * j.transpose() + DMatrix::identity(d, d) * config.damping;
    let r_max = DVector::from_column_slice(&config.r_max);
    let y = gram
        .lu()
        .solve(&r_max)
        .filter(|y| y.iter().all(|v| v.is_finite()))
        .ok_or(Error::Singular("J Jᵀ + μI"))?;
    let dq = j.transpose() * y * config.step_gain;
    if !dq.iter().all(|v| v.is_finite()) {
        return Err(Error::Singular("J Jᵀ + μI"));
    }
    Ok(dq.iter().copied().collect())
}

/// Rank-one secant correction so that `J' dq = r_obs`. Steps with
/// `|dq|^2 < eps_min` leave the estimate unchanged.
pub fn broyden_update(jac: &JacobianEstimate, dq: &[f64], r_obs: &[f64], eps_min: f64) -> Result<JacobianEstimate> {
    let (d, m) = jac.j.shape();
    if dq.len() != m {
        return Err(Error::shape("broyden dq", m, dq.len()));
    }
    if r_obs.len() != d {
        return Err(Error::shape("broyden reward", d, r_obs.len()));
    }
    if !dq.iter().chain(r_obs).all(|v| v.is_finite()) {
        return Err(Error::Numeric("broyden inputs"));
    }
    let dq = DVector::from_column_slice(dq);
    let norm2 = dq.dot(&dq);
    let mut next = jac.clone();
    next.steps_since_calibration += 1;
    if norm2 < eps_min || norm2 == 0.0 {
        return Ok(next);
    }
    let residual = DVector::from_column_slice(r_obs) - &jac.j * &dq;
    next.j += residual * dq.transpose() / norm2;
    Ok(next)
}

/// Re-calibrate when the last `K` scalar rewards all fell below the
/// threshold, or when the estimate is close to singular.
pub fn needs_recalibration(recent_scalar_rewards: &[f64], jac: &JacobianEstimate, config: &ControllerConfig) -> bool {
    let k = config.recalib_patience;
    let thres = config.threshold_scalar();
    let stalled = recent_scalar_rewards.len() >= k
        && recent_scalar_rewards[recent_scalar_rewards.len() - k..]
            .iter()
            .all(|&r| r < thres);
    stalled || jac.smallest_singular_value() < config.min_singular
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub step: usize,
    pub q: Vec<f64>,
    pub dq: Vec<f64>,
    pub r_obs: Vec<f64>,
    pub scalar_reward: f64,
    pub cum_reward: f64,
    pub pixel_error: f64,
    pub recalibrated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionTrace {
    pub initial_error: f64,
    pub steps: Vec<TraceStep>,
    pub success: bool,
    /// Environment steps spent on Jacobian probing.
    pub probe_steps: usize,
    pub calibrations: usize,
    pub failure: Option<String>,
}

impl ExecutionTrace {
    pub fn steps_used(&self) -> usize {
        self.steps.len()
    }

    pub fn final_error(&self) -> f64 {
        self.steps.last().map_or(self.initial_error, |s| s.pixel_error)
    }
}

/// Closed-loop execution. `judge` reads ground-truth pixel error for the
/// trace and the stopping test; nothing it returns reaches the control law.
pub fn run_execution<E, T, J>(env: &mut E, taskfn: &T, config: &ControllerConfig, mut judge: J) -> Result<ExecutionTrace>
where
    E: Environment,
    T: TaskFunction,
    J: FnMut(&E) -> Result<f64>,
{
    config.validate()?;
    let v = uniform_weights(taskfn.dof());
    let initial_error = judge(env)?;
    let mut trace = ExecutionTrace {
        initial_error,
        steps: Vec::new(),
        success: initial_error < config.success_threshold_px,
        probe_steps: 0,
        calibrations: 0,
        failure: None,
    };
    if trace.success {
        return Ok(trace);
    }
    let m = env.joint_count();
    let mut jac: Option<JacobianEstimate> = None;
    let mut history: VecDeque<f64> = VecDeque::with_capacity(config.recalib_patience);
    let mut cum_reward = 0.0;
    let probes_per_calibration = 2 * match config.probe_mode {
        ProbeMode::Axis => m,
        ProbeMode::Random { probes, .. } => probes,
    };

    for step in 0..config.max_steps {
        let hist: Vec<f64> = history.iter().copied().collect();
        let recalibrate = match &jac {
            None => true,
            Some(j) => needs_recalibration(&hist, j, config),
        };
        if recalibrate {
            let count = jac.as_ref().map_or(0, |j| j.calibration_count);
            match estimate_initial_jacobian(env, taskfn, config) {
                Ok(mut fresh) => {
                    fresh.calibration_count = count + 1;
                    jac = Some(fresh);
                }
                Err(e) => {
                    trace.failure = Some(e.to_string());
                    break;
                }
            }
            trace.probe_steps += probes_per_calibration;
            trace.calibrations += 1;
            history.clear();
        }
        let current = jac.as_ref().expect("calibrated above");
        let dq: Vec<f64> = match compute_action(current, config) {
            Ok(a) => a.iter().map(|x| x * config.dt).collect(),
            Err(e) => {
                trace.failure = Some(e.to_string());
                break;
            }
        };
        let r_obs = match observe_change(env, taskfn, &dq) {
            Ok((r, _)) => r,
            Err(e) => {
                trace.failure = Some(e.to_string());
                break;
            }
        };
        jac = Some(broyden_update(current, &dq, &r_obs, config.broyden_eps_min)?);
        let scalar = scalarize(&r_obs, &v)?;
        cum_reward += scalar;
        if history.len() == config.recalib_patience {
            history.pop_front();
        }
        history.push_back(scalar);
        let err = match judge(env) {
            Ok(e) => e,
            Err(e) => {
                trace.failure = Some(e.to_string());
                break;
            }
        };
        trace.steps.push(TraceStep {
            step,
            q: env.joints(),
            dq,
            r_obs,
            scalar_reward: scalar,
            cum_reward,
            pixel_error: err,
            recalibrated: recalibrate,
        });
        if err < config.success_threshold_px {
            trace.success = true;
            break;
        }
    }
    if !trace.success && trace.failure.is_none() {
        trace.failure = Some("step budget exhausted".to_string());
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn jac(rows: &[&[f64]]) -> JacobianEstimate {
        let d = rows.len();
        let m = rows[0].len();
        JacobianEstimate::new(DMatrix::from_fn(d, m, |i, k| rows[i][k]))
    }

    #[test]
    fn action_identity() {
        let mut cfg = ControllerConfig::with_dof(2);
        cfg.damping = 0.0;
        cfg.step_gain = 0.1;
        let dq = compute_action(&jac(&[&[1.0, 0.0], &[0.0, 1.0]]), &cfg).unwrap();
        assert!((dq[0] - 0.1).abs() < 1e-15 && (dq[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn action_diagonal_inverse() {
        let mut cfg = ControllerConfig::with_dof(2);
        cfg.damping = 0.0;
        let dq = compute_action(&jac(&[&[2.0, 0.0], &[0.0, 1.0]]), &cfg).unwrap();
        assert!((dq[0] - 0.5).abs() < 1e-15 && (dq[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn action_zero_jacobian() {
        let cfg = ControllerConfig::with_dof(2);
        let dq = compute_action(&jac(&[&[0.0, 0.0], &[0.0, 0.0]]), &cfg).unwrap();
        assert_eq!(dq, vec![0.0, 0.0]);
        let mut undamped = cfg.clone();
        undamped.damping = 0.0;
        assert!(matches!(
            compute_action(&jac(&[&[0.0, 0.0], &[0.0, 0.0]]), &undamped),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn damped_action_is_finite_for_rank_deficient_j() {
        let cfg = ControllerConfig::with_dof(3);
        let j = jac(&[&[1.0, 2.0, 0.0], &[1.0, 2.0, 0.0], &[1.0, 2.0, 0.0]]);
        let dq = compute_action(&j, &cfg).unwrap();
        assert!(dq.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn broyden_zero_residual() {
        let j = jac(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let dq = [0.5, -1.0];
        let r = [1.0 * 0.5 - 2.0, 3.0 * 0.5 - 4.0];
        let next = broyden_update(&j, &dq, &r, 1e-12).unwrap();
        assert!((next.j.clone() - j.j.clone()).abs().max() < 1e-15);
    }

    #[test]
    fn broyden_hand_case() {
        let j = jac(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let next = broyden_update(&j, &[1.0, 0.0], &[2.0, 0.0], 1e-12).unwrap();
        assert_eq!(next.j, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]));
        assert_eq!(next.steps_since_calibration, 1);
    }

    #[test]
    fn broyden_skips_tiny_steps() {
        let j = jac(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let next = broyden_update(&j, &[1e-8, 0.0], &[5.0, 5.0], 1e-9).unwrap();
        assert_eq!(next.j, j.j);
    }

    #[test]
    fn broyden_secant_condition_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let j = JacobianEstimate::new(DMatrix::from_fn(3, 3, |_, _| rng.random_range(-2.0..2.0)));
            let dq: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let r: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let next = broyden_update(&j, &dq, &r, 1e-12).unwrap();
            let res = &next.j * DVector::from_column_slice(&dq) - DVector::from_column_slice(&r);
            assert!(res.amax() <= 1e-12, "residual {}", res.amax());
        }
    }

    #[test]
    fn recalibration_rule() {
        let mut cfg = ControllerConfig::with_dof(3);
        let good = jac(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        assert!(!needs_recalibration(&[], &good, &cfg));
        let deficient = jac(&[&[1.0, 0.0, 0.0], &[0.0, 0.0, 0.0], &[0.0, 0.0, 1.0]]);
        assert!(needs_recalibration(&[], &deficient, &cfg));
        cfg.recalib_patience = 3;
        assert!(needs_recalibration(&[-0.1, -0.2, -0.05], &good, &cfg));
        assert!(!needs_recalibration(&[-0.1, 0.2, -0.05], &good, &cfg));
        assert!(!needs_recalibration(&[-0.1, -0.2], &good, &cfg));
    }

    /// Environment whose frames encode nothing but the commanded joints;
    /// it has no scene, camera or mount to leak.
    struct Counter {
        q: Vec<f64>,
        steps: usize,
    }

    impl Environment for Counter {
        fn joint_count(&self) -> usize {
            self.q.len()
        }
        fn joints(&self) -> Vec<f64> {
            self.q.clone()
        }
        fn observe(&self) -> Result<ImageState> {
            Ok(ImageState::filled(2, 2, 0))
        }
        fn step(&mut self, dq: &[f64]) -> Result<ImageState> {
            self.q.iter_mut().zip(dq).for_each(|(q, d)| *q += d);
            self.steps += 1;
            self.observe()
        }
    }

    struct Zero(usize);

    impl TaskFunction for Zero {
        fn dof(&self) -> usize {
            self.0
        }
        fn reward(&self, _: &StateChange) -> Result<Vec<f64>> {
            Ok(vec![0.0; self.0])
        }
    }

    #[test]
    fn zero_taskfn_gives_zero_jacobian_with_two_steps_per_axis() {
        let mut env = Counter { q: vec![0.0; 3], steps: 0 };
        let cfg = ControllerConfig::with_dof(3);
        let j = estimate_initial_jacobian(&mut env, &Zero(3), &cfg).unwrap();
        assert_eq!(j.j.shape(), (3, 3));
        assert!(j.j.iter().all(|&v| v == 0.0));
        assert_eq!(env.steps, 6);
        assert!(env.q.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn already_converged_run_takes_no_steps() {
        let mut env = Counter { q: vec![0.0; 3], steps: 0 };
        let cfg = ControllerConfig::with_dof(3);
        let trace = run_execution(&mut env, &Zero(3), &cfg, |_| Ok(0.5)).unwrap();
        assert!(trace.success);
        assert_eq!(trace.steps_used(), 0);
        assert_eq!(env.steps, 0);
    }
}
