//! Demonstrations, training, execution trials and suite evaluation.
//!
//! Seeds derive from the master seed `s`:
//! trial `i` starts from seed `s + i`, demo `i` from `s + 10000 + i` with
//! expert noise seed `s + 20000 + i`, probe centre `k` from `s + 30000 + k`.
//! Dataset shuffling and weight initialisation both use `s`.

use servoscope_core::irl::{argmax_direction, reward_field, train_with_clock, Antisymmetric, LearningCurve, TaskNetwork};
use servoscope_core::nn::Network;
use servoscope_core::sim::{
    apply_perturbation, generate_demonstration, random_start, Demonstration, Mount, ProgressOracle, RobotState, Scene,
    SimEnv, Vec3,
};
use servoscope_core::uvs::{run_execution, ExecutionTrace, TaskFunction};
use servoscope_core::vision::{build_transition_dataset, ImageState, StateChange};

use crate::config::{ExperimentConfig, PerturbationSpec, RewardReading};
use crate::error::{HarnessError, Result};

pub const DEMO_SEED_OFFSET: u64 = 10_000;
pub const NOISE_SEED_OFFSET: u64 = 20_000;
pub const PROBE_SEED_OFFSET: u64 = 30_000;

pub fn trial_seed(cfg: &ExperimentConfig, trial: usize) -> u64 {
    cfg.seed.wrapping_add(trial as u64)
}

fn start_position(cfg: &ExperimentConfig, seed: u64) -> Vec3 {
    random_start(&cfg.home(), seed, 0.0, cfg.scene.start_radius)
}

pub fn demo_scene(cfg: &ExperimentConfig, index: usize) -> Scene {
    let mut scene = cfg.scene();
    scene.object_pos = start_position(cfg, cfg.seed.wrapping_add(DEMO_SEED_OFFSET + index as u64));
    scene
}

pub fn trial_scene(cfg: &ExperimentConfig, trial: usize) -> Scene {
    let mut scene = cfg.scene();
    scene.object_pos = start_position(cfg, trial_seed(cfg, trial));
    scene
}

pub fn probe_centers(cfg: &ExperimentConfig) -> Vec<Vec3> {
    (0..cfg.probe_centers)
        .map(|k| start_position(cfg, cfg.seed.wrapping_add(PROBE_SEED_OFFSET + k as u64)))
        .collect()
}

pub fn generate_demo(cfg: &ExperimentConfig, index: usize) -> Result<Demonstration> {
    let expert = cfg.expert_config(cfg.seed.wrapping_add(NOISE_SEED_OFFSET + index as u64));
    Ok(generate_demonstration(&demo_scene(cfg, index), &cfg.camera(), &expert)?)
}

pub fn generate_demos(cfg: &ExperimentConfig, count: usize) -> Result<Vec<Demonstration>> {
    (0..count).map(|i| generate_demo(cfg, i)).collect()
}

/// Trains a fresh network on the given frame sequences. `clock` returns
/// elapsed seconds.
pub fn train_model(
    cfg: &ExperimentConfig,
    demos: &[Vec<ImageState>],
    clock: &mut dyn FnMut() -> f64,
) -> Result<(Network, LearningCurve)> {
    let dataset = build_transition_dataset(demos.iter().map(Vec::as_slice), cfg.network.input_side, cfg.seed)?;
    if dataset.is_empty() {
        return Err(HarnessError::Validation("demos: no usable transitions".into()));
    }
    let net = Network::new(&cfg.layer_specs(), cfg.seed)?;
    let trainer = cfg.trainer_config()?;
    Ok(train_with_clock(&dataset, net, &trainer, clock)?)
}

/// The trained network as read by the controller.
#[derive(Debug, Clone)]
pub enum LearnedTask {
    Raw(TaskNetwork),
    Antisymmetric(Antisymmetric<TaskNetwork>),
}

impl LearnedTask {
    pub fn new(cfg: &ExperimentConfig, net: Network) -> Result<Self> {
        let task = TaskNetwork::new(net, cfg.network.input_side)?;
        Ok(match cfg.reward {
            RewardReading::Raw => LearnedTask::Raw(task),
            RewardReading::Antisymmetric => LearnedTask::Antisymmetric(Antisymmetric(task)),
        })
    }
}

impl TaskFunction for LearnedTask {
    fn dof(&self) -> usize {
        match self {
            LearnedTask::Raw(t) => t.dof(),
            LearnedTask::Antisymmetric(t) => t.dof(),
        }
    }

    fn reward(&self, change: &StateChange) -> servoscope_core::Result<Vec<f64>> {
        match self {
            LearnedTask::Raw(t) => t.reward(change),
            LearnedTask::Antisymmetric(t) => t.reward(change),
        }
    }
}

fn trial_env(cfg: &ExperimentConfig, trial: usize, perturbation: Option<&PerturbationSpec>) -> Result<SimEnv> {
    let camera = cfg.camera();
    let mut scene = trial_scene(cfg, trial);
    if let Some(p) = perturbation {
        scene = apply_perturbation(&scene, &camera, &p.to_core())?;
    }
    Ok(SimEnv::new(scene, camera, RobotState::default(), Mount::default())?)
}

/// One closed-loop trial; the environment's pixel error only scores it.
pub fn run_trial<T: TaskFunction>(
    cfg: &ExperimentConfig,
    task: &T,
    trial: usize,
    perturbation: Option<&PerturbationSpec>,
) -> Result<ExecutionTrace> {
    let mut env = trial_env(cfg, trial, perturbation)?;
    let controller = cfg.controller_config(trial_seed(cfg, trial));
    Ok(run_execution(&mut env, task, &controller, |e: &SimEnv| e.pixel_error())?)
}

/// Trial driven by the analytic progress oracle instead of a network.
pub fn run_oracle_trial(
    cfg: &ExperimentConfig,
    trial: usize,
    perturbation: Option<&PerturbationSpec>,
) -> Result<ExecutionTrace> {
    let mut env = trial_env(cfg, trial, perturbation)?;
    let oracle = ProgressOracle::new(env.progress_tap(), cfg.expert.step_size, cfg.dof);
    let controller = cfg.controller_config(trial_seed(cfg, trial));
    Ok(run_execution(&mut env, &oracle, &controller, |e: &SimEnv| e.pixel_error())?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldProbe {
    pub center: Vec3,
    pub field: Vec<(Vec3, f64)>,
    /// Angle in degrees between the best direction and centre→target.
    pub angle_deg: f64,
}

pub fn probe_reward_fields<T: TaskFunction>(cfg: &ExperimentConfig, task: &T) -> Result<Vec<FieldProbe>> {
    let scene = cfg.scene();
    let camera = cfg.camera();
    probe_centers(cfg)
        .into_iter()
        .map(|center| {
            let field = reward_field(task, &scene, &camera, &center, cfg.field_directions, cfg.expert.step_size)?;
            let best = argmax_direction(&field).expect("field is non-empty");
            let truth = (scene.target_pos - center).normalize();
            let angle_deg = best.dot(&truth).clamp(-1.0, 1.0).acos().to_degrees();
            Ok(FieldProbe {
                center,
                field,
                angle_deg,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteRow {
    pub setting: String,
    pub trials: usize,
    pub successes: usize,
    /// Over successful trials only; absent when none succeeded.
    pub mean_error_px: Option<f64>,
    pub std_error_px: Option<f64>,
    pub mean_steps: f64,
    pub train_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub rows: Vec<SuiteRow>,
    /// Traces per row, in trial order.
    pub traces: Vec<Vec<ExecutionTrace>>,
}

/// Aggregates trials in index order. The std is the population std.
pub fn summarize(setting: &str, traces: &[ExecutionTrace], train_seconds: f64) -> SuiteRow {
    let errors: Vec<f64> = traces.iter().filter(|t| t.success).map(ExecutionTrace::final_error).collect();
    let (mean, std) = if errors.is_empty() {
        (None, None)
    } else {
        let n = errors.len() as f64;
        let m = errors.iter().sum::<f64>() / n;
        let var = errors.iter().map(|e| (e - m) * (e - m)).sum::<f64>() / n;
        (Some(m), Some(var.sqrt()))
    };
    let mean_steps = if traces.is_empty() {
        0.0
    } else {
        traces.iter().map(|t| t.steps_used() as f64).sum::<f64>() / traces.len() as f64
    };
    SuiteRow {
        setting: setting.to_string(),
        trials: traces.len(),
        successes: errors.len(),
        mean_error_px: mean,
        std_error_px: std,
        mean_steps,
        train_seconds,
    }
}

pub fn run_trials<T: TaskFunction>(
    cfg: &ExperimentConfig,
    task: &T,
    perturbation: Option<&PerturbationSpec>,
) -> Result<Vec<ExecutionTrace>> {
    (0..cfg.trials).map(|i| run_trial(cfg, task, i, perturbation)).collect()
}

/// Baseline plus each configured perturbation on one trained network.
pub fn evaluate_network(cfg: &ExperimentConfig, net: Network, train_seconds: f64) -> Result<SuiteResult> {
    let task = LearnedTask::new(cfg, net)?;
    let mut result = SuiteResult {
        rows: Vec::new(),
        traces: Vec::new(),
    };
    let settings = std::iter::once(None).chain(cfg.perturbations.iter().map(Some));
    for p in settings {
        let label = p.map_or_else(|| "baseline".to_string(), PerturbationSpec::label);
        let traces = run_trials(cfg, &task, p)?;
        result.rows.push(summarize(&label, &traces, train_seconds));
        result.traces.push(traces);
    }
    Ok(result)
}

/// Trains one network per entry of `demo_counts` on the first `n` demos
/// and runs the baseline trials for each.
pub fn evaluate_demo_counts(
    cfg: &ExperimentConfig,
    demos: &[Vec<ImageState>],
    clock: &mut dyn FnMut() -> f64,
) -> Result<SuiteResult> {
    let mut result = SuiteResult {
        rows: Vec::new(),
        traces: Vec::new(),
    };
    for &n in &cfg.demo_counts {
        if n > demos.len() {
            return Err(HarnessError::Validation(format!(
                "demo_counts: {n} exceeds the {} available demos",
                demos.len()
            )));
        }
        let start = clock();
        let (net, _) = train_model(cfg, &demos[..n], clock)?;
        let seconds = clock() - start;
        let task = LearnedTask::new(cfg, net)?;
        let traces = run_trials(cfg, &task, None)?;
        result.rows.push(summarize(&format!("demos_{n}"), &traces, seconds));
        result.traces.push(traces);
    }
    Ok(result)
}
