//! JSON experiment configuration. Every section and key is optional;
//! unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use servoscope_core::irl::{sigma_from_confidence, TrainerConfig};
use servoscope_core::nn::{layer_specs, validate_specs, LayerSpec, DEFAULT_HIDDEN};
use servoscope_core::sim::{
    scaled_success_threshold, Background, START_MARGIN, CameraModel, ExpertConfig, Perturbation, Scene, Vec3, WORKSPACE_EXTENT,
};
use servoscope_core::uvs::{ControllerConfig, ProbeMode};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageSection {
    pub width: usize,
    pub height: usize,
}

impl Default for ImageSection {
    fn default() -> Self {
        ImageSection {
            width: 128,
            height: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    /// Side of the square network input after downsampling.
    pub input_side: usize,
    pub hidden: Vec<usize>,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            input_side: 64,
            hidden: DEFAULT_HIDDEN.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSection {
    pub alpha: f64,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for TrainerSection {
    fn default() -> Self {
        TrainerSection {
            alpha: 0.6,
            epochs: 50,
            learning_rate: 2.5e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProbeSpec {
    Axis,
    Random { probes: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSection {
    pub step_gain: f64,
    pub damping: f64,
    /// Per-component reward threshold, broadcast to every DOF.
    pub r_thres: f64,
    pub recalib_patience: usize,
    pub min_singular: f64,
    pub probe_eps: f64,
    pub probe: ProbeSpec,
    pub max_steps: usize,
    pub dt: f64,
}

impl Default for ControllerSection {
    fn default() -> Self {
        let c = ControllerConfig::with_dof(3);
        ControllerSection {
            step_gain: c.step_gain,
            damping: c.damping,
            r_thres: 0.0,
            recalib_patience: c.recalib_patience,
            min_singular: c.min_singular,
            probe_eps: c.probe_eps,
            probe: ProbeSpec::Axis,
            max_steps: c.max_steps,
            dt: c.dt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertSection {
    pub step_size: f64,
    pub alpha: f64,
    pub stop_distance: f64,
    pub max_frames: usize,
}

impl Default for ExpertSection {
    fn default() -> Self {
        let e = ExpertConfig::default();
        ExpertSection {
            step_size: e.step_size,
            alpha: e.alpha,
            stop_distance: e.stop_distance,
            max_frames: e.max_frames,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSection {
    /// Centre of the region object starts are drawn from.
    pub home: [f64; 3],
    /// Start positions lie within this distance of `home`.
    pub start_radius: f64,
    pub object_size: f64,
    pub target: [f64; 3],
    pub target_size: f64,
}

impl Default for SceneSection {
    fn default() -> Self {
        let s = Scene::default();
        SceneSection {
            home: [s.object_pos.x, s.object_pos.y, s.object_pos.z],
            start_radius: 20.0,
            object_size: s.object_size,
            target: [s.target_pos.x, s.target_pos.y, s.target_pos.z],
            target_size: s.target_size,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BackgroundSpec {
    Checker,
    Uniform(u8),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PerturbationSpec {
    TranslateRotateTarget { dx: f64, dy: f64, dtheta_deg: f64 },
    BackgroundSwap { background: BackgroundSpec },
    OccludeObject { fraction: f64 },
    OccludeTarget { fraction: f64 },
    IlluminationShift { delta: i32 },
}

impl PerturbationSpec {
    pub fn to_core(&self) -> Perturbation {
        match *self {
            PerturbationSpec::TranslateRotateTarget { dx, dy, dtheta_deg } => Perturbation::TranslateRotateTarget {
                dx,
                dy,
                dtheta: dtheta_deg.to_radians(),
            },
            PerturbationSpec::BackgroundSwap { background } => Perturbation::BackgroundSwap(match background {
                BackgroundSpec::Checker => Background::checker(),
                BackgroundSpec::Uniform(v) => Background::Uniform(v),
            }),
            PerturbationSpec::OccludeObject { fraction } => Perturbation::OccludeObject(fraction),
            PerturbationSpec::OccludeTarget { fraction } => Perturbation::OccludeTarget(fraction),
            PerturbationSpec::IlluminationShift { delta } => Perturbation::IlluminationShift(delta),
        }
    }

    /// Row label in suite output.
    pub fn label(&self) -> String {
        match *self {
            PerturbationSpec::TranslateRotateTarget { dx, dy, dtheta_deg } => {
                format!("translate_rotate_target({dx},{dy},{dtheta_deg}deg)")
            }
            PerturbationSpec::BackgroundSwap { background } => match background {
                BackgroundSpec::Checker => "background_swap(checker)".into(),
                BackgroundSpec::Uniform(v) => format!("background_swap(uniform {v})"),
            },
            PerturbationSpec::OccludeObject { fraction } => format!("occlude_object({fraction})"),
            PerturbationSpec::OccludeTarget { fraction } => format!("occlude_target({fraction})"),
            PerturbationSpec::IlluminationShift { delta } => format!("illumination_shift({delta:+})"),
        }
    }
}

/// How the controller reads the trained network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardReading {
    /// `T(ds)` as trained.
    Raw,
    /// `(T(ds) - T(inverse ds)) / 2`.
    Antisymmetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: String,
    pub seed: u64,
    pub dof: usize,
    pub image: ImageSection,
    pub network: NetworkSection,
    pub trainer: TrainerSection,
    pub controller: ControllerSection,
    pub expert: ExpertSection,
    pub scene: SceneSection,
    pub reward: RewardReading,
    pub demos: usize,
    pub trials: usize,
    /// Extra training-set sizes compared by `evaluate`.
    pub demo_counts: Vec<usize>,
    pub perturbations: Vec<PerturbationSpec>,
    pub probe_centers: usize,
    pub field_directions: usize,
    /// Record elapsed seconds in outputs. Off keeps outputs byte-stable.
    pub wall_clock: bool,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: "stack_blocks".into(),
            seed: 0,
            dof: 3,
            image: ImageSection::default(),
            network: NetworkSection::default(),
            trainer: TrainerSection::default(),
            controller: ControllerSection::default(),
            expert: ExpertSection::default(),
            scene: SceneSection::default(),
            reward: RewardReading::Antisymmetric,
            demos: 11,
            trials: 10,
            demo_counts: Vec::new(),
            perturbations: Vec::new(),
            probe_centers: 5,
            field_directions: 64,
            wall_clock: false,
            out_dir: None,
        }
    }
}

fn invalid(key: &str, msg: impl std::fmt::Display) -> HarnessError {
    HarnessError::Validation(format!("{key}: {msg}"))
}

fn check(ok: bool, key: &str, msg: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(invalid(key, msg))
    }
}

fn vec3(a: [f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        check(self.dof >= 1, "dof", "must be at least 1")?;
        check(self.image.width >= 8, "image.width", "must be at least 8")?;
        check(self.image.height >= 8, "image.height", "must be at least 8")?;
        check(self.network.input_side >= 1, "network.input_side", "must be at least 1")?;
        check(
            self.network.hidden.iter().all(|&h| h > 0),
            "network.hidden",
            "layer widths must be positive",
        )?;
        validate_specs(&self.layer_specs()).map_err(|e| invalid("network", e))?;
        check(
            self.trainer.alpha > 0.0 && self.trainer.alpha <= 1.0,
            "trainer.alpha",
            "must lie in (0, 1]",
        )?;
        check(self.trainer.epochs >= 1, "trainer.epochs", "must be at least 1")?;
        check(
            self.trainer.learning_rate >= 0.0 && self.trainer.learning_rate.is_finite(),
            "trainer.learning_rate",
            "must be finite and non-negative",
        )?;
        let c = &self.controller;
        check(c.step_gain > 0.0 && c.step_gain.is_finite(), "controller.step_gain", "must be positive")?;
        check(c.damping >= 0.0 && c.damping.is_finite(), "controller.damping", "must be non-negative")?;
        check(c.r_thres.is_finite(), "controller.r_thres", "must be finite")?;
        check(c.recalib_patience >= 1, "controller.recalib_patience", "must be at least 1")?;
        check(c.min_singular >= 0.0, "controller.min_singular", "must be non-negative")?;
        check(c.probe_eps > 0.0 && c.probe_eps.is_finite(), "controller.probe_eps", "must be positive")?;
        if let ProbeSpec::Random { probes } = c.probe {
            check(probes >= self.dof.max(3), "controller.probe", "random probing needs at least one probe per joint")?;
        }
        check(c.max_steps >= 1, "controller.max_steps", "must be at least 1")?;
        check(c.dt > 0.0 && c.dt.is_finite(), "controller.dt", "must be positive")?;
        let e = &self.expert;
        check(e.step_size > 0.0, "expert.step_size", "must be positive")?;
        check(e.alpha > 0.0 && e.alpha <= 1.0, "expert.alpha", "must lie in (0, 1]")?;
        check(e.stop_distance >= 0.0, "expert.stop_distance", "must be non-negative")?;
        check(e.max_frames >= 2, "expert.max_frames", "must be at least 2")?;
        let s = &self.scene;
        let inside = |p: [f64; 3]| p.iter().all(|&v| (0.0..=WORKSPACE_EXTENT).contains(&v));
        let margin = |p: [f64; 3]| p.iter().all(|&v| (START_MARGIN..=WORKSPACE_EXTENT - START_MARGIN).contains(&v));
        check(margin(s.home), "scene.home", "must keep the start margin from every workspace face")?;
        check(inside(s.target), "scene.target", "outside the workspace")?;
        check(s.start_radius >= 0.0, "scene.start_radius", "must be non-negative")?;
        check(s.object_size > 0.0, "scene.object_size", "must be positive")?;
        check(s.target_size > 0.0, "scene.target_size", "must be positive")?;
        check(self.demos >= 1, "demos", "must be at least 1")?;
        check(self.trials >= 1, "trials", "must be at least 1")?;
        check(self.demo_counts.iter().all(|&n| n >= 1), "demo_counts", "entries must be at least 1")?;
        for (i, p) in self.perturbations.iter().enumerate() {
            p.to_core().validate().map_err(|e| invalid(&format!("perturbations[{i}]"), e))?;
        }
        check(self.probe_centers >= 1, "probe_centers", "must be at least 1")?;
        check(self.field_directions >= 4, "field_directions", "must be at least 4")?;
        self.scene().validate().map_err(|e| invalid("scene", e))?;
        self.camera().validate().map_err(|e| invalid("image", e))?;
        Ok(())
    }

    pub fn layer_specs(&self) -> Vec<LayerSpec> {
        let side = self.network.input_side;
        layer_specs(side * side, &self.network.hidden, self.dof)
    }

    /// Resolved trainer settings, with `sigma0` derived from `alpha`.
    pub fn trainer_config(&self) -> Result<TrainerConfig> {
        sigma_from_confidence(self.trainer.alpha).map_err(|e| invalid("trainer.alpha", e))?;
        TrainerConfig::new(
            self.dof,
            self.trainer.alpha,
            self.trainer.epochs,
            self.trainer.learning_rate,
            self.seed,
        )
        .map_err(|e| invalid("trainer", e))
    }

    /// Controller settings; random probing is seeded per trial.
    pub fn controller_config(&self, trial_seed: u64) -> ControllerConfig {
        let c = &self.controller;
        let mut out = ControllerConfig::with_dof(self.dof);
        out.step_gain = c.step_gain;
        out.damping = c.damping;
        out.r_thres = vec![c.r_thres; self.dof];
        out.recalib_patience = c.recalib_patience;
        out.min_singular = c.min_singular;
        out.probe_eps = c.probe_eps;
        out.probe_mode = match c.probe {
            ProbeSpec::Axis => ProbeMode::Axis,
            ProbeSpec::Random { probes } => ProbeMode::Random {
                probes,
                seed: trial_seed,
            },
        };
        out.max_steps = c.max_steps;
        out.dt = c.dt;
        out.success_threshold_px = scaled_success_threshold(self.image.width);
        out
    }

    pub fn expert_config(&self, noise_seed: u64) -> ExpertConfig {
        ExpertConfig {
            step_size: self.expert.step_size,
            alpha: self.expert.alpha,
            stop_distance: self.expert.stop_distance,
            max_frames: self.expert.max_frames,
            noise_seed,
        }
    }

    /// Scene with the object at `home`.
    pub fn scene(&self) -> Scene {
        Scene {
            object_pos: vec3(self.scene.home),
            object_size: self.scene.object_size,
            target_pos: vec3(self.scene.target),
            target_size: self.scene.target_size,
            ..Scene::default()
        }
    }

    pub fn camera(&self) -> CameraModel {
        CameraModel::default_for(self.image.width, self.image.height)
    }

    pub fn home(&self) -> Vec3 {
        vec3(self.scene.home)
    }
}

pub fn parse_config(text: &str, origin: &Path) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| HarnessError::Parse {
        path: origin.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    parse_config(&text, path)
}
