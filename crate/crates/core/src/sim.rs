//! Desk-scale simulated workcell: a Cartesian carrier holding an object
//! block above a fixed target block, watched by a pinhole camera.
//!
//! Only images leave this module during execution. The mount transform
//! between robot axes and world axes lives inside [`Mount`] and has no
//! accessor.

use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::Cell;

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::uvs::{Environment, TaskFunction};
use crate::vision::{ImageState, StateChange};

pub type Vec3 = Vector3<f64>;

/// Edge length of the cubic workspace `[0, W]^3`.
pub const WORKSPACE_EXTENT: f64 = 200.0;
pub const BACKGROUND_LEVEL: u8 = 30;
pub const TARGET_LEVEL: u8 = 200;
pub const OBJECT_LEVEL: u8 = 120;
pub const OCCLUDER_LEVEL: u8 = 80;
pub const CHECKER_CELL: usize = 16;
pub const CHECKER_LEVELS: (u8, u8) = (25, 45);
pub const DEFAULT_IMAGE_SIDE: usize = 128;
/// Random starts keep this distance from every workspace face.
pub const START_MARGIN: f64 = 15.0;

/// Success threshold of 20 px at 580x580, rescaled to the given width.
pub fn scaled_success_threshold(image_w: usize) -> f64 {
    20.0 * image_w as f64 / 580.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Background {
    Uniform(u8),
    Checker { cell: usize, level_a: u8, level_b: u8 },
}

impl Background {
    pub fn checker() -> Self {
        Background::Checker {
            cell: CHECKER_CELL,
            level_a: CHECKER_LEVELS.0,
            level_b: CHECKER_LEVELS.1,
        }
    }

    fn level(&self, x: usize, y: usize) -> u8 {
        match *self {
            Background::Uniform(v) => v,
            Background::Checker {
                cell,
                level_a,
                level_b,
            } => {
                let cell = cell.max(1);
                if (x / cell + y / cell) % 2 == 0 {
                    level_a
                } else {
                    level_b
                }
            }
        }
    }
}

/// Image-space rectangle `[x0, x1) x [y0, y1)` painted over the blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Occluder {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
    pub level: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub object_pos: Vec3,
    pub object_yaw: f64,
    pub object_size: f64,
    pub target_pos: Vec3,
    pub target_yaw: f64,
    pub target_size: f64,
    pub background: Background,
    pub illumination_offset: i32,
    pub occluders: Vec<Occluder>,
}

impl Default for Scene {
    /// The stacking layout: target block on a stand in the middle of the
    /// workspace, object block held off to one side.
    fn default() -> Self {
        Scene {
            object_pos: Vec3::new(50.0, 70.0, 120.0),
            object_yaw: 0.0,
            object_size: 20.0,
            target_pos: Vec3::new(100.0, 100.0, 80.0),
            target_yaw: 0.3,
            target_size: 30.0,
            background: Background::Uniform(BACKGROUND_LEVEL),
            illumination_offset: 0,
            occluders: Vec::new(),
        }
    }
}

impl Scene {
    pub fn validate(&self) -> Result<()> {
        if !in_workspace(&self.object_pos) {
            return Err(Error::config("object position outside workspace"));
        }
        if !in_workspace(&self.target_pos) {
            return Err(Error::config("target position outside workspace"));
        }
        if !(self.object_size > 0.0) || !(self.target_size > 0.0) {
            return Err(Error::config("block sizes must be positive"));
        }
        if !(-255..=255).contains(&self.illumination_offset) {
            return Err(Error::config("illumination offset outside [-255, 255]"));
        }
        Ok(())
    }

    pub fn object_target_distance(&self) -> f64 {
        (self.target_pos - self.object_pos).norm()
    }
}

pub fn in_workspace(p: &Vec3) -> bool {
    p.iter().all(|&c| (0.0..=WORKSPACE_EXTENT).contains(&c))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraModel {
    pub eye: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    pub focal_px: f64,
    pub image_w: usize,
    pub image_h: usize,
}

impl CameraModel {
    /// Oblique view of the workspace from the front and above.
    pub fn default_for(image_w: usize, image_h: usize) -> Self {
        CameraModel {
            eye: Vec3::new(100.0, -140.0, 300.0),
            look_at: Vec3::new(100.0, 100.0, 80.0),
            up: Vec3::new(0.0, 0.0, 1.0),
            focal_px: 1.3 * image_w as f64,
            image_w,
            image_h,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_w < 32 || self.image_h < 32 {
            return Err(Error::config("camera image dimensions must be at least 32"));
        }
        if !(self.focal_px > 0.0) || !self.focal_px.is_finite() {
            return Err(Error::config("camera focal length must be positive"));
        }
        let forward = self.look_at - self.eye;
        if !(forward.norm() > 1e-9) {
            return Err(Error::config("camera eye coincides with look_at"));
        }
        if !(forward.normalize().cross(&self.up).norm() > 1e-9) {
            return Err(Error::config("camera up vector parallel to viewing direction"));
        }
        Ok(())
    }

    fn basis(&self) -> (Vec3, Vec3, Vec3) {
        let forward = (self.look_at - self.eye).normalize();
        let right = forward.cross(&self.up).normalize();
        let down = forward.cross(&right);
        (right, down, forward)
    }

    /// Pixel coordinates of a world point, `None` behind the camera.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        let (right, down, forward) = self.basis();
        let rel = p - self.eye;
        let depth = rel.dot(&forward);
        if depth <= 1e-6 {
            return None;
        }
        let u = 0.5 * self.image_w as f64 + self.focal_px * rel.dot(&right) / depth;
        let v = 0.5 * self.image_h as f64 + self.focal_px * rel.dot(&down) / depth;
        Some((u, v))
    }
}

/// Fixed transform from robot joint displacement to world displacement.
/// Deliberately opaque: nothing outside this module can read it.
#[derive(Debug, Clone, PartialEq)]
pub struct Mount {
    matrix: Matrix3<f64>,
}

impl Mount {
    /// Rotation by `yaw` about world z then `tilt` about world x, scaled.
    pub fn new(yaw: f64, tilt: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::config("mount scale must be positive"));
        }
        let rot = Rotation3::from_axis_angle(&Vector3::x_axis(), tilt)
            * Rotation3::from_axis_angle(&Vector3::z_axis(), yaw);
        Ok(Mount {
            matrix: rot.into_inner() * scale,
        })
    }

    pub fn aligned() -> Self {
        Mount {
            matrix: Matrix3::identity(),
        }
    }

    fn apply(&self, dq: &Vec3) -> Vec3 {
        self.matrix * dq
    }
}

impl Default for Mount {
    fn default() -> Self {
        Mount::new(0.45, 0.15, 1.1).expect("valid default mount")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    pub q: Vec3,
    pub lower: Vec3,
    pub upper: Vec3,
}

impl RobotState {
    pub fn new(lower: Vec3, upper: Vec3) -> Result<Self> {
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(l <= u)) {
            return Err(Error::config("joint limits must satisfy lower <= upper"));
        }
        let q = Vec3::zeros().sup(&lower).inf(&upper);
        Ok(RobotState { q, lower, upper })
    }

    fn clamp(&self, q: Vec3) -> Vec3 {
        q.sup(&self.lower).inf(&self.upper)
    }
}

impl Default for RobotState {
    fn default() -> Self {
        let l = 150.0;
        RobotState::new(Vec3::repeat(-l), Vec3::repeat(l)).expect("valid default limits")
    }
}

/// Integrates a joint velocity and carries the object along through the mount.
pub fn step_robot(
    scene: &Scene,
    robot: &RobotState,
    mount: &Mount,
    qdot: &[f64],
    dt: f64,
) -> Result<(Scene, RobotState)> {
    if qdot.len() != 3 {
        return Err(Error::shape("joint velocity", 3, qdot.len()));
    }
    if !qdot.iter().all(|v| v.is_finite()) || !dt.is_finite() {
        return Err(Error::Numeric("joint velocity"));
    }
    let qdot = Vec3::from_column_slice(qdot);
    let q_next = robot.clamp(robot.q + qdot * dt);
    let mut scene = scene.clone();
    scene.object_pos += mount.apply(&(q_next - robot.q));
    let robot = RobotState {
        q: q_next,
        ..robot.clone()
    };
    Ok((scene, robot))
}

/// Projected outline of a flat square block.
fn block_outline(camera: &CameraModel, center: &Vec3, yaw: f64, size: f64) -> Option<[(f64, f64); 4]> {
    let h = 0.5 * size;
    let (s, c) = (libm::sin(yaw), libm::cos(yaw));
    let mut out = [(0.0, 0.0); 4];
    for (i, (dx, dy)) in [(-h, -h), (h, -h), (h, h), (-h, h)].iter().enumerate() {
        let corner = center + Vec3::new(c * dx - s * dy, s * dx + c * dy, 0.0);
        out[i] = camera.project(&corner)?;
    }
    Some(out)
}

fn outline_in_view(poly: &[(f64, f64); 4], w: usize, h: usize) -> bool {
    let (min_x, max_x, min_y, max_y) = bounds(poly);
    max_x > 0.0 && max_y > 0.0 && min_x < w as f64 && min_y < h as f64
}

fn bounds(poly: &[(f64, f64); 4]) -> (f64, f64, f64, f64) {
    poly.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
    )
}

/// Pixel-rectangle bounds `[x0, x1) x [y0, y1)` of a projected block,
/// clipped to the image.
fn pixel_bbox(poly: &[(f64, f64); 4], w: usize, h: usize) -> (i64, i64, i64, i64) {
    let (min_x, max_x, min_y, max_y) = bounds(poly);
    let x0 = libm::floor(min_x).max(0.0) as i64;
    let y0 = libm::floor(min_y).max(0.0) as i64;
    let x1 = (libm::ceil(max_x) as i64).min(w as i64);
    let y1 = (libm::ceil(max_y) as i64).min(h as i64);
    (x0, y0, x1, y1)
}

fn fill_convex(pixels: &mut [u8], w: usize, h: usize, poly: &[(f64, f64); 4], level: u8) {
    let (x0, y0, x1, y1) = pixel_bbox(poly, w, h);
    for y in y0..y1 {
        for x in x0..x1 {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut pos = false;
            let mut neg = false;
            for i in 0..4 {
                let (ax, ay) = poly[i];
                let (bx, by) = poly[(i + 1) % 4];
                let cross = (bx - ax) * (py - ay) - (by - ay) * (px - ax);
                pos |= cross > 0.0;
                neg |= cross < 0.0;
            }
            if !(pos && neg) {
                pixels[y as usize * w + x as usize] = level;
            }
        }
    }
}

/// Rasterizes the scene: background, target, object, occluders, then the
/// illumination offset with saturation.
pub fn render(scene: &Scene, camera: &CameraModel) -> Result<ImageState> {
    camera.validate()?;
    let (w, h) = (camera.image_w, camera.image_h);
    let mut pixels = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            pixels[y * w + x] = scene.background.level(x, y);
        }
    }
    if let Some(poly) = block_outline(camera, &scene.target_pos, scene.target_yaw, scene.target_size) {
        fill_convex(&mut pixels, w, h, &poly, TARGET_LEVEL);
    }
    if let Some(poly) = block_outline(camera, &scene.object_pos, scene.object_yaw, scene.object_size) {
        fill_convex(&mut pixels, w, h, &poly, OBJECT_LEVEL);
    }
    for occ in &scene.occluders {
        let x0 = occ.x0.clamp(0, w as i64) as usize;
        let x1 = occ.x1.clamp(0, w as i64) as usize;
        let y0 = occ.y0.clamp(0, h as i64) as usize;
        let y1 = occ.y1.clamp(0, h as i64) as usize;
        for y in y0..y1 {
            pixels[y * w + x0..y * w + x1.max(x0)].fill(occ.level);
        }
    }
    if scene.illumination_offset != 0 {
        for p in &mut pixels {
            *p = (i32::from(*p) + scene.illumination_offset).clamp(0, 255) as u8;
        }
    }
    ImageState::new(w, h, pixels)
}

fn block_in_view(camera: &CameraModel, center: &Vec3, yaw: f64, size: f64) -> bool {
    block_outline(camera, center, yaw, size)
        .is_some_and(|poly| outline_in_view(&poly, camera.image_w, camera.image_h))
}

/// Euclidean distance in pixels between the projected block centers.
pub fn pixel_error(scene: &Scene, camera: &CameraModel) -> Result<f64> {
    if !block_in_view(camera, &scene.object_pos, scene.object_yaw, scene.object_size) {
        return Err(Error::OutOfView("object"));
    }
    if !block_in_view(camera, &scene.target_pos, scene.target_yaw, scene.target_size) {
        return Err(Error::OutOfView("target"));
    }
    let (ou, ov) = camera.project(&scene.object_pos).ok_or(Error::OutOfView("object"))?;
    let (tu, tv) = camera.project(&scene.target_pos).ok_or(Error::OutOfView("target"))?;
    Ok(libm::hypot(ou - tu, ov - tv))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertConfig {
    pub step_size: f64,
    /// Demonstrator confidence in `(0, 1]`.
    pub alpha: f64,
    pub stop_distance: f64,
    pub max_frames: usize,
    pub noise_seed: u64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        ExpertConfig {
            step_size: 10.0,
            alpha: 0.6,
            stop_distance: 2.0,
            max_frames: 20,
            noise_seed: 0,
        }
    }
}

impl ExpertConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) {
            return Err(Error::config("expert step_size must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config("expert alpha must lie in (0, 1]"));
        }
        if !(self.stop_distance >= 0.0) {
            return Err(Error::config("expert stop_distance must be non-negative"));
        }
        if self.max_frames < 2 {
            return Err(Error::config("expert max_frames must be at least 2"));
        }
        Ok(())
    }

    pub fn noise_sigma(&self) -> f64 {
        (1.0 - self.alpha) * self.step_size
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub frames: Vec<ImageState>,
    /// `(object, target)` world positions per frame; evaluation only.
    pub ground_truth: Vec<(Vec3, Vec3)>,
    pub expert: ExpertConfig,
    pub reached: bool,
}

/// Scripted demonstrator: steps the object toward the target with
/// confidence-scaled Gaussian jitter, rendering a frame after every move.
pub fn generate_demonstration(
    scene: &Scene,
    camera: &CameraModel,
    expert: &ExpertConfig,
) -> Result<Demonstration> {
    expert.validate()?;
    pixel_error(scene, camera)?;
    let mut rng = ChaCha8Rng::seed_from_u64(expert.noise_seed);
    let sigma = expert.noise_sigma();
    let noise = Normal::new(0.0, sigma).map_err(|_| Error::config("invalid expert noise"))?;
    let mut scene = scene.clone();
    let mut frames = vec![render(&scene, camera)?];
    let mut ground_truth = vec![(scene.object_pos, scene.target_pos)];
    let mut distance = scene.object_target_distance();
    while frames.len() < expert.max_frames && distance > expert.stop_distance {
        let to_target = scene.target_pos - scene.object_pos;
        let mut motion = to_target * (expert.step_size.min(distance) / distance);
        if sigma > 0.0 {
            motion += Vec3::from_fn(|_, _| noise.sample(&mut rng));
        }
        scene.object_pos = (scene.object_pos + motion)
            .sup(&Vec3::zeros())
            .inf(&Vec3::repeat(WORKSPACE_EXTENT));
        frames.push(render(&scene, camera)?);
        ground_truth.push((scene.object_pos, scene.target_pos));
        distance = scene.object_target_distance();
    }
    Ok(Demonstration {
        frames,
        ground_truth,
        expert: expert.clone(),
        reached: distance <= expert.stop_distance,
    })
}

/// Random object start at a distance in `[min_r, max_r]` from the target,
/// uniform in direction, kept inside the workspace margins.
pub fn random_start(target: &Vec3, seed: u64, min_r: f64, max_r: f64) -> Vec3 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let dir = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = dir.norm();
        if !(0.3..=1.0).contains(&n) {
            continue;
        }
        let r = rng.random_range(min_r..=max_r);
        let p = target + dir * (r / n);
        if p.iter().all(|&c| (START_MARGIN..=WORKSPACE_EXTENT - START_MARGIN).contains(&c)) {
            return p;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Perturbation {
    /// Target shift in world units and rotation in radians.
    TranslateRotateTarget { dx: f64, dy: f64, dtheta: f64 },
    BackgroundSwap(Background),
    OccludeObject(f64),
    OccludeTarget(f64),
    IlluminationShift(i32),
}

impl Perturbation {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Perturbation::OccludeObject(f) | Perturbation::OccludeTarget(f) => {
                if !(0.0..=1.0).contains(&f) {
                    return Err(Error::config(format!("occlusion fraction {f} outside [0, 1]")));
                }
            }
            Perturbation::IlluminationShift(d) => {
                if !(-255..=255).contains(&d) {
                    return Err(Error::config(format!("illumination shift {d} outside [-255, 255]")));
                }
            }
            Perturbation::TranslateRotateTarget { dx, dy, dtheta } => {
                if !(dx.is_finite() && dy.is_finite() && dtheta.is_finite()) {
                    return Err(Error::Numeric("target perturbation"));
                }
            }
            Perturbation::BackgroundSwap(_) => {}
        }
        Ok(())
    }
}

/// Returns a perturbed copy of the scene. Occluders are placed in image
/// space, so the camera is needed to locate the block being covered.
pub fn apply_perturbation(scene: &Scene, camera: &CameraModel, p: &Perturbation) -> Result<Scene> {
    p.validate()?;
    let mut out = scene.clone();
    match *p {
        Perturbation::TranslateRotateTarget { dx, dy, dtheta } => {
            out.target_pos.x += dx;
            out.target_pos.y += dy;
            out.target_yaw += dtheta;
        }
        Perturbation::BackgroundSwap(bg) => out.background = bg,
        Perturbation::OccludeObject(f) => {
            if let Some(occ) = occluder_for(camera, &scene.object_pos, scene.object_yaw, scene.object_size, f) {
                out.occluders.push(occ);
            }
        }
        Perturbation::OccludeTarget(f) => {
            if let Some(occ) = occluder_for(camera, &scene.target_pos, scene.target_yaw, scene.target_size, f) {
                out.occluders.push(occ);
            }
        }
        Perturbation::IlluminationShift(d) => {
            out.illumination_offset = (out.illumination_offset + d).clamp(-255, 255);
        }
    }
    Ok(out)
}

/// Covers the left `fraction` of a block's projected pixel bounding box.
fn occluder_for(camera: &CameraModel, center: &Vec3, yaw: f64, size: f64, fraction: f64) -> Option<Occluder> {
    let poly = block_outline(camera, center, yaw, size)?;
    let (x0, y0, x1, y1) = pixel_bbox(&poly, camera.image_w, camera.image_h);
    if x1 <= x0 || y1 <= y0 || fraction == 0.0 {
        return None;
    }
    let width = libm::round((x1 - x0) as f64 * fraction) as i64;
    Some(Occluder {
        x0,
        y0,
        x1: x0 + width,
        y1,
        level: OCCLUDER_LEVEL,
    })
}

/// Evaluation-only channel reporting the world-space progress of the most
/// recent environment step (decrease in object-to-target distance).
#[derive(Debug, Clone, Default)]
pub struct ProgressTap(Rc<Cell<f64>>);

impl ProgressTap {
    pub fn last_progress(&self) -> f64 {
        self.0.get()
    }
}

/// Simulated workcell behind the controller's [`Environment`] handle.
#[derive(Debug, Clone)]
pub struct SimEnv {
    scene: Scene,
    camera: CameraModel,
    robot: RobotState,
    mount: Mount,
    tap: Option<ProgressTap>,
    env_steps: usize,
}

impl SimEnv {
    pub fn new(scene: Scene, camera: CameraModel, robot: RobotState, mount: Mount) -> Result<Self> {
        camera.validate()?;
        scene.validate()?;
        Ok(SimEnv {
            scene,
            camera,
            robot,
            mount,
            tap: None,
            env_steps: 0,
        })
    }

    /// Ground-truth pixel error; evaluation use only.
    pub fn pixel_error(&self) -> Result<f64> {
        pixel_error(&self.scene, &self.camera)
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn camera(&self) -> &CameraModel {
        &self.camera
    }

    pub fn env_steps(&self) -> usize {
        self.env_steps
    }

    pub fn progress_tap(&mut self) -> ProgressTap {
        self.tap.get_or_insert_with(ProgressTap::default).clone()
    }
}

impl Environment for SimEnv {
    fn joint_count(&self) -> usize {
        3
    }

    fn joints(&self) -> Vec<f64> {
        self.robot.q.iter().copied().collect()
    }

    fn observe(&self) -> Result<ImageState> {
        render(&self.scene, &self.camera)
    }

    fn step(&mut self, dq: &[f64]) -> Result<ImageState> {
        let before = self.scene.object_target_distance();
        let (scene, robot) = step_robot(&self.scene, &self.robot, &self.mount, dq, 1.0)?;
        self.scene = scene;
        self.robot = robot;
        self.env_steps += 1;
        if let Some(tap) = &self.tap {
            tap.0.set(before - self.scene.object_target_distance());
        }
        if !block_in_view(&self.camera, &self.scene.object_pos, self.scene.object_yaw, self.scene.object_size) {
            return Err(Error::OutOfView("object"));
        }
        self.observe()
    }
}

/// Analytic task function that bypasses learning: every reward component is
/// the last step's progress divided by `step_size`, clipped to `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct ProgressOracle {
    tap: ProgressTap,
    step_size: f64,
    dof: usize,
}

impl ProgressOracle {
    pub fn new(tap: ProgressTap, step_size: f64, dof: usize) -> Self {
        ProgressOracle { tap, step_size, dof }
    }
}

impl TaskFunction for ProgressOracle {
    fn dof(&self) -> usize {
        self.dof
    }

    fn reward(&self, _change: &StateChange) -> Result<Vec<f64>> {
        let r = (self.tap.last_progress() / self.step_size).clamp(-1.0, 1.0);
        Ok(vec![r; self.dof])
    }
}
