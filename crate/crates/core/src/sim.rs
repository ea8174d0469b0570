//! Deterministic toy manipulation environment.
//!
//! A free-floating end-effector moves by clipped delta actions above a table.
//! Two tasks are provided: reaching a target point and picking up and lifting
//! an object. Cameras are pinhole models looking at the workspace center;
//! observations are the projections of three keypoints (end-effector, object,
//! target) plus the gripper state, standing in for images.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::Trajectory;
use crate::error::{Error, Result};
use crate::geometry::{Action, Pose, Rotation, Vec3};

pub const OBS_DIM: usize = 10;
pub const WORKSPACE_HALF_EXTENT: f64 = 0.5;
/// Height of the object keypoint when it rests on the table.
pub const TABLE_Z: f64 = 0.0;
pub const MAX_STEP_TRANSLATION: f64 = 0.05;
pub const MAX_STEP_ROTATION: f64 = 0.2;
pub const ATTACH_RADIUS: f64 = 0.04;
pub const GRIPPER_THRESHOLD: f64 = 0.5;
pub const DEPTH_MAX: f64 = 2.0;
const COORD_BOUND: f64 = 2.0;

const HOME: [f64; 3] = [0.0, 0.0, 0.3];
const HOME_JITTER: f64 = 0.03;
const HOME_YAW_RANGE: f64 = std::f64::consts::FRAC_PI_4;
const OBJECT_RANGE: f64 = 0.15;
const TARGET_RANGE_XY: f64 = 0.2;
const TARGET_Z: (f64, f64) = (0.05, 0.3);
/// PickLift has no goal position; its target marker sits in a small box off
/// the rig's rotation axes, where it plays the part of static scene content
/// that reveals the viewpoint.
const MARKER_CENTER: [f64; 3] = [-0.25, 0.25, 0.25];
const MARKER_JITTER: f64 = 0.01;

const EXPERT_GAIN: f64 = 1.0;
const EXPERT_ROTATION_NOISE: f64 = 0.03;
const APPROACH_HEIGHT: f64 = 0.08;
const ALIGN_TOLERANCE: f64 = 0.02;
const GRASP_TOLERANCE: f64 = 0.015;
const LIFT_CLEARANCE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Reach,
    #[serde(alias = "pick_lift", alias = "picklift")]
    PickLift,
}

impl std::str::FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['_', '-'], "").as_str() {
            "reach" => Ok(Task::Reach),
            "picklift" => Ok(Task::PickLift),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task: Task,
    pub reach_tolerance: f64,
    pub lift_height: f64,
    pub max_steps: usize,
}

impl TaskSpec {
    pub fn new(task: Task) -> Self {
        TaskSpec {
            task,
            reach_tolerance: 0.03,
            lift_height: 0.15,
            max_steps: 200,
        }
    }

    pub fn reach() -> Self {
        Self::new(Task::Reach)
    }

    pub fn pick_lift() -> Self {
        Self::new(Task::PickLift)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimState {
    pub eef_pose: Pose<f64>,
    pub gripper_closed: bool,
    pub object_pos: Vec3<f64>,
    pub object_held: bool,
    /// Object position relative to the end-effector while held.
    pub grasp_offset: Vec3<f64>,
    pub target_pos: Vec3<f64>,
    pub step_count: usize,
    /// Number of actions that had to be clipped or were non-finite.
    pub clipped_actions: usize,
    pub rng: ChaCha8Rng,
}

impl SimState {
    pub fn is_success(&self, task: &TaskSpec) -> bool {
        match task.task {
            Task::Reach => {
                (self.eef_pose.translation - self.target_pos).norm() <= task.reach_tolerance
            }
            Task::PickLift => self.object_held && self.object_pos.z() >= TABLE_Z + task.lift_height,
        }
    }

    pub fn is_done(&self, task: &TaskSpec) -> bool {
        self.is_success(task) || self.step_count >= task.max_steps
    }

    /// Keypoints in render order: end-effector, object, target.
    pub fn keypoints(&self) -> [Vec3<f64>; 3] {
        [self.eef_pose.translation, self.object_pos, self.target_pos]
    }
}

fn in_workspace(p: &Vec3<f64>) -> bool {
    p.0.iter().all(|v| v.abs() <= WORKSPACE_HALF_EXTENT)
}

fn clamp_to_workspace(p: Vec3<f64>) -> Vec3<f64> {
    let mut q =
        p.0.map(|v| v.clamp(-WORKSPACE_HALF_EXTENT, WORKSPACE_HALF_EXTENT));
    q[2] = q[2].max(TABLE_Z);
    Vec3(q)
}

pub fn reset(task: &TaskSpec, seed: u64) -> SimState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let home = Vec3::new(
        HOME[0] + u(-HOME_JITTER, HOME_JITTER),
        HOME[1] + u(-HOME_JITTER, HOME_JITTER),
        HOME[2] + u(-HOME_JITTER, HOME_JITTER),
    );
    let yaw = u(-HOME_YAW_RANGE, HOME_YAW_RANGE);
    // Tool axis pointing down, random yaw about the vertical.
    let orientation = Rotation::about_z(yaw).compose(&Rotation::about_x(std::f64::consts::PI));
    let object = Vec3::new(
        u(-OBJECT_RANGE, OBJECT_RANGE),
        u(-OBJECT_RANGE, OBJECT_RANGE),
        TABLE_Z,
    );
    let target = match task.task {
        Task::Reach => Vec3::new(
            u(-TARGET_RANGE_XY, TARGET_RANGE_XY),
            u(-TARGET_RANGE_XY, TARGET_RANGE_XY),
            u(TARGET_Z.0, TARGET_Z.1),
        ),
        Task::PickLift => {
            Vec3([0, 1, 2].map(|i| MARKER_CENTER[i] + u(-MARKER_JITTER, MARKER_JITTER)))
        }
    };
    SimState {
        eef_pose: Pose::new(orientation, home),
        gripper_closed: false,
        object_pos: object,
        object_held: false,
        grasp_offset: Vec3::zero(),
        target_pos: target,
        step_count: 0,
        clipped_actions: 0,
        rng,
    }
}

/// Clips a Base-space action to the per-step limits. Returns the clipped
/// action and whether anything changed. Non-finite actions become zero motion.
pub fn clip_action(a: &Action<f64>) -> (Action<f64>, bool) {
    if !a.is_finite() {
        return (Action::zero(), true);
    }
    let mut clipped = false;
    let mut dp = a.dp;
    let n = dp.norm();
    // The slack keeps an already-clipped action from being flagged again.
    if n > MAX_STEP_TRANSLATION * (1.0 + 1e-12) {
        dp = dp * (MAX_STEP_TRANSLATION / n);
        clipped = true;
    }
    let mut dr = a.dr;
    if dr.angle() > MAX_STEP_ROTATION + 1e-12 {
        clipped = true;
        dr = match dr.to_axis_angle() {
            Ok(w) => {
                let w = w * (MAX_STEP_ROTATION / w.norm());
                Rotation::from_axis_angle(w).unwrap_or_default()
            }
            Err(_) => Rotation::identity(),
        };
    }
    let gripper = a.gripper.clamp(0.0, 1.0);
    (Action::new(dp, dr, gripper), clipped)
}

/// Advances the simulation by one step. Returns the next state and whether
/// the episode is over.
pub fn step(state: &SimState, task: &TaskSpec, action: &Action<f64>) -> (SimState, bool) {
    let mut next = state.clone();
    let (a, clipped) = clip_action(action);
    if clipped {
        next.clipped_actions += 1;
    }
    let mut pose = state.eef_pose.apply_action(&a);
    pose.translation = clamp_to_workspace(pose.translation);
    if (state.step_count + 1).is_multiple_of(100) {
        pose.rotation = pose.rotation.orthonormalized();
    }
    next.eef_pose = pose;

    let close = a.gripper >= GRIPPER_THRESHOLD;
    if close && !state.gripper_closed {
        let dist = (pose.translation - state.object_pos).norm();
        if dist <= ATTACH_RADIUS {
            next.object_held = true;
            next.grasp_offset = state.object_pos - pose.translation;
        }
    }
    if !close {
        if next.object_held {
            next.object_pos = Vec3::new(next.object_pos.x(), next.object_pos.y(), TABLE_Z);
        }
        next.object_held = false;
    }
    next.gripper_closed = close;
    if next.object_held {
        next.object_pos = clamp_to_workspace(pose.translation + next.grasp_offset);
    }
    next.step_count += 1;
    let done = next.is_done(task);
    (next, done)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub focal: f64,
    pub cu: f64,
    pub cv: f64,
    pub width: f64,
    pub height: f64,
}

impl Default for Intrinsics {
    fn default() -> Self {
        Intrinsics {
            focal: 200.0,
            cu: 112.0,
            cv: 112.0,
            width: 224.0,
            height: 224.0,
        }
    }
}

/// Pinhole camera. Camera frame: x right, y down, z forward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraView {
    pub name: String,
    pub extrinsics: Pose<f64>,
    pub intrinsics: Intrinsics,
}

impl CameraView {
    pub fn new(
        name: impl Into<String>,
        extrinsics: Pose<f64>,
        intrinsics: Intrinsics,
    ) -> Result<Self> {
        let k = &intrinsics;
        let ok = k.focal > 0.0 && k.cu > 0.0 && k.cu < k.width && k.cv > 0.0 && k.cv < k.height;
        if !ok {
            return Err(Error::Config(format!("invalid intrinsics {k:?}")));
        }
        Ok(CameraView {
            name: name.into(),
            extrinsics,
            intrinsics,
        })
    }

    /// Camera at `center` looking at `look_at`, with world +z as "up".
    pub fn looking_at(
        name: impl Into<String>,
        center: Vec3<f64>,
        look_at: Vec3<f64>,
        intrinsics: Intrinsics,
    ) -> Result<Self> {
        let forward = (look_at - center).normalized();
        let up = Vec3::new(0.0, 0.0, 1.0);
        let right = forward.cross(&up);
        if right.norm() < 1e-9 {
            return Err(Error::Config(
                "camera looks straight along the vertical".into(),
            ));
        }
        let right = right.normalized();
        let down = forward.cross(&right);
        let rotation = Rotation::from_matrix([right.0, down.0, forward.0])?;
        Self::new(name, Pose::new(rotation, center), intrinsics)
    }

    /// Default front camera: 1 m from the workspace center at 30° elevation.
    pub fn front() -> Self {
        let elev = 30f64.to_radians();
        let center = Vec3::new(elev.cos(), 0.0, elev.sin());
        Self::looking_at("F", center, Vec3::zero(), Intrinsics::default())
            .expect("default camera is valid")
    }

    /// Optical-axis direction in world coordinates.
    pub fn forward(&self) -> Vec3<f64> {
        let m = self.extrinsics.rotation.matrix();
        Vec3(m[2])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Pinhole projection of one world point: (u/W, v/H, depth/d_max).
pub fn project_keypoint(cam: &CameraView, x_world: &Vec3<f64>) -> [f64; 3] {
    let k = &cam.intrinsics;
    let x = cam.extrinsics.world_to_camera(x_world);
    if x.z() <= 1e-6 {
        // Behind the camera: report it at the far plane and frame edge.
        let su = if x.x() >= 0.0 {
            COORD_BOUND
        } else {
            -COORD_BOUND
        };
        let sv = if x.y() >= 0.0 {
            COORD_BOUND
        } else {
            -COORD_BOUND
        };
        return [su, sv, 1.0];
    }
    let u = k.focal * x.x() / x.z() + k.cu;
    let v = k.focal * x.y() / x.z() + k.cv;
    [
        (u / k.width).clamp(-COORD_BOUND, COORD_BOUND),
        (v / k.height).clamp(-COORD_BOUND, COORD_BOUND),
        (x.z().min(DEPTH_MAX)) / DEPTH_MAX,
    ]
}

pub fn render_observation(state: &SimState, cam: &CameraView) -> Observation {
    let mut out = [0.0; OBS_DIM];
    for (i, kp) in state.keypoints().iter().enumerate() {
        out[3 * i..3 * i + 3].copy_from_slice(&project_keypoint(cam, kp));
    }
    out[9] = if state.gripper_closed { 1.0 } else { 0.0 };
    Observation(out)
}

/// Rotation of a camera about the workspace center.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigRotation {
    pub axis: Vec3<f64>,
    pub degrees: f64,
}

/// Cameras obtained by rotating `base` about the workspace center (the
/// world origin). Each derived camera keeps the center on its optical axis.
pub fn make_rig(base: &CameraView, rotations: &[(String, RigRotation)]) -> Vec<CameraView> {
    let mut rig = vec![base.clone()];
    for (name, rot) in rotations {
        let g = Rotation::about_axis(rot.axis, rot.degrees.to_radians());
        let ext = &base.extrinsics;
        let center = g.apply(&ext.translation);
        let rotation = ext.rotation.compose(&g.transpose());
        rig.push(CameraView {
            name: name.clone(),
            extrinsics: Pose::new(rotation, center),
            intrinsics: base.intrinsics,
        });
    }
    rig
}

/// Left/right (about the vertical) and up/down (about the horizontal axis
/// orthogonal to the view direction) rotations of `degrees`, named
/// `FL, FR, FU, FD`.
pub fn standard_rotations(base: &CameraView, degrees: f64) -> Vec<(String, RigRotation)> {
    let vertical = Vec3::new(0.0, 0.0, 1.0);
    let pitch_axis = vertical.cross(&base.extrinsics.translation).normalized();
    let suffix = if (degrees - 15.0).abs() < 1e-12 {
        String::new()
    } else {
        format!("{}", degrees)
    };
    let r = |name: &str, axis: Vec3<f64>, deg: f64| {
        (
            format!("{name}{suffix}"),
            RigRotation { axis, degrees: deg },
        )
    };
    vec![
        r("FL", vertical, degrees),
        r("FR", vertical, -degrees),
        // Negative pitch about this axis raises the camera.
        r("FU", pitch_axis, -degrees),
        r("FD", pitch_axis, degrees),
    ]
}

/// The five-camera rig `F, FL, FR, FU, FD`.
pub fn standard_rig(degrees: f64) -> Vec<CameraView> {
    let base = CameraView::front();
    let rots = standard_rotations(&base, degrees);
    make_rig(&base, &rots)
}

/// Waypoint controller for both tasks. Deterministic given `rng`.
pub fn scripted_expert<R: Rng + ?Sized>(
    state: &SimState,
    task: &TaskSpec,
    noise_scale: f64,
    rng: &mut R,
) -> Action<f64> {
    let eef = state.eef_pose.translation;
    let toward = |goal: Vec3<f64>| (goal - eef) * EXPERT_GAIN;
    let (mut dp, gripper) = match task.task {
        Task::Reach => (toward(state.target_pos), 0.0),
        Task::PickLift => {
            let obj = state.object_pos;
            if state.object_held {
                let lift_z = TABLE_Z + task.lift_height + LIFT_CLEARANCE;
                (toward(Vec3::new(eef.x(), eef.y(), lift_z)), 1.0)
            } else {
                let above = Vec3::new(obj.x(), obj.y(), obj.z() + APPROACH_HEIGHT);
                let horizontal = ((eef.x() - obj.x()).powi(2) + (eef.y() - obj.y()).powi(2)).sqrt();
                if state.gripper_closed {
                    // Missed grasp: open and back off.
                    (toward(above), 0.0)
                } else if horizontal > ALIGN_TOLERANCE && eef.z() - obj.z() < APPROACH_HEIGHT * 0.5
                {
                    // Too low while misaligned: rise before moving sideways.
                    (toward(Vec3::new(eef.x(), eef.y(), above.z())), 0.0)
                } else if horizontal > ALIGN_TOLERANCE {
                    (toward(above), 0.0)
                } else if (eef - obj).norm() > GRASP_TOLERANCE {
                    (toward(obj), 0.0)
                } else {
                    (Vec3::zero(), 1.0)
                }
            }
        }
    };
    if noise_scale > 0.0 {
        let n = Vec3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        dp += n * noise_scale;
    }
    let w = Vec3::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    ) * EXPERT_ROTATION_NOISE;
    let dr = Rotation::from_axis_angle(w).unwrap_or_default();
    clip_action(&Action::new(dp, dr, gripper)).0
}

/// Runs the scripted expert from `reset(seed)` and records every view.
/// Returns `None` if the expert did not succeed within the step limit.
pub fn collect_demo(
    task: &TaskSpec,
    rig: &[CameraView],
    seed: u64,
    noise_scale: f64,
    id: u64,
) -> Option<Trajectory> {
    let mut state = reset(task, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut poses = Vec::new();
    let mut actions = Vec::new();
    let mut obs: Vec<Vec<Observation>> = vec![Vec::new(); rig.len()];
    loop {
        let a = scripted_expert(&state, task, noise_scale, &mut rng);
        poses.push(state.eef_pose);
        for (stream, cam) in obs.iter_mut().zip(rig) {
            stream.push(render_observation(&state, cam));
        }
        let (next, done) = step(&state, task, &a);
        // Record the motion that happened, which differs from the command
        // when the workspace bounds stop the arm.
        let realized = next.eef_pose.translation - state.eef_pose.translation;
        actions.push(Action::new(realized, a.dr, a.gripper));
        state = next;
        if done {
            break;
        }
    }
    if !state.is_success(task) {
        return None;
    }
    Some(Trajectory {
        id,
        eef_poses: poses,
        actions,
        observations: obs,
    })
}

/// Collects `n` successful demonstrations; seeds are drawn deterministically
/// starting from `seed`, skipping the rare unsuccessful expert runs.
pub fn collect_demos(
    task: &TaskSpec,
    rig: &[CameraView],
    n: usize,
    seed: u64,
    noise_scale: f64,
) -> Result<Vec<Trajectory>> {
    let mut out = Vec::with_capacity(n);
    let mut attempt = 0u64;
    while out.len() < n {
        if attempt > 10 * n as u64 + 100 {
            return Err(Error::Config(format!(
                "scripted expert failed too often ({} of {attempt} succeeded)",
                out.len()
            )));
        }
        let episode_seed = seed.wrapping_mul(1_000_003).wrapping_add(attempt);
        if let Some(t) = collect_demo(task, rig, episode_seed, noise_scale, out.len() as u64) {
            out.push(t);
        }
        attempt += 1;
    }
    Ok(out)
}

/// One replanning request of a batched rollout.
pub struct PlanRequest<'a> {
    /// Index into the seeds passed to [`Policy::begin`].
    pub episode: usize,
    /// One stacked observation vector (oldest first) per inference view.
    pub observations: &'a [Vec<f64>],
    pub state: &'a SimState,
}

/// Anything that maps observations to Base-space action chunks.
///
/// Policies see a batch of independent episodes at once so that neural
/// policies can evaluate them together; results must not depend on how
/// episodes are batched.
pub trait Policy {
    fn begin(&mut self, episode_seeds: &[u64]);
    fn plan(&mut self, requests: &[PlanRequest<'_>]) -> Vec<Result<Vec<Action<f64>>>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub task: TaskSpec,
    pub n_obs: usize,
    pub horizon: usize,
    /// Actions executed from each predicted chunk before replanning.
    pub execute: usize,
}

impl RolloutConfig {
    pub fn new(task: TaskSpec) -> Self {
        RolloutConfig {
            task,
            n_obs: 2,
            horizon: 8,
            execute: 4,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub success: bool,
    pub steps: usize,
    /// The policy produced a non-finite action or failed to sample.
    pub nonfinite: bool,
    pub clipped_actions: usize,
}

struct Episode {
    state: SimState,
    history: Vec<VecDeque<Observation>>,
    queue: VecDeque<Action<f64>>,
    outcome: Option<EpisodeOutcome>,
}

impl Episode {
    fn stacked(&self) -> Vec<Vec<f64>> {
        self.history
            .iter()
            .map(|h| h.iter().flat_map(|o| o.0).collect())
            .collect()
    }

    fn finish(&mut self, task: &TaskSpec, nonfinite: bool) {
        self.outcome = Some(EpisodeOutcome {
            success: !nonfinite && self.state.is_success(task),
            steps: self.state.step_count,
            nonfinite,
            clipped_actions: self.state.clipped_actions,
        });
    }
}

/// Runs one episode per seed in lockstep with receding-horizon execution.
pub fn evaluate<P: Policy + ?Sized>(
    policy: &mut P,
    cfg: &RolloutConfig,
    rig: &[CameraView],
    views: &[usize],
    seeds: &[u64],
) -> Result<Vec<EpisodeOutcome>> {
    if views.is_empty() || views.iter().any(|&v| v >= rig.len()) {
        return Err(Error::Config(format!(
            "inference views {views:?} invalid for a rig of {} cameras",
            rig.len()
        )));
    }
    if cfg.n_obs == 0 || cfg.execute == 0 || cfg.execute > cfg.horizon {
        return Err(Error::Config(format!("invalid rollout config {cfg:?}")));
    }
    policy.begin(seeds);
    let mut episodes: Vec<Episode> = seeds
        .iter()
        .map(|&s| {
            let state = reset(&cfg.task, s);
            let history = views
                .iter()
                .map(|&v| {
                    let o = render_observation(&state, &rig[v]);
                    std::iter::repeat_n(o, cfg.n_obs).collect()
                })
                .collect();
            Episode {
                state,
                history,
                queue: VecDeque::new(),
                outcome: None,
            }
        })
        .collect();

    loop {
        let needs_plan: Vec<usize> = (0..episodes.len())
            .filter(|&i| episodes[i].outcome.is_none() && episodes[i].queue.is_empty())
            .collect();
        if !needs_plan.is_empty() {
            let stacks: Vec<Vec<Vec<f64>>> =
                needs_plan.iter().map(|&i| episodes[i].stacked()).collect();
            let requests: Vec<PlanRequest<'_>> = needs_plan
                .iter()
                .zip(&stacks)
                .map(|(&i, obs)| PlanRequest {
                    episode: i,
                    observations: obs,
                    state: &episodes[i].state,
                })
                .collect();
            let plans = policy.plan(&requests);
            drop(requests);
            for (&i, plan) in needs_plan.iter().zip(plans) {
                let ep = &mut episodes[i];
                match plan {
                    Ok(chunk)
                        if chunk.iter().take(cfg.execute).all(|a| a.is_finite())
                            && !chunk.is_empty() =>
                    {
                        ep.queue.extend(chunk.into_iter().take(cfg.execute));
                    }
                    _ => ep.finish(&cfg.task, true),
                }
            }
        }
        let mut active = 0;
        for ep in episodes.iter_mut().filter(|e| e.outcome.is_none()) {
            let a = ep.queue.pop_front().expect("planned");
            let (next, done) = step(&ep.state, &cfg.task, &a);
            ep.state = next;
            if done {
                ep.finish(&cfg.task, false);
                continue;
            }
            active += 1;
            for (h, &v) in ep.history.iter_mut().zip(views) {
                h.pop_front();
                h.push_back(render_observation(&ep.state, &rig[v]));
            }
        }
        if active == 0 && episodes.iter().all(|e| e.outcome.is_some()) {
            break;
        }
    }
    Ok(episodes
        .into_iter()
        .map(|e| e.outcome.expect("finished"))
        .collect())
}

/// Runs a single episode.
pub fn rollout<P: Policy + ?Sized>(
    policy: &mut P,
    cfg: &RolloutConfig,
    rig: &[CameraView],
    views: &[usize],
    seed: u64,
) -> Result<EpisodeOutcome> {
    Ok(evaluate(policy, cfg, rig, views, &[seed])?[0])
}

/// The scripted expert as a chunking policy: each chunk is obtained by
/// simulating the expert forward from the current state.
pub struct ExpertPolicy {
    pub task: TaskSpec,
    pub noise_scale: f64,
    pub horizon: usize,
    rngs: Vec<ChaCha8Rng>,
}

impl ExpertPolicy {
    pub fn new(task: TaskSpec, noise_scale: f64, horizon: usize) -> Self {
        ExpertPolicy {
            task,
            noise_scale,
            horizon,
            rngs: Vec::new(),
        }
    }
}

impl Policy for ExpertPolicy {
    fn begin(&mut self, episode_seeds: &[u64]) {
        self.rngs = episode_seeds
            .iter()
            .map(|&s| ChaCha8Rng::seed_from_u64(s))
            .collect();
    }

    fn plan(&mut self, requests: &[PlanRequest<'_>]) -> Vec<Result<Vec<Action<f64>>>> {
        requests
            .iter()
            .map(|r| {
                let rng = &mut self.rngs[r.episode];
                let mut s = r.state.clone();
                let mut chunk = Vec::with_capacity(self.horizon);
                for _ in 0..self.horizon {
                    let a = scripted_expert(&s, &self.task, self.noise_scale, rng);
                    s = step(&s, &self.task, &a).0;
                    chunk.push(a);
                }
                Ok(chunk)
            })
            .collect()
    }
}

/// Uniformly random actions within the clip bounds.
pub struct RandomPolicy {
    pub horizon: usize,
    rngs: Vec<ChaCha8Rng>,
}

impl RandomPolicy {
    pub fn new(horizon: usize) -> Self {
        RandomPolicy {
            horizon,
            rngs: Vec::new(),
        }
    }
}

impl Policy for RandomPolicy {
    fn begin(&mut self, episode_seeds: &[u64]) {
        self.rngs = episode_seeds
            .iter()
            .map(|&s| ChaCha8Rng::seed_from_u64(s ^ 0x5eed))
            .collect();
    }

    fn plan(&mut self, requests: &[PlanRequest<'_>]) -> Vec<Result<Vec<Action<f64>>>> {
        requests
            .iter()
            .map(|r| {
                let rng = &mut self.rngs[r.episode];
                Ok((0..self.horizon)
                    .map(|_| {
                        let m = MAX_STEP_TRANSLATION;
                        let dp = Vec3::new(
                            rng.random_range(-m..m),
                            rng.random_range(-m..m),
                            rng.random_range(-m..m),
                        );
                        let w = Vec3::new(
                            rng.random_range(-0.1..0.1),
                            rng.random_range(-0.1..0.1),
                            rng.random_range(-0.1..0.1),
                        );
                        let g = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
                        Action::new(dp, Rotation::from_axis_angle(w).unwrap_or_default(), g)
                    })
                    .collect())
            })
            .collect()
    }
}

/// Checks the workspace invariants of a state.
pub fn state_is_consistent(s: &SimState) -> bool {
    s.keypoints().iter().all(in_workspace) && (!s.object_held || s.gripper_closed)
}
