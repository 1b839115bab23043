//! Demonstrations, object-centric subtasks and trajectory expansion.
//!
//! A demonstration is split per arm into subtasks, each anchored to one
//! object. Expansion holds every tool pose fixed in its anchor's frame,
//! moves the anchors to a newly sampled scene and recovers joints by IK.
//! Candidates are then checked by kinematic validators; there is no
//! physics simulation.

mod batch;
pub mod episode;
mod validate;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{express_in_frame, interpolate, GeometryError, Pose, UnitQuat, Vec3};
use crate::kinematics::{ik_dls, Arm, ArmAction, BimanualRobot, IkError, IkParams, KinematicsError};
use crate::raster::{RasterError, RgbImage};

pub use batch::{expand_batch, Accepted, BatchOptions, BatchReport, CandidateProvenance, SourceTask};
pub use validate::{
    validate, EndPose, IkResidual, JointLimits, ValidationContext, Validator, Verdict, Violation, Workspace,
};

pub type ActionPair = (ArmAction<f64>, ArmAction<f64>);

/// Object poses (world frame) keyed by object id.
pub type SceneConfig = BTreeMap<String, Pose<f64>>;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("trajectory needs at least 2 timesteps, got {0}")]
    TooShort(usize),
    #[error("{what} has length {got}, expected {expected}")]
    Length { what: String, expected: usize, got: usize },
    #[error("scene pose of {0:?} differs from its track at t=1")]
    SceneMismatch(String),
    #[error("{arm} subtasks overlap at t={t}")]
    Overlap { arm: Arm, t: usize },
    #[error("{arm} subtasks leave t={t} uncovered")]
    Gap { arm: Arm, t: usize },
    #[error("invalid subtask bounds [{start_t}, {end_t}] for T={len}")]
    Bounds { start_t: usize, end_t: usize, len: usize },
    #[error("unknown object {0:?}")]
    UnknownObject(String),
    #[error("negative sampler range for {0:?}")]
    BadRange(String),
    #[error("ik failed at t={t} ({arm}), residual {residual:.6} m")]
    IkFailure { t: usize, arm: Arm, residual: f64 },
    #[error("attempt budget exhausted: {accepted} of {requested} accepted after {attempts} attempts")]
    BudgetExhausted { requested: usize, accepted: usize, attempts: usize, report: Box<BatchReport> },
    #[error("episode format: {0}")]
    Format(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A camera frame, either on disk or held in memory.
#[derive(Debug, Clone, PartialEq)]
pub enum FrameRef {
    Path(PathBuf),
    Image(Arc<RgbImage>),
}

impl FrameRef {
    pub fn load(&self) -> Result<RgbImage, TrajectoryError> {
        match self {
            FrameRef::Path(p) => Ok(RgbImage::load_png(p)?),
            FrameRef::Image(img) => Ok((**img).clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Demonstration {
    pub id: String,
    /// Name of the robot description the joints refer to.
    pub robot: String,
    /// Camera name to frames; each stream is empty or has length T.
    pub camera_streams: BTreeMap<String, Vec<FrameRef>>,
    pub actions: Vec<ActionPair>,
    pub object_track: BTreeMap<String, Vec<Pose<f64>>>,
    /// Object poses at t=1.
    pub scene: SceneConfig,
    pub meta: BTreeMap<String, String>,
}

impl Demonstration {
    /// Builds an action-only demonstration; the scene is read off the
    /// object track at t=1.
    pub fn new(
        id: impl Into<String>,
        robot: impl Into<String>,
        actions: Vec<ActionPair>,
        object_track: BTreeMap<String, Vec<Pose<f64>>>,
    ) -> Result<Self, TrajectoryError> {
        let scene = object_track.iter().filter_map(|(k, v)| v.first().map(|p| (k.clone(), *p))).collect();
        let demo = Self {
            id: id.into(),
            robot: robot.into(),
            camera_streams: BTreeMap::new(),
            actions,
            object_track,
            scene,
            meta: BTreeMap::new(),
        };
        demo.check()?;
        Ok(demo)
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn check(&self) -> Result<(), TrajectoryError> {
        let n = self.len();
        if n < 2 {
            return Err(TrajectoryError::TooShort(n));
        }
        for (name, frames) in &self.camera_streams {
            if !frames.is_empty() && frames.len() != n {
                return Err(TrajectoryError::Length {
                    what: format!("camera stream {name:?}"),
                    expected: n,
                    got: frames.len(),
                });
            }
        }
        for (id, track) in &self.object_track {
            if track.len() != n {
                return Err(TrajectoryError::Length {
                    what: format!("object track {id:?}"),
                    expected: n,
                    got: track.len(),
                });
            }
        }
        for (id, pose) in &self.scene {
            let first = self.object_track.get(id).ok_or_else(|| TrajectoryError::UnknownObject(id.clone()))?;
            if !first[0].approx_eq(pose, 1e-9) {
                return Err(TrajectoryError::SceneMismatch(id.clone()));
            }
        }
        Ok(())
    }

    /// Object poses at 1-based timestep `t`.
    pub fn objects_at(&self, t: usize) -> BTreeMap<String, Pose<f64>> {
        self.object_track.iter().map(|(k, v)| (k.clone(), v[t - 1])).collect()
    }

    /// Object poses for every timestep.
    pub fn object_frames(&self) -> Vec<BTreeMap<String, Pose<f64>>> {
        (1..=self.len()).map(|t| self.objects_at(t)).collect()
    }

    pub fn arm_actions(&self, arm: Arm) -> impl Iterator<Item = &ArmAction<f64>> {
        self.actions.iter().map(move |(l, r)| match arm {
            Arm::Left => l,
            Arm::Right => r,
        })
    }

    /// World tool poses of one arm over the whole trajectory.
    pub fn tool_poses(&self, robot: &BimanualRobot<f64>, arm: Arm) -> Result<Vec<Pose<f64>>, TrajectoryError> {
        let chain = robot.arm(arm);
        self.arm_actions(arm).map(|a| Ok(chain.fk(&a.joints)?)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtaskAnnotation {
    pub arm: Arm,
    /// 1-based, inclusive.
    pub start_t: usize,
    /// 1-based, inclusive.
    pub end_t: usize,
    pub anchor_object: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subtask {
    pub arm: Arm,
    pub start_t: usize,
    pub end_t: usize,
    pub anchor_object: String,
    pub actions: Vec<ArmAction<f64>>,
    /// Anchor pose at `start_t`.
    pub anchor_pose: Pose<f64>,
    /// Tool pose in the anchor frame, one per timestep of the subtask.
    pub object_frame_poses: Vec<Pose<f64>>,
}

impl Subtask {
    pub fn len(&self) -> usize {
        self.end_t - self.start_t + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Segmentation {
    pub left: Vec<Subtask>,
    pub right: Vec<Subtask>,
}

impl Segmentation {
    pub fn arm(&self, arm: Arm) -> &[Subtask] {
        match arm {
            Arm::Left => &self.left,
            Arm::Right => &self.right,
        }
    }
}

/// Checks bounds and per-arm coverage. An arm without annotations is
/// left unanchored; an annotated arm must be covered exactly once over
/// `[1, T]`.
pub fn check_annotations(annotations: &[SubtaskAnnotation], len: usize) -> Result<(), TrajectoryError> {
    for a in annotations {
        if !(1 <= a.start_t && a.start_t < a.end_t && a.end_t <= len) {
            return Err(TrajectoryError::Bounds { start_t: a.start_t, end_t: a.end_t, len });
        }
    }
    for arm in Arm::BOTH {
        let mut spans: Vec<(usize, usize)> =
            annotations.iter().filter(|a| a.arm == arm).map(|a| (a.start_t, a.end_t)).collect();
        if spans.is_empty() {
            continue;
        }
        spans.sort_unstable();
        let mut next = 1;
        for (s, e) in spans {
            if s < next {
                return Err(TrajectoryError::Overlap { arm, t: s });
            }
            if s > next {
                return Err(TrajectoryError::Gap { arm, t: next });
            }
            next = e + 1;
        }
        if next != len + 1 {
            return Err(TrajectoryError::Gap { arm, t: next });
        }
    }
    Ok(())
}

pub fn segment(
    demo: &Demonstration,
    robot: &BimanualRobot<f64>,
    annotations: &[SubtaskAnnotation],
) -> Result<Segmentation, TrajectoryError> {
    demo.check()?;
    check_annotations(annotations, demo.len())?;
    let mut out = Segmentation::default();
    let mut sorted: Vec<&SubtaskAnnotation> = annotations.iter().collect();
    sorted.sort_by_key(|a| (a.arm, a.start_t));
    for a in sorted {
        let track = demo
            .object_track
            .get(&a.anchor_object)
            .ok_or_else(|| TrajectoryError::UnknownObject(a.anchor_object.clone()))?;
        let anchor_pose = track[a.start_t - 1];
        let chain = robot.arm(a.arm);
        let actions: Vec<ArmAction<f64>> =
            demo.arm_actions(a.arm).skip(a.start_t - 1).take(a.end_t - a.start_t + 1).cloned().collect();
        let object_frame_poses = actions
            .iter()
            .map(|act| Ok(express_in_frame(&chain.fk(&act.joints)?, &anchor_pose)))
            .collect::<Result<Vec<_>, TrajectoryError>>()?;
        let sub = Subtask {
            arm: a.arm,
            start_t: a.start_t,
            end_t: a.end_t,
            anchor_object: a.anchor_object.clone(),
            actions,
            anchor_pose,
            object_frame_poses,
        };
        match a.arm {
            Arm::Left => out.left.push(sub),
            Arm::Right => out.right.push(sub),
        }
    }
    Ok(out)
}

/// Uniform perturbation bounds for one object: translation `±dx, ±dy, ±dz`
/// meters and yaw `±yaw` radians about world z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRange {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub yaw: f64,
}

impl Default for PoseRange {
    fn default() -> Self {
        Self { dx: 0.05, dy: 0.05, dz: 0.0, yaw: 15f64.to_radians() }
    }
}

impl PoseRange {
    pub const ZERO: PoseRange = PoseRange { dx: 0.0, dy: 0.0, dz: 0.0, yaw: 0.0 };

    pub fn scaled(&self, k: f64) -> Self {
        Self { dx: self.dx * k, dy: self.dy * k, dz: self.dz * k, yaw: self.yaw * k }
    }
}

/// Per-object perturbation ranges; objects without an entry stay put.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseSampler {
    pub ranges: BTreeMap<String, PoseRange>,
}

impl PoseSampler {
    pub fn uniform<'a>(objects: impl IntoIterator<Item = &'a str>, range: PoseRange) -> Self {
        Self { ranges: objects.into_iter().map(|o| (o.to_string(), range)).collect() }
    }
}

/// Perturbs each sampled object independently. Every sampled object
/// consumes four draws `u` in `[-1, 1]` (in object-id order) and moves by
/// `u * range`, so shrinking the ranges shrinks each offset pointwise.
pub fn sample_scene(base: &SceneConfig, sampler: &PoseSampler, seed: u64) -> Result<SceneConfig, TrajectoryError> {
    for (id, r) in &sampler.ranges {
        if !base.contains_key(id) {
            return Err(TrajectoryError::UnknownObject(id.clone()));
        }
        if r.dx < 0.0 || r.dy < 0.0 || r.dz < 0.0 || r.yaw < 0.0 {
            return Err(TrajectoryError::BadRange(id.clone()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = base.clone();
    for (id, pose) in out.iter_mut() {
        let Some(r) = sampler.ranges.get(id) else {
            continue;
        };
        let mut u = [0.0; 4];
        for v in &mut u {
            *v = rng.random_range(-1.0..=1.0);
        }
        let yaw = u[3] * r.yaw;
        let position = pose.position + Vec3::new(u[0] * r.dx, u[1] * r.dy, u[2] * r.dz);
        let orientation = if yaw == 0.0 { pose.orientation } else { UnitQuat::rot_z(yaw).mul(&pose.orientation) };
        *pose = Pose::new(position, orientation);
    }
    Ok(out)
}

/// Default blend length for a subtask: `max(3, ceil(5% of its length))`,
/// capped at the subtask length.
pub fn default_blend_steps(subtask_len: usize) -> usize {
    3.max(subtask_len.div_ceil(20)).min(subtask_len)
}

/// An expanded trajectory plus per-step IK bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub demo: Demonstration,
    /// Tool position residual per timestep, `[left, right]`.
    pub residuals: Vec<[f64; 2]>,
    /// Whether each timestep's target was blended, `[left, right]`.
    pub blended: Vec<[bool; 2]>,
}

/// Rigid motion carrying `object` from its `demo` scene pose to its
/// `new_scene` pose; `None` when the object did not move.
fn object_motion(
    demo: &Demonstration,
    new_scene: &SceneConfig,
    object: &str,
) -> Result<Option<Pose<f64>>, TrajectoryError> {
    let old = demo.scene.get(object).ok_or_else(|| TrajectoryError::UnknownObject(object.into()))?;
    let new = new_scene.get(object).ok_or_else(|| TrajectoryError::UnknownObject(object.into()))?;
    Ok((old != new).then(|| new.compose(&old.inverse())))
}

fn apply(motion: &Option<Pose<f64>>, p: &Pose<f64>) -> Pose<f64> {
    match motion {
        Some(m) => m.compose(p),
        None => *p,
    }
}

/// Applies the expansion operator to one demonstration.
///
/// Subtask targets are `anchor'(start_t) ∘ object_frame_pose(t)`, where the
/// new anchor pose is the anchor's tracked pose moved rigidly with its
/// scene change. For every non-initial subtask, the first `blend_steps`
/// targets (default [`default_blend_steps`]) are interpolated from the
/// pose the previous anchor would have produced toward the new one, so an
/// unchanged scene leaves the path untouched. IK is seeded with the source
/// joints at t=1 and then with the previous solution. Unannotated arms
/// keep their source joints.
pub fn expand(
    demo: &Demonstration,
    robot: &BimanualRobot<f64>,
    annotations: &[SubtaskAnnotation],
    new_scene: &SceneConfig,
    ik: &IkParams<f64>,
    blend_steps: Option<usize>,
) -> Result<Candidate, TrajectoryError> {
    let seg = segment(demo, robot, annotations)?;
    let n = demo.len();
    let mut joints: [Vec<ArmAction<f64>>; 2] =
        [demo.arm_actions(Arm::Left).cloned().collect(), demo.arm_actions(Arm::Right).cloned().collect()];
    let mut residuals = vec![[0.0; 2]; n];
    let mut blended = vec![[false; 2]; n];

    for (k, arm) in Arm::BOTH.into_iter().enumerate() {
        let subtasks = seg.arm(arm);
        if subtasks.is_empty() {
            continue;
        }
        let chain = robot.arm(arm);
        let mut seed = joints[k][0].joints.clone();
        let mut prev_motion: Option<Option<Pose<f64>>> = None;
        for sub in subtasks {
            let motion = object_motion(demo, new_scene, &sub.anchor_object)?;
            let new_anchor = apply(&motion, &sub.anchor_pose);
            let b = prev_motion.map_or(0, |_| blend_steps.unwrap_or_else(|| default_blend_steps(sub.len())));
            for (i, rel) in sub.object_frame_poses.iter().enumerate() {
                let t = sub.start_t + i;
                let mut target = new_anchor.compose(rel);
                if let (Some(prev), true) = (&prev_motion, i < b) {
                    let held = apply(prev, &sub.anchor_pose).compose(rel);
                    target = interpolate(&held, &target, (i + 1) as f64 / (b + 1) as f64)?;
                    blended[t - 1][k] = true;
                }
                let sol = match ik_dls(chain, &target, &seed, ik) {
                    Ok(s) => s,
                    Err(IkError::NonConvergent(best)) => {
                        return Err(TrajectoryError::IkFailure { t, arm, residual: best.pos_residual })
                    }
                    Err(IkError::Input(e)) => return Err(e.into()),
                };
                residuals[t - 1][k] = sol.pos_residual;
                seed.clone_from(&sol.joints);
                joints[k][t - 1].joints = sol.joints;
            }
            prev_motion = Some(motion);
        }
    }

    let mut object_track = demo.object_track.clone();
    for (id, track) in object_track.iter_mut() {
        if new_scene.contains_key(id) {
            let motion = object_motion(demo, new_scene, id)?;
            for p in track.iter_mut() {
                *p = apply(&motion, p);
            }
        }
    }
    let [left, right] = joints;
    let actions = left.into_iter().zip(right).collect();
    let mut out = Demonstration::new(demo.id.clone(), demo.robot.clone(), actions, object_track)?;
    out.meta = demo.meta.clone();
    out.meta.insert("source".into(), demo.id.clone());
    Ok(Candidate { demo: out, residuals, blended })
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::kinematics::fixtures;

    /// A short pick-like motion for both arms around a "bowl" and a "cup".
    pub fn demo(len: usize) -> (Demonstration, Vec<SubtaskAnnotation>, BimanualRobot<f64>) {
        let robot = fixtures::bimanual_a();
        let base_l = [0.2, 0.7, 0.0, 1.5, 0.0, 0.9, 0.0];
        let base_r = [-0.2, 0.7, 0.0, 1.5, 0.0, 0.9, 0.0];
        let actions = (0..len)
            .map(|t| {
                let s = t as f64 / (len - 1) as f64;
                let l = base_l.iter().enumerate().map(|(j, v)| v + 0.15 * s * ((j % 3) as f64 - 1.0)).collect();
                let r = base_r.iter().enumerate().map(|(j, v)| v - 0.1 * s * ((j % 2) as f64)).collect();
                let g = if s < 0.5 { 1.0 } else { 0.0 };
                (ArmAction::new(l, g), ArmAction::new(r, 1.0 - g))
            })
            .collect();
        let bowl = Pose::new(Vec3::new(0.55, 0.2, 0.04), UnitQuat::rot_z(0.3));
        let cup = Pose::from_translation(0.5, -0.2, 0.05);
        let track = BTreeMap::from([("bowl".to_string(), vec![bowl; len]), ("cup".to_string(), vec![cup; len])]);
        let demo = Demonstration::new("demo", "bimanual_A", actions, track).unwrap();
        let half = len / 2;
        let ann = vec![
            SubtaskAnnotation { arm: Arm::Left, start_t: 1, end_t: half, anchor_object: "bowl".into() },
            SubtaskAnnotation { arm: Arm::Left, start_t: half + 1, end_t: len, anchor_object: "cup".into() },
            SubtaskAnnotation { arm: Arm::Right, start_t: 1, end_t: len, anchor_object: "cup".into() },
        ];
        (demo, ann, robot)
    }
}
