//! Serial-chain robot models, forward kinematics, damped-least-squares
//! inverse kinematics and bimanual retargeting.
//!
//! Robot descriptions are small JSON documents: a base pose, an ordered
//! list of joints (origin pose relative to the previous joint frame, unit
//! axis, kind, limits) and a tool offset. Two 7-DoF bimanual fixtures
//! (`bimanual_A`, `bimanual_B`) are bundled; `B` has 5% longer links.

mod ik;
mod linalg;
mod retarget;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Pose, UnitQuat, Vec3};
use crate::scalar::Real;

pub use ik::{ik_dls, IkError, IkParams, IkSolution};
pub use retarget::{retarget_trajectory, RetargetError, Retargeted};

#[derive(Debug, Error)]
pub enum KinematicsError {
    #[error("expected {expected} joint values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite joint value at index {0}")]
    NonFinite(usize),
    #[error("non-finite target pose")]
    NonFiniteTarget,
    #[error("invalid chain: {0}")]
    InvalidChain(String),
    #[error("invalid robot description: {0}")]
    Description(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Left,
    Right,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Left, Arm::Right];

    pub fn as_str(&self) -> &'static str {
        match self {
            Arm::Left => "left",
            Arm::Right => "right",
        }
    }
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Prismatic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct JointSpec<T> {
    pub name: String,
    pub kind: JointKind,
    /// Parent frame to joint frame at zero displacement.
    pub origin: Pose<T>,
    pub axis: Vec3<T>,
    pub limits: [T; 2],
}

impl<T: Real> JointSpec<T> {
    pub fn clamp(&self, v: T) -> T {
        v.max(self.limits[0]).min(self.limits[1])
    }

    pub fn contains(&self, v: T) -> bool {
        v >= self.limits[0] && v <= self.limits[1]
    }

    pub fn mid(&self) -> T {
        (self.limits[0] + self.limits[1]) / T::lit(2.0)
    }

    fn motion(&self, v: T) -> Pose<T> {
        match self.kind {
            JointKind::Revolute => Pose::from_rotation(UnitQuat::from_axis_angle(&self.axis, v)),
            JointKind::Prismatic => Pose::new(self.axis.scale(v), UnitQuat::identity()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", try_from = "RawChain<T>")]
pub struct SerialChain<T> {
    pub base: Pose<T>,
    pub joints: Vec<JointSpec<T>>,
    pub ee_offset: Pose<T>,
}

#[derive(Deserialize)]
#[serde(bound = "T: Real")]
struct RawChain<T> {
    base: Pose<T>,
    joints: Vec<JointSpec<T>>,
    ee_offset: Pose<T>,
}

impl<T: Real> TryFrom<RawChain<T>> for SerialChain<T> {
    type Error = KinematicsError;
    fn try_from(raw: RawChain<T>) -> Result<Self, Self::Error> {
        SerialChain::new(raw.base, raw.joints, raw.ee_offset)
    }
}

/// World-frame placement of one joint for a given configuration.
#[derive(Debug, Clone, Copy)]
pub struct JointFrame<T> {
    pub position: Vec3<T>,
    pub axis: Vec3<T>,
    pub kind: JointKind,
}

impl<T: Real> SerialChain<T> {
    pub fn new(base: Pose<T>, joints: Vec<JointSpec<T>>, ee_offset: Pose<T>) -> Result<Self, KinematicsError> {
        if joints.is_empty() {
            return Err(KinematicsError::InvalidChain("chain has no joints".into()));
        }
        let mut names = HashSet::new();
        for j in &joints {
            if !names.insert(j.name.as_str()) {
                return Err(KinematicsError::InvalidChain(format!("duplicate joint name {:?}", j.name)));
            }
            if (j.axis.norm() - T::one()).abs() > T::lit(1e-9) {
                return Err(KinematicsError::InvalidChain(format!("joint {:?} axis is not unit length", j.name)));
            }
            if !(j.limits[0] < j.limits[1]) {
                return Err(KinematicsError::InvalidChain(format!("joint {:?} limits must satisfy lo < hi", j.name)));
            }
        }
        Ok(Self { base, joints, ee_offset })
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn mid_configuration(&self) -> Vec<T> {
        self.joints.iter().map(JointSpec::mid).collect()
    }

    pub fn within_limits(&self, q: &[T]) -> bool {
        q.len() == self.dof() && self.joints.iter().zip(q).all(|(j, &v)| j.contains(v))
    }

    pub fn clamp_in_place(&self, q: &mut [T]) {
        for (j, v) in self.joints.iter().zip(q.iter_mut()) {
            *v = j.clamp(*v);
        }
    }

    fn check(&self, q: &[T]) -> Result<(), KinematicsError> {
        if q.len() != self.dof() {
            return Err(KinematicsError::LengthMismatch { expected: self.dof(), got: q.len() });
        }
        if let Some(i) = q.iter().position(|v| !v.is_finite()) {
            return Err(KinematicsError::NonFinite(i));
        }
        Ok(())
    }

    /// World pose of the tool frame.
    pub fn fk(&self, q: &[T]) -> Result<Pose<T>, KinematicsError> {
        self.check(q)?;
        Ok(self.fk_unchecked(q))
    }

    pub(crate) fn fk_unchecked(&self, q: &[T]) -> Pose<T> {
        let mut t = self.base;
        for (j, &v) in self.joints.iter().zip(q) {
            t = t.compose(&j.origin).compose(&j.motion(v));
        }
        t.compose(&self.ee_offset)
    }

    /// Joint frames (before each joint's own motion) plus the tool pose.
    pub fn frames(&self, q: &[T]) -> Result<(Vec<JointFrame<T>>, Pose<T>), KinematicsError> {
        self.check(q)?;
        Ok(self.frames_unchecked(q))
    }

    pub(crate) fn frames_unchecked(&self, q: &[T]) -> (Vec<JointFrame<T>>, Pose<T>) {
        let mut t = self.base;
        let mut out = Vec::with_capacity(self.dof());
        for (j, &v) in self.joints.iter().zip(q) {
            t = t.compose(&j.origin);
            out.push(JointFrame { position: t.position, axis: t.orientation.rotate(&j.axis), kind: j.kind });
            t = t.compose(&j.motion(v));
        }
        (out, t.compose(&self.ee_offset))
    }

    /// Geometric Jacobian (rows: linear xyz, angular xyz) and the tool pose.
    pub fn jacobian(&self, q: &[T]) -> Result<(Vec<[T; 6]>, Pose<T>), KinematicsError> {
        self.check(q)?;
        Ok(self.jacobian_unchecked(q))
    }

    /// Columns of the Jacobian, one `[vx, vy, vz, wx, wy, wz]` per joint.
    pub(crate) fn jacobian_unchecked(&self, q: &[T]) -> (Vec<[T; 6]>, Pose<T>) {
        let (frames, tool) = self.frames_unchecked(q);
        let cols = frames
            .iter()
            .map(|f| match f.kind {
                JointKind::Revolute => {
                    let lin = f.axis.cross(&(tool.position - f.position));
                    [lin.x, lin.y, lin.z, f.axis.x, f.axis.y, f.axis.z]
                }
                JointKind::Prismatic => {
                    let z = T::zero();
                    [f.axis.x, f.axis.y, f.axis.z, z, z, z]
                }
            })
            .collect();
        (cols, tool)
    }
}

pub fn fk<T: Real>(chain: &SerialChain<T>, joints: &[T]) -> Result<Pose<T>, KinematicsError> {
    chain.fk(joints)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", try_from = "RawRobot<T>")]
pub struct BimanualRobot<T> {
    pub name: String,
    pub left: SerialChain<T>,
    pub right: SerialChain<T>,
    /// `[closed, open]` finger separation in meters.
    pub gripper_range: [T; 2],
}

#[derive(Deserialize)]
#[serde(bound = "T: Real")]
struct RawRobot<T> {
    name: String,
    left: SerialChain<T>,
    right: SerialChain<T>,
    gripper_range: [T; 2],
}

impl<T: Real> TryFrom<RawRobot<T>> for BimanualRobot<T> {
    type Error = KinematicsError;
    fn try_from(r: RawRobot<T>) -> Result<Self, Self::Error> {
        if !(r.gripper_range[0] < r.gripper_range[1]) {
            return Err(KinematicsError::Description("gripper_range must be [closed, open] with closed < open".into()));
        }
        Ok(Self { name: r.name, left: r.left, right: r.right, gripper_range: r.gripper_range })
    }
}

impl<T: Real> BimanualRobot<T> {
    pub fn arm(&self, arm: Arm) -> &SerialChain<T> {
        match arm {
            Arm::Left => &self.left,
            Arm::Right => &self.right,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, KinematicsError> {
        serde_json::from_str(text).map_err(|e| KinematicsError::Description(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, KinematicsError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("robot serializes")
    }

    /// Finger separation in meters for a normalized gripper command.
    pub fn gripper_width(&self, normalized: T) -> T {
        let [c, o] = self.gripper_range;
        c + (o - c) * normalized
    }
}

/// One arm's command: joint targets plus normalized gripper opening.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct ArmAction<T> {
    pub joints: Vec<T>,
    pub gripper: T,
}

impl<T: Real> ArmAction<T> {
    pub fn new(joints: Vec<T>, gripper: T) -> Self {
        Self { joints, gripper }
    }

    pub fn is_valid_for(&self, chain: &SerialChain<T>) -> bool {
        chain.within_limits(&self.joints) && self.gripper >= T::zero() && self.gripper <= T::one()
    }
}

pub mod fixtures {
    //! Bundled robot descriptions.

    use super::BimanualRobot;

    pub const BIMANUAL_A_JSON: &str = include_str!("../../fixtures/robots/bimanual_A.json");
    pub const BIMANUAL_B_JSON: &str = include_str!("../../fixtures/robots/bimanual_B.json");

    pub fn bimanual_a() -> BimanualRobot<f64> {
        BimanualRobot::from_json(BIMANUAL_A_JSON).expect("bundled fixture parses")
    }

    pub fn bimanual_b() -> BimanualRobot<f64> {
        BimanualRobot::from_json(BIMANUAL_B_JSON).expect("bundled fixture parses")
    }

    pub fn by_name(name: &str) -> Option<BimanualRobot<f64>> {
        match name {
            "bimanual_A" => Some(bimanual_a()),
            "bimanual_B" => Some(bimanual_b()),
            _ => None,
        }
    }
}
