//! Expand a handful of bimanual robot demonstrations into a large,
//! action-labeled synthetic dataset.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod augment;
pub mod dataset;
pub mod edgecontrol;
pub mod genclient;
pub mod geometry;
pub mod kinematics;
pub mod pipeline;
pub mod raster;
pub mod render;
pub mod scalar;
pub mod seed;
pub mod trajectory;
pub mod viewcomposer;

pub use scalar::Real;

pub type Vec3 = geometry::Vec3<f64>;
pub type UnitQuat = geometry::UnitQuat<f64>;
pub type Pose = geometry::Pose<f64>;
pub type Pose32 = geometry::Pose<f32>;
pub type SerialChain = kinematics::SerialChain<f64>;
pub type BimanualRobot = kinematics::BimanualRobot<f64>;
pub type ArmAction = kinematics::ArmAction<f64>;
pub type IkParams = kinematics::IkParams<f64>;
