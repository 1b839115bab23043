use thiserror::Error;

use super::{ik_dls, Arm, ArmAction, BimanualRobot, IkError, IkParams, KinematicsError};
use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum RetargetError {
    #[error("source action at t={timestep} ({arm}) is invalid: {source}")]
    InvalidSource { timestep: usize, arm: Arm, source: KinematicsError },
    #[error("retargeting failed at t={timestep} ({arm}), residual {residual:.6} m")]
    RetargetFailure {
        /// 1-based timestep.
        timestep: usize,
        arm: Arm,
        residual: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retargeted<T> {
    pub actions: Vec<(ArmAction<T>, ArmAction<T>)>,
    /// Tool position residual per step, `(left, right)`, meters.
    pub pos_residuals: Vec<(T, T)>,
}

/// Maps a bimanual joint trajectory onto another robot through tool poses.
///
/// Every step solves IK on the target arm toward the source tool pose,
/// seeded with the previous step's solution (the first step starts from
/// the target chain's mid-range configuration). Gripper values are copied
/// unchanged.
pub fn retarget_trajectory<T: Real>(
    source: &BimanualRobot<T>,
    target: &BimanualRobot<T>,
    actions: &[(ArmAction<T>, ArmAction<T>)],
    params: &IkParams<T>,
) -> Result<Retargeted<T>, RetargetError> {
    let mut seeds = [target.left.mid_configuration(), target.right.mid_configuration()];
    let mut out = Vec::with_capacity(actions.len());
    let mut residuals = Vec::with_capacity(actions.len());
    for (i, (left, right)) in actions.iter().enumerate() {
        let t = i + 1;
        let mut step: Vec<(ArmAction<T>, T)> = Vec::with_capacity(2);
        for (k, (arm, act)) in [(Arm::Left, left), (Arm::Right, right)].into_iter().enumerate() {
            let tool = source.arm(arm).fk(&act.joints).map_err(|source| RetargetError::InvalidSource {
                timestep: t,
                arm,
                source,
            })?;
            let sol = match ik_dls(target.arm(arm), &tool, &seeds[k], params) {
                Ok(sol) => sol,
                Err(IkError::NonConvergent(best)) => {
                    return Err(RetargetError::RetargetFailure {
                        timestep: t,
                        arm,
                        residual: best.pos_residual.as_f64(),
                    })
                }
                Err(IkError::Input(source)) => return Err(RetargetError::InvalidSource { timestep: t, arm, source }),
            };
            seeds[k].clone_from(&sol.joints);
            step.push((ArmAction::new(sol.joints, act.gripper), sol.pos_residual));
        }
        let (r, rr) = step.pop().expect("right");
        let (l, lr) = step.pop().expect("left");
        residuals.push((lr, rr));
        out.push((l, r));
    }
    Ok(Retargeted { actions: out, pos_residuals: residuals })
}

#[cfg(test)]
mod tests {
    use super::super::fixtures;
    use super::*;

    fn smooth_track(robot: &BimanualRobot<f64>, steps: usize) -> Vec<(ArmAction<f64>, ArmAction<f64>)> {
        let mid_l = robot.left.mid_configuration();
        let mid_r = robot.right.mid_configuration();
        (0..steps)
            .map(|t| {
                let ph = t as f64 / steps as f64 * std::f64::consts::TAU;
                let l = mid_l.iter().enumerate().map(|(j, m)| m + 0.25 * (ph + j as f64).sin()).collect();
                let r = mid_r.iter().enumerate().map(|(j, m)| m + 0.25 * (ph - j as f64).cos()).collect();
                let g = (t % 3) as f64 * 0.5;
                (ArmAction::new(l, g), ArmAction::new(r, 1.0 - g))
            })
            .collect()
    }

    #[test]
    fn identity_embodiment_keeps_tool_path() {
        let a = fixtures::bimanual_a();
        let track = smooth_track(&a, 20);
        let out = retarget_trajectory(&a, &a, &track, &IkParams::default()).unwrap();
        for ((src_l, src_r), (dst_l, dst_r)) in track.iter().zip(&out.actions) {
            let d = (a.left.fk(&src_l.joints).unwrap().position - a.left.fk(&dst_l.joints).unwrap().position).norm();
            assert!(d < 1e-3);
            let d = (a.right.fk(&src_r.joints).unwrap().position - a.right.fk(&dst_r.joints).unwrap().position).norm();
            assert!(d < 1e-3);
            assert_eq!(src_l.gripper.to_bits(), dst_l.gripper.to_bits());
            assert_eq!(src_r.gripper.to_bits(), dst_r.gripper.to_bits());
        }
    }

    #[test]
    fn gripper_track_copied_exactly() {
        let a = fixtures::bimanual_a();
        let b = fixtures::bimanual_b();
        let mut track = smooth_track(&a, 3);
        for (i, g) in [0.0, 0.5, 1.0].into_iter().enumerate() {
            track[i].0.gripper = g;
        }
        let out = retarget_trajectory(&a, &b, &track, &IkParams::default()).unwrap();
        let g: Vec<f64> = out.actions.iter().map(|(l, _)| l.gripper).collect();
        assert_eq!(g, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn unreachable_target_robot_fails_with_timestep() {
        let a = fixtures::bimanual_a();
        let mut tiny = fixtures::bimanual_a();
        for chain in [&mut tiny.left, &mut tiny.right] {
            for j in chain.joints.iter_mut() {
                j.origin.position = j.origin.position.scale(0.3);
            }
            chain.ee_offset.position = chain.ee_offset.position.scale(0.3);
        }
        let track = smooth_track(&a, 5);
        let err = retarget_trajectory(&a, &tiny, &track, &IkParams::default()).unwrap_err();
        match err {
            RetargetError::RetargetFailure { timestep, arm, residual } => {
                assert_eq!(timestep, 1);
                assert_eq!(arm, Arm::Left);
                assert!(residual > 0.1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_source_length_is_reported() {
        let a = fixtures::bimanual_a();
        let track = vec![(ArmAction::new(vec![0.0; 3], 0.0), ArmAction::new(vec![0.0; 7], 0.0))];
        assert!(matches!(
            retarget_trajectory(&a, &a, &track, &IkParams::default()),
            Err(RetargetError::InvalidSource { timestep: 1, arm: Arm::Left, .. })
        ));
    }
}
