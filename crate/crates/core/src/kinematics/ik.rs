use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::linalg::solve_spd6;
use super::{KinematicsError, SerialChain};
use crate::geometry::{Pose, Vec3};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", default)]
pub struct IkParams<T> {
    /// Damping factor lambda; the normal matrix is `J Jᵀ + λ² I`.
    pub damping: T,
    pub max_iters: usize,
    /// Position tolerance, meters.
    pub pos_tol: T,
    /// Orientation tolerance, radians.
    pub rot_tol: T,
    pub step_scale: T,
    /// Weight of orientation error rows relative to position (m per rad).
    /// Zero solves for position only.
    pub rot_weight: T,
}

impl<T: Real> Default for IkParams<T> {
    fn default() -> Self {
        Self {
            damping: T::lit(0.05),
            max_iters: 200,
            pos_tol: T::lit(1e-3),
            rot_tol: T::lit(1e-2),
            step_scale: T::one(),
            rot_weight: T::one(),
        }
    }
}

impl<T: Real> IkParams<T> {
    pub fn position_only() -> Self {
        Self { rot_weight: T::zero(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        let ok = self.damping > T::zero()
            && self.pos_tol > T::zero()
            && self.rot_tol > T::zero()
            && self.step_scale > T::zero()
            && self.rot_weight >= T::zero();
        if ok {
            Ok(())
        } else {
            Err(KinematicsError::InvalidChain("ik params: damping, tolerances and step scale must be positive".into()))
        }
    }

    fn converged(&self, pos: T, rot: T) -> bool {
        pos < self.pos_tol && (self.rot_weight == T::zero() || rot < self.rot_tol)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkSolution<T> {
    pub joints: Vec<T>,
    pub pos_residual: T,
    pub rot_residual: T,
    pub iterations: usize,
}

#[derive(Debug, Error)]
pub enum IkError<T: Real> {
    #[error(transparent)]
    Input(#[from] KinematicsError),
    #[error(
        "ik did not converge after {} iterations (position residual {}, rotation residual {})",
        .0.iterations, .0.pos_residual, .0.rot_residual
    )]
    NonConvergent(IkSolution<T>),
}

impl<T: Real> IkError<T> {
    /// Best-effort joints for a non-convergent solve.
    pub fn best_effort(&self) -> Option<&IkSolution<T>> {
        match self {
            IkError::NonConvergent(s) => Some(s),
            IkError::Input(_) => None,
        }
    }
}

const MAX_BACKTRACK: usize = 10;

fn pose_error<T: Real>(target: &Pose<T>, current: &Pose<T>) -> (Vec3<T>, Vec3<T>) {
    let ep = target.position - current.position;
    let er = target.orientation.mul(&current.orientation.conjugate()).to_rotation_vector();
    (ep, er)
}

/// Damped least squares IK on the 6-D pose error.
///
/// Each iterate is clamped to the joint limits and only accepted if it
/// lowers the weighted squared pose error, halving the step otherwise.
/// The orientation error is the rotation vector of `target * current⁻¹`
/// (world frame), so the angular Jacobian rows are the world joint axes.
pub fn ik_dls<T: Real>(
    chain: &SerialChain<T>,
    target: &Pose<T>,
    seed: &[T],
    params: &IkParams<T>,
) -> Result<IkSolution<T>, IkError<T>> {
    chain.check(seed)?;
    params.validate()?;
    if !target.is_finite() {
        return Err(KinematicsError::NonFiniteTarget.into());
    }

    let n = chain.dof();
    let w = params.rot_weight;
    let lambda2 = params.damping * params.damping;
    let mut q = seed.to_vec();
    chain.clamp_in_place(&mut q);

    let (mut cols, tool) = chain.jacobian_unchecked(&q);
    let (mut ep, mut er) = pose_error(target, &tool);
    let mut cost = ep.norm_squared() + w * w * er.norm_squared();
    let mut iterations = 0;
    while iterations <= params.max_iters {
        let (pos, rot) = (ep.norm(), er.norm());
        if params.converged(pos, rot) {
            return Ok(IkSolution { joints: q, pos_residual: pos, rot_residual: rot, iterations });
        }
        if iterations == params.max_iters {
            break;
        }
        iterations += 1;

        let e = [ep.x, ep.y, ep.z, er.x * w, er.y * w, er.z * w];
        let weighted: Vec<[T; 6]> = cols.iter().map(|c| [c[0], c[1], c[2], c[3] * w, c[4] * w, c[5] * w]).collect();
        let mut a = [[T::zero(); 6]; 6];
        for (r, row) in a.iter_mut().enumerate() {
            for (c, cell) in row.iter_mut().enumerate() {
                *cell = weighted.iter().map(|col| col[r] * col[c]).sum();
            }
            row[r] += lambda2;
        }
        let Some(y) = solve_spd6(&a, &e) else {
            break;
        };
        let dq: Vec<T> =
            weighted.iter().take(n).map(|col| (0..6).map(|r| col[r] * y[r]).sum::<T>() * params.step_scale).collect();

        // backtrack until the weighted squared error decreases
        let mut scale = T::one();
        let mut accepted = false;
        for _ in 0..MAX_BACKTRACK {
            let mut trial: Vec<T> = q.iter().zip(&dq).map(|(&v, &d)| v + d * scale).collect();
            chain.clamp_in_place(&mut trial);
            let (tcols, ttool) = chain.jacobian_unchecked(&trial);
            let (tep, ter) = pose_error(target, &ttool);
            let tcost = tep.norm_squared() + w * w * ter.norm_squared();
            if tcost < cost {
                q = trial;
                cols = tcols;
                ep = tep;
                er = ter;
                cost = tcost;
                accepted = true;
                break;
            }
            scale *= T::lit(0.5);
        }
        if !accepted {
            break;
        }
    }
    Err(IkError::NonConvergent(IkSolution { pos_residual: ep.norm(), rot_residual: er.norm(), joints: q, iterations }))
}

#[cfg(test)]
mod tests {
    use super::super::fixtures;
    use super::super::test_chains::planar_2link;
    use super::*;
    use crate::geometry::UnitQuat;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn seed_at_target_needs_no_iterations() {
        let robot = fixtures::bimanual_a();
        let q = vec![0.2, 0.6, -0.3, 1.2, 0.4, 0.9, 0.1];
        let target = robot.left.fk(&q).unwrap();
        let sol = ik_dls(&robot.left, &target, &q, &IkParams::default()).unwrap();
        assert_eq!(sol.iterations, 0);
        assert_eq!(sol.joints, q);
    }

    /// Dense 0.5° grid over both joints; returns configurations whose tool
    /// lands within `tol` of `target`.
    fn grid_solutions(target: Vec3<f64>, tol: f64) -> Vec<(f64, f64)> {
        let chain = planar_2link();
        let mut hits = Vec::new();
        for i in -360..=360 {
            for j in -360..=360 {
                let q = [(i as f64 * 0.5).to_radians(), (j as f64 * 0.5).to_radians()];
                let p = chain.fk(&q).unwrap().position;
                if (p - target).norm() < tol {
                    hits.push((q[0], q[1]));
                }
            }
        }
        hits
    }

    #[test]
    fn planar_reaches_point_on_an_oracle_branch() {
        let chain = planar_2link();
        let target = Pose::from_translation(1.0, 1.0, 0.0);
        let sol = ik_dls(&chain, &target, &[0.3, 0.3], &IkParams::position_only()).unwrap();
        let p = chain.fk(&sol.joints).unwrap().position;
        assert!((p - target.position).norm() < 1e-3);

        let hits = grid_solutions(target.position, 1e-9);
        // exact grid hits: (0°, 90°) and (90°, -90°)
        assert_eq!(hits.len(), 2, "{hits:?}");
        let near = hits.iter().any(|&(a, b)| (sol.joints[0] - a).abs() < 0.01 && (sol.joints[1] - b).abs() < 0.01);
        assert!(near, "solution {:?} not on an oracle branch {hits:?}", sol.joints);
    }

    #[test]
    fn unreachable_target_reports_residual() {
        let chain = planar_2link();
        let target = Pose::from_translation(3.0, 0.0, 0.0);
        let err = ik_dls(&chain, &target, &[0.2, -0.1], &IkParams::default()).unwrap_err();
        let best = err.best_effort().expect("non-convergent");
        assert!((best.pos_residual - 1.0).abs() < 1e-3, "{}", best.pos_residual);
        let p = chain.fk(&best.joints).unwrap().position;
        assert!(((p - target.position).norm() - best.pos_residual).abs() < 1e-12);
    }

    #[test]
    fn results_respect_limits() {
        let robot = fixtures::bimanual_a();
        let chain = &robot.right;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let target = Pose::new(
                Vec3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-0.5..1.5)),
                UnitQuat::rot_z(rng.random_range(-3.0..3.0)),
            );
            let joints = match ik_dls(chain, &target, &chain.mid_configuration(), &IkParams::default()) {
                Ok(s) => s.joints,
                Err(e) => e.best_effort().unwrap().joints.clone(),
            };
            assert!(chain.within_limits(&joints));
        }
    }

    #[test]
    fn perturbed_seeds_converge() {
        let robot = fixtures::bimanual_a();
        let chain = &robot.left;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut ok = 0;
        for _ in 0..200 {
            let q: Vec<f64> =
                chain.joints.iter().map(|j| rng.random_range(j.limits[0] + 0.2..j.limits[1] - 0.2)).collect();
            let target = chain.fk(&q).unwrap();
            let seed: Vec<f64> = q.iter().map(|v| v + rng.random_range(-0.15..0.15)).collect();
            if ik_dls(chain, &target, &seed, &IkParams::default()).is_ok() {
                ok += 1;
            }
        }
        assert!(ok >= 190, "converged {ok}/200");
    }

    #[test]
    fn deterministic() {
        let robot = fixtures::bimanual_b();
        let target = Pose::new(Vec3::new(0.45, 0.2, 0.3), UnitQuat::rot_y(2.5));
        let seed = robot.left.mid_configuration();
        let a = ik_dls(&robot.left, &target, &seed, &IkParams::default());
        let b = ik_dls(&robot.left, &target, &seed, &IkParams::default());
        match (a, b) {
            (Ok(a), Ok(b)) => assert_eq!(a, b),
            (Err(a), Err(b)) => assert_eq!(a.best_effort(), b.best_effort()),
            _ => panic!("nondeterministic outcome"),
        }
    }

    #[test]
    fn rejects_bad_params() {
        let chain = planar_2link();
        let params = IkParams { damping: 0.0, ..IkParams::default() };
        assert!(matches!(ik_dls(&chain, &Pose::identity(), &[0.0, 0.0], &params), Err(IkError::Input(_))));
        assert!(matches!(
            ik_dls(&chain, &Pose::identity(), &[0.0], &IkParams::default()),
            Err(IkError::Input(KinematicsError::LengthMismatch { .. }))
        ));
    }
}
