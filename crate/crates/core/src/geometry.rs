//! Rigid-body math: vectors, unit quaternions and SE(3) poses.
//!
//! Orientations are unit quaternions kept in a canonical sign
//! (`w >= 0`, ties broken on `x`, then `y`, then `z`) so that two equal
//! rotations compare equal component-wise.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

/// Default tolerance for pure geometry checks.
pub const GEOMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("interpolation parameter {0} outside [0, 1]")]
    ParameterOutOfRange(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("degenerate quaternion (zero norm)")]
    ZeroQuaternion,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Vec3<T> {
    pub const fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn unit_x() -> Self {
        Self::new(T::one(), T::zero(), T::zero())
    }

    pub fn unit_y() -> Self {
        Self::new(T::zero(), T::one(), T::zero())
    }

    pub fn unit_z() -> Self {
        Self::new(T::zero(), T::zero(), T::one())
    }

    pub fn dot(&self, o: &Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(&self, o: &Self) -> Self {
        Self::new(self.y * o.z - self.z * o.y, self.z * o.x - self.x * o.z, self.x * o.y - self.y * o.x)
    }

    pub fn norm_squared(&self) -> T {
        self.dot(self)
    }

    pub fn norm(&self) -> T {
        self.norm_squared().sqrt()
    }

    pub fn scale(&self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }

    /// Returns `None` for a zero-length vector.
    pub fn normalized(&self) -> Option<Self> {
        let n = self.norm();
        if n > T::zero() && n.is_finite() {
            Some(self.scale(T::one() / n))
        } else {
            None
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn lerp(&self, o: &Self, s: T) -> Self {
        *self + (*o - *self).scale(s)
    }

    pub fn to_array(&self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    pub fn cast<U: Real>(&self) -> Vec3<U> {
        Vec3::new(U::lit(self.x.as_f64()), U::lit(self.y.as_f64()), U::lit(self.z.as_f64()))
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    fn mul(self, s: T) -> Self {
        self.scale(s)
    }
}

/// Unit quaternion `w + xi + yj + zk` in canonical sign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuat<T> {
    w: T,
    x: T,
    y: T,
    z: T,
}

impl<T: Real> Default for UnitQuat<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> UnitQuat<T> {
    pub fn identity() -> Self {
        Self { w: T::one(), x: T::zero(), y: T::zero(), z: T::zero() }
    }

    /// Normalizes and canonicalizes raw components.
    pub fn from_components(w: T, x: T, y: T, z: T) -> Result<Self, GeometryError> {
        if !(w.is_finite() && x.is_finite() && y.is_finite() && z.is_finite()) {
            return Err(GeometryError::NonFinite("quaternion"));
        }
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if n <= T::zero() {
            return Err(GeometryError::ZeroQuaternion);
        }
        Ok(Self::canonical(w / n, x / n, y / n, z / n))
    }

    fn canonical(w: T, x: T, y: T, z: T) -> Self {
        let zero = T::zero();
        let flip = if w != zero {
            w < zero
        } else if x != zero {
            x < zero
        } else if y != zero {
            y < zero
        } else {
            z < zero
        };
        if flip {
            Self { w: -w, x: -x, y: -y, z: -z }
        } else {
            Self { w, x, y, z }
        }
    }

    fn renormalized(w: T, x: T, y: T, z: T) -> Self {
        let n = (w * w + x * x + y * y + z * z).sqrt();
        Self::canonical(w / n, x / n, y / n, z / n)
    }

    /// Rotation of `angle` radians about `axis` (need not be unit length).
    pub fn from_axis_angle(axis: &Vec3<T>, angle: T) -> Self {
        match axis.normalized() {
            Some(a) => {
                let half = angle / T::lit(2.0);
                let s = half.sin();
                Self::renormalized(half.cos(), a.x * s, a.y * s, a.z * s)
            }
            None => Self::identity(),
        }
    }

    pub fn from_rotation_vector(v: &Vec3<T>) -> Self {
        let angle = v.norm();
        if angle <= T::epsilon() {
            // first-order expansion keeps tiny rotations exact enough
            let h = T::lit(0.5);
            return Self::renormalized(T::one(), v.x * h, v.y * h, v.z * h);
        }
        Self::from_axis_angle(v, angle)
    }

    /// From a proper rotation matrix (rows), via the largest-pivot branch.
    pub fn from_matrix(m: &[[T; 3]; 3]) -> Result<Self, GeometryError> {
        let one = T::one();
        let q = T::lit(0.25);
        let tr = m[0][0] + m[1][1] + m[2][2];
        let (w, x, y, z) = if tr > T::zero() {
            let s = (tr + one).sqrt() * T::lit(2.0);
            (q * s, (m[2][1] - m[1][2]) / s, (m[0][2] - m[2][0]) / s, (m[1][0] - m[0][1]) / s)
        } else if m[0][0] > m[1][1] && m[0][0] > m[2][2] {
            let s = (one + m[0][0] - m[1][1] - m[2][2]).sqrt() * T::lit(2.0);
            ((m[2][1] - m[1][2]) / s, q * s, (m[0][1] + m[1][0]) / s, (m[0][2] + m[2][0]) / s)
        } else if m[1][1] > m[2][2] {
            let s = (one + m[1][1] - m[0][0] - m[2][2]).sqrt() * T::lit(2.0);
            ((m[0][2] - m[2][0]) / s, (m[0][1] + m[1][0]) / s, q * s, (m[1][2] + m[2][1]) / s)
        } else {
            let s = (one + m[2][2] - m[0][0] - m[1][1]).sqrt() * T::lit(2.0);
            ((m[1][0] - m[0][1]) / s, (m[0][2] + m[2][0]) / s, (m[1][2] + m[2][1]) / s, q * s)
        };
        Self::from_components(w, x, y, z)
    }

    /// Rotation matrix, row-major.
    pub fn to_matrix(&self) -> [[T; 3]; 3] {
        let ex = self.rotate(&Vec3::unit_x());
        let ey = self.rotate(&Vec3::unit_y());
        let ez = self.rotate(&Vec3::unit_z());
        [[ex.x, ey.x, ez.x], [ex.y, ey.y, ez.y], [ex.z, ey.z, ez.z]]
    }

    pub fn rot_x(angle: T) -> Self {
        Self::from_axis_angle(&Vec3::unit_x(), angle)
    }

    pub fn rot_y(angle: T) -> Self {
        Self::from_axis_angle(&Vec3::unit_y(), angle)
    }

    pub fn rot_z(angle: T) -> Self {
        Self::from_axis_angle(&Vec3::unit_z(), angle)
    }

    pub fn w(&self) -> T {
        self.w
    }
    pub fn x(&self) -> T {
        self.x
    }
    pub fn y(&self) -> T {
        self.y
    }
    pub fn z(&self) -> T {
        self.z
    }

    pub fn components(&self) -> [T; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn norm(&self) -> T {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn conjugate(&self) -> Self {
        Self::canonical(self.w, -self.x, -self.y, -self.z)
    }

    /// Hamilton product `self * rhs`, renormalized.
    pub fn mul(&self, r: &Self) -> Self {
        let (a, b) = (self, r);
        Self::renormalized(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )
    }

    pub fn rotate(&self, v: &Vec3<T>) -> Vec3<T> {
        // v' = v + 2w (u x v) + 2 u x (u x v)
        let u = Vec3::new(self.x, self.y, self.z);
        let two = T::lit(2.0);
        let t = u.cross(v).scale(two);
        *v + t.scale(self.w) + u.cross(&t)
    }

    pub fn dot(&self, o: &Self) -> T {
        self.w * o.w + self.x * o.x + self.y * o.y + self.z * o.z
    }

    /// Rotation vector (axis * angle) with angle in `[0, pi]`.
    pub fn to_rotation_vector(&self) -> Vec3<T> {
        let v = Vec3::new(self.x, self.y, self.z);
        let s = v.norm();
        if s <= T::epsilon() {
            return v.scale(T::lit(2.0));
        }
        // canonical sign keeps w >= 0 so the angle is the short one
        let angle = T::lit(2.0) * s.atan2(self.w);
        v.scale(angle / s)
    }

    /// Angle of the relative rotation, in `[0, pi]`.
    pub fn angle_to(&self, o: &Self) -> T {
        self.conjugate().mul(o).to_rotation_vector().norm()
    }

    /// Spherical interpolation along the shortest arc.
    ///
    /// When the two rotations are exactly 180 degrees apart both arcs
    /// have equal length; the path through `o` as given (no sign flip)
    /// is taken, which makes the choice deterministic.
    pub fn slerp(&self, o: &Self, s: T) -> Self {
        let mut d = self.dot(o);
        let mut b = *o;
        if d < T::zero() {
            d = -d;
            b = Self { w: -o.w, x: -o.x, y: -o.y, z: -o.z };
        }
        let one = T::one();
        let (wa, wb) = if d > one - T::lit(1e-12) {
            (one - s, s)
        } else {
            let theta = d.min(one).acos();
            let sin_t = theta.sin();
            (((one - s) * theta).sin() / sin_t, (s * theta).sin() / sin_t)
        };
        Self::renormalized(
            wa * self.w + wb * b.w,
            wa * self.x + wb * b.x,
            wa * self.y + wb * b.y,
            wa * self.z + wb * b.z,
        )
    }

    pub fn cast<U: Real>(&self) -> UnitQuat<U> {
        UnitQuat::renormalized(
            U::lit(self.w.as_f64()),
            U::lit(self.x.as_f64()),
            U::lit(self.y.as_f64()),
            U::lit(self.z.as_f64()),
        )
    }
}

/// Rigid transform: rotate by `orientation`, then translate by `position`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose<T> {
    pub position: Vec3<T>,
    pub orientation: UnitQuat<T>,
}

impl<T: Real> Default for Pose<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> Pose<T> {
    pub fn new(position: Vec3<T>, orientation: UnitQuat<T>) -> Self {
        Self { position, orientation }
    }

    pub fn identity() -> Self {
        Self::new(Vec3::zero(), UnitQuat::identity())
    }

    pub fn from_translation(x: T, y: T, z: T) -> Self {
        Self::new(Vec3::new(x, y, z), UnitQuat::identity())
    }

    pub fn from_rotation(q: UnitQuat<T>) -> Self {
        Self::new(Vec3::zero(), q)
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Self) -> Self {
        Self::new(self.orientation.rotate(&other.position) + self.position, self.orientation.mul(&other.orientation))
    }

    pub fn inverse(&self) -> Self {
        let qi = self.orientation.conjugate();
        Self::new(-qi.rotate(&self.position), qi)
    }

    pub fn transform_point(&self, p: &Vec3<T>) -> Vec3<T> {
        self.orientation.rotate(p) + self.position
    }

    /// This pose (given in world coordinates) expressed relative to `frame`.
    pub fn in_frame(&self, frame: &Self) -> Self {
        frame.inverse().compose(self)
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite() && self.orientation.components().iter().all(|c| c.is_finite())
    }

    pub fn approx_eq(&self, o: &Self, tol: T) -> bool {
        (self.position - o.position).norm() <= tol && self.orientation.angle_to(&o.orientation) <= tol
    }

    /// `[px, py, pz, qw, qx, qy, qz]`.
    pub fn to_array(&self) -> [T; 7] {
        let q = self.orientation.components();
        [self.position.x, self.position.y, self.position.z, q[0], q[1], q[2], q[3]]
    }

    pub fn from_array(a: [T; 7]) -> Result<Self, GeometryError> {
        let position = Vec3::new(a[0], a[1], a[2]);
        if !position.is_finite() {
            return Err(GeometryError::NonFinite("position"));
        }
        Ok(Self::new(position, UnitQuat::from_components(a[3], a[4], a[5], a[6])?))
    }

    pub fn cast<U: Real>(&self) -> Pose<U> {
        Pose::new(self.position.cast(), self.orientation.cast())
    }
}

impl<T: Real> Mul for Pose<T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.compose(&rhs)
    }
}

pub fn compose<T: Real>(a: &Pose<T>, b: &Pose<T>) -> Pose<T> {
    a.compose(b)
}

pub fn inverse<T: Real>(p: &Pose<T>) -> Pose<T> {
    p.inverse()
}

/// Returns `r` such that `compose(frame, r) == world_pose`.
pub fn express_in_frame<T: Real>(world_pose: &Pose<T>, frame: &Pose<T>) -> Pose<T> {
    world_pose.in_frame(frame)
}

/// Linear position / shortest-arc slerp orientation blend.
pub fn interpolate<T: Real>(a: &Pose<T>, b: &Pose<T>, s: T) -> Result<Pose<T>, GeometryError> {
    if !(s >= T::zero() && s <= T::one()) {
        return Err(GeometryError::ParameterOutOfRange(s.as_f64()));
    }
    if s == T::zero() {
        return Ok(*a);
    }
    if s == T::one() {
        return Ok(*b);
    }
    Ok(Pose::new(a.position.lerp(&b.position, s), a.orientation.slerp(&b.orientation, s)))
}

impl<T: Real> Serialize for Pose<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(7))?;
        for v in self.to_array() {
            seq.serialize_element(&v.as_f64())?;
        }
        seq.end()
    }
}

impl<'de, T: Real> Deserialize<'de> for Pose<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct PoseVisitor<T>(std::marker::PhantomData<T>);

        impl<'de, T: Real> Visitor<'de> for PoseVisitor<T> {
            type Value = Pose<T>;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("7 reals [px, py, pz, qw, qx, qy, qz]")
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Pose<T>, A::Error> {
                let mut a = [T::zero(); 7];
                for (i, slot) in a.iter_mut().enumerate() {
                    let v: f64 = seq.next_element()?.ok_or_else(|| de::Error::invalid_length(i, &self))?;
                    *slot = T::lit(v);
                }
                if seq.next_element::<f64>()?.is_some() {
                    return Err(de::Error::invalid_length(8, &self));
                }
                Pose::from_array(a).map_err(de::Error::custom)
            }
        }

        deserializer.deserialize_seq(PoseVisitor(std::marker::PhantomData))
    }
}

impl<T: Real> Serialize for Vec3<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        [self.x.as_f64(), self.y.as_f64(), self.z.as_f64()].serialize(serializer)
    }
}

impl<'de, T: Real> Deserialize<'de> for Vec3<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let [x, y, z] = <[f64; 3]>::deserialize(deserializer)?;
        let v = Vec3::new(T::lit(x), T::lit(y), T::lit(z));
        if !v.is_finite() {
            return Err(de::Error::custom("non-finite vector"));
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    type P = Pose<f64>;

    fn trans(x: f64, y: f64, z: f64) -> P {
        P::from_translation(x, y, z)
    }

    fn arb_pose() -> impl Strategy<Value = P> {
        (prop::array::uniform3(-2.0f64..2.0), prop::array::uniform4(-1.0f64..1.0)).prop_filter_map(
            "nonzero quaternion",
            |(p, q)| {
                let n = q.iter().map(|c| c * c).sum::<f64>();
                (n > 1e-3).then(|| {
                    P::new(Vec3::new(p[0], p[1], p[2]), UnitQuat::from_components(q[0], q[1], q[2], q[3]).unwrap())
                })
            },
        )
    }

    fn assert_pose_close(a: &P, b: &P, tol: f64) {
        assert!(a.approx_eq(b, tol), "{a:?} != {b:?}");
    }

    #[test]
    fn compose_examples() {
        let p = P::new(Vec3::new(0.3, -1.0, 2.0), UnitQuat::rot_z(0.7));
        assert_pose_close(&compose(&P::identity(), &p), &p, 1e-12);
        assert_pose_close(&compose(&p, &inverse(&p)), &P::identity(), 1e-9);
        assert_pose_close(&compose(&trans(1., 0., 0.), &trans(0., 2., 0.)), &trans(1., 2., 0.), 0.0);
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(inverse(&P::identity()), P::identity());
        assert_pose_close(&inverse(&trans(1., 2., 3.)), &trans(-1., -2., -3.), 0.0);
        let r = P::from_rotation(UnitQuat::rot_z(FRAC_PI_2));
        assert_pose_close(&inverse(&r), &P::from_rotation(UnitQuat::rot_z(-FRAC_PI_2)), 1e-9);
    }

    #[test]
    fn express_in_frame_examples() {
        let p = P::new(Vec3::new(0.1, 0.2, 0.3), UnitQuat::rot_y(0.4));
        assert_pose_close(&express_in_frame(&p, &P::identity()), &p, 1e-12);
        assert_pose_close(&express_in_frame(&p, &p), &P::identity(), 1e-12);
        assert_pose_close(&express_in_frame(&trans(2., 0., 0.), &trans(1., 0., 0.)), &trans(1., 0., 0.), 0.0);
    }

    #[test]
    fn interpolate_examples() {
        let a = P::new(Vec3::new(0.1, 0.2, 0.3), UnitQuat::rot_x(0.5));
        let b = P::new(Vec3::new(-1.0, 0.0, 1.0), UnitQuat::rot_z(-1.2));
        assert_eq!(interpolate(&a, &b, 0.0).unwrap(), a);
        assert_eq!(interpolate(&a, &b, 1.0).unwrap(), b);
        assert_pose_close(&interpolate(&trans(0., 0., 0.), &trans(2., 0., 0.), 0.5).unwrap(), &trans(1., 0., 0.), 0.0);
        assert!(matches!(interpolate(&a, &b, 1.5), Err(GeometryError::ParameterOutOfRange(_))));
        assert!(interpolate(&a, &b, -0.01).is_err());
        assert!(interpolate(&a, &b, f64::NAN).is_err());
    }

    #[test]
    fn canonical_sign_makes_equal_rotations_equal() {
        let q = UnitQuat::<f64>::from_components(-0.5, 0.5, -0.5, 0.5).unwrap();
        assert!(q.w() > 0.0);
        let r = UnitQuat::<f64>::from_components(0.5, -0.5, 0.5, -0.5).unwrap();
        assert_eq!(q, r);
        let half_turn = UnitQuat::<f64>::from_components(0.0, -1.0, 0.0, 0.0).unwrap();
        assert_eq!(half_turn.x(), 1.0);
    }

    #[test]
    fn antipodal_slerp_is_deterministic() {
        let a = UnitQuat::<f64>::identity();
        let b = UnitQuat::rot_z(PI);
        let m1 = a.slerp(&b, 0.5);
        let m2 = a.slerp(&b, 0.5);
        assert_eq!(m1, m2);
        assert!((a.angle_to(&m1) - FRAC_PI_2).abs() < 1e-9);
    }

    #[test]
    fn rotation_vector_round_trip() {
        let v = Vec3::new(0.3, -0.2, 0.9);
        let q = UnitQuat::<f64>::from_rotation_vector(&v);
        let back = q.to_rotation_vector();
        assert!((back - v).norm() < 1e-12);
    }

    #[test]
    fn pose_json_is_seven_reals() {
        let p = P::new(Vec3::new(1.0, 2.0, 3.0), UnitQuat::identity());
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, "[1.0,2.0,3.0,1.0,0.0,0.0,0.0]");
        let back: P = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        assert!(serde_json::from_str::<P>("[1,2,3,1,0,0]").is_err());
        assert!(serde_json::from_str::<P>("[1,2,3,0,0,0,0]").is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let p = Pose::<f32>::new(Vec3::new(1.0, 0.0, 0.0), UnitQuat::rot_z(0.3));
        let id = p.compose(&p.inverse());
        assert!(id.approx_eq(&Pose::identity(), 1e-6));
    }

    #[test]
    fn matrix_round_trip() {
        for q in [
            UnitQuat::<f64>::identity(),
            UnitQuat::rot_x(3.0),
            UnitQuat::rot_y(-2.9),
            UnitQuat::rot_z(std::f64::consts::PI),
            UnitQuat::from_axis_angle(&Vec3::new(1.0, -2.0, 0.5), 2.2),
        ] {
            let back = UnitQuat::from_matrix(&q.to_matrix()).unwrap();
            assert!(q.angle_to(&back) < 1e-9, "{q:?} {back:?}");
        }
        let m = UnitQuat::<f64>::rot_z(std::f64::consts::FRAC_PI_2).to_matrix();
        assert!((m[0][1] + 1.0).abs() < 1e-12 && (m[1][0] - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn compose_is_associative(a in arb_pose(), b in arb_pose(), c in arb_pose()) {
            let l = a.compose(&b).compose(&c);
            let r = a.compose(&b.compose(&c));
            prop_assert!(l.approx_eq(&r, 1e-9));
        }

        #[test]
        fn operations_preserve_unit_norm(a in arb_pose(), b in arb_pose(), s in 0.0f64..=1.0) {
            for p in [a.compose(&b), a.inverse(), express_in_frame(&a, &b), interpolate(&a, &b, s).unwrap()] {
                prop_assert!((p.orientation.norm() - 1.0).abs() < 1e-9);
                prop_assert!(p.orientation.w() >= 0.0);
            }
        }

        #[test]
        fn express_in_frame_inverts_compose(p in arb_pose(), frame in arb_pose()) {
            let local = express_in_frame(&p, &frame);
            prop_assert!(frame.compose(&local).approx_eq(&p, 1e-9));
            let again = express_in_frame(&frame.compose(&p), &frame);
            prop_assert!(again.approx_eq(&p, 1e-9));
        }

        #[test]
        fn slerp_distance_is_monotone(a in arb_pose(), b in arb_pose()) {
            let mut last = 0.0;
            for k in 0..=20 {
                let s = k as f64 / 20.0;
                let d = a.orientation.angle_to(&interpolate(&a, &b, s).unwrap().orientation);
                prop_assert!(d + 1e-9 >= last, "distance decreased at s={s}: {d} < {last}");
                last = d;
            }
        }
    }
}
