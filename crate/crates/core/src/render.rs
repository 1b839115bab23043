//! Kinematic replay renderer.
//!
//! Flat-shaded pinhole rendering of a bimanual robot, box objects and a
//! tabletop. It produces the source videos that control maps are
//! extracted from; there is no physics and no texture.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Pose, UnitQuat, Vec3};
use crate::kinematics::{Arm, ArmAction, BimanualRobot, KinematicsError};
use crate::raster::RgbImage;

const NEAR: f64 = 0.02;
const LINK_RADIUS: f64 = 0.035;
const FINGER_RADIUS: f64 = 0.009;
const FINGER_LENGTH: f64 = 0.05;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("camera basis is degenerate (eye and target coincide or up is parallel)")]
    DegenerateCamera,
    #[error("unknown camera {0:?}")]
    UnknownCamera(String),
    #[error("render size must be positive")]
    ZeroSize,
}

/// Pinhole camera. `pose` maps camera coordinates (x right, y down,
/// z forward) to world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub pose: Pose<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn from_pose(pose: Pose<f64>, fov_y_deg: f64, width: usize, height: usize) -> Self {
        let f = height as f64 / 2.0 / (fov_y_deg.to_radians() / 2.0).tan();
        Self { pose, fx: f, fy: f, cx: width as f64 / 2.0, cy: height as f64 / 2.0, width, height }
    }

    pub fn look_at(
        eye: Vec3<f64>,
        target: Vec3<f64>,
        up: Vec3<f64>,
        fov_y_deg: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, RenderError> {
        let z = (target - eye).normalized().ok_or(RenderError::DegenerateCamera)?;
        let x = z.cross(&up).normalized().ok_or(RenderError::DegenerateCamera)?;
        let y = z.cross(&x);
        let m = [[x.x, y.x, z.x], [x.y, y.y, z.y], [x.z, y.z, z.z]];
        let q = UnitQuat::from_matrix(&m).map_err(|_| RenderError::DegenerateCamera)?;
        Ok(Self::from_pose(Pose::new(eye, q), fov_y_deg, width, height))
    }

    pub fn to_camera(&self, p: &Vec3<f64>) -> Vec3<f64> {
        self.pose.inverse().transform_point(p)
    }

    /// Pixel coordinates of a camera-frame point in front of the near plane.
    pub fn project_camera(&self, pc: &Vec3<f64>) -> Option<(f64, f64)> {
        if pc.z < NEAR {
            return None;
        }
        Some((self.fx * pc.x / pc.z + self.cx, self.fy * pc.y / pc.z + self.cy))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mount {
    World {
        eye: [f64; 3],
        target: [f64; 3],
    },
    /// Rigidly attached to an arm's tool frame; `offset` and `look_at` are
    /// tool-frame points.
    Wrist {
        arm: Arm,
        offset: [f64; 3],
        look_at: [f64; 3],
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub name: String,
    pub mount: Mount,
    pub fov_deg: f64,
}

/// Default camera rig: four world cameras and one wrist camera per arm.
pub fn standard_rig() -> Vec<CameraSpec> {
    let world = |name: &str, eye: [f64; 3], target: [f64; 3], fov_deg: f64| CameraSpec {
        name: name.into(),
        mount: Mount::World { eye, target },
        fov_deg,
    };
    let wrist = |name: &str, arm: Arm| CameraSpec {
        name: name.into(),
        mount: Mount::Wrist { arm, offset: [0.09, 0.0, -0.03], look_at: [0.0, 0.0, 0.2] },
        fov_deg: 75.0,
    };
    vec![
        world("third_person", [1.45, 0.0, 0.95], [0.45, 0.0, 0.1], 50.0),
        world("front", [1.6, 0.55, 0.6], [0.45, 0.0, 0.1], 45.0),
        world("side", [0.5, 1.5, 0.7], [0.45, 0.0, 0.15], 50.0),
        world("top", [0.6, 0.0, 1.9], [0.45, 0.0, 0.0], 55.0),
        wrist("left_wrist", Arm::Left),
        wrist("right_wrist", Arm::Right),
    ]
}

pub fn find_camera<'a>(rig: &'a [CameraSpec], name: &str) -> Result<&'a CameraSpec, RenderError> {
    rig.iter().find(|c| c.name == name).ok_or_else(|| RenderError::UnknownCamera(name.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectShape {
    pub half_extents: [f64; 3],
    pub color: [u8; 3],
}

impl Default for ObjectShape {
    fn default() -> Self {
        Self { half_extents: [0.03; 3], color: [150, 150, 150] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderStyle {
    pub background: [u8; 3],
    pub table: [u8; 3],
    pub robot: [u8; 3],
    pub gripper: [u8; 3],
    /// Direction toward the light, world frame.
    pub light: [f64; 3],
    /// Table top rectangle `[x0, x1, y0, y1]` at z = 0.
    pub table_extent: [f64; 4],
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self {
            background: [40, 44, 52],
            table: [120, 100, 80],
            robot: [210, 210, 215],
            gripper: [60, 60, 70],
            light: [0.3, 0.2, 1.0],
            table_extent: [-0.2, 1.1, -0.8, 0.8],
        }
    }
}

/// Everything the renderer needs besides the per-frame state.
#[derive(Debug, Clone)]
pub struct Stage<'a> {
    pub robot: &'a BimanualRobot<f64>,
    pub shapes: &'a BTreeMap<String, ObjectShape>,
    pub style: &'a RenderStyle,
}

/// One frame of state: both arm commands and the object poses.
#[derive(Debug, Clone, Copy)]
pub struct FrameState<'a> {
    pub left: &'a ArmAction<f64>,
    pub right: &'a ArmAction<f64>,
    pub objects: &'a BTreeMap<String, Pose<f64>>,
}

enum Prim {
    Poly { pts: Vec<(f64, f64)>, depth: f64, color: [u8; 3] },
    Disc { c: (f64, f64), r: f64, depth: f64, color: [u8; 3] },
}

impl Prim {
    fn depth(&self) -> f64 {
        match self {
            Prim::Poly { depth, .. } | Prim::Disc { depth, .. } => *depth,
        }
    }
}

impl<'a> Stage<'a> {
    /// Resolves a camera spec for the given arm configuration.
    pub fn camera(
        &self,
        spec: &CameraSpec,
        state: &FrameState<'_>,
        width: usize,
        height: usize,
    ) -> Result<Camera, RenderError> {
        if width == 0 || height == 0 {
            return Err(RenderError::ZeroSize);
        }
        match &spec.mount {
            Mount::World { eye, target } => Camera::look_at(
                Vec3::new(eye[0], eye[1], eye[2]),
                Vec3::new(target[0], target[1], target[2]),
                Vec3::unit_z(),
                spec.fov_deg,
                width,
                height,
            ),
            Mount::Wrist { arm, offset, look_at } => {
                let act = match arm {
                    Arm::Left => state.left,
                    Arm::Right => state.right,
                };
                let tool = self.robot.arm(*arm).fk(&act.joints)?;
                let local = Camera::look_at(
                    Vec3::new(offset[0], offset[1], offset[2]),
                    Vec3::new(look_at[0], look_at[1], look_at[2]),
                    Vec3::unit_x(),
                    spec.fov_deg,
                    width,
                    height,
                )?;
                Ok(Camera::from_pose(tool.compose(&local.pose), spec.fov_deg, width, height))
            }
        }
    }

    pub fn render(
        &self,
        spec: &CameraSpec,
        state: &FrameState<'_>,
        width: usize,
        height: usize,
    ) -> Result<RgbImage, RenderError> {
        let cam = self.camera(spec, state, width, height)?;
        let mut prims = Vec::new();
        let light = Vec3::new(self.style.light[0], self.style.light[1], self.style.light[2])
            .normalized()
            .unwrap_or(Vec3::unit_z());

        let [x0, x1, y0, y1] = self.style.table_extent;
        let table = [Vec3::new(x0, y0, 0.0), Vec3::new(x1, y0, 0.0), Vec3::new(x1, y1, 0.0), Vec3::new(x0, y1, 0.0)];
        let mut img = RgbImage::filled(width, height, self.style.background);
        if let Some(Prim::Poly { pts, color, .. }) = polygon(&cam, &table, self.style.table) {
            fill_polygon(&mut img, &pts, color);
        }

        for (id, pose) in state.objects {
            let shape = self.shapes.get(id).cloned().unwrap_or_default();
            box_faces(&cam, pose, &shape, &light, &mut prims);
        }
        for (arm, act) in [(Arm::Left, state.left), (Arm::Right, state.right)] {
            self.arm_prims(&cam, arm, act, &mut prims)?;
        }

        // painter's order, farthest first; ties keep insertion order
        let mut order: Vec<usize> = (0..prims.len()).collect();
        order.sort_by(|&a, &b| prims[b].depth().total_cmp(&prims[a].depth()).then(a.cmp(&b)));
        for i in order {
            match &prims[i] {
                Prim::Poly { pts, color, .. } => fill_polygon(&mut img, pts, *color),
                Prim::Disc { c, r, color, .. } => fill_disc(&mut img, *c, *r, *color),
            }
        }
        Ok(img)
    }

    fn arm_prims(&self, cam: &Camera, arm: Arm, act: &ArmAction<f64>, out: &mut Vec<Prim>) -> Result<(), RenderError> {
        let chain = self.robot.arm(arm);
        let (frames, tool) = chain.frames(&act.joints)?;
        let mut pts = vec![chain.base.position];
        pts.extend(frames.iter().map(|f| f.position));
        pts.push(tool.position);
        pts.dedup_by(|a, b| (*a - *b).norm() < 1e-9);
        for w in pts.windows(2) {
            capsule(cam, &w[0], &w[1], LINK_RADIUS, self.style.robot, out);
        }
        let half = self.robot.gripper_width(act.gripper) / 2.0 + FINGER_RADIUS;
        for side in [-1.0, 1.0] {
            let a = tool.transform_point(&Vec3::new(0.0, side * half, -0.01));
            let b = tool.transform_point(&Vec3::new(0.0, side * half, FINGER_LENGTH));
            capsule(cam, &a, &b, FINGER_RADIUS, self.style.gripper, out);
        }
        Ok(())
    }

    /// Renders every timestep of a trajectory from one camera.
    pub fn render_sequence(
        &self,
        spec: &CameraSpec,
        actions: &[(ArmAction<f64>, ArmAction<f64>)],
        objects: &[BTreeMap<String, Pose<f64>>],
        width: usize,
        height: usize,
    ) -> Result<Vec<RgbImage>, RenderError> {
        assert_eq!(actions.len(), objects.len(), "action and object tracks differ in length");
        actions
            .par_iter()
            .zip(objects.par_iter())
            .map(|((l, r), o)| {
                let state = FrameState { left: l, right: r, objects: o };
                self.render(spec, &state, width, height)
            })
            .collect()
    }
}

fn shade(color: [u8; 3], normal: &Vec3<f64>, light: &Vec3<f64>) -> [u8; 3] {
    let k = 0.55 + 0.45 * normal.dot(light).max(0.0);
    color.map(|c| (c as f64 * k).round().min(255.0) as u8)
}

/// Clips a world polygon against the near plane and projects it.
fn polygon(cam: &Camera, world: &[Vec3<f64>], color: [u8; 3]) -> Option<Prim> {
    let pc: Vec<Vec3<f64>> = world.iter().map(|p| cam.to_camera(p)).collect();
    let mut clipped = Vec::with_capacity(pc.len() + 2);
    for i in 0..pc.len() {
        let a = pc[i];
        let b = pc[(i + 1) % pc.len()];
        let (ina, inb) = (a.z >= NEAR, b.z >= NEAR);
        if ina {
            clipped.push(a);
        }
        if ina != inb {
            let s = (NEAR - a.z) / (b.z - a.z);
            clipped.push(a.lerp(&b, s));
        }
    }
    if clipped.len() < 3 {
        return None;
    }
    let depth = clipped.iter().map(|p| p.z).sum::<f64>() / clipped.len() as f64;
    let pts = clipped.iter().filter_map(|p| cam.project_camera(p)).collect();
    Some(Prim::Poly { pts, depth, color })
}

fn box_faces(cam: &Camera, pose: &Pose<f64>, shape: &ObjectShape, light: &Vec3<f64>, out: &mut Vec<Prim>) {
    let [hx, hy, hz] = shape.half_extents;
    let corner = |sx: f64, sy: f64, sz: f64| pose.transform_point(&Vec3::new(sx * hx, sy * hy, sz * hz));
    // (outward normal in object frame, four corners counter-clockwise)
    let faces: [([f64; 3], [[f64; 3]; 4]); 6] = [
        ([1.0, 0.0, 0.0], [[1.0, -1.0, -1.0], [1.0, 1.0, -1.0], [1.0, 1.0, 1.0], [1.0, -1.0, 1.0]]),
        ([-1.0, 0.0, 0.0], [[-1.0, 1.0, -1.0], [-1.0, -1.0, -1.0], [-1.0, -1.0, 1.0], [-1.0, 1.0, 1.0]]),
        ([0.0, 1.0, 0.0], [[1.0, 1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, 1.0, 1.0], [1.0, 1.0, 1.0]]),
        ([0.0, -1.0, 0.0], [[-1.0, -1.0, -1.0], [1.0, -1.0, -1.0], [1.0, -1.0, 1.0], [-1.0, -1.0, 1.0]]),
        ([0.0, 0.0, 1.0], [[-1.0, -1.0, 1.0], [1.0, -1.0, 1.0], [1.0, 1.0, 1.0], [-1.0, 1.0, 1.0]]),
        ([0.0, 0.0, -1.0], [[-1.0, 1.0, -1.0], [1.0, 1.0, -1.0], [1.0, -1.0, -1.0], [-1.0, -1.0, -1.0]]),
    ];
    let eye = cam.pose.position;
    for (n, cs) in faces {
        let normal = pose.orientation.rotate(&Vec3::new(n[0], n[1], n[2]));
        let pts: Vec<Vec3<f64>> = cs.iter().map(|c| corner(c[0], c[1], c[2])).collect();
        let center = pts.iter().fold(Vec3::zero(), |acc, p| acc + *p).scale(0.25);
        if normal.dot(&(center - eye)) >= 0.0 {
            continue;
        }
        if let Some(p) = polygon(cam, &pts, shade(shape.color, &normal, light)) {
            out.push(p);
        }
    }
}

fn capsule(cam: &Camera, a: &Vec3<f64>, b: &Vec3<f64>, radius: f64, color: [u8; 3], out: &mut Vec<Prim>) {
    let mut pa = cam.to_camera(a);
    let mut pb = cam.to_camera(b);
    if pa.z < NEAR && pb.z < NEAR {
        return;
    }
    if pa.z < NEAR {
        pa = pa.lerp(&pb, (NEAR - pa.z) / (pb.z - pa.z));
    } else if pb.z < NEAR {
        pb = pb.lerp(&pa, (NEAR - pb.z) / (pa.z - pb.z));
    }
    let (Some(ua), Some(ub)) = (cam.project_camera(&pa), cam.project_camera(&pb)) else {
        return;
    };
    let ra = radius * cam.fx / pa.z;
    let rb = radius * cam.fx / pb.z;
    let depth = (pa.z + pb.z) / 2.0;
    let (dx, dy) = (ub.0 - ua.0, ub.1 - ua.1);
    let len = (dx * dx + dy * dy).sqrt();
    if len > 1e-9 {
        let (nx, ny) = (-dy / len, dx / len);
        let pts = vec![
            (ua.0 + nx * ra, ua.1 + ny * ra),
            (ub.0 + nx * rb, ub.1 + ny * rb),
            (ub.0 - nx * rb, ub.1 - ny * rb),
            (ua.0 - nx * ra, ua.1 - ny * ra),
        ];
        out.push(Prim::Poly { pts, depth, color });
    }
    out.push(Prim::Disc { c: ua, r: ra, depth: pa.z, color });
    out.push(Prim::Disc { c: ub, r: rb, depth: pb.z, color });
}

/// Even-odd scanline fill sampling pixel centers.
pub fn fill_polygon(img: &mut RgbImage, pts: &[(f64, f64)], color: [u8; 3]) {
    if pts.len() < 3 {
        return;
    }
    let (w, h) = (img.width() as f64, img.height() as f64);
    let ymin = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).max(0.0);
    let ymax = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max).min(h);
    if !(ymin < ymax) {
        return;
    }
    let mut xs = Vec::with_capacity(pts.len());
    let first = (ymin - 0.5).ceil().max(0.0) as usize;
    let last = ((ymax - 0.5).floor() as isize).min(img.height() as isize - 1);
    for row in first as isize..=last {
        let yc = row as f64 + 0.5;
        xs.clear();
        for i in 0..pts.len() {
            let (a, b) = (pts[i], pts[(i + 1) % pts.len()]);
            if (a.1 <= yc) != (b.1 <= yc) {
                xs.push(a.0 + (yc - a.1) / (b.1 - a.1) * (b.0 - a.0));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            let x0 = (pair[0] - 0.5).ceil().max(0.0);
            let x1 = (pair[1] - 0.5).floor().min(w - 1.0);
            let mut x = x0;
            while x <= x1 {
                img.set(x as usize, row as usize, color);
                x += 1.0;
            }
        }
    }
}

pub fn fill_disc(img: &mut RgbImage, c: (f64, f64), r: f64, color: [u8; 3]) {
    let y0 = (c.1 - r - 0.5).ceil().max(0.0) as isize;
    let y1 = ((c.1 + r - 0.5).floor() as isize).min(img.height() as isize - 1);
    let x0 = (c.0 - r - 0.5).ceil().max(0.0) as isize;
    let x1 = ((c.0 + r - 0.5).floor() as isize).min(img.width() as isize - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (dx, dy) = (x as f64 + 0.5 - c.0, y as f64 + 0.5 - c.1);
            if dx * dx + dy * dy <= r * r {
                img.set(x as usize, y as usize, color);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::fixtures;

    #[test]
    fn look_at_projects_target_to_center() {
        let cam =
            Camera::look_at(Vec3::new(2.0, 0.5, 1.0), Vec3::new(0.0, 0.0, 0.0), Vec3::unit_z(), 60.0, 64, 48).unwrap();
        let (u, v) = cam.project_camera(&cam.to_camera(&Vec3::zero())).unwrap();
        assert!((u - 32.0).abs() < 1e-9 && (v - 24.0).abs() < 1e-9);
        // world up maps to image up
        let (_, v_up) = cam.project_camera(&cam.to_camera(&Vec3::new(0.0, 0.0, 0.1))).unwrap();
        assert!(v_up < 24.0);
        assert!(Camera::look_at(Vec3::zero(), Vec3::unit_z(), Vec3::unit_z(), 60.0, 8, 8).is_err());
    }

    #[test]
    fn polygon_fill_covers_pixel_centers() {
        let mut img = RgbImage::new(8, 8);
        fill_polygon(&mut img, &[(2.0, 2.0), (6.0, 2.0), (6.0, 5.0), (2.0, 5.0)], [9, 9, 9]);
        let lit: usize =
            (0..8).flat_map(|y| (0..8).map(move |x| (x, y))).filter(|&(x, y)| img.get(x, y) == [9, 9, 9]).count();
        assert_eq!(lit, 12);
        assert_eq!(img.get(2, 2), [9, 9, 9]);
        assert_eq!(img.get(6, 2), [0, 0, 0]);
    }

    #[test]
    fn render_is_deterministic_and_shows_the_scene() {
        let robot = fixtures::bimanual_a();
        let shapes =
            BTreeMap::from([("cube".to_string(), ObjectShape { half_extents: [0.04; 3], color: [200, 30, 30] })]);
        let style = RenderStyle::default();
        let stage = Stage { robot: &robot, shapes: &shapes, style: &style };
        let objects = BTreeMap::from([("cube".to_string(), Pose::from_translation(0.5, 0.0, 0.04))]);
        let l = ArmAction::new(robot.left.mid_configuration(), 0.5);
        let r = ArmAction::new(robot.right.mid_configuration(), 1.0);
        let state = FrameState { left: &l, right: &r, objects: &objects };
        for spec in standard_rig() {
            let a = stage.render(&spec, &state, 80, 60).unwrap();
            let b = stage.render(&spec, &state, 80, 60).unwrap();
            assert_eq!(a, b);
            let distinct: std::collections::BTreeSet<[u8; 3]> =
                (0..60).flat_map(|y| (0..80).map(move |x| (x, y))).map(|(x, y)| a.get(x, y)).collect();
            assert!(distinct.len() >= 2, "{} renders a flat image", spec.name);
        }
        let third = stage.render(find_camera(&standard_rig(), "third_person").unwrap(), &state, 80, 60).unwrap();
        assert!(third.data().chunks_exact(3).any(|p| p[0] > 150 && p[1] < 60));
        assert!(find_camera(&standard_rig(), "nope").is_err());
    }
}
