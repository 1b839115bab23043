//! A self-contained demo project: two robots, a bimanual pot-lifting task
//! with a few scripted "recorded" demonstrations, reference assets and
//! prompt lists.
//!
//! The recorded frames are kinematic renders in a warmer style with
//! per-pixel sensor noise, so they differ from the clean renders the
//! control videos are extracted from.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde_json::json;

use super::{AssetPaths, PipelineError, TaskConfig};
use crate::augment::TaskSpec;
use crate::geometry::{interpolate, Pose, UnitQuat, Vec3};
use crate::kinematics::{fixtures, ik_dls, retarget_trajectory, Arm, ArmAction, BimanualRobot, IkParams};
use crate::raster::RgbImage;
use crate::render::{standard_rig, FrameState, ObjectShape, RenderStyle, Stage};
use crate::seed::splitmix64;
use crate::trajectory::episode::write_episode;
use crate::trajectory::{Demonstration, FrameRef, PoseRange, PoseSampler, SceneConfig, SubtaskAnnotation};

pub const TASK_NAME: &str = "lift_pot";
pub const INSTRUCTION: &str = "lift the pot with both arms";
const GRIP_Y: f64 = 0.09;
const GRIP_Z: f64 = 0.085;
const LIFT: f64 = 0.12;
/// Elbow-up pose above the table, for 7-joint arms.
const READY: [f64; 7] = [0.0, 0.3, 0.0, 2.0, 0.0, 0.8, 0.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixtureOptions {
    /// Steps per demonstration.
    pub len: usize,
    pub width: usize,
    pub height: usize,
    pub demos: usize,
}

impl Default for FixtureOptions {
    fn default() -> Self {
        Self { len: 40, width: 640, height: 480, demos: 3 }
    }
}

pub fn task_objects() -> BTreeMap<String, ObjectShape> {
    BTreeMap::from([
        ("pot".to_string(), ObjectShape { half_extents: [0.08, 0.09, 0.06], color: [170, 60, 40] }),
        ("cup".to_string(), ObjectShape { half_extents: [0.03, 0.03, 0.045], color: [40, 110, 170] }),
    ])
}

pub fn task_sampler() -> PoseSampler {
    PoseSampler {
        ranges: BTreeMap::from([
            ("pot".to_string(), PoseRange { dx: 0.04, dy: 0.04, dz: 0.0, yaw: 10f64.to_radians() }),
            ("cup".to_string(), PoseRange { dx: 0.05, dy: 0.05, dz: 0.0, yaw: PI }),
        ]),
    }
}

/// Style of the "recorded" frames.
pub fn recorded_style() -> RenderStyle {
    RenderStyle {
        background: [92, 84, 70],
        table: [150, 125, 95],
        robot: [225, 222, 210],
        gripper: [45, 45, 50],
        light: [0.5, -0.3, 1.0],
        ..RenderStyle::default()
    }
}

/// Initial object poses of demonstration `k`.
pub fn demo_scene(k: usize) -> SceneConfig {
    let variants = [(0.52, 0.0, 0.0), (0.56, 0.03, 0.1), (0.5, -0.03, -0.12), (0.54, -0.02, 0.05)];
    let (x, y, yaw) = variants[k % variants.len()];
    let cup_y = if k.is_multiple_of(2) { -0.32 } else { 0.33 };
    BTreeMap::from([
        ("pot".to_string(), Pose::new(Vec3::new(x, y, 0.06), UnitQuat::rot_z(yaw))),
        ("cup".to_string(), Pose::new(Vec3::new(0.68, cup_y, 0.045), UnitQuat::rot_z(0.3 * k as f64))),
    ])
}

fn smooth(s: f64) -> f64 {
    s * s * (3.0 - 2.0 * s)
}

/// Tool pose in the pot frame for one arm at phase `s` in `[0, 1]` of the
/// reach (approach, then descend to the rim).
fn reach_pose(arm: Arm, s: f64) -> Pose<f64> {
    let side = match arm {
        Arm::Left => 1.0,
        Arm::Right => -1.0,
    };
    // tool z points down, fingers close along y
    let down = UnitQuat::rot_y(PI);
    let waypoints = [
        Pose::new(Vec3::new(-0.12, side * (GRIP_Y + 0.06), 0.28), down),
        Pose::new(Vec3::new(0.0, side * GRIP_Y, GRIP_Z + 0.08), down),
        Pose::new(Vec3::new(0.0, side * GRIP_Y, GRIP_Z), down),
    ];
    let (a, b, u) = if s < 0.6 { (0, 1, s / 0.6) } else { (1, 2, (s - 0.6) / 0.4) };
    interpolate(&waypoints[a], &waypoints[b], smooth(u.clamp(0.0, 1.0))).expect("phase in range")
}

/// Scripted demonstration `k`: both arms reach the pot rim, close at
/// `contact_t` and lift it. Returns the demo (without frames), its
/// annotations and the contact step.
pub fn scripted_demo(
    robot: &BimanualRobot<f64>,
    k: usize,
    len: usize,
) -> Result<(Demonstration, Vec<SubtaskAnnotation>, usize), PipelineError> {
    if len < 8 {
        return Err(PipelineError::Config(format!("fixture demos need at least 8 steps, got {len}")));
    }
    let scene = demo_scene(k);
    let pot0 = scene["pot"];
    let reach = (len * 11) / 20;
    let close = reach + (len / 10).max(1);
    let contact_t = reach;

    let mut pot_track = Vec::with_capacity(len);
    let mut tools: [Vec<Pose<f64>>; 2] = [Vec::new(), Vec::new()];
    let mut grippers: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for i in 0..len {
        let t = i + 1;
        let lift = if t > close { smooth((t - close) as f64 / (len - close) as f64) * LIFT } else { 0.0 };
        let pot = Pose::new(pot0.position + Vec3::new(0.0, 0.0, lift), pot0.orientation);
        pot_track.push(pot);
        for (a, arm) in Arm::BOTH.into_iter().enumerate() {
            let s = if t <= reach { (t - 1) as f64 / (reach - 1) as f64 } else { 1.0 };
            tools[a].push(pot.compose(&reach_pose(arm, s)));
            let g = if t <= reach {
                1.0
            } else if t <= close {
                1.0 - (t - reach) as f64 / (close - reach) as f64
            } else {
                0.0
            };
            grippers[a].push(g);
        }
    }

    let ik = IkParams { pos_tol: 2e-4, rot_tol: 2e-3, max_iters: 400, ..IkParams::default() };
    let mut per_arm: [Vec<ArmAction<f64>>; 2] = [Vec::new(), Vec::new()];
    for (a, arm) in Arm::BOTH.into_iter().enumerate() {
        let chain = robot.arm(arm);
        let mut seed = chain.mid_configuration();
        for (i, target) in tools[a].iter().enumerate() {
            let mut sol = ik_dls(chain, target, &seed, &ik);
            if i == 0 && sol.is_err() && seed.len() == READY.len() {
                sol = ik_dls(chain, target, &READY, &ik);
            }
            let sol = sol.map_err(|e| {
                PipelineError::Config(format!("fixture demo {k} unreachable at t={} ({arm}): {e}", i + 1))
            })?;
            seed = sol.joints.clone();
            per_arm[a].push(ArmAction::new(sol.joints, grippers[a][i]));
        }
    }
    let [left, right] = per_arm;
    let actions = left.into_iter().zip(right).collect();

    let cup = scene["cup"];
    let track = BTreeMap::from([("pot".to_string(), pot_track), ("cup".to_string(), vec![cup; len])]);
    let mut demo = Demonstration::new(format!("{TASK_NAME}_{k:03}"), robot.name.clone(), actions, track)?;
    demo.meta.insert("contact_t".into(), contact_t.to_string());
    demo.meta.insert("instruction".into(), INSTRUCTION.into());

    let ann = Arm::BOTH
        .into_iter()
        .flat_map(|arm| {
            [
                SubtaskAnnotation { arm, start_t: 1, end_t: reach, anchor_object: "pot".into() },
                SubtaskAnnotation { arm, start_t: reach + 1, end_t: len, anchor_object: "pot".into() },
            ]
        })
        .collect();
    Ok((demo, ann, contact_t))
}

/// Adds deterministic per-pixel noise in `[-amp, amp]`.
pub fn sensor_noise(img: &RgbImage, seed: u64, amp: u8) -> RgbImage {
    let span = 2 * amp as u64 + 1;
    RgbImage::from_fn(img.width(), img.height(), |x, y| {
        let h = splitmix64(seed ^ ((y as u64) << 32 | x as u64));
        let px = img.get(x, y);
        [0, 1, 2].map(|c| {
            let n = ((h >> (c * 16)) % span) as i32 - amp as i32;
            (px[c] as i32 + n).clamp(0, 255) as u8
        })
    })
}

/// Renders every rig camera in the recorded style and attaches the
/// frames to `demo`.
pub fn attach_recorded_frames(
    demo: &mut Demonstration,
    robot: &BimanualRobot<f64>,
    width: usize,
    height: usize,
) -> Result<(), PipelineError> {
    let shapes = task_objects();
    let style = recorded_style();
    let stage = Stage { robot, shapes: &shapes, style: &style };
    let objects: Vec<_> = (1..=demo.len()).map(|t| demo.objects_at(t)).collect();
    let base = crate::seed::fnv1a64(demo.id.as_bytes());
    for (c, spec) in standard_rig().iter().enumerate() {
        let frames = stage.render_sequence(spec, &demo.actions, &objects, width, height)?;
        let frames = frames
            .into_par_iter()
            .enumerate()
            .map(|(i, f)| FrameRef::Image(Arc::new(sensor_noise(&f, base ^ splitmix64((c * 100_000 + i) as u64), 6))))
            .collect();
        demo.camera_streams.insert(spec.name.clone(), frames);
    }
    Ok(())
}

/// Writes the project under `dir` and returns the task config path.
///
/// ```text
/// robots/bimanual_A.json, bimanual_B.json
/// tasks/lift_pot.json
/// demos/lift_pot_000/ ...
/// assets/empty_table.png, target_robot.png
/// prompts/colors.txt, backgrounds.txt, lighting.txt
/// ```
pub fn write_project(dir: &Path, opts: &FixtureOptions) -> Result<PathBuf, PipelineError> {
    let a = fixtures::bimanual_a();
    let b = fixtures::bimanual_b();
    std::fs::create_dir_all(dir.join("robots"))?;
    std::fs::write(dir.join("robots/bimanual_A.json"), fixtures::BIMANUAL_A_JSON)?;
    std::fs::write(dir.join("robots/bimanual_B.json"), fixtures::BIMANUAL_B_JSON)?;

    let mut contact = None;
    let mut first: Option<Demonstration> = None;
    for k in 0..opts.demos {
        let (mut demo, ann, contact_t) = scripted_demo(&a, k, opts.len)?;
        attach_recorded_frames(&mut demo, &a, opts.width, opts.height)?;
        write_episode(&dir.join("demos").join(&demo.id), &demo, &ann, json!({ "kind": "scripted" }), BTreeMap::new())?;
        contact.get_or_insert(contact_t);
        if first.is_none() {
            first = Some(demo);
        }
    }

    std::fs::create_dir_all(dir.join("assets"))?;
    let shapes = task_objects();
    let style = recorded_style();
    let rig = standard_rig();
    let third = &rig[0];
    let home = first.as_ref().map(|d| d.actions[0].clone()).unwrap_or_else(|| {
        (ArmAction::new(a.left.mid_configuration(), 1.0), ArmAction::new(a.right.mid_configuration(), 1.0))
    });
    let empty = BTreeMap::new();
    let img = Stage { robot: &a, shapes: &shapes, style: &style }.render(
        third,
        &FrameState { left: &home.0, right: &home.1, objects: &empty },
        opts.width,
        opts.height,
    )?;
    sensor_noise(&img, 1, 6).save_png(dir.join("assets/empty_table.png"))?;

    let retargeted = retarget_trajectory(&a, &b, std::slice::from_ref(&home), &IkParams::default())?;
    let objects = demo_scene(0);
    let (l, r) = &retargeted.actions[0];
    let img = Stage { robot: &b, shapes: &shapes, style: &style }.render(
        third,
        &FrameState { left: l, right: r, objects: &objects },
        opts.width,
        opts.height,
    )?;
    sensor_noise(&img, 2, 6).save_png(dir.join("assets/target_robot.png"))?;

    std::fs::create_dir_all(dir.join("prompts"))?;
    std::fs::write(dir.join("prompts/colors.txt"), include_str!("../../fixtures/prompts/colors.txt"))?;
    std::fs::write(dir.join("prompts/backgrounds.txt"), include_str!("../../fixtures/prompts/backgrounds.txt"))?;
    std::fs::write(dir.join("prompts/lighting.txt"), include_str!("../../fixtures/prompts/lighting.txt"))?;

    let task = TaskConfig {
        name: TASK_NAME.into(),
        spec: TaskSpec { instruction: INSTRUCTION.into(), contact_t: contact },
        robot: a.name.clone(),
        objects: shapes,
        sampler: task_sampler(),
        assets: AssetPaths {
            empty_table: Some("../assets/empty_table.png".into()),
            target_robot: Some("../assets/target_robot.png".into()),
        },
    };
    std::fs::create_dir_all(dir.join("tasks"))?;
    let path = dir.join("tasks").join(format!("{TASK_NAME}.json"));
    std::fs::write(&path, serde_json::to_vec_pretty(&task)?)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{check_annotations, expand, segment};

    #[test]
    fn scripted_demos_are_reachable_and_consistent() {
        let robot = fixtures::bimanual_a();
        for k in 0..3 {
            let (demo, ann, contact_t) = scripted_demo(&robot, k, 20).unwrap();
            assert_eq!(demo.len(), 20);
            check_annotations(&ann, demo.len()).unwrap();
            segment(&demo, &robot, &ann).unwrap();
            // tools sit on the rim at contact
            let pot = demo.object_track["pot"][contact_t - 1];
            for arm in Arm::BOTH {
                let tool = robot.arm(arm).fk(&demo.arm_actions(arm).nth(contact_t - 1).unwrap().joints).unwrap();
                let rel = tool.in_frame(&pot);
                assert!((rel.position.z - GRIP_Z).abs() < 1e-3);
            }
            // identity expansion holds
            let c = expand(&demo, &robot, &ann, &demo.scene, &IkParams::default(), None).unwrap();
            assert!(c.residuals.iter().all(|r| r[0] < 1e-3 && r[1] < 1e-3));
        }
    }

    #[test]
    fn noise_is_bounded_and_deterministic() {
        let img = RgbImage::filled(9, 7, [0, 128, 255]);
        let a = sensor_noise(&img, 3, 6);
        assert_eq!(a, sensor_noise(&img, 3, 6));
        for y in 0..7 {
            for x in 0..9 {
                let p = a.get(x, y);
                assert!(p[0] <= 6 && (122..=134).contains(&p[1]) && p[2] >= 249);
            }
        }
    }
}
