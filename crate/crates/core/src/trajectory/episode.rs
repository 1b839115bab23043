//! Episode directories.
//!
//! ```text
//! <dir>/episode.json            header: id, robot, T, dof, cameras, annotations, provenance
//! <dir>/actions.jsonl           {"t", "left_joints"[7], "left_gripper", "right_joints"[7], "right_gripper"}
//! <dir>/objects.jsonl           {"t", "objects": {id: [px,py,pz,qw,qx,qy,qz]}}
//! <dir>/frames/<cam>/%06d.png   1-based frame numbers
//! ```
//!
//! Joint vectors are zero-padded to [`ACTION_DOF`] entries; `dof` in the
//! header records the true per-arm joint counts.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Demonstration, FrameRef, SubtaskAnnotation, TrajectoryError};
use crate::geometry::Pose;
use crate::kinematics::ArmAction;

pub const ACTION_DOF: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub t: usize,
    pub left_joints: Vec<f64>,
    pub left_gripper: f64,
    pub right_joints: Vec<f64>,
    pub right_gripper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub t: usize,
    pub objects: BTreeMap<String, Pose<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeHeader {
    pub id: String,
    pub robot: String,
    #[serde(rename = "T")]
    pub len: usize,
    /// True joint counts `[left, right]` before padding.
    pub dof: [usize; 2],
    pub cameras: Vec<String>,
    pub annotations: Vec<SubtaskAnnotation>,
    #[serde(default)]
    pub provenance: serde_json::Value,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
    /// Recipe-specific fields written by the dataset builder.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, serde_json::Value>,
}

pub fn frame_file(t: usize) -> String {
    format!("{t:06}.png")
}

fn pad(joints: &[f64]) -> Result<Vec<f64>, TrajectoryError> {
    if joints.len() > ACTION_DOF {
        return Err(TrajectoryError::Format(format!(
            "{} joints exceed the {ACTION_DOF}-joint action schema",
            joints.len()
        )));
    }
    let mut v = joints.to_vec();
    v.resize(ACTION_DOF, 0.0);
    Ok(v)
}

/// Writes `demo` under `dir` and returns the written file paths relative
/// to `dir`, sorted. Frames held in memory are encoded as PNG; frames on
/// disk are copied.
pub fn write_episode(
    dir: &Path,
    demo: &Demonstration,
    annotations: &[SubtaskAnnotation],
    provenance: serde_json::Value,
    extra: BTreeMap<String, serde_json::Value>,
) -> Result<Vec<PathBuf>, TrajectoryError> {
    demo.check()?;
    std::fs::create_dir_all(dir)?;
    let mut files = Vec::new();

    let dof = [demo.actions[0].0.joints.len(), demo.actions[0].1.joints.len()];
    let mut actions = Vec::new();
    for (i, (l, r)) in demo.actions.iter().enumerate() {
        if l.joints.len() != dof[0] || r.joints.len() != dof[1] {
            return Err(TrajectoryError::Format(format!("joint count changes at t={}", i + 1)));
        }
        let rec = ActionRecord {
            t: i + 1,
            left_joints: pad(&l.joints)?,
            left_gripper: l.gripper,
            right_joints: pad(&r.joints)?,
            right_gripper: r.gripper,
        };
        serde_json::to_writer(&mut actions, &rec)?;
        actions.push(b'\n');
    }
    std::fs::write(dir.join("actions.jsonl"), actions)?;
    files.push(PathBuf::from("actions.jsonl"));

    let mut objects = Vec::new();
    for t in 1..=demo.len() {
        serde_json::to_writer(&mut objects, &ObjectRecord { t, objects: demo.objects_at(t) })?;
        objects.push(b'\n');
    }
    std::fs::write(dir.join("objects.jsonl"), objects)?;
    files.push(PathBuf::from("objects.jsonl"));

    let mut cameras = Vec::new();
    for (cam, frames) in &demo.camera_streams {
        if frames.is_empty() {
            continue;
        }
        cameras.push(cam.clone());
        let rel = Path::new("frames").join(cam);
        std::fs::create_dir_all(dir.join(&rel))?;
        for (i, f) in frames.iter().enumerate() {
            let name = rel.join(frame_file(i + 1));
            match f {
                FrameRef::Image(img) => img.save_png(dir.join(&name))?,
                FrameRef::Path(p) => {
                    std::fs::copy(p, dir.join(&name))?;
                }
            }
            files.push(name);
        }
    }

    let header = EpisodeHeader {
        id: demo.id.clone(),
        robot: demo.robot.clone(),
        len: demo.len(),
        dof,
        cameras,
        annotations: annotations.to_vec(),
        provenance,
        meta: demo.meta.clone(),
        extra,
    };
    let mut f = std::fs::File::create(dir.join("episode.json"))?;
    serde_json::to_writer_pretty(&mut f, &header)?;
    f.write_all(b"\n")?;
    files.push(PathBuf::from("episode.json"));
    files.sort();
    Ok(files)
}

pub fn read_header(dir: &Path) -> Result<EpisodeHeader, TrajectoryError> {
    Ok(serde_json::from_slice(&std::fs::read(dir.join("episode.json"))?)?)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, TrajectoryError> {
    let f = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

pub fn read_actions(dir: &Path) -> Result<Vec<ActionRecord>, TrajectoryError> {
    read_jsonl(&dir.join("actions.jsonl"))
}

/// Loads an episode; frames are referenced by path, not decoded.
pub fn read_episode(dir: &Path) -> Result<(Demonstration, EpisodeHeader), TrajectoryError> {
    let header = read_header(dir)?;
    let records = read_actions(dir)?;
    let mut actions = Vec::with_capacity(records.len());
    for (i, r) in records.into_iter().enumerate() {
        if r.t != i + 1 {
            return Err(TrajectoryError::Format(format!("actions.jsonl line {} has t={}", i + 1, r.t)));
        }
        let [dl, dr] = header.dof;
        if r.left_joints.len() < dl || r.right_joints.len() < dr {
            return Err(TrajectoryError::Format(format!("short joint vector at t={}", r.t)));
        }
        actions.push((
            ArmAction::new(r.left_joints[..dl].to_vec(), r.left_gripper),
            ArmAction::new(r.right_joints[..dr].to_vec(), r.right_gripper),
        ));
    }
    let objects: Vec<ObjectRecord> = read_jsonl(&dir.join("objects.jsonl"))?;
    let mut track: BTreeMap<String, Vec<Pose<f64>>> = BTreeMap::new();
    for rec in objects {
        for (id, p) in rec.objects {
            track.entry(id).or_default().push(p);
        }
    }
    let mut demo = Demonstration::new(header.id.clone(), header.robot.clone(), actions, track)?;
    for cam in &header.cameras {
        let frames =
            (1..=demo.len()).map(|t| FrameRef::Path(dir.join("frames").join(cam).join(frame_file(t)))).collect();
        demo.camera_streams.insert(cam.clone(), frames);
    }
    demo.meta = header.meta.clone();
    if demo.len() != header.len {
        return Err(TrajectoryError::Length { what: "actions.jsonl".into(), expected: header.len, got: demo.len() });
    }
    Ok((demo, header))
}
