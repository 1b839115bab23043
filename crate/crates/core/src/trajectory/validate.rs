use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Candidate, Demonstration, SubtaskAnnotation};
use crate::geometry::express_in_frame;
use crate::kinematics::{Arm, BimanualRobot};

/// What a validator sees besides the candidate itself.
#[derive(Debug, Clone, Copy)]
pub struct ValidationContext<'a> {
    pub robot: &'a BimanualRobot<f64>,
    pub source: &'a Demonstration,
    pub annotations: &'a [SubtaskAnnotation],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub validator: String,
    /// 1-based timestep.
    pub t: usize,
    pub arm: Option<Arm>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.arm {
            Some(arm) => write!(f, "{} at t={} ({arm}): {}", self.validator, self.t, self.detail),
            None => write!(f, "{} at t={}: {}", self.validator, self.t, self.detail),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Pass,
    Fail(Vec<Violation>),
}

impl Verdict {
    pub fn passed(&self) -> bool {
        matches!(self, Verdict::Pass)
    }
}

/// A pure predicate over candidates. Implementations report every
/// violation they find; an empty list means pass.
pub trait Validator: Send + Sync {
    fn name(&self) -> &str;
    fn check(&self, candidate: &Candidate, ctx: &ValidationContext<'_>) -> Vec<Violation>;
}

pub fn validate(candidate: &Candidate, ctx: &ValidationContext<'_>, validators: &[&dyn Validator]) -> Verdict {
    let all: Vec<Violation> = validators.iter().flat_map(|v| v.check(candidate, ctx)).collect();
    if all.is_empty() {
        Verdict::Pass
    } else {
        Verdict::Fail(all)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct JointLimits;

impl Validator for JointLimits {
    fn name(&self) -> &str {
        "joint-limit"
    }

    fn check(&self, candidate: &Candidate, ctx: &ValidationContext<'_>) -> Vec<Violation> {
        let mut out = Vec::new();
        for (i, pair) in candidate.demo.actions.iter().enumerate() {
            for (arm, act) in [(Arm::Left, &pair.0), (Arm::Right, &pair.1)] {
                let chain = ctx.robot.arm(arm);
                for (j, (spec, &v)) in chain.joints.iter().zip(&act.joints).enumerate() {
                    if !spec.contains(v) {
                        out.push(Violation {
                            validator: self.name().into(),
                            t: i + 1,
                            arm: Some(arm),
                            detail: format!(
                                "joint {j} ({}) = {v:.4} outside [{}, {}]",
                                spec.name, spec.limits[0], spec.limits[1]
                            ),
                        });
                    }
                }
                if !(0.0..=1.0).contains(&act.gripper) {
                    out.push(Violation {
                        validator: self.name().into(),
                        t: i + 1,
                        arm: Some(arm),
                        detail: format!("gripper {} outside [0, 1]", act.gripper),
                    });
                }
            }
        }
        out
    }
}

/// Rejects steps whose IK position residual exceeds `max_pos` meters.
#[derive(Debug, Clone, Copy)]
pub struct IkResidual {
    pub max_pos: f64,
}

impl Validator for IkResidual {
    fn name(&self) -> &str {
        "ik-residual"
    }

    fn check(&self, candidate: &Candidate, _ctx: &ValidationContext<'_>) -> Vec<Violation> {
        let mut out = Vec::new();
        for (i, r) in candidate.residuals.iter().enumerate() {
            for (k, arm) in Arm::BOTH.into_iter().enumerate() {
                if !(r[k] <= self.max_pos) {
                    out.push(Violation {
                        validator: self.name().into(),
                        t: i + 1,
                        arm: Some(arm),
                        detail: format!("residual {:.6} m > {}", r[k], self.max_pos),
                    });
                }
            }
        }
        out
    }
}

/// Axis-aligned box every tool position must stay inside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for Workspace {
    fn default() -> Self {
        Self { min: [-0.1, -0.8, -0.05], max: [1.1, 0.8, 1.2] }
    }
}

impl Workspace {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

impl Validator for Workspace {
    fn name(&self) -> &str {
        "workspace"
    }

    fn check(&self, candidate: &Candidate, ctx: &ValidationContext<'_>) -> Vec<Violation> {
        let mut out = Vec::new();
        for arm in Arm::BOTH {
            let chain = ctx.robot.arm(arm);
            for (i, act) in candidate.demo.arm_actions(arm).enumerate() {
                let p = match chain.fk(&act.joints) {
                    Ok(p) => p.position.to_array(),
                    Err(e) => {
                        out.push(Violation {
                            validator: self.name().into(),
                            t: i + 1,
                            arm: Some(arm),
                            detail: e.to_string(),
                        });
                        continue;
                    }
                };
                if !self.contains(p) {
                    out.push(Violation {
                        validator: self.name().into(),
                        t: i + 1,
                        arm: Some(arm),
                        detail: format!("tool at {p:?} outside box"),
                    });
                }
            }
        }
        out
    }
}

/// Task predicate: at each subtask's `end_t`, the tool pose relative to
/// the anchor object must match the source's within tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndPose {
    pub pos_tol: f64,
    pub rot_tol: f64,
}

impl Default for EndPose {
    fn default() -> Self {
        Self { pos_tol: 5e-3, rot_tol: 5e-2 }
    }
}

impl Validator for EndPose {
    fn name(&self) -> &str {
        "end-pose"
    }

    fn check(&self, candidate: &Candidate, ctx: &ValidationContext<'_>) -> Vec<Violation> {
        let mut out = Vec::new();
        for a in ctx.annotations {
            let chain = ctx.robot.arm(a.arm);
            let rel = |demo: &Demonstration| {
                let act = demo.arm_actions(a.arm).nth(a.end_t - 1)?;
                let obj = demo.object_track.get(&a.anchor_object)?.get(a.end_t - 1)?;
                Some(express_in_frame(&chain.fk(&act.joints).ok()?, obj))
            };
            let fail =
                |detail: String| Violation { validator: "end-pose".into(), t: a.end_t, arm: Some(a.arm), detail };
            match (rel(ctx.source), rel(&candidate.demo)) {
                (Some(src), Some(cand)) => {
                    let dp = (src.position - cand.position).norm();
                    let dr = src.orientation.angle_to(&cand.orientation);
                    if dp > self.pos_tol || dr > self.rot_tol {
                        out.push(fail(format!("relative pose off by {dp:.4} m, {dr:.4} rad")));
                    }
                }
                _ => out.push(fail(format!("cannot evaluate relative to {:?}", a.anchor_object))),
            }
        }
        out
    }
}
