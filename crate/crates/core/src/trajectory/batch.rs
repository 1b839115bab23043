use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    expand, sample_scene, validate, Candidate, Demonstration, PoseSampler, SceneConfig, SubtaskAnnotation,
    TrajectoryError, ValidationContext, Validator, Verdict,
};
use crate::kinematics::{BimanualRobot, IkParams};
use crate::seed;

/// One seed demonstration with its annotations and robot.
#[derive(Debug, Clone, Copy)]
pub struct SourceTask<'a> {
    pub demo: &'a Demonstration,
    pub annotations: &'a [SubtaskAnnotation],
    pub robot: &'a BimanualRobot<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchOptions {
    pub ik: IkParams<f64>,
    /// `None` uses the default blend length rule.
    pub blend_steps: Option<usize>,
    /// Attempt budget as a multiple of the requested count.
    pub budget_factor: usize,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self { ik: IkParams::default(), blend_steps: None, budget_factor: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateProvenance {
    pub source_id: String,
    /// Zero-based attempt index within the batch.
    pub attempt: u64,
    /// Seed given to the scene sampler.
    pub seed: u64,
    pub scene: SceneConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Accepted {
    pub candidate: Candidate,
    pub provenance: CandidateProvenance,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BatchReport {
    pub accepted: Vec<Accepted>,
    pub attempts: usize,
    pub rejected_ik: usize,
    /// Rejections keyed by the first failing validator's name.
    pub rejected_by: BTreeMap<String, usize>,
    pub per_source: BTreeMap<String, usize>,
}

impl BatchReport {
    pub fn rejected(&self) -> usize {
        self.rejected_ik + self.rejected_by.values().sum::<usize>()
    }
}

enum Outcome {
    Accepted(Box<Accepted>),
    IkRejected,
    Invalid(String),
}

fn attempt(
    sources: &[SourceTask<'_>],
    sampler: &PoseSampler,
    validators: &[&dyn Validator],
    master: u64,
    index: u64,
    opts: &BatchOptions,
) -> Result<Outcome, TrajectoryError> {
    let src = sources[(index % sources.len() as u64) as usize];
    let scene_seed = seed::derive(master, "expand", index);
    let scene = sample_scene(&src.demo.scene, sampler, scene_seed)?;
    let cand = match expand(src.demo, src.robot, src.annotations, &scene, &opts.ik, opts.blend_steps) {
        Ok(c) => c,
        Err(TrajectoryError::IkFailure { .. }) => return Ok(Outcome::IkRejected),
        Err(e) => return Err(e),
    };
    let ctx = ValidationContext { robot: src.robot, source: src.demo, annotations: src.annotations };
    match validate(&cand, &ctx, validators) {
        Verdict::Pass => Ok(Outcome::Accepted(Box::new(Accepted {
            candidate: cand,
            provenance: CandidateProvenance { source_id: src.demo.id.clone(), attempt: index, seed: scene_seed, scene },
        }))),
        Verdict::Fail(v) => Ok(Outcome::Invalid(v[0].validator.clone())),
    }
}

/// Samples, expands and validates until `count` candidates are accepted
/// or `budget_factor * count` attempts have been made.
///
/// Attempt `i` uses source `i mod len(sources)` and scene seed
/// `seed::derive(master, "expand", i)`. Attempts run in parallel waves but
/// are consumed in index order, so the result does not depend on the
/// thread count. Accepted candidates get ids `<source>-c<attempt>`.
pub fn expand_batch(
    sources: &[SourceTask<'_>],
    sampler: &PoseSampler,
    validators: &[&dyn Validator],
    count: usize,
    master_seed: u64,
    opts: &BatchOptions,
) -> Result<BatchReport, TrajectoryError> {
    let mut report = BatchReport::default();
    if count == 0 {
        return Ok(report);
    }
    if sources.is_empty() {
        return Err(TrajectoryError::Format("expand_batch needs at least one source".into()));
    }
    let budget = count.saturating_mul(opts.budget_factor.max(1));
    let mut next = 0usize;
    while report.accepted.len() < count && next < budget {
        let need = count - report.accepted.len();
        let wave = (need + need / 4 + 4).min(budget - next);
        let outcomes: Vec<Outcome> = (next..next + wave)
            .into_par_iter()
            .map(|i| attempt(sources, sampler, validators, master_seed, i as u64, opts))
            .collect::<Result<_, _>>()?;
        for o in outcomes {
            if report.accepted.len() == count {
                break;
            }
            report.attempts += 1;
            match o {
                Outcome::Accepted(mut a) => {
                    a.candidate.demo.id = format!("{}-c{:05}", a.provenance.source_id, a.provenance.attempt);
                    *report.per_source.entry(a.provenance.source_id.clone()).or_default() += 1;
                    report.accepted.push(*a);
                }
                Outcome::IkRejected => report.rejected_ik += 1,
                Outcome::Invalid(name) => *report.rejected_by.entry(name).or_default() += 1,
            }
        }
        next += wave;
    }
    if report.accepted.len() < count {
        return Err(TrajectoryError::BudgetExhausted {
            requested: count,
            accepted: report.accepted.len(),
            attempts: report.attempts,
            report: Box::new(report),
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::super::test_support::demo;
    use super::super::*;
    use super::*;
    use crate::geometry::Vec3;
    use crate::kinematics::Arm;

    #[test]
    fn zero_count_is_empty() {
        let (d, ann, robot) = demo(8);
        let src = [SourceTask { demo: &d, annotations: &ann, robot: &robot }];
        let r = expand_batch(&src, &PoseSampler::default(), &[], 0, 1, &BatchOptions::default()).unwrap();
        assert!(r.accepted.is_empty() && r.attempts == 0);
    }

    #[test]
    fn zero_range_reproduces_sources() {
        let (d, ann, robot) = demo(8);
        let src = [SourceTask { demo: &d, annotations: &ann, robot: &robot }];
        let sampler = PoseSampler::uniform(["bowl", "cup"], PoseRange::ZERO);
        let r = expand_batch(&src, &sampler, &[&JointLimits], 5, 3, &BatchOptions::default()).unwrap();
        assert_eq!(r.accepted.len(), 5);
        let src_tool = d.tool_poses(&robot, Arm::Left).unwrap();
        for a in &r.accepted {
            let out = a.candidate.demo.tool_poses(&robot, Arm::Left).unwrap();
            for (p, q) in src_tool.iter().zip(&out) {
                assert!((p.position - q.position).norm() < 1e-3);
            }
        }
        assert_eq!(r.per_source["demo"], 5);
    }

    #[test]
    fn budget_exhaustion_keeps_partial_results() {
        let (d, ann, robot) = demo(8);
        let src = [SourceTask { demo: &d, annotations: &ann, robot: &robot }];
        let sampler = PoseSampler::uniform(["cup"], PoseRange { dx: 0.1, dy: 0.1, dz: 0.0, yaw: 0.0 });
        let cup = d.scene["cup"].position;
        // only candidates whose cup moved toward +x survive
        struct CupAhead(Vec3<f64>);
        impl Validator for CupAhead {
            fn name(&self) -> &str {
                "cup-ahead"
            }
            fn check(&self, c: &Candidate, _: &ValidationContext<'_>) -> Vec<Violation> {
                if c.demo.scene["cup"].position.x > self.0.x + 0.09 {
                    vec![]
                } else {
                    vec![Violation { validator: "cup-ahead".into(), t: 1, arm: None, detail: String::new() }]
                }
            }
        }
        let opts = BatchOptions { budget_factor: 2, ..BatchOptions::default() };
        match expand_batch(&src, &sampler, &[&CupAhead(cup)], 10, 9, &opts) {
            Err(TrajectoryError::BudgetExhausted { requested, accepted, attempts, report }) => {
                assert_eq!((requested, attempts), (10, 20));
                assert_eq!(accepted, report.accepted.len());
                assert_eq!(report.accepted.len() + report.rejected(), 20);
            }
            other => panic!("expected exhaustion, got {other:?}"),
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let (d, ann, robot) = demo(8);
        let src = [SourceTask { demo: &d, annotations: &ann, robot: &robot }];
        let sampler = PoseSampler::uniform(["bowl", "cup"], PoseRange::default());
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| expand_batch(&src, &sampler, &[&JointLimits], 6, 11, &BatchOptions::default()).unwrap())
        };
        assert_eq!(run(1), run(3));
    }
}
