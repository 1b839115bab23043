//! End-to-end dataset builds: load a project, apply recipes, call the
//! generation service and assemble a manifest.
//!
//! A project is a pipeline config plus the files it points at:
//!
//! ```text
//! robots/*.json          robot descriptions, keyed by their "name"
//! tasks/<task>.json      TaskConfig
//! demos/<id>/            recorded episodes (see trajectory::episode)
//! prompts/*.txt          optional prompt lists (colors, backgrounds, lighting)
//! ```
//!
//! Relative paths in the config resolve against the config's directory;
//! relative asset paths in a task file resolve against the task file's
//! directory.

pub mod fixtures;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{
    build_request, fill_prompt_library, parse_prompt_file, Assets, AugmentError, FrameSettings, GenerationRequest,
    PromptLibrary, PromptProvenance, Recipe, RecipeInput, RecipeKind, RequestContext, TaskSpec, VariantCache,
};
use crate::dataset::{self, DatasetError, EpisodeRecord, Manifest, MANIFEST_FILE};
use crate::genclient::{
    run_job, GenError, GenerationService, HttpConfig, HttpService, ImageVariantClient, LlmClient, MockLlm, MockService,
    MockVariant, PollOptions,
};
use crate::kinematics::{
    fixtures as robots, retarget_trajectory, BimanualRobot, IkParams, KinematicsError, RetargetError,
};
use crate::raster::{RasterError, RgbImage};
use crate::render::{find_camera, standard_rig, ObjectShape, RenderError, RenderStyle, Stage};
use crate::seed::derive;
use crate::trajectory::episode::read_episode;
use crate::trajectory::{
    expand_batch, BatchOptions, BatchReport, Demonstration, EndPose, FrameRef, IkResidual, JointLimits, PoseSampler,
    SourceTask, SubtaskAnnotation, TrajectoryError, Validator, Workspace,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0} already holds a manifest; choose a fresh output directory")]
    OutputExists(PathBuf),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Retarget(#[from] RetargetError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Service(#[from] GenError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AssetPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub empty_table: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_robot: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub name: String,
    #[serde(flatten)]
    pub spec: TaskSpec,
    /// Robot the demonstrations were recorded on.
    pub robot: String,
    pub objects: BTreeMap<String, ObjectShape>,
    /// Scene perturbation used by object_pose unless the recipe sets its own.
    #[serde(default)]
    pub sampler: PoseSampler,
    #[serde(default)]
    pub assets: AssetPaths,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub robots: PathBuf,
    pub task: PathBuf,
    pub demos: PathBuf,
    /// Directory with colors.txt, backgrounds.txt and lighting.txt; the
    /// bundled lists are used when unset.
    pub prompts: Option<PathBuf>,
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            robots: "robots".into(),
            task: "tasks/task.json".into(),
            demos: "demos".into(),
            prompts: None,
            output: "out".into(),
        }
    }
}

/// Size and style of the kinematic renders control videos come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderSettings {
    pub width: usize,
    pub height: usize,
    pub style: RenderStyle,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self { width: 640, height: 480, style: RenderStyle::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpandSettings {
    pub blend_steps: Option<usize>,
    pub budget_factor: usize,
    /// Largest accepted IK position residual, meters.
    pub max_ik_residual: f64,
    pub workspace: Workspace,
    pub end_pose: EndPose,
}

impl Default for ExpandSettings {
    fn default() -> Self {
        Self {
            blend_steps: None,
            budget_factor: 20,
            max_ik_residual: 1e-3,
            workspace: Workspace::default(),
            end_pose: EndPose::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecipePlan {
    pub count: usize,
    #[serde(flatten)]
    pub recipe: Recipe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub kind: ServiceKind,
    pub http: HttpConfig,
    pub poll_interval_ms: u64,
    pub poll_deadline_s: u64,
    /// Ask the text service for prompt lists instead of using the files.
    pub llm_prompts: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            kind: ServiceKind::Mock,
            http: HttpConfig::default(),
            poll_interval_ms: 500,
            poll_deadline_s: 1800,
            llm_prompts: false,
        }
    }
}

impl ServiceConfig {
    pub fn poll(&self) -> PollOptions {
        PollOptions {
            interval: Duration::from_millis(self.poll_interval_ms),
            deadline: Duration::from_secs(self.poll_deadline_s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub name: String,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub paths: Paths,
    pub frames: FrameSettings,
    pub render: RenderSettings,
    pub ik: IkParams<f64>,
    pub expand: ExpandSettings,
    pub recipes: Vec<RecipePlan>,
    pub service: ServiceConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            name: "generated".into(),
            seed: 0,
            jobs: 0,
            paths: Paths::default(),
            frames: FrameSettings::default(),
            render: RenderSettings::default(),
            ik: IkParams::default(),
            expand: ExpandSettings::default(),
            recipes: Vec::new(),
            service: ServiceConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let mut seen = Vec::new();
        for p in &self.recipes {
            p.recipe.validate()?;
            let kind = p.recipe.kind();
            if seen.contains(&kind) {
                return Err(PipelineError::Config(format!("recipe {kind} listed twice")));
            }
            seen.push(kind);
        }
        if self.render.width == 0 || self.render.height == 0 {
            return Err(PipelineError::Config("render size must be positive".into()));
        }
        if self.frames.out_size < 8 {
            return Err(PipelineError::Config(format!("frames.out_size {} is too small", self.frames.out_size)));
        }
        if self.frames.fps <= 0.0 {
            return Err(PipelineError::Config("frames.fps must be positive".into()));
        }
        self.frames.canny.validate().map_err(AugmentError::from)?;
        self.frames.filter.validate().map_err(AugmentError::from)?;
        self.ik.validate()?;
        Ok(())
    }

    /// The config as echoed into manifests: everything except the output
    /// location and thread count, so a rebuild elsewhere or with another
    /// `jobs` yields the same manifest.
    pub fn echo(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("jobs");
        }
        if let Some(paths) = v.get_mut("paths").and_then(|p| p.as_object_mut()) {
            paths.remove("output");
        }
        v
    }
}

/// The three external services a build talks to.
#[derive(Clone)]
pub struct Services {
    pub generation: Arc<dyn GenerationService>,
    pub llm: Arc<dyn LlmClient>,
    pub variant: Arc<dyn ImageVariantClient>,
}

impl Services {
    pub fn mock() -> Self {
        Self {
            generation: Arc::new(MockService::new()),
            llm: Arc::new(MockLlm::standard()),
            variant: Arc::new(MockVariant),
        }
    }

    pub fn http(cfg: HttpConfig) -> Self {
        let svc = Arc::new(HttpService::new(cfg));
        Self { generation: svc.clone(), llm: svc.clone(), variant: svc }
    }

    pub fn from_config(cfg: &ServiceConfig) -> Self {
        match cfg.kind {
            ServiceKind::Mock => Self::mock(),
            ServiceKind::Http => Self::http(cfg.http.clone().with_env_token()),
        }
    }
}

/// A recorded demonstration with its subtask annotations.
#[derive(Debug, Clone)]
pub struct SourceDemo {
    pub demo: Demonstration,
    pub annotations: Vec<SubtaskAnnotation>,
}

/// Everything a build reads, loaded and checked.
#[derive(Debug, Clone)]
pub struct Project {
    pub config: PipelineConfig,
    /// Directory relative config paths resolve against.
    pub base_dir: PathBuf,
    pub robots: BTreeMap<String, BimanualRobot<f64>>,
    pub task: TaskConfig,
    pub sources: Vec<SourceDemo>,
    pub assets: Assets,
    pub prompts: PromptLibrary,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn load_robots(dir: &Path) -> Result<BTreeMap<String, BimanualRobot<f64>>, PipelineError> {
    let mut out = BTreeMap::new();
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| PipelineError::Config(format!("robots directory {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    for f in files {
        let r = BimanualRobot::load(&f)?;
        if out.insert(r.name.clone(), r).is_some() {
            return Err(PipelineError::Config(format!("duplicate robot name in {}", f.display())));
        }
    }
    Ok(out)
}

pub fn load_task(path: &Path) -> Result<(TaskConfig, Assets), PipelineError> {
    let text = std::fs::read(path).map_err(|e| PipelineError::Config(format!("task file {}: {e}", path.display())))?;
    let task: TaskConfig = serde_json::from_slice(&text)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let load = |p: &Option<PathBuf>| -> Result<Option<RgbImage>, PipelineError> {
        p.as_ref().map(|p| Ok(RgbImage::load_png(resolve(dir, p))?)).transpose()
    };
    let assets =
        Assets { empty_table: load(&task.assets.empty_table)?, target_robot: load(&task.assets.target_robot)? };
    Ok((task, assets))
}

/// Loads every episode directory under `dir`, sorted by directory name.
pub fn load_sources(dir: &Path) -> Result<Vec<SourceDemo>, PipelineError> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| PipelineError::Config(format!("demos directory {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("episode.json").is_file())
        .collect();
    dirs.sort();
    dirs.into_iter()
        .map(|d| {
            let (demo, header) = read_episode(&d)?;
            Ok(SourceDemo { demo, annotations: header.annotations })
        })
        .collect()
}

pub fn load_prompts(dir: Option<&Path>) -> Result<PromptLibrary, PipelineError> {
    let Some(dir) = dir else {
        return Ok(PromptLibrary::bundled());
    };
    let read = |name: &str| -> Result<Vec<String>, PipelineError> {
        let p = dir.join(name);
        let text = std::fs::read_to_string(&p).map_err(|e| PipelineError::Config(format!("{}: {e}", p.display())))?;
        Ok(parse_prompt_file(&text))
    };
    let lib = PromptLibrary {
        colors: read("colors.txt")?,
        backgrounds: read("backgrounds.txt")?,
        lighting: read("lighting.txt")?,
        provenance: PromptProvenance::StaticFallback,
    };
    lib.validate()?;
    Ok(lib)
}

impl Project {
    /// Loads the files named by `config`, resolving relative paths against
    /// `base_dir`.
    pub fn load(config: PipelineConfig, base_dir: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        config.validate()?;
        let base_dir = base_dir.into();
        let robots = load_robots(&resolve(&base_dir, &config.paths.robots))?;
        let (task, assets) = load_task(&resolve(&base_dir, &config.paths.task))?;
        let sources = load_sources(&resolve(&base_dir, &config.paths.demos))?;
        let prompts = load_prompts(config.paths.prompts.as_ref().map(|p| resolve(&base_dir, p)).as_deref())?;
        let project = Self { config, base_dir, robots, task, sources, assets, prompts };
        project.check()?;
        Ok(project)
    }

    fn check(&self) -> Result<(), PipelineError> {
        let robot = self.robot()?;
        if self.sources.is_empty() {
            return Err(PipelineError::Config("no demonstrations found".into()));
        }
        for s in &self.sources {
            if s.demo.robot != robot.name {
                return Err(PipelineError::Config(format!(
                    "{} was recorded on {:?}, the task uses {:?}",
                    s.demo.id, s.demo.robot, robot.name
                )));
            }
            crate::trajectory::segment(&s.demo, robot, &s.annotations)?;
        }
        for p in &self.config.recipes {
            if let Recipe::CrossEmbodiment { target_robot } = &p.recipe {
                self.target_robot(target_robot)?;
            }
        }
        Ok(())
    }

    pub fn robot(&self) -> Result<&BimanualRobot<f64>, PipelineError> {
        self.robots
            .get(&self.task.robot)
            .ok_or_else(|| PipelineError::Config(format!("robot {:?} not found in robots directory", self.task.robot)))
    }

    /// A robot from the robots directory, falling back to the built-in
    /// descriptions.
    pub fn target_robot(&self, name: &str) -> Result<BimanualRobot<f64>, PipelineError> {
        self.robots
            .get(name)
            .cloned()
            .or_else(|| robots::by_name(name))
            .ok_or_else(|| PipelineError::Config(format!("unknown target robot {name:?}")))
    }

    pub fn output_dir(&self) -> PathBuf {
        resolve(&self.base_dir, &self.config.paths.output)
    }

    fn sampler_for(&self, recipe: &Recipe) -> PoseSampler {
        match recipe {
            Recipe::ObjectPose { sampler } if !sampler.ranges.is_empty() => sampler.clone(),
            _ => self.task.sampler.clone(),
        }
    }

    pub fn render_style(&self) -> &RenderStyle {
        &self.config.render.style
    }
}

/// Renders `views` of a trajectory with the clean style.
pub fn render_views(
    demo: &Demonstration,
    robot: &BimanualRobot<f64>,
    shapes: &BTreeMap<String, ObjectShape>,
    settings: &RenderSettings,
    views: &[String],
) -> Result<Demonstration, PipelineError> {
    let rig = standard_rig();
    let stage = Stage { robot, shapes, style: &settings.style };
    let objects = demo.object_frames();
    let mut out = demo.clone();
    out.camera_streams.clear();
    for v in views {
        let spec = find_camera(&rig, v)?;
        let frames = stage.render_sequence(spec, &demo.actions, &objects, settings.width, settings.height)?;
        out.camera_streams.insert(v.clone(), frames.into_iter().map(|f| FrameRef::Image(Arc::new(f))).collect());
    }
    Ok(out)
}

/// One trajectory ready to be turned into a request.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub demo: Demonstration,
    pub annotations: Vec<SubtaskAnnotation>,
    /// Index into [`Project::sources`].
    pub source: usize,
    pub robot: BimanualRobot<f64>,
    pub scene_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExpansionSummary {
    pub requested: usize,
    pub accepted: usize,
    pub attempts: usize,
    pub rejected_ik: usize,
    pub rejected_by: BTreeMap<String, usize>,
}

/// Per-recipe trajectories, computed once per build.
pub struct Plan {
    pub trajectories: BTreeMap<RecipeKind, Vec<Result<Trajectory, String>>>,
    pub expansion: Option<ExpansionSummary>,
}

fn validators(s: &ExpandSettings) -> (IkResidual, Workspace, EndPose) {
    (IkResidual { max_pos: s.max_ik_residual }, s.workspace, s.end_pose)
}

/// Expands the sources with the object_pose validators. Budget
/// exhaustion is not an error: the partial report comes back with
/// `exhausted` set.
pub fn run_expansion(project: &Project, recipe: &Recipe, count: usize) -> Result<(BatchReport, bool), PipelineError> {
    let cfg = &project.config;
    let robot = project.robot()?;
    let tasks: Vec<SourceTask<'_>> =
        project.sources.iter().map(|s| SourceTask { demo: &s.demo, annotations: &s.annotations, robot }).collect();
    let (ik_res, ws, end) = validators(&cfg.expand);
    let checks: [&dyn Validator; 4] = [&JointLimits, &ik_res, &ws, &end];
    let opts =
        BatchOptions { ik: cfg.ik, blend_steps: cfg.expand.blend_steps, budget_factor: cfg.expand.budget_factor };
    let master = derive(cfg.seed, "recipe/object_pose", 0);
    match expand_batch(&tasks, &project.sampler_for(recipe), &checks, count, master, &opts) {
        Ok(r) => Ok((r, false)),
        Err(TrajectoryError::BudgetExhausted { report, .. }) => Ok((*report, true)),
        Err(e) => Err(e.into()),
    }
}

impl Plan {
    /// Expands and retargets as the configured recipes need. Recipes other
    /// than object_pose and cross_embodiment reuse the sources, item `i`
    /// taking source `i mod n`.
    pub fn new(project: &Project) -> Result<Self, PipelineError> {
        let cfg = &project.config;
        let robot = project.robot()?;
        let n = project.sources.len();
        let mut trajectories = BTreeMap::new();
        let mut expansion = None;
        for p in &cfg.recipes {
            let kind = p.recipe.kind();
            let items: Vec<Result<Trajectory, String>> = match &p.recipe {
                Recipe::ObjectPose { .. } => {
                    let (report, _) = run_expansion(project, &p.recipe, p.count)?;
                    expansion = Some(ExpansionSummary {
                        requested: p.count,
                        accepted: report.accepted.len(),
                        attempts: report.attempts,
                        rejected_ik: report.rejected_ik,
                        rejected_by: report.rejected_by.clone(),
                    });
                    report
                        .accepted
                        .into_iter()
                        .map(|a| {
                            let source = project
                                .sources
                                .iter()
                                .position(|s| s.demo.id == a.provenance.source_id)
                                .expect("accepted candidate from a known source");
                            Ok(Trajectory {
                                demo: a.candidate.demo,
                                annotations: project.sources[source].annotations.clone(),
                                source,
                                robot: robot.clone(),
                                scene_seed: Some(a.provenance.seed),
                            })
                        })
                        .collect()
                }
                Recipe::CrossEmbodiment { target_robot } => {
                    let target = project.target_robot(target_robot)?;
                    let per_source: Vec<Result<Trajectory, String>> = project
                        .sources
                        .par_iter()
                        .enumerate()
                        .map(|(k, s)| {
                            let r = retarget_trajectory(robot, &target, &s.demo.actions, &cfg.ik)
                                .map_err(|e| format!("retargeting {} to {}: {e}", s.demo.id, target.name))?;
                            let mut demo = Demonstration::new(
                                format!("{}-{}", s.demo.id, target.name),
                                target.name.clone(),
                                r.actions,
                                s.demo.object_track.clone(),
                            )
                            .map_err(|e| e.to_string())?;
                            demo.meta = s.demo.meta.clone();
                            demo.meta.insert("source".into(), s.demo.id.clone());
                            Ok(Trajectory {
                                demo,
                                annotations: s.annotations.clone(),
                                source: k,
                                robot: target.clone(),
                                scene_seed: None,
                            })
                        })
                        .collect();
                    (0..p.count).map(|i| per_source[i % n].clone()).collect()
                }
                _ => (0..p.count)
                    .map(|i| {
                        let s = &project.sources[i % n];
                        let mut demo = s.demo.clone();
                        demo.camera_streams.clear();
                        Ok(Trajectory {
                            demo,
                            annotations: s.annotations.clone(),
                            source: i % n,
                            robot: robot.clone(),
                            scene_seed: None,
                        })
                    })
                    .collect(),
            };
            trajectories.insert(kind, items);
        }
        Ok(Self { trajectories, expansion })
    }
}

/// Builds the request for item `index` of a recipe.
pub fn prepare_request(
    project: &Project,
    recipe: &Recipe,
    traj: &Trajectory,
    index: usize,
    ctx: &RequestContext<'_>,
) -> Result<GenerationRequest, PipelineError> {
    let views = recipe.views();
    let rendered = render_views(&traj.demo, &traj.robot, &project.task.objects, &project.config.render, &views)?;
    let input =
        RecipeInput { rendered: &rendered, source: &project.sources[traj.source].demo, scene_seed: traj.scene_seed };
    let seed = derive(project.config.seed, &format!("request/{}", recipe.kind()), index as u64);
    Ok(build_request(recipe, &input, ctx, seed)?)
}

pub fn episode_id(kind: RecipeKind, index: usize) -> String {
    format!("{kind}-{index:05}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub recipe: RecipeKind,
    pub index: usize,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct BuildReport {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    pub failures: Vec<ItemFailure>,
    /// Requested minus produced, per recipe, when short.
    pub shortfall: BTreeMap<RecipeKind, usize>,
    pub expansion: Option<ExpansionSummary>,
    pub prompts: PromptProvenance,
}

impl BuildReport {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty() && self.shortfall.is_empty()
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))
}

/// Runs every configured recipe and writes the dataset to the output
/// directory. Per-item failures are collected, not fatal; the manifest
/// lists the episodes that were written.
pub fn build(project: &Project, services: &Services) -> Result<BuildReport, PipelineError> {
    let root = project.output_dir();
    if root.join(MANIFEST_FILE).exists() {
        return Err(PipelineError::OutputExists(root));
    }
    std::fs::create_dir_all(&root)?;
    let cfg = &project.config;
    pool(cfg.jobs)?.install(|| {
        let prompts = if cfg.service.llm_prompts {
            fill_prompt_library(services.llm.as_ref(), &project.prompts)
        } else {
            project.prompts.clone()
        };
        let plan = Plan::new(project)?;
        let variants = VariantCache::new(services.variant.as_ref());
        let ctx = RequestContext {
            task: &project.task.spec,
            assets: &project.assets,
            prompts: &prompts,
            variants: &variants,
            settings: &cfg.frames,
        };
        let poll = cfg.service.poll();
        let mut work = Vec::new();
        let mut shortfall = BTreeMap::new();
        for p in &cfg.recipes {
            let items = &plan.trajectories[&p.recipe.kind()];
            if items.len() < p.count {
                shortfall.insert(p.recipe.kind(), p.count - items.len());
            }
            work.extend(items.iter().enumerate().map(|(i, t)| (&p.recipe, i, t)));
        }
        let results: Vec<Result<EpisodeRecord, ItemFailure>> = work
            .par_iter()
            .map(|&(recipe, i, traj)| {
                let fail = |error: String| ItemFailure { recipe: recipe.kind(), index: i, error };
                let traj = traj.as_ref().map_err(|e| fail(e.clone()))?;
                let run = || -> Result<EpisodeRecord, PipelineError> {
                    let req = prepare_request(project, recipe, traj, i, &ctx)?;
                    let video = run_job(services.generation.as_ref(), &req, &poll)?;
                    Ok(dataset::write_episode(
                        &root,
                        &episode_id(recipe.kind(), i),
                        &video,
                        &traj.demo,
                        &traj.annotations,
                        &req,
                    )?)
                };
                run().map_err(|e| fail(e.to_string()))
            })
            .collect();
        let mut records = Vec::new();
        let mut failures = Vec::new();
        for r in results {
            match r {
                Ok(rec) => records.push(rec),
                Err(f) => failures.push(f),
            }
        }
        let manifest = Manifest::new(cfg.name.clone(), Some(cfg.seed), cfg.echo(), records, root.clone());
        let manifest_path = manifest.write()?;
        Ok(BuildReport {
            manifest,
            manifest_path,
            failures,
            shortfall,
            expansion: plan.expansion,
            prompts: prompts.provenance,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::fixtures::{write_project, FixtureOptions};
    use super::*;
    use crate::augment::RecipeKind;

    fn small_config(count: usize) -> PipelineConfig {
        PipelineConfig {
            name: "unit".into(),
            seed: 7,
            jobs: 1,
            paths: Paths {
                robots: "robots".into(),
                task: "tasks/lift_pot.json".into(),
                demos: "demos".into(),
                prompts: Some("prompts".into()),
                output: "out".into(),
            },
            frames: FrameSettings { out_size: 64, ..FrameSettings::default() },
            render: RenderSettings { width: 80, height: 60, ..RenderSettings::default() },
            recipes: RecipeKind::ALL
                .into_iter()
                .map(|k| RecipePlan {
                    count,
                    recipe: match k {
                        RecipeKind::CrossEmbodiment => Recipe::CrossEmbodiment { target_robot: "bimanual_B".into() },
                        _ => Recipe::default_for(k),
                    },
                })
                .collect(),
            service: ServiceConfig { poll_interval_ms: 1, ..ServiceConfig::default() },
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn build_writes_a_verifiable_dataset() {
        let dir = tempfile::tempdir().unwrap();
        write_project(dir.path(), &FixtureOptions { len: 12, width: 80, height: 60, demos: 2 }).unwrap();
        let project = Project::load(small_config(2), dir.path()).unwrap();
        let report = build(&project, &Services::mock()).unwrap();
        assert!(report.is_complete(), "{:?} {:?}", report.failures, report.shortfall);
        assert_eq!(report.manifest.len(), 14);
        assert!(report.manifest.counts_per_recipe.values().all(|&c| c == 2));
        let check = dataset::verify(&Manifest::load(&project.output_dir()).unwrap());
        assert!(check.passed(), "{check:?}");
        assert!(matches!(build(&project, &Services::mock()), Err(PipelineError::OutputExists(_))));
    }

    #[test]
    fn echo_omits_output_and_jobs() {
        let mut a = small_config(1);
        let mut b = a.clone();
        a.paths.output = "x".into();
        b.paths.output = "y".into();
        b.jobs = a.jobs + 3;
        assert_eq!(a.echo(), b.echo());
        assert!(a.echo()["paths"].get("output").is_none());
    }

    #[test]
    fn duplicate_recipes_are_rejected() {
        let mut c = small_config(1);
        c.recipes.push(c.recipes[0].clone());
        assert!(matches!(c.validate(), Err(PipelineError::Config(_))));
    }
}
