//! The `bimangen` command line: one subcommand per pipeline stage plus an
//! end-to-end `build`.
//!
//! Exit codes: 0 success, 1 partial result (attempt budget, service or
//! verification failures), 2 configuration error.

mod preview;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use bimangen::augment::{
    single_view_control, AugmentError, Recipe, RecipeKind, RequestContext, VariantCache, CAMERA_VIEW_ORDER,
};
use bimangen::dataset::{self, DatasetError, Manifest, MANIFEST_FILE};
use bimangen::edgecontrol::ControlVideoMeta;
use bimangen::genclient::run_job;
use bimangen::kinematics::retarget_trajectory;
use bimangen::kinematics::RetargetError;
use bimangen::pipeline::{
    self, fixtures, render_views, run_expansion, PipelineConfig, PipelineError, Plan, Project, RecipePlan, ServiceKind,
    Services,
};
use bimangen::trajectory::episode;
use bimangen::viewcomposer::{preprocess_with, tile, TileLayout, ViewSet};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

pub use preview::contact_sheet;

pub const DEFAULT_CONFIG: &str = "bimangen.toml";

#[derive(Debug, Parser)]
#[command(name = "bimangen", version, about = "Expand bimanual demonstrations into a generated dataset")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Global {
    /// Pipeline config (TOML); defaults to ./bimangen.toml.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Use the in-process mock services.
    #[arg(long, global = true, conflicts_with = "endpoint")]
    pub mock: bool,
    /// Base URL of a generation service.
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
    /// Episodes per selected recipe.
    #[arg(long, global = true)]
    pub count: Option<usize>,
    /// Comma-separated recipe subset.
    #[arg(long, global = true, value_delimiter = ',')]
    pub recipes: Option<Vec<RecipeKind>>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Write a self-contained demo project (robots, task, demos, assets, config).
    Fixtures {
        dir: PathBuf,
        #[arg(long, default_value_t = 40)]
        len: usize,
        #[arg(long, default_value_t = 640)]
        width: usize,
        #[arg(long, default_value_t = 480)]
        height: usize,
        #[arg(long, default_value_t = 3)]
        demos: usize,
    },
    /// Expand the sources into object_pose candidates.
    Expand,
    /// Retarget every source onto another robot.
    Retarget {
        #[arg(long)]
        target: String,
    },
    /// Extract control videos from renders of the sources.
    Edges {
        #[arg(long)]
        demo: Option<String>,
        #[arg(long, default_value = "third_person")]
        camera: String,
    },
    /// Tile recorded views of the sources into 2x2 frames.
    Tile {
        #[arg(long)]
        demo: Option<String>,
        #[arg(long, value_delimiter = ',')]
        views: Option<Vec<String>>,
    },
    /// Build requests for the configured recipes and run the jobs.
    Generate,
    /// Run every configured recipe and write a dataset with a manifest.
    Build,
    /// Contact sheet and stats for one episode of a dataset.
    Preview {
        id: String,
        #[arg(long)]
        root: Option<PathBuf>,
        /// Keep every k-th frame.
        #[arg(long, default_value_t = 5)]
        every: usize,
    },
    /// Re-check a dataset against its manifest.
    Verify {
        #[arg(long)]
        root: Option<PathBuf>,
    },
    /// Index a recorded dataset and merge it with a generated one.
    Merge {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        generated: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    Partial,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Failed(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Failed(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(_)
            | PipelineError::OutputExists(_)
            | PipelineError::Json(_)
            | PipelineError::Augment(AugmentError::InvalidOption(_) | AugmentError::MissingAsset(_)) => {
                CliError::Config(e.to_string())
            }
            e => CliError::Failed(e.to_string()),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Failed(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failed(e.to_string())
    }
}

fn failed(e: impl std::fmt::Display) -> CliError {
    CliError::Failed(e.to_string())
}

pub fn exit_code(r: &Result<Status, CliError>) -> i32 {
    match r {
        Ok(Status::Success) => 0,
        Ok(Status::Partial) | Err(CliError::Failed(_)) => 1,
        Err(CliError::Config(_)) => 2,
    }
}

/// Reads a TOML config; relative paths in it resolve against its directory.
pub fn load_config(path: &Path) -> Result<(PipelineConfig, PathBuf), CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let cfg: PipelineConfig =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf();
    Ok((cfg, base))
}

/// Applies flag overrides on top of the config file.
pub fn apply_overrides(cfg: &mut PipelineConfig, g: &Global) -> Result<(), CliError> {
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(j) = g.jobs {
        cfg.jobs = j;
    }
    if g.mock {
        cfg.service.kind = ServiceKind::Mock;
    }
    if let Some(url) = &g.endpoint {
        cfg.service.kind = ServiceKind::Http;
        cfg.service.http.endpoint = url.clone();
    }
    if let Some(out) = &g.out {
        cfg.paths.output = std::path::absolute(out)?;
    }
    if let Some(kinds) = &g.recipes {
        let mut plans = Vec::new();
        for &k in kinds {
            let plan = match cfg.recipes.iter().find(|p| p.recipe.kind() == k) {
                Some(p) => p.clone(),
                None if k == RecipeKind::CrossEmbodiment => {
                    return Err(CliError::Config("cross_embodiment needs a [[recipes]] entry with target_robot".into()))
                }
                None => RecipePlan { count: 1, recipe: Recipe::default_for(k) },
            };
            if !plans.iter().any(|p: &RecipePlan| p.recipe.kind() == k) {
                plans.push(plan);
            }
        }
        cfg.recipes = plans;
    }
    if let Some(n) = g.count {
        for p in &mut cfg.recipes {
            p.count = n;
        }
    }
    cfg.validate()?;
    Ok(())
}

fn project(g: &Global) -> Result<Project, CliError> {
    let path = g.config.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_CONFIG));
    let (mut cfg, base) = load_config(&path)?;
    apply_overrides(&mut cfg, g)?;
    Ok(Project::load(cfg, base)?)
}

/// The dataset root for commands that read one: `--root`, then `--out`,
/// then the config's output directory.
fn dataset_root(g: &Global, root: &Option<PathBuf>) -> Result<PathBuf, CliError> {
    if let Some(r) = root.as_ref().or(g.out.as_ref()) {
        return Ok(r.clone());
    }
    let path = g.config.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_CONFIG));
    let (cfg, base) = load_config(&path)?;
    Ok(base.join(cfg.paths.output))
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_vec_pretty(v).map_err(failed)?)?;
    Ok(())
}

/// Config written next to a fixture project; renders match the recorded size.
pub fn fixture_config(opts: &fixtures::FixtureOptions) -> PipelineConfig {
    let mut cfg = PipelineConfig { name: fixtures::TASK_NAME.into(), ..PipelineConfig::default() };
    cfg.paths.task = format!("tasks/{}.json", fixtures::TASK_NAME).into();
    cfg.paths.prompts = Some("prompts".into());
    cfg.render.width = opts.width;
    cfg.render.height = opts.height;
    cfg.recipes = RecipeKind::ALL
        .into_iter()
        .map(|k| RecipePlan {
            count: 10,
            recipe: match k {
                RecipeKind::CrossEmbodiment => Recipe::CrossEmbodiment { target_robot: "bimanual_B".into() },
                _ => Recipe::default_for(k),
            },
        })
        .collect();
    cfg
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<Status, CliError> {
    let g = &cli.global;
    match &cli.command {
        Command::Fixtures { dir, len, width, height, demos } => {
            let opts = fixtures::FixtureOptions { len: *len, width: *width, height: *height, demos: *demos };
            let task = fixtures::write_project(dir, &opts)?;
            let cfg_path = dir.join(DEFAULT_CONFIG);
            let text = toml::to_string_pretty(&fixture_config(&opts)).map_err(failed)?;
            std::fs::write(&cfg_path, text)?;
            writeln!(out, "wrote {} demos, task {} and config {}", demos, task.display(), cfg_path.display())?;
            Ok(Status::Success)
        }
        Command::Expand => cmd_expand(g, out),
        Command::Retarget { target } => cmd_retarget(g, target, out),
        Command::Edges { demo, camera } => cmd_edges(g, demo.as_deref(), camera, out),
        Command::Tile { demo, views } => cmd_tile(g, demo.as_deref(), views.clone(), out),
        Command::Generate => cmd_generate(g, out),
        Command::Build => cmd_build(g, out),
        Command::Preview { id, root, every } => {
            let root = dataset_root(g, root)?;
            let m = Manifest::load(&root).map_err(|e| CliError::Config(format!("{}: {e}", root.display())))?;
            let rec = m.get(id).ok_or_else(|| CliError::Config(format!("no episode {id:?} in {}", root.display())))?;
            let (sheet, stats) = contact_sheet(&m, rec, (*every).max(1))?;
            let dir = root.join("previews");
            std::fs::create_dir_all(&dir)?;
            sheet.save_png(dir.join(format!("{id}.png")))?;
            std::fs::write(dir.join(format!("{id}.txt")), &stats)?;
            write!(out, "{stats}")?;
            writeln!(out, "contact sheet: {}", dir.join(format!("{id}.png")).display())?;
            Ok(Status::Success)
        }
        Command::Verify { root } => {
            let root = dataset_root(g, root)?;
            let m = Manifest::load(&root).map_err(|e| CliError::Config(format!("{}: {e}", root.display())))?;
            let report = dataset::verify(&m);
            for p in &report.manifest {
                writeln!(out, "manifest: {p}")?;
            }
            for e in report.failed() {
                for p in &e.problems {
                    writeln!(out, "{}: {p}", e.id)?;
                }
            }
            let bad = report.failed().count();
            writeln!(out, "verified {} episodes, {} failed, digest {}", m.len(), bad, m.digest())?;
            Ok(if report.passed() { Status::Success } else { Status::Partial })
        }
        Command::Merge { real, generated } => {
            let gen_root = dataset_root(g, generated)?;
            let gen =
                Manifest::load(&gen_root).map_err(|e| CliError::Config(format!("{}: {e}", gen_root.display())))?;
            if real.join(MANIFEST_FILE).exists() {
                return Err(CliError::Config(format!("{} already has a manifest", real.display())));
            }
            let name = real.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "real".into());
            let real_m = dataset::index_real(real, &name)?;
            let merged = dataset::merge(&real_m, &gen)?;
            let path = merged.write()?;
            writeln!(
                out,
                "merged {} recorded + {} generated = {} episodes into {}",
                real_m.len(),
                gen.len(),
                merged.len(),
                path.display()
            )?;
            Ok(Status::Success)
        }
    }
}

fn cmd_expand(g: &Global, out: &mut dyn Write) -> Result<Status, CliError> {
    let p = project(g)?;
    let plan = p
        .config
        .recipes
        .iter()
        .find(|r| r.recipe.kind() == RecipeKind::ObjectPose)
        .cloned()
        .unwrap_or(RecipePlan { count: g.count.unwrap_or(0), recipe: Recipe::default_for(RecipeKind::ObjectPose) });
    let (report, exhausted) = run_expansion(&p, &plan.recipe, plan.count)?;
    let root = p.output_dir().join("candidates");
    for a in &report.accepted {
        let src = &p.sources.iter().find(|s| s.demo.id == a.provenance.source_id).expect("known source");
        let dir = root.join(&a.candidate.demo.id);
        if dir.exists() {
            return Err(CliError::Config(format!("{} already exists", dir.display())));
        }
        episode::write_episode(
            &dir,
            &a.candidate.demo,
            &src.annotations,
            serde_json::to_value(&a.provenance).map_err(failed)?,
            BTreeMap::new(),
        )
        .map_err(failed)?;
    }
    let summary = json!({
        "requested": plan.count,
        "accepted": report.accepted.len(),
        "attempts": report.attempts,
        "rejected_ik": report.rejected_ik,
        "rejected_by": report.rejected_by,
        "per_source": report.per_source,
        "budget_exhausted": exhausted,
        "ids": report.accepted.iter().map(|a| a.candidate.demo.id.clone()).collect::<Vec<_>>(),
    });
    write_json(&p.output_dir().join("expand_report.json"), &summary)?;
    writeln!(
        out,
        "accepted {} of {} after {} attempts ({} ik, {:?})",
        report.accepted.len(),
        plan.count,
        report.attempts,
        report.rejected_ik,
        report.rejected_by
    )?;
    if exhausted {
        writeln!(out, "attempt budget exhausted; partial results kept in {}", root.display())?;
        return Ok(Status::Partial);
    }
    Ok(Status::Success)
}

fn cmd_retarget(g: &Global, target: &str, out: &mut dyn Write) -> Result<Status, CliError> {
    let p = project(g)?;
    let src_robot = p.robot()?;
    let tgt = p.target_robot(target)?;
    let root = p.output_dir().join("retargeted");
    let mut entries = Vec::new();
    let mut any_failed = false;
    for s in &p.sources {
        match retarget_trajectory(src_robot, &tgt, &s.demo.actions, &p.config.ik) {
            Ok(r) => {
                let worst = r.pos_residuals.iter().map(|(a, b)| a.max(*b)).fold(0.0, f64::max);
                let mut demo = bimangen::trajectory::Demonstration::new(
                    format!("{}-{}", s.demo.id, tgt.name),
                    tgt.name.clone(),
                    r.actions,
                    s.demo.object_track.clone(),
                )
                .map_err(failed)?;
                demo.meta = s.demo.meta.clone();
                let dir = root.join(&demo.id);
                episode::write_episode(
                    &dir,
                    &demo,
                    &s.annotations,
                    json!({ "source_id": s.demo.id, "target_robot": tgt.name }),
                    BTreeMap::new(),
                )
                .map_err(failed)?;
                writeln!(out, "{} -> {}: max residual {:.2e} m", s.demo.id, demo.id, worst)?;
                entries.push(json!({ "source": s.demo.id, "ok": true, "max_pos_residual": worst, "pos_residuals": r.pos_residuals }));
            }
            Err(e) => {
                any_failed = true;
                let detail = match &e {
                    RetargetError::RetargetFailure { timestep, arm, residual } => {
                        json!({ "timestep": timestep, "arm": arm, "residual": residual })
                    }
                    other => json!({ "error": other.to_string() }),
                };
                writeln!(out, "{}: {e}", s.demo.id)?;
                entries.push(json!({ "source": s.demo.id, "ok": false, "failure": detail }));
            }
        }
    }
    write_json(&p.output_dir().join("retarget_report.json"), &json!({ "target": tgt.name, "sources": entries }))?;
    Ok(if any_failed { Status::Partial } else { Status::Success })
}

fn pick_sources<'a>(p: &'a Project, demo: Option<&str>) -> Result<Vec<&'a pipeline::SourceDemo>, CliError> {
    let v: Vec<_> = p.sources.iter().filter(|s| demo.is_none_or(|d| s.demo.id == d)).collect();
    if v.is_empty() {
        return Err(CliError::Config(format!("no source demo {:?}", demo.unwrap_or_default())));
    }
    Ok(v)
}

fn cmd_edges(g: &Global, demo: Option<&str>, camera: &str, out: &mut dyn Write) -> Result<Status, CliError> {
    let p = project(g)?;
    let robot = p.robot()?;
    let s = &p.config.frames;
    for src in pick_sources(&p, demo)? {
        let rendered = render_views(&src.demo, robot, &p.task.objects, &p.config.render, &[camera.to_string()])?;
        let video = single_view_control(&rendered, camera, s).map_err(PipelineError::from)?;
        let (w, h) = video.dimensions();
        let meta =
            ControlVideoMeta { fps: s.fps, frames: video.len(), width: w, height: h, canny: s.canny, filter: s.filter };
        let dir = p.output_dir().join("edges").join(&src.demo.id).join(camera);
        video.write_dir(&dir, &meta).map_err(failed)?;
        writeln!(out, "{}: {} control frames {}x{} -> {}", src.demo.id, video.len(), w, h, dir.display())?;
    }
    Ok(Status::Success)
}

fn cmd_tile(
    g: &Global,
    demo: Option<&str>,
    views: Option<Vec<String>>,
    out: &mut dyn Write,
) -> Result<Status, CliError> {
    let p = project(g)?;
    let views = views.unwrap_or_else(|| CAMERA_VIEW_ORDER.iter().map(|s| s.to_string()).collect());
    if views.is_empty() || views.len() > TileLayout::SLOTS {
        return Err(CliError::Config(format!("tile takes 1 to 4 views, got {}", views.len())));
    }
    let layout = p.config.frames.tile_layout().map_err(PipelineError::from)?;
    let pad = p.config.frames.pad_fraction;
    for src in pick_sources(&p, demo)? {
        let dir = p.output_dir().join("tiles").join(&src.demo.id);
        std::fs::create_dir_all(&dir)?;
        for t in 0..src.demo.len() {
            let set = views
                .iter()
                .map(|v| {
                    let frames = src
                        .demo
                        .camera_streams
                        .get(v)
                        .filter(|f| !f.is_empty())
                        .ok_or_else(|| CliError::Config(format!("{} has no {v} frames", src.demo.id)))?;
                    let img = frames[t].load().map_err(failed)?;
                    Ok((v.clone(), preprocess_with(&img, layout.tile_size, pad).map_err(failed)?))
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            let tiled = tile(&ViewSet::new(set).map_err(failed)?, &layout).map_err(failed)?;
            tiled.save_png(dir.join(episode::frame_file(t + 1)))?;
        }
        write_json(&dir.join("tiling.json"), &json!({ "order": views, "tile_size": layout.tile_size }))?;
        writeln!(out, "{}: {} tiled frames -> {}", src.demo.id, src.demo.len(), dir.display())?;
    }
    Ok(Status::Success)
}

fn cmd_generate(g: &Global, out: &mut dyn Write) -> Result<Status, CliError> {
    let p = project(g)?;
    let services = Services::from_config(&p.config.service);
    let plan = Plan::new(&p)?;
    let variants = VariantCache::new(services.variant.as_ref());
    let ctx = RequestContext {
        task: &p.task.spec,
        assets: &p.assets,
        prompts: &p.prompts,
        variants: &variants,
        settings: &p.config.frames,
    };
    let poll = p.config.service.poll();
    let root = p.output_dir().join("generated");
    let mut per_recipe: BTreeMap<String, usize> = BTreeMap::new();
    let mut failures = Vec::new();
    for rp in &p.config.recipes {
        let kind = rp.recipe.kind();
        for (i, traj) in plan.trajectories[&kind].iter().enumerate() {
            let id = pipeline::episode_id(kind, i);
            let result = traj.as_ref().map_err(|e| e.clone()).and_then(|t| {
                let req = pipeline::prepare_request(&p, &rp.recipe, t, i, &ctx).map_err(|e| e.to_string())?;
                run_job(services.generation.as_ref(), &req, &poll).map_err(|e| e.to_string())
            });
            match result {
                Ok(video) => {
                    let dir = root.join(&id);
                    std::fs::create_dir_all(&dir)?;
                    for (t, f) in video.frames.iter().enumerate() {
                        f.save_png(dir.join(episode::frame_file(t + 1)))?;
                    }
                    *per_recipe.entry(kind.to_string()).or_default() += 1;
                }
                Err(e) => {
                    writeln!(out, "{id}: {e}")?;
                    failures.push(json!({ "id": id, "error": e }));
                }
            }
        }
    }
    write_json(&root.join("report.json"), &json!({ "per_recipe": per_recipe, "failures": failures }))?;
    writeln!(out, "generated {:?}, {} failed", per_recipe, failures.len())?;
    Ok(if failures.is_empty() { Status::Success } else { Status::Partial })
}

fn cmd_build(g: &Global, out: &mut dyn Write) -> Result<Status, CliError> {
    let p = project(g)?;
    let services = Services::from_config(&p.config.service);
    let report = pipeline::build(&p, &services)?;
    for (kind, n) in &report.shortfall {
        writeln!(out, "{kind}: {n} short")?;
    }
    for f in &report.failures {
        writeln!(out, "{}: {}", pipeline::episode_id(f.recipe, f.index), f.error)?;
    }
    for rp in &p.config.recipes {
        let kind = rp.recipe.kind();
        let made = report.manifest.counts_per_recipe.get(kind.as_str()).copied().unwrap_or(0);
        if made == 0 && rp.count > 0 {
            let reason = report
                .failures
                .iter()
                .find(|f| f.recipe == kind)
                .map(|f| f.error.clone())
                .or_else(|| {
                    report
                        .expansion
                        .as_ref()
                        .filter(|_| kind == RecipeKind::ObjectPose)
                        .map(|e| format!("no candidate accepted in {} attempts ({:?})", e.attempts, e.rejected_by))
                })
                .unwrap_or_else(|| "no trajectories".into());
            writeln!(out, "skipped {kind}: {reason}")?;
        }
    }
    let summary = json!({
        "episodes": report.manifest.len(),
        "counts_per_recipe": report.manifest.counts_per_recipe,
        "failures": report.failures,
        "shortfall": report.shortfall,
        "expansion": report.expansion,
        "prompts": report.prompts,
        "digest": report.manifest.digest(),
    });
    write_json(&p.output_dir().join("build_report.json"), &summary)?;
    writeln!(
        out,
        "built {} episodes {:?}, manifest {} (digest {})",
        report.manifest.len(),
        report.manifest.counts_per_recipe,
        report.manifest_path.display(),
        report.manifest.digest()
    )?;
    Ok(if report.is_complete() { Status::Success } else { Status::Partial })
}
