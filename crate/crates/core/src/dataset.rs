//! Generated datasets: episodes pairing generated frames with trajectory
//! actions, a checksummed manifest, merging and verification.
//!
//! ```text
//! <root>/manifest.json
//! <root>/episodes/<id>/...   episode format of `trajectory::episode`
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::augment::{GenerationRequest, RecipeKind};
use crate::genclient::GeneratedVideo;
use crate::seed::fnv1a64;
use crate::trajectory::episode::{self, frame_file};
use crate::trajectory::{Demonstration, FrameRef, SubtaskAnnotation, TrajectoryError};
use crate::viewcomposer::{untile, ViewError};

pub const SCHEMA: &str = "craft-ds/1";
/// Seven joints (zero-padded) plus one gripper value per arm per step.
pub const ACTION_SCHEMA: &str = "bimanual-7j1g/1";
pub const REAL_RECIPE: &str = "real";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("video has {got} frames, trajectory has {expected} steps")]
    LengthMismatch { expected: usize, got: usize },
    #[error("episode id {0:?} appears in both manifests")]
    IdCollision(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("episode directory {0} already exists")]
    Exists(PathBuf),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    View(#[from] ViewError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One episode as listed in a manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub id: String,
    /// A recipe name, or `real` for recorded episodes.
    pub recipe: String,
    pub source_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Episode directory, relative to the manifest root unless absolute.
    pub path: String,
    #[serde(rename = "T")]
    pub len: usize,
    pub cameras: Vec<String>,
    pub instruction: String,
    pub model: String,
    /// File path (relative to the episode directory) to FNV-1a 64 hex.
    pub files: BTreeMap<String, String>,
    pub digest: String,
}

fn hex(h: u64) -> String {
    format!("{h:016x}")
}

pub fn file_checksum(bytes: &[u8]) -> String {
    hex(fnv1a64(bytes))
}

/// Digest over the sorted `path<TAB>checksum<LF>` lines.
pub fn episode_digest(files: &BTreeMap<String, String>) -> String {
    let mut text = String::new();
    for (p, c) in files {
        text.push_str(p);
        text.push('\t');
        text.push_str(c);
        text.push('\n');
    }
    file_checksum(text.as_bytes())
}

fn rel_string(p: &Path) -> String {
    p.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect::<Vec<_>>().join("/")
}

fn checksums(dir: &Path, files: &[PathBuf]) -> Result<BTreeMap<String, String>, DatasetError> {
    files.iter().map(|f| Ok((rel_string(f), file_checksum(&std::fs::read(dir.join(f))?)))).collect()
}

/// Writes one generated episode to `<root>/episodes/<id>`.
///
/// Tiled videos are split back into their views first; the fourth,
/// empty slot of a three-view tile is dropped.
pub fn write_episode(
    root: &Path,
    id: &str,
    video: &GeneratedVideo,
    candidate: &Demonstration,
    annotations: &[SubtaskAnnotation],
    request: &GenerationRequest,
) -> Result<EpisodeRecord, DatasetError> {
    if video.frames.len() != candidate.len() {
        return Err(DatasetError::LengthMismatch { expected: candidate.len(), got: video.frames.len() });
    }
    let rel = Path::new("episodes").join(id);
    let dir = root.join(&rel);
    if dir.exists() {
        return Err(DatasetError::Exists(dir));
    }

    let views = request.views();
    let mut streams: BTreeMap<String, Vec<FrameRef>> = views.iter().map(|v| (v.clone(), Vec::new())).collect();
    match request.layout() {
        Some(layout) => {
            let labels: Vec<&str> = views.iter().map(String::as_str).collect();
            for f in &video.frames {
                for (label, img) in untile(f, &layout, &labels)?.into_inner() {
                    streams.get_mut(&label).expect("label from views").push(FrameRef::Image(Arc::new(img)));
                }
            }
        }
        None => {
            let s = streams.get_mut(&views[0]).expect("one view");
            s.extend(video.frames.iter().map(|f| FrameRef::Image(Arc::new(f.clone()))));
        }
    }

    let mut demo = candidate.clone();
    demo.id = id.to_string();
    demo.camera_streams = streams;
    let recipe = request.recipe();
    let mut extra = BTreeMap::new();
    extra.insert("recipe".into(), json!(recipe));
    extra.insert("instruction".into(), json!(request.instruction()));
    extra.insert("seed".into(), json!(request.seed()));
    extra.insert("model".into(), json!(video.model));
    extra.insert("reference_present".into(), json!(request.reference_image().is_some()));
    extra.insert("trajectory_id".into(), json!(candidate.id));
    if let Some(layout) = request.layout() {
        extra.insert("tiling".into(), json!({ "order": views, "tile_size": layout.tile_size }));
    }
    let files = episode::write_episode(&dir, &demo, annotations, serde_json::to_value(request.provenance())?, extra)?;
    let files = checksums(&dir, &files)?;
    Ok(EpisodeRecord {
        id: id.to_string(),
        recipe: recipe.as_str().into(),
        source_id: request.provenance().source_id.clone(),
        seed: Some(request.seed()),
        path: rel_string(&rel),
        len: demo.len(),
        cameras: views.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect(),
        instruction: request.instruction().into(),
        model: video.model.clone(),
        digest: episode_digest(&files),
        files,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub action_schema: String,
    pub name: String,
    pub tool_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Effective configuration the dataset was built with.
    #[serde(default)]
    pub config: serde_json::Value,
    pub counts_per_recipe: BTreeMap<String, usize>,
    pub counts_per_source: BTreeMap<String, usize>,
    /// Sorted by id.
    pub episodes: Vec<EpisodeRecord>,
    /// Directory relative episode paths resolve against.
    #[serde(skip)]
    pub root: PathBuf,
}

impl Manifest {
    pub fn new(
        name: impl Into<String>,
        seed: Option<u64>,
        config: serde_json::Value,
        mut episodes: Vec<EpisodeRecord>,
        root: impl Into<PathBuf>,
    ) -> Self {
        episodes.sort_by(|a, b| a.id.cmp(&b.id));
        let (counts_per_recipe, counts_per_source) = counts(&episodes);
        Self {
            schema: SCHEMA.into(),
            action_schema: ACTION_SCHEMA.into(),
            name: name.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config,
            counts_per_recipe,
            counts_per_source,
            episodes,
            root: root.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = serde_json::to_vec_pretty(self).expect("manifest serializes");
        b.push(b'\n');
        b
    }

    /// FNV-1a 64 of the manifest file bytes.
    pub fn digest(&self) -> String {
        file_checksum(&self.to_bytes())
    }

    pub fn write(&self) -> Result<PathBuf, DatasetError> {
        std::fs::create_dir_all(&self.root)?;
        let path = self.root.join(MANIFEST_FILE);
        std::fs::write(&path, self.to_bytes())?;
        Ok(path)
    }

    pub fn load(root: &Path) -> Result<Self, DatasetError> {
        let mut m: Manifest = serde_json::from_slice(&std::fs::read(root.join(MANIFEST_FILE))?)?;
        if m.schema != SCHEMA {
            return Err(DatasetError::SchemaMismatch(format!("manifest schema {:?}, expected {SCHEMA:?}", m.schema)));
        }
        m.root = root.to_path_buf();
        Ok(m)
    }

    pub fn episode_dir(&self, rec: &EpisodeRecord) -> PathBuf {
        self.root.join(&rec.path)
    }

    pub fn get(&self, id: &str) -> Option<&EpisodeRecord> {
        self.episodes.binary_search_by(|e| e.id.as_str().cmp(id)).ok().map(|i| &self.episodes[i])
    }
}

fn counts(episodes: &[EpisodeRecord]) -> (BTreeMap<String, usize>, BTreeMap<String, usize>) {
    let mut by_recipe = BTreeMap::new();
    let mut by_source = BTreeMap::new();
    for e in episodes {
        *by_recipe.entry(e.recipe.clone()).or_default() += 1;
        *by_source.entry(e.source_id.clone()).or_default() += 1;
    }
    (by_recipe, by_source)
}

/// Lists recorded episodes found in `root` or `root/episodes`.
pub fn index_real(root: &Path, name: &str) -> Result<Manifest, DatasetError> {
    let base = if root.join("episodes").is_dir() { root.join("episodes") } else { root.to_path_buf() };
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(&base)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("episode.json").is_file())
        .collect();
    dirs.sort();
    let mut records = Vec::with_capacity(dirs.len());
    for dir in dirs {
        let header = episode::read_header(&dir)?;
        let mut files =
            vec![PathBuf::from("episode.json"), PathBuf::from("actions.jsonl"), PathBuf::from("objects.jsonl")];
        for cam in &header.cameras {
            files.extend((1..=header.len).map(|t| Path::new("frames").join(cam).join(frame_file(t))));
        }
        files.sort();
        let sums = checksums(&dir, &files)?;
        let rel = dir.strip_prefix(root).unwrap_or(&dir);
        records.push(EpisodeRecord {
            id: header.id.clone(),
            recipe: REAL_RECIPE.into(),
            source_id: header.id.clone(),
            seed: None,
            path: rel_string(rel),
            len: header.len,
            cameras: header.cameras.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect(),
            instruction: header.meta.get("instruction").cloned().unwrap_or_default(),
            model: REAL_RECIPE.into(),
            digest: episode_digest(&sums),
            files: sums,
        });
    }
    Ok(Manifest::new(name, None, serde_json::Value::Null, records, root))
}

fn absolute(root: &Path, path: &str) -> String {
    let p = root.join(path);
    let p = std::path::absolute(&p).unwrap_or(p);
    p.to_string_lossy().into_owned()
}

/// Union of a recorded and a generated dataset. The merged manifest is
/// rooted at the recorded set; generated paths are made absolute when the
/// roots differ.
pub fn merge(real: &Manifest, gen: &Manifest) -> Result<Manifest, DatasetError> {
    for (what, a, b) in
        [("schema", &real.schema, &gen.schema), ("action schema", &real.action_schema, &gen.action_schema)]
    {
        if a != b {
            return Err(DatasetError::SchemaMismatch(format!("{what} {a:?} vs {b:?}")));
        }
    }
    if gen.is_empty() {
        return Ok(real.clone());
    }
    let ids: BTreeSet<&str> = real.episodes.iter().map(|e| e.id.as_str()).collect();
    if let Some(e) = gen.episodes.iter().find(|e| ids.contains(e.id.as_str())) {
        return Err(DatasetError::IdCollision(e.id.clone()));
    }
    let same_root = real.root == gen.root;
    let mut episodes = real.episodes.clone();
    episodes.extend(gen.episodes.iter().map(|e| {
        let mut e = e.clone();
        if !same_root {
            e.path = absolute(&gen.root, &e.path);
        }
        e
    }));
    let config = json!({ "real": real.name, "generated": gen.name, "generated_config": gen.config });
    Ok(Manifest::new(format!("{}+{}", real.name, gen.name), gen.seed, config, episodes, real.root.clone()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeCheck {
    pub id: String,
    pub problems: Vec<String>,
}

impl EpisodeCheck {
    pub fn passed(&self) -> bool {
        self.problems.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct VerifyReport {
    pub manifest: Vec<String>,
    pub episodes: Vec<EpisodeCheck>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.manifest.is_empty() && self.episodes.iter().all(EpisodeCheck::passed)
    }

    pub fn failed(&self) -> impl Iterator<Item = &EpisodeCheck> {
        self.episodes.iter().filter(|e| !e.passed())
    }
}

/// Re-checks counts, checksums, lengths and recipe invariants.
pub fn verify(manifest: &Manifest) -> VerifyReport {
    let mut report = VerifyReport::default();
    let (by_recipe, by_source) = counts(&manifest.episodes);
    if by_recipe != manifest.counts_per_recipe {
        report
            .manifest
            .push(format!("recipe counts {:?} do not match the index {by_recipe:?}", manifest.counts_per_recipe));
    }
    if by_source != manifest.counts_per_source {
        report.manifest.push("source counts do not match the index".into());
    }
    let mut seen = BTreeSet::new();
    for e in &manifest.episodes {
        if !seen.insert(&e.id) {
            report.manifest.push(format!("duplicate id {:?}", e.id));
        }
    }
    report.episodes = manifest
        .episodes
        .iter()
        .map(|e| EpisodeCheck { id: e.id.clone(), problems: check_episode(&manifest.episode_dir(e), e) })
        .collect();
    report
}

fn check_episode(dir: &Path, rec: &EpisodeRecord) -> Vec<String> {
    let mut problems = Vec::new();
    for (file, sum) in &rec.files {
        match std::fs::read(dir.join(file)) {
            Ok(bytes) if file_checksum(&bytes) == *sum => {}
            Ok(_) => problems.push(format!("checksum mismatch: {file}")),
            Err(e) => problems.push(format!("cannot read {file}: {e}")),
        }
    }
    if episode_digest(&rec.files) != rec.digest {
        problems.push("episode digest does not match the file list".into());
    }
    let header = match episode::read_header(dir) {
        Ok(h) => h,
        Err(e) => {
            problems.push(format!("header: {e}"));
            return problems;
        }
    };
    if header.len != rec.len {
        problems.push(format!("header T={} but manifest T={}", header.len, rec.len));
    }
    match episode::read_actions(dir) {
        Ok(a) if a.len() == rec.len => {}
        Ok(a) => problems.push(format!("{} action steps for T={}", a.len(), rec.len)),
        Err(e) => problems.push(format!("actions: {e}")),
    }
    for cam in &header.cameras {
        let n = std::fs::read_dir(dir.join("frames").join(cam))
            .map(|it| it.filter_map(Result::ok).filter(|f| f.path().extension().is_some_and(|x| x == "png")).count())
            .unwrap_or(0);
        if n != rec.len {
            problems.push(format!("{cam}: {n} frames for T={}", rec.len));
        }
    }
    let cams: BTreeSet<&str> = header.cameras.iter().map(String::as_str).collect();
    if rec.recipe != REAL_RECIPE {
        let reference = header.extra.get("reference_present").and_then(|v| v.as_bool());
        match rec.recipe.parse::<RecipeKind>() {
            Ok(kind) => {
                if reference != Some(kind.uses_reference()) {
                    problems.push(format!("{kind} episode records reference_present={reference:?}"));
                }
                if kind == RecipeKind::WristThirdPerson
                    && cams != BTreeSet::from(["left_wrist", "right_wrist", "third_person"])
                {
                    problems.push(format!("wrist_third_person episode has cameras {cams:?}"));
                }
                if !kind.is_tiled() && cams.len() != 1 {
                    problems.push(format!("{kind} episode has {} camera streams", cams.len()));
                }
            }
            Err(_) => problems.push(format!("unknown recipe {:?}", rec.recipe)),
        }
    }
    problems
}
