//! Augmentation recipes: turning a trajectory plus its rendered frames
//! into a generation request.
//!
//! Every recipe keeps the control video tied to the trajectory and varies
//! only the reference image and the instruction.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edgecontrol::{control_frame, make_control_video, CannyParams, ControlVideo, EdgeError, FilterParams};
use crate::genclient::{GenError, ImageVariantClient, LlmClient};
use crate::raster::RgbImage;
use crate::seed;
use crate::trajectory::{Demonstration, PoseSampler, TrajectoryError};
use crate::viewcomposer::{preprocess_with, tile, tile_edges, TileLayout, ViewError, ViewSet, DEFAULT_PAD_FRACTION};

pub const THIRD_PERSON: &str = "third_person";
pub const CAMERA_VIEW_ORDER: [&str; 4] = ["third_person", "front", "side", "top"];
pub const WRIST_VIEW_ORDER: [&str; 3] = ["third_person", "left_wrist", "right_wrist"];
/// Joins the task instruction and a recipe phrase.
pub const INSTRUCTION_SEPARATOR: &str = "; ";

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("missing asset: {0}")]
    MissingAsset(String),
    #[error("request invariant violated: {0}")]
    InvariantViolation(String),
    #[error("invalid recipe options: {0}")]
    InvalidOption(String),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    View(#[from] ViewError),
    #[error(transparent)]
    Edge(#[from] EdgeError),
    #[error(transparent)]
    Service(#[from] GenError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecipeKind {
    ObjectPose,
    Lighting,
    ObjectColor,
    Background,
    CrossEmbodiment,
    CameraView,
    WristThirdPerson,
}

impl RecipeKind {
    pub const ALL: [RecipeKind; 7] = [
        RecipeKind::ObjectPose,
        RecipeKind::Lighting,
        RecipeKind::ObjectColor,
        RecipeKind::Background,
        RecipeKind::CrossEmbodiment,
        RecipeKind::CameraView,
        RecipeKind::WristThirdPerson,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RecipeKind::ObjectPose => "object_pose",
            RecipeKind::Lighting => "lighting",
            RecipeKind::ObjectColor => "object_color",
            RecipeKind::Background => "background",
            RecipeKind::CrossEmbodiment => "cross_embodiment",
            RecipeKind::CameraView => "camera_view",
            RecipeKind::WristThirdPerson => "wrist_third_person",
        }
    }

    pub fn uses_reference(self) -> bool {
        self != RecipeKind::Background
    }

    pub fn is_tiled(self) -> bool {
        matches!(self, RecipeKind::CameraView | RecipeKind::WristThirdPerson)
    }
}

impl fmt::Display for RecipeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RecipeKind {
    type Err = AugmentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RecipeKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| AugmentError::InvalidOption(format!("unknown recipe {s:?}")))
    }
}

/// A recipe kind with its options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Recipe {
    ObjectPose {
        #[serde(default)]
        sampler: PoseSampler,
    },
    Lighting,
    ObjectColor,
    Background,
    CrossEmbodiment {
        target_robot: String,
    },
    CameraView {
        #[serde(default = "default_camera_views")]
        views: Vec<String>,
    },
    WristThirdPerson,
}

fn default_camera_views() -> Vec<String> {
    CAMERA_VIEW_ORDER.iter().map(|s| s.to_string()).collect()
}

impl Recipe {
    pub fn kind(&self) -> RecipeKind {
        match self {
            Recipe::ObjectPose { .. } => RecipeKind::ObjectPose,
            Recipe::Lighting => RecipeKind::Lighting,
            Recipe::ObjectColor => RecipeKind::ObjectColor,
            Recipe::Background => RecipeKind::Background,
            Recipe::CrossEmbodiment { .. } => RecipeKind::CrossEmbodiment,
            Recipe::CameraView { .. } => RecipeKind::CameraView,
            Recipe::WristThirdPerson => RecipeKind::WristThirdPerson,
        }
    }

    /// The recipe with default options.
    pub fn default_for(kind: RecipeKind) -> Recipe {
        match kind {
            RecipeKind::ObjectPose => Recipe::ObjectPose { sampler: PoseSampler::default() },
            RecipeKind::Lighting => Recipe::Lighting,
            RecipeKind::ObjectColor => Recipe::ObjectColor,
            RecipeKind::Background => Recipe::Background,
            RecipeKind::CrossEmbodiment => Recipe::CrossEmbodiment { target_robot: String::new() },
            RecipeKind::CameraView => Recipe::CameraView { views: default_camera_views() },
            RecipeKind::WristThirdPerson => Recipe::WristThirdPerson,
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        match self {
            Recipe::CrossEmbodiment { target_robot } if target_robot.is_empty() => {
                Err(AugmentError::InvalidOption("cross_embodiment needs a target_robot".into()))
            }
            Recipe::CameraView { views } => {
                if views.is_empty() || views.len() > TileLayout::SLOTS {
                    return Err(AugmentError::InvalidOption(format!(
                        "camera_view takes 1 to 4 views, got {}",
                        views.len()
                    )));
                }
                if views[0] != THIRD_PERSON {
                    return Err(AugmentError::InvalidOption("camera_view must start with third_person".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Camera streams the request is built from, in tile slot order.
    pub fn views(&self) -> Vec<String> {
        match self {
            Recipe::CameraView { views } => views.clone(),
            Recipe::WristThirdPerson => WRIST_VIEW_ORDER.iter().map(|s| s.to_string()).collect(),
            _ => vec![THIRD_PERSON.to_string()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RequestProvenance {
    pub source_id: String,
    /// Scene sampler seed, for expanded candidates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene_seed: Option<u64>,
}

/// Conditioning for one generated video: control video, optional
/// reference image and instruction.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    recipe: RecipeKind,
    control_video: ControlVideo,
    reference_image: Option<RgbImage>,
    instruction: String,
    seed: u64,
    provenance: RequestProvenance,
    views: Vec<String>,
    layout: Option<TileLayout>,
}

impl GenerationRequest {
    /// Fails unless the reference image is present exactly when the recipe
    /// uses one. The request starts with a single `third_person` view.
    pub fn new(
        recipe: RecipeKind,
        control_video: ControlVideo,
        reference_image: Option<RgbImage>,
        instruction: impl Into<String>,
        seed: u64,
        provenance: RequestProvenance,
    ) -> Result<Self, AugmentError> {
        match (recipe.uses_reference(), &reference_image) {
            (false, Some(_)) => {
                return Err(AugmentError::InvariantViolation(format!("{recipe} requests carry no reference image")))
            }
            (true, None) => {
                return Err(AugmentError::InvariantViolation(format!("{recipe} requests need a reference image")))
            }
            _ => {}
        }
        if let Some(r) = &reference_image {
            if (r.width(), r.height()) != control_video.dimensions() {
                return Err(AugmentError::InvariantViolation(format!(
                    "reference is {}x{}, control video is {:?}",
                    r.width(),
                    r.height(),
                    control_video.dimensions()
                )));
            }
        }
        Ok(Self {
            recipe,
            control_video,
            reference_image,
            instruction: instruction.into(),
            seed,
            provenance,
            views: vec![THIRD_PERSON.to_string()],
            layout: None,
        })
    }

    /// Marks the request as tiled: `views` name the occupied slots in order.
    pub fn with_tiles(mut self, views: Vec<String>, layout: TileLayout) -> Result<Self, AugmentError> {
        if views.is_empty() || views.len() > TileLayout::SLOTS {
            return Err(AugmentError::InvalidOption(format!("{} views do not fit a 2x2 tile", views.len())));
        }
        let side = layout.canvas_size();
        if self.control_video.dimensions() != (side, side) {
            return Err(AugmentError::InvariantViolation(format!(
                "control video is {:?}, tiled canvas is {side}",
                self.control_video.dimensions()
            )));
        }
        self.views = views;
        self.layout = Some(layout);
        Ok(self)
    }

    pub fn recipe(&self) -> RecipeKind {
        self.recipe
    }

    pub fn control_video(&self) -> &ControlVideo {
        &self.control_video
    }

    pub fn reference_image(&self) -> Option<&RgbImage> {
        self.reference_image.as_ref()
    }

    pub fn instruction(&self) -> &str {
        &self.instruction
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn provenance(&self) -> &RequestProvenance {
        &self.provenance
    }

    pub fn views(&self) -> &[String] {
        &self.views
    }

    pub fn layout(&self) -> Option<TileLayout> {
        self.layout
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptProvenance {
    StaticFallback,
    ServiceGenerated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptLibrary {
    pub colors: Vec<String>,
    pub backgrounds: Vec<String>,
    pub lighting: Vec<String>,
    pub provenance: PromptProvenance,
}

const BUNDLED_COLORS: &str = include_str!("../fixtures/prompts/colors.txt");
const BUNDLED_BACKGROUNDS: &str = include_str!("../fixtures/prompts/backgrounds.txt");
const BUNDLED_LIGHTING: &str = include_str!("../fixtures/prompts/lighting.txt");

impl PromptLibrary {
    /// The bundled placeholder lists.
    pub fn bundled() -> Self {
        Self {
            colors: parse_prompt_file(BUNDLED_COLORS),
            backgrounds: parse_prompt_file(BUNDLED_BACKGROUNDS),
            lighting: parse_prompt_file(BUNDLED_LIGHTING),
            provenance: PromptProvenance::StaticFallback,
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        for (name, list) in [("colors", &self.colors), ("backgrounds", &self.backgrounds), ("lighting", &self.lighting)]
        {
            if list.is_empty() {
                return Err(AugmentError::MissingAsset(format!("empty {name} prompt list")));
            }
        }
        Ok(())
    }
}

/// One prompt per line; blank lines and `#` comments are skipped.
pub fn parse_prompt_file(text: &str) -> Vec<String> {
    dedup(text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(String::from))
}

fn dedup(items: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    items.into_iter().filter(|s| seen.insert(s.clone())).collect()
}

pub const COLOR_QUERY: &str = "List 20 distinct object colors, one per line.";
pub const BACKGROUND_QUERY: &str =
    "List 20 distinct background scene descriptions for a tabletop robot workspace, one per line.";
pub const LIGHTING_QUERY: &str = "List 8 distinct lighting conditions for a tabletop scene, one per line.";

/// Asks the LLM for the three prompt lists. Any failure or empty list
/// returns `fallback` unchanged, marked as static.
pub fn fill_prompt_library(llm: &dyn LlmClient, fallback: &PromptLibrary) -> PromptLibrary {
    let fetch = |q: &str| -> Option<Vec<String>> {
        let list = dedup(llm.complete(q).ok()?.into_iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()));
        (!list.is_empty()).then_some(list)
    };
    match (fetch(COLOR_QUERY), fetch(BACKGROUND_QUERY), fetch(LIGHTING_QUERY)) {
        (Some(colors), Some(backgrounds), Some(lighting)) => {
            PromptLibrary { colors, backgrounds, lighting, provenance: PromptProvenance::ServiceGenerated }
        }
        _ => PromptLibrary { provenance: PromptProvenance::StaticFallback, ..fallback.clone() },
    }
}

/// Uniform draw from `list` on the PRNG stream `(seed, stream)`.
pub fn sample_prompt<'a>(list: &'a [String], seed: u64, stream: &str) -> &'a str {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed, stream, 0));
    &list[rng.random_range(0..list.len())]
}

pub fn compose_instruction(base: &str, phrase: &str) -> String {
    format!("{base}{INSTRUCTION_SEPARATOR}{phrase}")
}

/// Lighting variants keyed by (base image, prompt), so each pair is
/// requested from the service at most once.
pub struct VariantCache<'a> {
    client: &'a dyn ImageVariantClient,
    cache: Mutex<HashMap<(u64, String), RgbImage>>,
}

impl<'a> VariantCache<'a> {
    pub fn new(client: &'a dyn ImageVariantClient) -> Self {
        Self { client, cache: Mutex::new(HashMap::new()) }
    }

    pub fn get(&self, base: &RgbImage, prompt: &str) -> Result<RgbImage, GenError> {
        let key = (image_key(base), prompt.to_string());
        if let Some(img) = self.cache.lock().expect("variant cache poisoned").get(&key) {
            return Ok(img.clone());
        }
        let img = self.client.variant(base, prompt)?;
        if (img.width(), img.height()) != (base.width(), base.height()) {
            return Err(GenError::Protocol(format!(
                "variant is {}x{}, base is {}x{}",
                img.width(),
                img.height(),
                base.width(),
                base.height()
            )));
        }
        self.cache.lock().expect("variant cache poisoned").insert(key, img.clone());
        Ok(img)
    }

    pub fn len(&self) -> usize {
        self.cache.lock().expect("variant cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn image_key(img: &RgbImage) -> u64 {
    let mut bytes = Vec::with_capacity(img.data().len() + 16);
    bytes.extend_from_slice(&(img.width() as u64).to_le_bytes());
    bytes.extend_from_slice(&(img.height() as u64).to_le_bytes());
    bytes.extend_from_slice(img.data());
    seed::fnv1a64(&bytes)
}

/// Per-task inputs from the task config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub instruction: String,
    /// 1-based frame showing gripper-object contact; a source's
    /// `contact_t` meta entry overrides it.
    #[serde(default)]
    pub contact_t: Option<usize>,
}

impl TaskSpec {
    pub fn contact_for(&self, demo: &Demonstration) -> Option<usize> {
        demo.meta.get("contact_t").and_then(|s| s.parse().ok()).or(self.contact_t)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Assets {
    /// The workspace with no objects on the table.
    pub empty_table: Option<RgbImage>,
    /// A scene showing the cross-embodiment target robot.
    pub target_robot: Option<RgbImage>,
}

/// Frame geometry and edge parameters shared by all requests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrameSettings {
    pub out_size: usize,
    pub pad_fraction: f64,
    pub fps: f64,
    pub canny: CannyParams,
    pub filter: FilterParams,
}

impl Default for FrameSettings {
    fn default() -> Self {
        Self {
            out_size: 512,
            pad_fraction: DEFAULT_PAD_FRACTION,
            fps: 10.0,
            canny: CannyParams::default(),
            filter: FilterParams::default(),
        }
    }
}

impl FrameSettings {
    pub fn tile_layout(&self) -> Result<TileLayout, AugmentError> {
        if !self.out_size.is_multiple_of(2) {
            return Err(AugmentError::InvalidOption(format!("tiled output needs an even size, got {}", self.out_size)));
        }
        Ok(TileLayout::new(self.out_size / 2)?)
    }
}

/// Shared, read-only state for building requests.
pub struct RequestContext<'a> {
    pub task: &'a TaskSpec,
    pub assets: &'a Assets,
    pub prompts: &'a PromptLibrary,
    pub variants: &'a VariantCache<'a>,
    pub settings: &'a FrameSettings,
}

/// The trajectory being rendered and the real episode it came from.
#[derive(Debug, Clone, Copy)]
pub struct RecipeInput<'a> {
    /// Carries the rendered frames the control video is extracted from:
    /// the source itself, an expanded candidate or a retargeted copy.
    pub rendered: &'a Demonstration,
    /// The recorded episode; reference frames are taken from it.
    pub source: &'a Demonstration,
    pub scene_seed: Option<u64>,
}

/// The third-person frame at `contact_t` (1-based), preprocessed.
pub fn pick_contact_frame(
    demo: &Demonstration,
    contact_t: Option<usize>,
    out_size: usize,
    pad_fraction: f64,
) -> Result<RgbImage, AugmentError> {
    contact_view(demo, THIRD_PERSON, contact_t, out_size, pad_fraction)
}

fn contact_view(
    demo: &Demonstration,
    camera: &str,
    contact_t: Option<usize>,
    size: usize,
    pad_fraction: f64,
) -> Result<RgbImage, AugmentError> {
    let t = contact_t.ok_or_else(|| AugmentError::MissingAsset(format!("{}: no contact_t annotation", demo.id)))?;
    let frames = stream(demo, camera)?;
    if t == 0 || t > frames.len() {
        return Err(AugmentError::MissingAsset(format!("{}: contact_t={t} outside 1..={}", demo.id, frames.len())));
    }
    Ok(preprocess_with(&frames[t - 1].load()?, size, pad_fraction)?)
}

fn stream<'a>(demo: &'a Demonstration, camera: &str) -> Result<&'a [crate::trajectory::FrameRef], AugmentError> {
    match demo.camera_streams.get(camera) {
        Some(s) if !s.is_empty() => Ok(s),
        _ => Err(AugmentError::MissingAsset(format!("{}: no {camera} frames", demo.id))),
    }
}

/// Control video from one camera stream, preprocessed to `out_size`.
pub fn single_view_control(
    demo: &Demonstration,
    camera: &str,
    settings: &FrameSettings,
) -> Result<ControlVideo, AugmentError> {
    let frames = stream(demo, camera)?;
    let gray = frames
        .par_iter()
        .map(|f| Ok(preprocess_with(&f.load()?, settings.out_size, settings.pad_fraction)?.to_gray()))
        .collect::<Result<Vec<_>, AugmentError>>()?;
    Ok(make_control_video(&gray, &settings.canny, &settings.filter, settings.fps)?)
}

/// Control video over a 2x2 tile: edges are extracted per view at tile
/// size and then tiled, so no edge crosses a tile border. Empty slots
/// hold no edges.
pub fn tiled_control(
    demo: &Demonstration,
    views: &[String],
    layout: &TileLayout,
    settings: &FrameSettings,
) -> Result<ControlVideo, AugmentError> {
    let streams = views.iter().map(|v| stream(demo, v)).collect::<Result<Vec<_>, _>>()?;
    let maps = (0..demo.len())
        .into_par_iter()
        .map(|i| {
            let per_view = streams
                .iter()
                .map(|s| {
                    let img = preprocess_with(&s[i].load()?, layout.tile_size, settings.pad_fraction)?;
                    Ok(control_frame(&img.to_gray(), &settings.canny, &settings.filter)?)
                })
                .collect::<Result<Vec<_>, AugmentError>>()?;
            Ok(tile_edges(&per_view, layout)?)
        })
        .collect::<Result<Vec<_>, AugmentError>>()?;
    Ok(ControlVideo::new(maps, settings.fps)?)
}

fn tiled_reference(
    demo: &Demonstration,
    views: &[String],
    contact_t: Option<usize>,
    layout: &TileLayout,
    pad_fraction: f64,
) -> Result<RgbImage, AugmentError> {
    let imgs = views
        .iter()
        .map(|v| Ok((v.clone(), contact_view(demo, v, contact_t, layout.tile_size, pad_fraction)?)))
        .collect::<Result<Vec<_>, AugmentError>>()?;
    Ok(tile(&ViewSet::new(imgs)?, layout)?)
}

fn asset(img: &Option<RgbImage>, what: &str, settings: &FrameSettings) -> Result<RgbImage, AugmentError> {
    let img = img.as_ref().ok_or_else(|| AugmentError::MissingAsset(what.into()))?;
    Ok(preprocess_with(img, settings.out_size, settings.pad_fraction)?)
}

/// Builds the request for one recipe application.
///
/// | recipe | control video | reference | instruction |
/// |---|---|---|---|
/// | object_pose | expanded candidate | contact frame | base |
/// | lighting | source | lit variant of the contact frame | base |
/// | object_color | source | empty table | base + color |
/// | background | source | none | base + background |
/// | cross_embodiment | retargeted trajectory | target robot scene | base |
/// | camera_view | tiled views | tiled contact frames | base |
/// | wrist_third_person | tiled third-person and wrist views | tiled contact frames | base |
pub fn build_request(
    recipe: &Recipe,
    input: &RecipeInput<'_>,
    ctx: &RequestContext<'_>,
    seed: u64,
) -> Result<GenerationRequest, AugmentError> {
    recipe.validate()?;
    let s = ctx.settings;
    let kind = recipe.kind();
    let contact_t = ctx.task.contact_for(input.source);
    let base = ctx.task.instruction.as_str();
    let provenance = RequestProvenance { source_id: input.source.id.clone(), scene_seed: input.scene_seed };
    if kind.is_tiled() {
        let views = recipe.views();
        let layout = s.tile_layout()?;
        let control = tiled_control(input.rendered, &views, &layout, s)?;
        let reference = tiled_reference(input.source, &views, contact_t, &layout, s.pad_fraction)?;
        return GenerationRequest::new(kind, control, Some(reference), base, seed, provenance)?
            .with_tiles(views, layout);
    }

    let control = single_view_control(input.rendered, THIRD_PERSON, s)?;
    let (reference, instruction) = match recipe {
        Recipe::ObjectPose { .. } => {
            (Some(pick_contact_frame(input.source, contact_t, s.out_size, s.pad_fraction)?), base.to_string())
        }
        Recipe::Lighting => {
            let frame = pick_contact_frame(input.source, contact_t, s.out_size, s.pad_fraction)?;
            ctx.prompts.validate()?;
            let prompt = sample_prompt(&ctx.prompts.lighting, seed, "prompt/lighting");
            (Some(ctx.variants.get(&frame, prompt)?), base.to_string())
        }
        Recipe::ObjectColor => {
            ctx.prompts.validate()?;
            let color = sample_prompt(&ctx.prompts.colors, seed, "prompt/color");
            (
                Some(asset(&ctx.assets.empty_table, "empty-table image", s)?),
                compose_instruction(base, &format!("object color: {color}")),
            )
        }
        Recipe::Background => {
            ctx.prompts.validate()?;
            let bg = sample_prompt(&ctx.prompts.backgrounds, seed, "prompt/background");
            (None, compose_instruction(base, &format!("background: {bg}")))
        }
        Recipe::CrossEmbodiment { .. } => {
            (Some(asset(&ctx.assets.target_robot, "target-robot reference image", s)?), base.to_string())
        }
        Recipe::CameraView { .. } | Recipe::WristThirdPerson => unreachable!("tiled recipes handled above"),
    };
    GenerationRequest::new(kind, control, reference, instruction, seed, provenance)
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    use super::*;
    use crate::genclient::{MockLlm, MockVariant, Offline};
    use crate::trajectory::FrameRef;

    struct Counting(AtomicUsize);

    impl ImageVariantClient for Counting {
        fn variant(&self, base: &RgbImage, prompt: &str) -> Result<RgbImage, GenError> {
            self.0.fetch_add(1, Ordering::SeqCst);
            MockVariant.variant(base, prompt)
        }
    }

    fn demo_with_frames(len: usize, cams: &[&str]) -> Demonstration {
        let (mut d, _, _) = crate::trajectory::test_support::demo(len);
        for (k, cam) in cams.iter().enumerate() {
            let frames = (0..len)
                .map(|i| {
                    FrameRef::Image(Arc::new(RgbImage::from_fn(40, 30, move |x, y| {
                        let on = x > 8 + i + 2 * k && x < 24 + i && y > 6 && y < 22;
                        if on {
                            [200, 180, 40]
                        } else {
                            [20, 30, 40]
                        }
                    })))
                })
                .collect();
            d.camera_streams.insert(cam.to_string(), frames);
        }
        d
    }

    fn settings() -> FrameSettings {
        FrameSettings { out_size: 32, ..FrameSettings::default() }
    }

    #[test]
    fn recipe_kind_strings_round_trip() {
        for k in RecipeKind::ALL {
            assert_eq!(k.as_str().parse::<RecipeKind>().unwrap(), k);
            assert_eq!(serde_json::to_value(k).unwrap(), k.as_str());
        }
        assert!("sepia".parse::<RecipeKind>().is_err());
    }

    #[test]
    fn recipe_options_round_trip() {
        let r: Recipe = serde_json::from_str(r#"{"kind": "camera_view"}"#).unwrap();
        assert_eq!(r.views(), CAMERA_VIEW_ORDER);
        let r: Recipe = serde_json::from_str(r#"{"kind": "cross_embodiment", "target_robot": "b"}"#).unwrap();
        assert_eq!(r.kind(), RecipeKind::CrossEmbodiment);
        assert!(Recipe::default_for(RecipeKind::CrossEmbodiment).validate().is_err());
        assert!(Recipe::CameraView { views: vec!["front".into()] }.validate().is_err());
    }

    #[test]
    fn request_reference_invariant() {
        let cv = ControlVideo::new(vec![crate::edgecontrol::EdgeMap::empty(4, 4)], 10.0).unwrap();
        let img = RgbImage::new(4, 4);
        let p = RequestProvenance::default();
        assert!(
            GenerationRequest::new(RecipeKind::Background, cv.clone(), Some(img.clone()), "x", 0, p.clone()).is_err()
        );
        assert!(GenerationRequest::new(RecipeKind::Background, cv.clone(), None, "x", 0, p.clone()).is_ok());
        for k in RecipeKind::ALL.into_iter().filter(|k| *k != RecipeKind::Background) {
            assert!(matches!(
                GenerationRequest::new(k, cv.clone(), None, "x", 0, p.clone()),
                Err(AugmentError::InvariantViolation(_))
            ));
        }
        let wrong = RgbImage::new(5, 4);
        assert!(GenerationRequest::new(RecipeKind::Lighting, cv, Some(wrong), "x", 0, p).is_err());
    }

    #[test]
    fn contact_frame_bounds() {
        let d = demo_with_frames(6, &[THIRD_PERSON]);
        let first = pick_contact_frame(&d, Some(1), 16, 0.08).unwrap();
        let direct = preprocess_with(&d.camera_streams[THIRD_PERSON][0].load().unwrap(), 16, 0.08).unwrap();
        assert_eq!(first, direct);
        let last = pick_contact_frame(&d, Some(6), 16, 0.08).unwrap();
        let direct = preprocess_with(&d.camera_streams[THIRD_PERSON][5].load().unwrap(), 16, 0.08).unwrap();
        assert_eq!(last, direct);
        assert!(matches!(pick_contact_frame(&d, None, 16, 0.08), Err(AugmentError::MissingAsset(_))));
        assert!(matches!(pick_contact_frame(&d, Some(7), 16, 0.08), Err(AugmentError::MissingAsset(_))));
    }

    #[test]
    fn prompt_library_fill_and_fallback() {
        let fallback = PromptLibrary::bundled();
        assert!(fallback.colors.len() >= 20 && fallback.backgrounds.len() >= 20 && fallback.lighting.len() >= 6);
        let lib = fill_prompt_library(&Offline, &fallback);
        assert_eq!(lib.provenance, PromptProvenance::StaticFallback);
        assert_eq!(lib.colors, fallback.colors);

        let lib = fill_prompt_library(&MockLlm::standard(), &fallback);
        assert_eq!(lib.provenance, PromptProvenance::ServiceGenerated);
        assert_eq!(lib.colors.len(), 20);
    }

    #[test]
    fn duplicate_prompts_are_removed_in_order() {
        struct Dups;
        impl LlmClient for Dups {
            fn complete(&self, _: &str) -> Result<Vec<String>, GenError> {
                Ok(["red", "blue", "red", " green", "blue", "", "teal"].map(String::from).to_vec())
            }
        }
        let lib = fill_prompt_library(&Dups, &PromptLibrary::bundled());
        // oracle: keep the first occurrence of each trimmed, nonempty entry
        let raw = ["red", "blue", "red", " green", "blue", "", "teal"];
        let mut expect: Vec<String> = Vec::new();
        for r in raw.iter().map(|s| s.trim()).filter(|s| !s.is_empty()) {
            if !expect.iter().any(|e| e == r) {
                expect.push(r.to_string());
            }
        }
        assert_eq!(lib.colors, expect);
    }

    #[test]
    fn sampling_covers_a_ten_entry_list() {
        let list: Vec<String> = (0..10).map(|i| format!("p{i}")).collect();
        let mut counts = [0usize; 10];
        for s in 0..1000u64 {
            let p = sample_prompt(&list, s, "prompt/color");
            counts[p[1..].parse::<usize>().unwrap()] += 1;
        }
        assert_eq!(counts.iter().sum::<usize>(), 1000);
        assert!(counts.iter().all(|&c| c >= 1));
        assert_eq!(counts, SAMPLING_COUNTS);
    }

    // Frozen from the seeded draw schedule above.
    const SAMPLING_COUNTS: [usize; 10] = [87, 85, 107, 116, 92, 114, 100, 84, 103, 112];

    #[test]
    fn variant_cache_calls_once_per_pair() {
        let client = Counting(AtomicUsize::new(0));
        let cache = VariantCache::new(&client);
        let a = RgbImage::filled(8, 8, [100, 100, 100]);
        let b = RgbImage::filled(8, 8, [90, 100, 100]);
        let x = cache.get(&a, "green ambient light").unwrap();
        let y = cache.get(&a, "green ambient light").unwrap();
        assert_eq!(x, y);
        cache.get(&b, "green ambient light").unwrap();
        cache.get(&a, "red neon glow").unwrap();
        assert_eq!(client.0.load(Ordering::SeqCst), 3);
        assert_eq!(cache.len(), 3);
    }

    fn build_all(d: &Demonstration) -> Vec<GenerationRequest> {
        let task = TaskSpec { instruction: "lift the bowl".into(), contact_t: Some(3) };
        let assets = Assets {
            empty_table: Some(RgbImage::filled(40, 30, [120, 100, 80])),
            target_robot: Some(RgbImage::filled(40, 30, [60, 60, 60])),
        };
        let prompts = PromptLibrary::bundled();
        let variants = MockVariant;
        let cache = VariantCache::new(&variants);
        let s = settings();
        let ctx = RequestContext { task: &task, assets: &assets, prompts: &prompts, variants: &cache, settings: &s };
        let input = RecipeInput { rendered: d, source: d, scene_seed: None };
        RecipeKind::ALL
            .iter()
            .map(|&k| {
                let r = match k {
                    RecipeKind::CrossEmbodiment => Recipe::CrossEmbodiment { target_robot: "bimanual_B".into() },
                    _ => Recipe::default_for(k),
                };
                build_request(&r, &input, &ctx, 42).unwrap()
            })
            .collect()
    }

    #[test]
    fn recipe_rules() {
        let d = demo_with_frames(5, &["third_person", "front", "side", "top", "left_wrist", "right_wrist"]);
        let reqs = build_all(&d);
        for r in &reqs {
            assert_eq!(r.reference_image().is_none(), r.recipe() == RecipeKind::Background);
            assert_eq!(r.control_video().len(), 5);
            assert_eq!(r.provenance().source_id, "demo");
        }
        let by = |k: RecipeKind| reqs.iter().find(|r| r.recipe() == k).unwrap();
        let cv = by(RecipeKind::Lighting).control_video();
        assert_eq!(by(RecipeKind::ObjectColor).control_video(), cv);
        assert_eq!(by(RecipeKind::Background).control_video(), cv);
        assert_eq!(by(RecipeKind::ObjectColor).reference_image().unwrap().get(16, 16), [120, 100, 80]);
        assert!(by(RecipeKind::ObjectColor).instruction().starts_with("lift the bowl; object color: "));
        assert!(by(RecipeKind::Background).instruction().starts_with("lift the bowl; background: "));
        assert_eq!(by(RecipeKind::Lighting).instruction(), "lift the bowl");

        let wrist = by(RecipeKind::WristThirdPerson);
        assert_eq!(wrist.views(), WRIST_VIEW_ORDER);
        let layout = wrist.layout().unwrap();
        let (x0, y0) = layout.origin(3);
        for f in &wrist.control_video().frames {
            assert_eq!((f.width(), f.height()), (32, 32));
            for y in y0..y0 + 16 {
                for x in x0..x0 + 16 {
                    assert!(!f.is_edge(x, y));
                }
            }
        }
        assert!(wrist.control_video().frames.iter().any(|f| f.edge_count() > 0));
        assert_eq!(by(RecipeKind::CameraView).views().len(), 4);
    }

    #[test]
    fn requests_are_deterministic() {
        let d = demo_with_frames(4, &["third_person", "front", "side", "top", "left_wrist", "right_wrist"]);
        assert_eq!(build_all(&d), build_all(&d));
    }

    #[test]
    fn singleton_color_is_injected() {
        let d = demo_with_frames(3, &[THIRD_PERSON]);
        let task = TaskSpec { instruction: "stack".into(), contact_t: Some(1) };
        let assets = Assets { empty_table: Some(RgbImage::new(40, 30)), target_robot: None };
        let prompts = PromptLibrary { colors: vec!["crimson".into()], ..PromptLibrary::bundled() };
        let cache = VariantCache::new(&MockVariant);
        let s = settings();
        let ctx = RequestContext { task: &task, assets: &assets, prompts: &prompts, variants: &cache, settings: &s };
        let input = RecipeInput { rendered: &d, source: &d, scene_seed: None };
        let r = build_request(&Recipe::ObjectColor, &input, &ctx, 1).unwrap();
        assert!(r.instruction().contains("crimson"));
        let err = build_request(&Recipe::CrossEmbodiment { target_robot: "b".into() }, &input, &ctx, 1).unwrap_err();
        assert!(matches!(err, AugmentError::MissingAsset(_)));
        let err = build_request(&Recipe::WristThirdPerson, &input, &ctx, 1).unwrap_err();
        assert!(matches!(err, AugmentError::MissingAsset(_)));
    }
}
