//! Clients for the external generation services: video generation, text
//! completion and image variants, plus in-process mocks.
//!
//! Wire protocol (UTF-8 JSON everywhere):
//!
//! ```text
//! POST /v1/jobs               Envelope                       -> {"job_id"}
//! GET  /v1/jobs/{id}                                         -> {"state", "detail"}
//! GET  /v1/jobs/{id}/result                                  -> {"model", "seed", "frames_png": [b64]}
//! POST /v1/complete           {"prompt"}                     -> {"text"}
//! POST /v1/variant            {"image_png": b64, "prompt"}   -> {"image_png": b64}
//! ```

mod http;
mod mock;
mod server;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{GenerationRequest, RecipeKind, RequestProvenance};
use crate::edgecontrol::{ControlVideo, EdgeMap};
use crate::raster::{GrayImage, RgbImage};
use crate::seed::fnv1a64;
use crate::viewcomposer::TileLayout;

pub use http::{HttpConfig, HttpService};
pub use mock::{hsv_to_rgb, hue_of, mock_generate, MockLlm, MockService, MockVariant, Offline, MOCK_MODEL};
pub use server::LoopbackServer;

pub const ENVELOPE_VERSION: &str = "craft-gen/1";
/// Control videos longer than this go through the artifact directory
/// when one is configured.
pub const INLINE_FRAME_LIMIT: usize = 64;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("service unavailable: {0}")]
    ServiceUnavailable(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("unknown job {0}")]
    UnknownJob(JobId),
    #[error("job {0} is not done")]
    NotReady(JobId),
    #[error("job {id} failed: {detail}")]
    Failed { id: JobId, detail: String },
    #[error("job {0} did not finish before the deadline")]
    Timeout(JobId),
    #[error("service returned {got} frames for a {expected}-frame control video")]
    FrameCount { expected: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JobId(String);

impl JobId {
    pub fn new(s: impl Into<String>) -> Result<Self, GenError> {
        let s = s.into();
        if s.is_empty() || !s.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(GenError::Protocol(format!("invalid job id {s:?}")));
        }
        Ok(Self(s))
    }

    /// FNV-1a of the envelope bytes, as 16 hex digits.
    pub fn from_envelope_bytes(bytes: &[u8]) -> Self {
        Self(format!("{:016x}", fnv1a64(bytes)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for JobId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobStatus {
    pub state: JobState,
    #[serde(default)]
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedVideo {
    pub frames: Vec<RgbImage>,
    pub seed: u64,
    pub model: String,
}

impl GeneratedVideo {
    /// Checks frame count and uniform dimensions against the request.
    pub fn check(&self, request: &GenerationRequest) -> Result<(), GenError> {
        let expected = request.control_video().len();
        if self.frames.len() != expected {
            return Err(GenError::FrameCount { expected, got: self.frames.len() });
        }
        let dims = request.control_video().dimensions();
        if let Some(f) = self.frames.iter().find(|f| (f.width(), f.height()) != dims) {
            return Err(GenError::Protocol(format!(
                "frame is {}x{}, control video is {}x{}",
                f.width(),
                f.height(),
                dims.0,
                dims.1
            )));
        }
        Ok(())
    }
}

pub trait GenerationService: Send + Sync {
    /// Idempotent: the same request yields the same job id.
    fn submit(&self, request: &GenerationRequest) -> Result<JobId, GenError>;
    fn poll(&self, id: &JobId) -> Result<JobStatus, GenError>;
    fn fetch(&self, id: &JobId) -> Result<GeneratedVideo, GenError>;
}

pub trait LlmClient: Send + Sync {
    /// Sends `prompt` and splits the reply into list entries.
    fn complete(&self, prompt: &str) -> Result<Vec<String>, GenError>;
}

pub trait ImageVariantClient: Send + Sync {
    /// Returns an edited copy of `base` with the same dimensions.
    fn variant(&self, base: &RgbImage, prompt: &str) -> Result<RgbImage, GenError>;
}

/// Splits a newline-delimited reply into entries, dropping blank lines and
/// leading list markers such as `-`, `*` or `3.`.
pub fn parse_list(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| {
            let l = l.trim();
            let l = l.trim_start_matches(['-', '*', '\u{2022}']).trim_start();
            let digits = l.chars().take_while(|c| c.is_ascii_digit()).count();
            let rest = &l[digits..];
            let l =
                if digits > 0 && (rest.starts_with('.') || rest.starts_with(')')) { rest[1..].trim_start() } else { l };
            l.trim().to_string()
        })
        .filter(|l| !l.is_empty())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PollOptions {
    pub interval: Duration,
    pub deadline: Duration,
}

impl Default for PollOptions {
    fn default() -> Self {
        Self { interval: Duration::from_millis(500), deadline: Duration::from_secs(1800) }
    }
}

/// Submits, polls until a terminal state and fetches, checking the frame
/// count against the control video.
pub fn run_job(
    service: &dyn GenerationService,
    request: &GenerationRequest,
    opts: &PollOptions,
) -> Result<GeneratedVideo, GenError> {
    let start = Instant::now();
    let id = service.submit(request)?;
    loop {
        let status = service.poll(&id)?;
        match status.state {
            JobState::Done => break,
            JobState::Failed => return Err(GenError::Failed { id, detail: status.detail }),
            _ => {}
        }
        if start.elapsed() >= opts.deadline {
            return Err(GenError::Timeout(id));
        }
        std::thread::sleep(opts.interval.min(opts.deadline.saturating_sub(start.elapsed())));
    }
    let video = service.fetch(&id)?;
    video.check(request)?;
    Ok(video)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlPayload {
    /// Base64 grayscale PNG per frame.
    Inline { frames_png: Vec<String> },
    /// Directory holding `000001.png, ...`.
    ArtifactDir { path: String },
}

/// The JSON body of `POST /v1/jobs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub version: String,
    pub recipe: RecipeKind,
    pub instruction: String,
    pub seed: u64,
    pub fps: f64,
    pub frame_count: usize,
    pub width: usize,
    pub height: usize,
    /// Tile slot labels; a single label for untiled requests.
    pub views: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tile_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_png: Option<String>,
    pub control: ControlPayload,
    pub provenance: RequestProvenance,
}

fn frame_name(i: usize) -> String {
    format!("{:06}.png", i + 1)
}

impl Envelope {
    /// Encodes a request. With `artifact_root` set, control videos longer
    /// than [`INLINE_FRAME_LIMIT`] are written under it (in a directory
    /// named by their content hash) instead of being inlined.
    pub fn from_request(request: &GenerationRequest, artifact_root: Option<&Path>) -> Result<Self, GenError> {
        let cv = request.control_video();
        let (width, height) = cv.dimensions();
        let pngs: Vec<Vec<u8>> = cv.frames.iter().map(|f| f.as_gray().to_png_bytes()).collect();
        let control = match artifact_root {
            Some(root) if cv.len() > INLINE_FRAME_LIMIT => {
                let mut all = Vec::new();
                for p in &pngs {
                    all.extend_from_slice(&(p.len() as u64).to_le_bytes());
                    all.extend_from_slice(p);
                }
                let dir = root.join(format!("control-{:016x}", fnv1a64(&all)));
                if !dir.join(frame_name(pngs.len() - 1)).exists() {
                    std::fs::create_dir_all(&dir)?;
                    for (i, p) in pngs.iter().enumerate() {
                        std::fs::write(dir.join(frame_name(i)), p)?;
                    }
                }
                ControlPayload::ArtifactDir { path: dir.to_string_lossy().into_owned() }
            }
            _ => ControlPayload::Inline { frames_png: pngs.iter().map(|p| B64.encode(p)).collect() },
        };
        Ok(Self {
            version: ENVELOPE_VERSION.into(),
            recipe: request.recipe(),
            instruction: request.instruction().into(),
            seed: request.seed(),
            fps: cv.fps,
            frame_count: cv.len(),
            width,
            height,
            views: request.views().to_vec(),
            tile_size: request.layout().map(|l| l.tile_size),
            reference_png: request.reference_image().map(|r| B64.encode(r.to_png_bytes())),
            control,
            provenance: request.provenance().clone(),
        })
    }

    /// Compact JSON; these bytes define the job id.
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("envelope serializes")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GenError> {
        let env: Envelope =
            serde_json::from_slice(bytes).map_err(|e| GenError::Protocol(format!("bad envelope: {e}")))?;
        if env.version != ENVELOPE_VERSION {
            return Err(GenError::Protocol(format!("unsupported envelope version {:?}", env.version)));
        }
        Ok(env)
    }

    pub fn job_id(&self) -> JobId {
        JobId::from_envelope_bytes(&self.to_bytes())
    }

    /// Decodes the envelope back into a request.
    pub fn to_request(&self) -> Result<GenerationRequest, GenError> {
        let gray: Vec<GrayImage> = match &self.control {
            ControlPayload::Inline { frames_png } => frames_png
                .iter()
                .map(|s| GrayImage::from_png_bytes(&decode_b64(s)?).map_err(protocol))
                .collect::<Result<_, _>>()?,
            ControlPayload::ArtifactDir { path } => {
                let dir = PathBuf::from(path);
                (0..self.frame_count)
                    .map(|i| GrayImage::from_png_bytes(&std::fs::read(dir.join(frame_name(i)))?).map_err(protocol))
                    .collect::<Result<_, _>>()?
            }
        };
        if gray.len() != self.frame_count {
            return Err(GenError::Protocol(format!(
                "{} control frames, envelope says {}",
                gray.len(),
                self.frame_count
            )));
        }
        let maps = gray.into_iter().map(|g| EdgeMap::from_gray(g).map_err(protocol)).collect::<Result<Vec<_>, _>>()?;
        let cv = ControlVideo::new(maps, self.fps).map_err(protocol)?;
        if cv.dimensions() != (self.width, self.height) {
            return Err(GenError::Protocol("control frame size disagrees with the envelope".into()));
        }
        let reference = match &self.reference_png {
            Some(s) => Some(RgbImage::from_png_bytes(&decode_b64(s)?).map_err(protocol)?),
            None => None,
        };
        let req = GenerationRequest::new(
            self.recipe,
            cv,
            reference,
            self.instruction.clone(),
            self.seed,
            self.provenance.clone(),
        )
        .map_err(protocol)?;
        match self.tile_size {
            Some(ts) => req.with_tiles(self.views.clone(), TileLayout::new(ts).map_err(protocol)?).map_err(protocol),
            None => Ok(req),
        }
    }
}

/// The JSON body of a job result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultArchive {
    pub model: String,
    pub seed: u64,
    pub frames_png: Vec<String>,
}

impl ResultArchive {
    pub fn from_video(v: &GeneratedVideo) -> Self {
        Self {
            model: v.model.clone(),
            seed: v.seed,
            frames_png: v.frames.iter().map(|f| B64.encode(f.to_png_bytes())).collect(),
        }
    }

    pub fn into_video(self) -> Result<GeneratedVideo, GenError> {
        let frames = self
            .frames_png
            .iter()
            .map(|s| RgbImage::from_png_bytes(&decode_b64(s)?).map_err(protocol))
            .collect::<Result<_, _>>()?;
        Ok(GeneratedVideo { frames, seed: self.seed, model: self.model })
    }
}

pub(crate) fn decode_b64(s: &str) -> Result<Vec<u8>, GenError> {
    B64.decode(s).map_err(|e| GenError::Protocol(format!("bad base64: {e}")))
}

pub(crate) fn encode_b64(bytes: &[u8]) -> String {
    B64.encode(bytes)
}

fn protocol(e: impl std::fmt::Display) -> GenError {
    GenError::Protocol(e.to_string())
}
