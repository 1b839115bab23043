use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use super::{
    Envelope, GenError, GeneratedVideo, GenerationService, ImageVariantClient, JobId, JobState, JobStatus, LlmClient,
};
use crate::augment::{parse_prompt_file, GenerationRequest};
use crate::raster::RgbImage;
use crate::seed::fnv1a64;
use crate::viewcomposer::resize_bilinear;

pub const MOCK_MODEL: &str = "mock-compositor/1";

const CANVAS_GRAY: u8 = 128;

/// Hue in degrees for an instruction: FNV-1a of its UTF-8 bytes mod 360.
pub fn hue_of(instruction: &str) -> u32 {
    (fnv1a64(instruction.as_bytes()) % 360) as u32
}

/// Fully saturated, full-value HSV to RGB in integer arithmetic.
pub fn hsv_to_rgb(hue: u32) -> [u8; 3] {
    let h = hue % 360;
    let f = h % 60;
    let up = (255 * f / 60) as u8;
    let down = (255 * (60 - f) / 60) as u8;
    match h / 60 {
        0 => [255, up, 0],
        1 => [down, 255, 0],
        2 => [0, 255, up],
        3 => [0, down, 255],
        4 => [up, 0, 255],
        _ => [255, 0, down],
    }
}

/// Deterministic stand-in for a video model: the reference image (or a
/// mid-gray canvas) with each frame's control edges painted in the
/// instruction's hue.
pub fn mock_generate(request: &GenerationRequest) -> GeneratedVideo {
    let cv = request.control_video();
    let (w, h) = cv.dimensions();
    let canvas = match request.reference_image() {
        Some(r) if (r.width(), r.height()) == (w, h) => r.clone(),
        Some(r) => resize_bilinear(r, w, h),
        None => RgbImage::filled(w, h, [CANVAS_GRAY; 3]),
    };
    let tint = hsv_to_rgb(hue_of(request.instruction()));
    let frames = cv
        .frames
        .iter()
        .map(|edges| {
            let mut f = canvas.clone();
            for y in 0..h {
                for x in 0..w {
                    if edges.is_edge(x, y) {
                        f.set(x, y, tint);
                    }
                }
            }
            f
        })
        .collect();
    GeneratedVideo { frames, seed: request.seed(), model: MOCK_MODEL.into() }
}

type FailRule = Box<dyn Fn(&GenerationRequest) -> Option<String> + Send + Sync>;

struct Job {
    request: Arc<GenerationRequest>,
    polls: u32,
    state: JobState,
    detail: String,
}

/// In-process generation service backed by [`mock_generate`].
///
/// Jobs finish after `delay_polls` polls (immediately by default). An
/// optional rule can fail selected jobs.
pub struct MockService {
    jobs: Mutex<HashMap<JobId, Job>>,
    delay_polls: u32,
    fail: Option<FailRule>,
}

impl Default for MockService {
    fn default() -> Self {
        Self::new()
    }
}

impl MockService {
    pub fn new() -> Self {
        Self { jobs: Mutex::new(HashMap::new()), delay_polls: 0, fail: None }
    }

    pub fn with_delay(mut self, polls: u32) -> Self {
        self.delay_polls = polls;
        self
    }

    /// Jobs for which `rule` returns a message end in the failed state.
    pub fn with_failures(
        mut self,
        rule: impl Fn(&GenerationRequest) -> Option<String> + Send + Sync + 'static,
    ) -> Self {
        self.fail = Some(Box::new(rule));
        self
    }

    pub fn job_count(&self) -> usize {
        self.jobs.lock().expect("job table poisoned").len()
    }
}

impl GenerationService for MockService {
    fn submit(&self, request: &GenerationRequest) -> Result<JobId, GenError> {
        let id = Envelope::from_request(request, None)?.job_id();
        self.jobs.lock().expect("job table poisoned").entry(id.clone()).or_insert_with(|| Job {
            request: Arc::new(request.clone()),
            polls: 0,
            state: JobState::Queued,
            detail: String::new(),
        });
        Ok(id)
    }

    fn poll(&self, id: &JobId) -> Result<JobStatus, GenError> {
        let mut jobs = self.jobs.lock().expect("job table poisoned");
        let job = jobs.get_mut(id).ok_or_else(|| GenError::UnknownJob(id.clone()))?;
        if !job.state.is_terminal() {
            if job.polls >= self.delay_polls {
                match self.fail.as_ref().and_then(|f| f(&job.request)) {
                    Some(detail) => {
                        job.state = JobState::Failed;
                        job.detail = detail;
                    }
                    None => job.state = JobState::Done,
                }
            } else if job.polls > 0 {
                job.state = JobState::Running;
            }
            job.polls += 1;
        }
        Ok(JobStatus { state: job.state, detail: job.detail.clone() })
    }

    fn fetch(&self, id: &JobId) -> Result<GeneratedVideo, GenError> {
        let request = {
            let jobs = self.jobs.lock().expect("job table poisoned");
            let job = jobs.get(id).ok_or_else(|| GenError::UnknownJob(id.clone()))?;
            match job.state {
                JobState::Done => Arc::clone(&job.request),
                JobState::Failed => return Err(GenError::Failed { id: id.clone(), detail: job.detail.clone() }),
                _ => return Err(GenError::NotReady(id.clone())),
            }
        };
        Ok(mock_generate(&request))
    }
}

/// Canned list replies chosen by keyword.
#[derive(Debug, Clone)]
pub struct MockLlm {
    replies: Vec<(String, Vec<String>)>,
}

impl MockLlm {
    /// Replies to prompts mentioning colors, backgrounds or lighting with
    /// fixed lists (20, 20 and 8 entries).
    pub fn standard() -> Self {
        Self {
            replies: vec![
                ("color".into(), parse_prompt_file(include_str!("../../fixtures/prompts/colors.txt"))),
                ("background".into(), parse_prompt_file(include_str!("../../fixtures/prompts/backgrounds.txt"))),
                ("lighting".into(), parse_prompt_file(include_str!("../../fixtures/prompts/lighting.txt"))),
            ],
        }
    }

    pub fn with_reply(mut self, keyword: impl Into<String>, list: Vec<String>) -> Self {
        let keyword = keyword.into();
        self.replies.retain(|(k, _)| *k != keyword);
        self.replies.insert(0, (keyword, list));
        self
    }
}

impl LlmClient for MockLlm {
    fn complete(&self, prompt: &str) -> Result<Vec<String>, GenError> {
        let lower = prompt.to_lowercase();
        self.replies
            .iter()
            .find(|(k, _)| lower.contains(k.as_str()))
            .map(|(_, v)| v.clone())
            .ok_or_else(|| GenError::Protocol(format!("mock llm has no reply for {prompt:?}")))
    }
}

/// Per-prompt color grade. Prompts naming a color family get a fixed
/// grade; others get per-channel gains from the prompt hash.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockVariant;

impl MockVariant {
    /// Channel gains in thousandths.
    pub fn gains(prompt: &str) -> [u32; 3] {
        let p = prompt.to_lowercase();
        let has = |words: &[&str]| words.iter().any(|w| p.contains(w));
        if has(&["green"]) {
            [800, 1250, 800]
        } else if has(&["red", "warm", "golden", "sunset"]) {
            [1250, 950, 800]
        } else if has(&["blue", "cool", "moon", "night"]) {
            [800, 950, 1250]
        } else if has(&["dim", "dark", "evening"]) {
            [600, 600, 600]
        } else {
            let h = fnv1a64(prompt.as_bytes());
            [0, 1, 2].map(|c| 700 + ((h >> (16 * c)) & 0xffff) as u32 * 600 / 0xffff)
        }
    }
}

impl ImageVariantClient for MockVariant {
    fn variant(&self, base: &RgbImage, prompt: &str) -> Result<RgbImage, GenError> {
        let g = Self::gains(prompt);
        Ok(RgbImage::from_fn(base.width(), base.height(), |x, y| {
            let px = base.get(x, y);
            [0, 1, 2].map(|c| ((px[c] as u32 * g[c] + 500) / 1000).min(255) as u8)
        }))
    }
}

/// A backend that is never reachable.
#[derive(Debug, Clone, Copy, Default)]
pub struct Offline;

impl LlmClient for Offline {
    fn complete(&self, _: &str) -> Result<Vec<String>, GenError> {
        Err(GenError::ServiceUnavailable("offline".into()))
    }
}

impl ImageVariantClient for Offline {
    fn variant(&self, _: &RgbImage, _: &str) -> Result<RgbImage, GenError> {
        Err(GenError::ServiceUnavailable("offline".into()))
    }
}

impl GenerationService for Offline {
    fn submit(&self, _: &GenerationRequest) -> Result<JobId, GenError> {
        Err(GenError::ServiceUnavailable("offline".into()))
    }

    fn poll(&self, _: &JobId) -> Result<JobStatus, GenError> {
        Err(GenError::ServiceUnavailable("offline".into()))
    }

    fn fetch(&self, _: &JobId) -> Result<GeneratedVideo, GenError> {
        Err(GenError::ServiceUnavailable("offline".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::super::test_support::request;
    use super::super::{run_job, PollOptions};
    use super::*;
    use crate::augment::RecipeKind;
    use crate::edgecontrol::{ControlVideo, EdgeMap};

    #[test]
    fn hsv_primaries() {
        assert_eq!(hsv_to_rgb(0), [255, 0, 0]);
        assert_eq!(hsv_to_rgb(120), [0, 255, 0]);
        assert_eq!(hsv_to_rgb(240), [0, 0, 255]);
        assert_eq!(hsv_to_rgb(60), [255, 255, 0]);
        assert_eq!(hsv_to_rgb(30), [255, 127, 0]);
        assert_eq!(hsv_to_rgb(359), [255, 0, 4]);
    }

    // Frozen table: FNV-1a 64 of the instruction bytes, mod 360.
    const HUE_TABLE: [(&str, u32); 5] = [
        ("", 77),
        ("lift the pot", 284),
        ("lift the pan", 236),
        ("lift the pot; background: a library with tall bookshelves", 315),
        ("handover the roller", 31),
    ];

    #[test]
    fn hue_golden_table() {
        for (text, hue) in HUE_TABLE {
            assert_eq!(hue_of(text), hue, "{text:?}");
        }
    }

    #[test]
    fn empty_edges_reproduce_the_reference() {
        let base = request(3, RecipeKind::Lighting, "x");
        let cv = ControlVideo::new(vec![EdgeMap::empty(16, 16); 3], 10.0).unwrap();
        let req = GenerationRequest::new(
            RecipeKind::Lighting,
            cv,
            base.reference_image().cloned(),
            "x",
            1,
            Default::default(),
        )
        .unwrap();
        let v = mock_generate(&req);
        assert_eq!(v.frames.len(), 3);
        assert!(v.frames.iter().all(|f| f == req.reference_image().unwrap()));
    }

    #[test]
    fn background_uses_gray_canvas_and_tinted_edges() {
        let req = request(2, RecipeKind::Background, "lift the pot");
        let v = mock_generate(&req);
        let tint = hsv_to_rgb(hue_of("lift the pot"));
        for (f, e) in v.frames.iter().zip(&req.control_video().frames) {
            for y in 0..16 {
                for x in 0..16 {
                    assert_eq!(f.get(x, y), if e.is_edge(x, y) { tint } else { [128; 3] });
                }
            }
        }
    }

    #[test]
    fn one_word_changes_hue_not_geometry() {
        let a = mock_generate(&request(2, RecipeKind::Background, "lift the pot"));
        let b = mock_generate(&request(2, RecipeKind::Background, "lift the pan"));
        assert_ne!(hue_of("lift the pot"), hue_of("lift the pan"));
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            for y in 0..16 {
                for x in 0..16 {
                    assert_eq!(fa.get(x, y) == [128; 3], fb.get(x, y) == [128; 3]);
                }
            }
        }
    }

    #[test]
    fn lifecycle_immediate() {
        let svc = MockService::new();
        let req = request(30, RecipeKind::ObjectPose, "x");
        let id = svc.submit(&req).unwrap();
        assert_eq!(svc.submit(&req).unwrap(), id);
        assert_eq!(svc.job_count(), 1);
        assert_eq!(svc.poll(&id).unwrap().state, JobState::Done);
        assert_eq!(svc.fetch(&id).unwrap().frames.len(), 30);
        let bogus = JobId::new("nope").unwrap();
        assert!(matches!(svc.poll(&bogus), Err(GenError::UnknownJob(_))));
        assert!(matches!(svc.fetch(&bogus), Err(GenError::UnknownJob(_))));
    }

    #[test]
    fn lifecycle_delayed_and_failed() {
        let svc = MockService::new().with_delay(2);
        let req = request(4, RecipeKind::ObjectPose, "x");
        let id = svc.submit(&req).unwrap();
        assert!(matches!(svc.fetch(&id), Err(GenError::NotReady(_))));
        let states: Vec<JobState> = (0..4).map(|_| svc.poll(&id).unwrap().state).collect();
        assert_eq!(states, [JobState::Queued, JobState::Running, JobState::Done, JobState::Done]);
        assert!(svc.fetch(&id).is_ok());

        let svc = MockService::new().with_failures(|r| r.instruction().contains("bad").then(|| "refused".to_string()));
        let err = run_job(&svc, &request(2, RecipeKind::ObjectPose, "bad"), &PollOptions::default()).unwrap_err();
        assert!(matches!(err, GenError::Failed { ref detail, .. } if detail == "refused"));
        assert!(run_job(&svc, &request(2, RecipeKind::ObjectPose, "good"), &PollOptions::default()).is_ok());
    }

    #[test]
    fn mock_is_deterministic() {
        let req = request(5, RecipeKind::Lighting, "x");
        assert_eq!(mock_generate(&req), mock_generate(&req));
        let svc = MockService::new();
        let a = run_job(&svc, &req, &PollOptions::default()).unwrap();
        assert_eq!(a, mock_generate(&req));
    }

    #[test]
    fn canned_llm_and_variant() {
        let colors = MockLlm::standard().complete("List colors").unwrap();
        assert_eq!(colors.len(), 20);
        assert!(MockLlm::standard().complete("tell a joke").is_err());
        let base = RgbImage::filled(5, 3, [100, 100, 100]);
        let g = MockVariant.variant(&base, "green ambient").unwrap();
        assert_eq!((g.width(), g.height()), (5, 3));
        assert_eq!(g.get(2, 1), [80, 125, 80]);
        assert_eq!(
            MockVariant.variant(&base, "some other light").unwrap(),
            MockVariant.variant(&base, "some other light").unwrap()
        );
    }
}
