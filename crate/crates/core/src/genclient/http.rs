use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    decode_b64, encode_b64, Envelope, GenError, GeneratedVideo, GenerationService, ImageVariantClient, JobId,
    JobStatus, LlmClient, ResultArchive,
};
use crate::augment::GenerationRequest;
use crate::raster::RgbImage;

const BODY_LIMIT: u64 = 1 << 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Base URL, e.g. `http://127.0.0.1:8600`.
    pub endpoint: String,
    /// Sent as a bearer token when set.
    #[serde(skip)]
    pub token: Option<String>,
    /// Extra attempts after a transport failure or 5xx reply.
    pub retries: u32,
    /// First backoff delay; it doubles with every retry.
    pub backoff_ms: u64,
    /// Upper bound on a single HTTP call.
    pub timeout_ms: u64,
    /// Large control videos are written here instead of inlined.
    pub artifact_dir: Option<PathBuf>,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8600".into(),
            token: None,
            retries: 3,
            backoff_ms: 1000,
            timeout_ms: 120_000,
            artifact_dir: None,
        }
    }
}

impl HttpConfig {
    pub const TOKEN_VAR: &'static str = "BIMANGEN_SERVICE_TOKEN";

    /// Reads the bearer token from the environment.
    pub fn with_env_token(mut self) -> Self {
        self.token = std::env::var(Self::TOKEN_VAR).ok().filter(|t| !t.is_empty());
        self
    }
}

/// Client for a remote service speaking the job protocol.
pub struct HttpService {
    cfg: HttpConfig,
    agent: ureq::Agent,
}

enum Body<'a> {
    None,
    Bytes(&'a [u8]),
}

impl HttpService {
    pub fn new(cfg: HttpConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { cfg, agent }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.cfg
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.cfg.endpoint.trim_end_matches('/'))
    }

    /// One call with retries; returns the status and body of the final
    /// attempt, or `ServiceUnavailable` if every attempt failed.
    fn call(&self, method: &str, path: &str, body: Body<'_>) -> Result<(u16, Vec<u8>), GenError> {
        let url = self.url(path);
        let mut last = String::new();
        for attempt in 0..=self.cfg.retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(
                    self.cfg.backoff_ms.saturating_mul(1 << (attempt - 1).min(16)),
                ));
            }
            let auth = self.cfg.token.as_ref().map(|t| format!("Bearer {t}"));
            let result = match (&body, method) {
                (Body::Bytes(b), _) => {
                    let mut req = self.agent.post(&url).header("Content-Type", "application/json");
                    if let Some(a) = &auth {
                        req = req.header("Authorization", a);
                    }
                    req.send(*b)
                }
                (Body::None, _) => {
                    let mut req = self.agent.get(&url);
                    if let Some(a) = &auth {
                        req = req.header("Authorization", a);
                    }
                    req.call()
                }
            };
            match result {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let bytes = resp.body_mut().with_config().limit(BODY_LIMIT).read_to_vec();
                    match bytes {
                        Ok(b) if status < 500 => return Ok((status, b)),
                        Ok(b) => last = format!("{method} {url}: HTTP {status} {}", String::from_utf8_lossy(&b)),
                        Err(e) => last = format!("{method} {url}: {e}"),
                    }
                }
                Err(e) => last = format!("{method} {url}: {e}"),
            }
        }
        Err(GenError::ServiceUnavailable(last))
    }

    fn json<T: serde::de::DeserializeOwned>(
        &self,
        method: &str,
        path: &str,
        body: Body<'_>,
        id: Option<&JobId>,
    ) -> Result<T, GenError> {
        let (status, bytes) = self.call(method, path, body)?;
        match (status, id) {
            (200..=299, _) => serde_json::from_slice(&bytes)
                .map_err(|e| GenError::Protocol(format!("{path}: malformed response: {e}"))),
            (404, Some(id)) => Err(GenError::UnknownJob(id.clone())),
            (409, Some(id)) => Err(GenError::NotReady(id.clone())),
            _ => Err(GenError::Protocol(format!("{path}: HTTP {status} {}", String::from_utf8_lossy(&bytes)))),
        }
    }
}

#[derive(Deserialize)]
struct Submitted {
    job_id: String,
}

#[derive(Deserialize)]
struct Completion {
    text: String,
}

#[derive(Deserialize)]
struct VariantReply {
    image_png: String,
}

impl GenerationService for HttpService {
    fn submit(&self, request: &GenerationRequest) -> Result<JobId, GenError> {
        let env = Envelope::from_request(request, self.cfg.artifact_dir.as_deref())?;
        let bytes = env.to_bytes();
        let r: Submitted = self.json("POST", "/v1/jobs", Body::Bytes(&bytes), None)?;
        JobId::new(r.job_id)
    }

    fn poll(&self, id: &JobId) -> Result<JobStatus, GenError> {
        self.json("GET", &format!("/v1/jobs/{id}"), Body::None, Some(id))
    }

    fn fetch(&self, id: &JobId) -> Result<GeneratedVideo, GenError> {
        let archive: ResultArchive = self.json("GET", &format!("/v1/jobs/{id}/result"), Body::None, Some(id))?;
        archive.into_video()
    }
}

impl LlmClient for HttpService {
    fn complete(&self, prompt: &str) -> Result<Vec<String>, GenError> {
        let body = serde_json::to_vec(&json!({ "prompt": prompt })).expect("json");
        let r: Completion = self.json("POST", "/v1/complete", Body::Bytes(&body), None)?;
        Ok(super::parse_list(&r.text))
    }
}

impl ImageVariantClient for HttpService {
    fn variant(&self, base: &RgbImage, prompt: &str) -> Result<RgbImage, GenError> {
        let body = serde_json::to_vec(&json!({ "image_png": encode_b64(&base.to_png_bytes()), "prompt": prompt }))
            .expect("json");
        let r: VariantReply = self.json("POST", "/v1/variant", Body::Bytes(&body), None)?;
        let img =
            RgbImage::from_png_bytes(&decode_b64(&r.image_png)?).map_err(|e| GenError::Protocol(e.to_string()))?;
        if (img.width(), img.height()) != (base.width(), base.height()) {
            return Err(GenError::Protocol("variant changed the image size".into()));
        }
        Ok(img)
    }
}
