use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde_json::json;

use super::{
    decode_b64, encode_b64, Envelope, GenError, GenerationService, ImageVariantClient, JobId, LlmClient, MockLlm,
    MockService, MockVariant, ResultArchive,
};
use crate::raster::RgbImage;

struct Shared {
    jobs: MockService,
    llm: MockLlm,
    token: Option<String>,
}

/// Serves a [`MockService`], [`MockLlm`] and [`MockVariant`] over the job
/// protocol on a loopback port. Intended for tests and offline demos of
/// the HTTP path; one thread per connection.
pub struct LoopbackServer {
    addr: SocketAddr,
    shared: Arc<std::sync::RwLock<Shared>>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl LoopbackServer {
    pub fn start(jobs: MockService) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(std::sync::RwLock::new(Shared { jobs, llm: MockLlm::standard(), token: None }));
        let stop = Arc::new(AtomicBool::new(false));
        let handle = {
            let shared = Arc::clone(&shared);
            let stop = Arc::clone(&stop);
            std::thread::spawn(move || {
                for conn in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = conn else { continue };
                    let shared = Arc::clone(&shared);
                    std::thread::spawn(move || {
                        let _ = serve(stream, &shared);
                    });
                }
            })
        };
        Ok(Self { addr, shared, stop, handle: Some(handle) })
    }

    /// Rejects requests without `Authorization: Bearer <token>`.
    pub fn require_token(self, token: &str) -> Self {
        self.shared.write().expect("server state poisoned").token = Some(token.into());
        self
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for LoopbackServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

struct Request {
    method: String,
    path: String,
    auth: Option<String>,
    body: Vec<u8>,
}

fn read_request(stream: &TcpStream) -> std::io::Result<Request> {
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();
    let mut len = 0usize;
    let mut auth = None;
    loop {
        let mut h = String::new();
        if reader.read_line(&mut h)? == 0 || h.trim().is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            match k.trim().to_ascii_lowercase().as_str() {
                "content-length" => len = v.trim().parse().unwrap_or(0),
                "authorization" => auth = Some(v.trim().to_string()),
                _ => {}
            }
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body)?;
    Ok(Request { method, path, auth, body })
}

fn respond(mut stream: &TcpStream, status: u16, body: &serde_json::Value) -> std::io::Result<()> {
    let bytes = serde_json::to_vec(body).expect("json");
    let reason = match status {
        200 => "OK",
        400 => "Bad Request",
        401 => "Unauthorized",
        404 => "Not Found",
        409 => "Conflict",
        _ => "Error",
    };
    write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        bytes.len()
    )?;
    stream.write_all(&bytes)?;
    stream.flush()
}

fn error_status(e: &GenError) -> u16 {
    match e {
        GenError::UnknownJob(_) => 404,
        GenError::NotReady(_) => 409,
        GenError::Protocol(_) => 400,
        _ => 500,
    }
}

fn serve(stream: TcpStream, shared: &std::sync::RwLock<Shared>) -> std::io::Result<()> {
    let req = read_request(&stream)?;
    let shared = shared.read().expect("server state poisoned");
    if let Some(t) = &shared.token {
        if req.auth.as_deref() != Some(&format!("Bearer {t}")) {
            return respond(&stream, 401, &json!({ "error": "missing or wrong bearer token" }));
        }
    }
    let segments: Vec<&str> = req.path.trim_matches('/').split('/').collect();
    let result: Result<serde_json::Value, GenError> = match (req.method.as_str(), segments.as_slice()) {
        ("POST", ["v1", "jobs"]) => Envelope::from_bytes(&req.body)
            .and_then(|env| env.to_request())
            .and_then(|r| shared.jobs.submit(&r))
            .map(|id| json!({ "job_id": id })),
        ("GET", ["v1", "jobs", id]) => {
            JobId::new(*id).and_then(|id| shared.jobs.poll(&id)).map(|s| serde_json::to_value(s).expect("json"))
        }
        ("GET", ["v1", "jobs", id, "result"]) => JobId::new(*id)
            .and_then(|id| shared.jobs.fetch(&id))
            .map(|v| serde_json::to_value(ResultArchive::from_video(&v)).expect("json")),
        ("POST", ["v1", "complete"]) => serde_json::from_slice::<serde_json::Value>(&req.body)
            .map_err(|e| GenError::Protocol(e.to_string()))
            .and_then(|v| {
                let prompt = v["prompt"].as_str().ok_or_else(|| GenError::Protocol("missing prompt".into()))?;
                shared.llm.complete(prompt)
            })
            .map(|list| json!({ "text": list.join("\n") })),
        ("POST", ["v1", "variant"]) => serde_json::from_slice::<serde_json::Value>(&req.body)
            .map_err(|e| GenError::Protocol(e.to_string()))
            .and_then(|v| {
                let prompt = v["prompt"].as_str().ok_or_else(|| GenError::Protocol("missing prompt".into()))?;
                let png =
                    decode_b64(v["image_png"].as_str().ok_or_else(|| GenError::Protocol("missing image".into()))?)?;
                let img = RgbImage::from_png_bytes(&png).map_err(|e| GenError::Protocol(e.to_string()))?;
                MockVariant.variant(&img, prompt)
            })
            .map(|img| json!({ "image_png": encode_b64(&img.to_png_bytes()) })),
        _ => Err(GenError::Protocol(format!("no route for {} {}", req.method, req.path))),
    };
    match result {
        Ok(v) => respond(&stream, 200, &v),
        Err(e) => respond(&stream, error_status(&e), &json!({ "error": e.to_string() })),
    }
}
