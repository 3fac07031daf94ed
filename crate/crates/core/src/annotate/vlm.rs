//! VLM wire protocol, HTTP client, and a fixture-driven mock (in-process and
//! over HTTP) that speaks the same contract.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::io::png::decode_rgb_png;
use crate::regions::palette_color;
use crate::{Error, Result};

pub const PROPOSE_PATH: &str = "/v1/propose";

/// Prompt sent alongside the images; `{category}` and `{region_ids}` are substituted.
pub const DEFAULT_PROMPT: &str = include_str!("prompt.md");

pub fn render_prompt(template: &str, category: &str, region_ids: &[u32]) -> String {
    let ids: Vec<String> = region_ids.iter().map(|r| r.to_string()).collect();
    template.replace("{category}", category).replace("{region_ids}", &ids.join(", "))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VlmRequest {
    pub category: String,
    pub image_png_b64: String,
    pub overlay_png_b64: String,
    pub region_ids: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    /// Overlay colour of each region, largest region first. When empty,
    /// colours follow [`palette_color`] by label.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub legend: Vec<RegionColor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionColor {
    pub region_id: u32,
    pub rgb: [u8; 3],
}

impl VlmRequest {
    pub fn new(category: &str, image_png: &[u8], overlay_png: &[u8], region_ids: Vec<u32>) -> Self {
        VlmRequest {
            category: category.to_string(),
            image_png_b64: B64.encode(image_png),
            overlay_png_b64: B64.encode(overlay_png),
            region_ids,
            prompt: None,
            legend: Vec::new(),
        }
    }

    pub fn overlay_png(&self) -> Result<Vec<u8>> {
        B64.decode(&self.overlay_png_b64).map_err(|e| Error::invalid(format!("overlay is not base64: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireProposal {
    pub instruction: String,
    pub region_id: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VlmResponse {
    pub proposals: Vec<WireProposal>,
}

#[derive(Debug, thiserror::Error)]
#[error("{message}")]
pub struct TransportError {
    pub message: String,
    /// Whether trying again could help (connection errors, 5xx, 429).
    pub retriable: bool,
}

pub trait VlmClient: Send + Sync {
    fn propose(&self, request: &VlmRequest) -> std::result::Result<VlmResponse, TransportError>;
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct InFlight {
    limit: usize,
    count: Mutex<usize>,
    cv: Condvar,
}

impl InFlight {
    fn acquire(&self) -> InFlightGuard<'_> {
        let mut n = self.count.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.limit {
            n = self.cv.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        InFlightGuard(self)
    }
}

struct InFlightGuard<'a>(&'a InFlight);

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        *self.0.count.lock().unwrap_or_else(|e| e.into_inner()) -= 1;
        self.0.cv.notify_one();
    }
}

/// JSON-over-HTTP client for a VLM service implementing [`PROPOSE_PATH`].
pub struct HttpVlmClient {
    url: String,
    agent: ureq::Agent,
    in_flight: InFlight,
}

impl HttpVlmClient {
    /// `endpoint` is the service base URL, e.g. `http://127.0.0.1:8080`.
    pub fn new(endpoint: &str, max_in_flight: usize, timeout: Duration) -> Self {
        HttpVlmClient {
            url: format!("{}{}", endpoint.trim_end_matches('/'), PROPOSE_PATH),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            in_flight: InFlight { limit: max_in_flight.max(1), count: Mutex::new(0), cv: Condvar::new() },
        }
    }
}

impl VlmClient for HttpVlmClient {
    fn propose(&self, request: &VlmRequest) -> std::result::Result<VlmResponse, TransportError> {
        let _slot = self.in_flight.acquire();
        match self.agent.post(&self.url).send_json(request) {
            Ok(resp) => {
                resp.into_json::<VlmResponse>().map_err(|e| TransportError { message: format!("bad response body: {e}"), retriable: false })
            }
            Err(ureq::Error::Status(code, resp)) => {
                let body = resp.into_string().unwrap_or_default();
                Err(TransportError { message: format!("HTTP {code}: {body}"), retriable: code >= 500 || code == 429 })
            }
            Err(e) => Err(TransportError { message: e.to_string(), retriable: true }),
        }
    }
}

/// One canned answer. Either names the region directly or points at an
/// overlay pixel `[row, col]` whose colour identifies the region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureProposal {
    pub instruction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel: Option<[usize; 2]>,
}

/// Category → canned proposals.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockFixture {
    pub categories: BTreeMap<String, Vec<FixtureProposal>>,
}

impl MockFixture {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::File { path: path.to_path_buf(), source })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::tensor::write_atomic(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    /// Merges another fixture; later entries for a category are appended.
    pub fn merge(&mut self, other: MockFixture) {
        for (cat, props) in other.categories {
            self.categories.entry(cat).or_default().extend(props);
        }
    }

    /// Answers a request the way a VLM reading the overlay would. Pixel
    /// proposals resolve to the first legend entry (or, without a legend, the
    /// lowest listed region) whose colour matches; pixels outside the image or on unpainted surface resolve to
    /// nothing and are left out.
    pub fn answer(&self, request: &VlmRequest) -> Result<VlmResponse> {
        let Some(props) = self.categories.get(&request.category) else {
            return Ok(VlmResponse::default());
        };
        let overlay = if props.iter().any(|p| p.region_id.is_none()) { Some(decode_rgb_png(&request.overlay_png()?)?) } else { None };
        let mut proposals = Vec::new();
        for p in props {
            let region = match (p.region_id, p.pixel, &overlay) {
                (Some(id), _, _) => Some(id),
                (None, Some([row, col]), Some(img)) if row < img.height && col < img.width => {
                    let rgb = img.pixel(row, col);
                    if request.legend.is_empty() {
                        request.region_ids.iter().copied().find(|&l| palette_color(l) == rgb)
                    } else {
                        request.legend.iter().find(|c| c.rgb == rgb && request.region_ids.contains(&c.region_id)).map(|c| c.region_id)
                    }
                }
                _ => None,
            };
            match region {
                Some(region_id) => proposals.push(WireProposal { instruction: p.instruction.clone(), region_id }),
                None => log::debug!("mock vlm: no region under pixel for {:?}", p.instruction),
            }
        }
        Ok(VlmResponse { proposals })
    }
}

/// In-process client backed by a fixture.
#[derive(Debug, Clone, Default)]
pub struct MockVlmClient {
    pub fixture: MockFixture,
}

impl MockVlmClient {
    pub fn new(fixture: MockFixture) -> Self {
        MockVlmClient { fixture }
    }
}

impl VlmClient for MockVlmClient {
    fn propose(&self, request: &VlmRequest) -> std::result::Result<VlmResponse, TransportError> {
        self.fixture.answer(request).map_err(|e| TransportError { message: e.to_string(), retriable: false })
    }
}

/// Scripted behaviour for the HTTP mock, used to exercise retries.
#[derive(Debug, Clone, Default)]
pub struct MockServerOptions {
    /// Respond 503 to this many requests before answering normally.
    pub fail_first: usize,
}

/// Fixture-backed HTTP server on a loopback port. Stops when dropped.
pub struct MockVlmServer {
    server: Arc<tiny_http::Server>,
    addr: SocketAddr,
    requests: Arc<Mutex<usize>>,
    thread: Option<JoinHandle<()>>,
}

impl MockVlmServer {
    pub fn start(fixture: MockFixture, options: MockServerOptions) -> Result<Self> {
        Self::bind("127.0.0.1:0", fixture, options)
    }

    pub fn bind(addr: &str, fixture: MockFixture, options: MockServerOptions) -> Result<Self> {
        let server = tiny_http::Server::http(addr).map_err(|e| Error::Vlm { attempts: 0, message: format!("bind {addr}: {e}") })?;
        let addr = server.server_addr().to_ip().ok_or_else(|| Error::invalid("mock server is not listening on an IP socket"))?;
        let server = Arc::new(server);
        let requests = Arc::new(Mutex::new(0usize));
        let (srv, count) = (server.clone(), requests.clone());
        let thread = std::thread::spawn(move || {
            for mut req in srv.incoming_requests() {
                let seen = {
                    let mut n = count.lock().unwrap_or_else(|e| e.into_inner());
                    *n += 1;
                    *n
                };
                let (status, body) = if req.method() != &tiny_http::Method::Post || req.url() != PROPOSE_PATH {
                    (404, r#"{"error":"not found"}"#.to_string())
                } else if seen <= options.fail_first {
                    (503, r#"{"error":"unavailable"}"#.to_string())
                } else {
                    let mut raw = String::new();
                    let parsed = req
                        .as_reader()
                        .read_to_string(&mut raw)
                        .map_err(|e| e.to_string())
                        .and_then(|_| serde_json::from_str::<VlmRequest>(&raw).map_err(|e| e.to_string()));
                    match parsed.and_then(|r| fixture.answer(&r).map_err(|e| e.to_string())) {
                        Ok(resp) => (200, serde_json::to_string(&resp).unwrap_or_default()),
                        Err(e) => (400, serde_json::json!({ "error": e }).to_string()),
                    }
                };
                let header = tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("static header");
                let _ = req.respond(tiny_http::Response::from_string(body).with_status_code(status).with_header(header));
            }
        });
        Ok(MockVlmServer { server, addr, requests, thread: Some(thread) })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Requests received so far, including failed ones.
    pub fn request_count(&self) -> usize {
        *self.requests.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Serves until the process is killed.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for MockVlmServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
