//! JSON-over-HTTP client for the guidance/metrics service and an in-process
//! stand-in implementing the same wire protocol.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{GuidanceError, GuidanceProvider, GuidanceRequest, GuidanceResponse};
use crate::imageops::{composite_over, ImageRGBA};

pub const GUIDANCE_PATH: &str = "/v1/guidance";
pub const METRICS_PATH: &str = "/v1/metrics";
pub const HEALTH_PATH: &str = "/health";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceEndpoint {
    pub base_url: String,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub auth_token: Option<String>,
    /// First retry delay; doubles on each further attempt.
    pub backoff_base_s: f64,
}

impl Default for ServiceEndpoint {
    fn default() -> Self {
        Self { base_url: String::new(), timeout_s: 30.0, max_retries: 3, auth_token: None, backoff_base_s: 0.5 }
    }
}

impl ServiceEndpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self { base_url: base_url.into(), ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err(format!("timeout_s must be positive, got {}", self.timeout_s));
        }
        if !(self.backoff_base_s >= 0.0 && self.backoff_base_s.is_finite()) {
            return Err(format!("backoff_base_s must be non-negative, got {}", self.backoff_base_s));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(format!("base_url '{}' must start with http:// or https://", self.base_url));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemoteMetrics {
    pub lpips: f64,
    pub clip_similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthStatus {
    pub status: String,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceWireRequest {
    pub rendered_png_b64: String,
    pub reference_png_b64: String,
    pub delta_elevation_deg: f64,
    pub delta_azimuth_deg: f64,
    pub delta_radius: f64,
    pub step: usize,
    pub total_steps: usize,
    pub request_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceWireResponse {
    pub target_png_b64: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsWireRequest {
    pub image_a_png_b64: String,
    pub image_b_png_b64: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

pub fn encode_image(img: &ImageRGBA) -> Result<String, GuidanceError> {
    Ok(B64.encode(img.encode_png()?))
}

pub fn decode_image(b64: &str) -> Result<ImageRGBA, GuidanceError> {
    let bytes = B64.decode(b64.trim()).map_err(|e| GuidanceError::Protocol(format!("bad base64: {e}")))?;
    ImageRGBA::decode_png(&bytes).map_err(|e| GuidanceError::Protocol(format!("bad PNG payload: {e}")))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

/// Moves request bodies to the service. `Err` means no HTTP response was
/// received at all.
pub trait Transport: Send + Sync {
    fn post_json(&self, path: &str, body: &str, headers: &[(&str, String)]) -> Result<HttpReply, String>;
    fn get(&self, path: &str) -> Result<HttpReply, String>;
}

pub struct HttpTransport {
    agent: ureq::Agent,
    base_url: String,
}

impl HttpTransport {
    pub fn new(endpoint: &ServiceEndpoint) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(endpoint.timeout_s)))
            .http_status_as_error(false)
            .build();
        Self { agent: config.into(), base_url: endpoint.base_url.trim_end_matches('/').to_string() }
    }

    fn read(resp: ureq::http::Response<ureq::Body>) -> Result<HttpReply, String> {
        let status = resp.status().as_u16();
        let body = resp.into_body().read_to_string().map_err(|e| e.to_string())?;
        Ok(HttpReply { status, body })
    }
}

impl Transport for HttpTransport {
    fn post_json(&self, path: &str, body: &str, headers: &[(&str, String)]) -> Result<HttpReply, String> {
        let mut req = self.agent.post(format!("{}{path}", self.base_url)).header("Content-Type", "application/json");
        for (k, v) in headers {
            req = req.header(*k, v.as_str());
        }
        Self::read(req.send(body).map_err(|e| e.to_string())?)
    }

    fn get(&self, path: &str) -> Result<HttpReply, String> {
        Self::read(self.agent.get(format!("{}{path}", self.base_url)).call().map_err(|e| e.to_string())?)
    }
}

pub struct GuidanceClient {
    endpoint: ServiceEndpoint,
    transport: Box<dyn Transport>,
    id_prefix: u64,
    counter: AtomicU64,
    retries: AtomicU64,
    requests: AtomicU64,
}

impl GuidanceClient {
    pub fn new(endpoint: ServiceEndpoint) -> Self {
        let transport = Box::new(HttpTransport::new(&endpoint));
        Self::with_transport(endpoint, transport)
    }

    pub fn with_transport(endpoint: ServiceEndpoint, transport: Box<dyn Transport>) -> Self {
        Self {
            endpoint,
            transport,
            id_prefix: rand::rng().random(),
            counter: AtomicU64::new(0),
            retries: AtomicU64::new(0),
            requests: AtomicU64::new(0),
        }
    }

    pub fn endpoint(&self) -> &ServiceEndpoint {
        &self.endpoint
    }

    /// Retries performed so far across all calls.
    pub fn retries(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }

    /// Logical requests issued (retries not counted).
    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    fn next_request_id(&self) -> String {
        format!("{:016x}-{}", self.id_prefix, self.counter.fetch_add(1, Ordering::Relaxed))
    }

    /// Delay before retry `attempt + 1`: `base · 2^attempt` plus up to 25 % jitter.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let base = self.endpoint.backoff_base_s * 2f64.powi(attempt as i32);
        let jitter = if base > 0.0 { rand::rng().random_range(0.0..0.25) * base } else { 0.0 };
        Duration::from_secs_f64(base + jitter)
    }

    /// Sends with retries on transport failures and 5xx replies; any other
    /// non-2xx status is a protocol error and is returned immediately.
    fn send(&self, path: &str, body: Option<&str>, idempotency_key: &str) -> Result<String, GuidanceError> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let mut headers = vec![("Idempotency-Key", idempotency_key.to_string())];
        if let Some(token) = &self.endpoint.auth_token {
            headers.push(("Authorization", format!("Bearer {token}")));
        }
        let attempts = self.endpoint.max_retries + 1;
        let mut last: Result<HttpReply, String> = Err("no attempt made".into());
        for attempt in 0..attempts {
            if attempt > 0 {
                self.retries.fetch_add(1, Ordering::Relaxed);
                std::thread::sleep(self.backoff(attempt - 1));
            }
            last = match body {
                Some(b) => self.transport.post_json(path, b, &headers),
                None => self.transport.get(path),
            };
            match &last {
                Ok(reply) if (200..300).contains(&reply.status) => return Ok(reply.body.clone()),
                Ok(reply) if reply.status >= 500 => {
                    log::warn!("{path}: HTTP {} (attempt {}/{attempts})", reply.status, attempt + 1);
                }
                Ok(reply) => {
                    let msg = serde_json::from_str::<ErrorBody>(&reply.body).map(|e| e.error).unwrap_or(reply.body.clone());
                    return Err(GuidanceError::Protocol(format!("{path}: HTTP {}: {msg}", reply.status)));
                }
                Err(e) => log::warn!("{path}: {e} (attempt {}/{attempts})", attempt + 1),
            }
        }
        match last {
            Ok(reply) => Err(GuidanceError::Server { status: reply.status, attempts, body: reply.body }),
            Err(message) => Err(GuidanceError::Transport { attempts, message }),
        }
    }

    pub fn health(&self) -> Result<HealthStatus, GuidanceError> {
        let body = self.send(HEALTH_PATH, None, &self.next_request_id())?;
        serde_json::from_str(&body).map_err(|e| GuidanceError::Protocol(format!("health reply: {e}")))
    }

    pub fn guidance(&self, req: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError> {
        req.validate()?;
        let request_id = self.next_request_id();
        let wire = GuidanceWireRequest {
            rendered_png_b64: encode_image(&req.rendered)?,
            reference_png_b64: encode_image(&req.reference)?,
            delta_elevation_deg: req.relative_pose.delta_elevation_deg,
            delta_azimuth_deg: req.relative_pose.delta_azimuth_deg,
            delta_radius: req.relative_pose.delta_radius,
            step: req.step,
            total_steps: req.total_steps,
            request_id: request_id.clone(),
        };
        let body = serde_json::to_string(&wire).map_err(|e| GuidanceError::Protocol(e.to_string()))?;
        let reply = self.send(GUIDANCE_PATH, Some(&body), &request_id)?;
        let wire: GuidanceWireResponse =
            serde_json::from_str(&reply).map_err(|e| GuidanceError::Protocol(format!("guidance reply: {e}")))?;
        let resp = GuidanceResponse { target: decode_image(&wire.target_png_b64)?, weight: wire.weight };
        resp.validate(req)?;
        Ok(resp)
    }

    pub fn metrics(&self, a: &ImageRGBA, b: &ImageRGBA) -> Result<RemoteMetrics, GuidanceError> {
        a.same_dims(b)?;
        let wire = MetricsWireRequest { image_a_png_b64: encode_image(a)?, image_b_png_b64: encode_image(b)? };
        let body = serde_json::to_string(&wire).map_err(|e| GuidanceError::Protocol(e.to_string()))?;
        let reply = self.send(METRICS_PATH, Some(&body), &self.next_request_id())?;
        let m: RemoteMetrics =
            serde_json::from_str(&reply).map_err(|e| GuidanceError::Protocol(format!("metrics reply: {e}")))?;
        if !(m.lpips.is_finite() && m.lpips >= 0.0) || !(m.clip_similarity.is_finite() && m.clip_similarity.abs() <= 1.0) {
            return Err(GuidanceError::Protocol(format!("metrics out of range: {m:?}")));
        }
        Ok(m)
    }
}

/// Guidance provider backed by the remote service.
pub struct RemoteGuidance {
    pub client: GuidanceClient,
}

impl GuidanceProvider for RemoteGuidance {
    fn provide_target(&mut self, req: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError> {
        self.client.guidance(req)
    }
}

/// Failure injected by [`MockService`] into the next call.
#[derive(Debug, Clone, PartialEq)]
pub enum MockFault {
    /// Reply with this status and an error body, without processing.
    Status(u16),
    /// Drop the connection before processing.
    Disconnect,
    /// Process the request, then lose the reply.
    LoseReply,
    /// Reply 200 with a target of the wrong size.
    WrongDimensions,
    /// Reply 200 with a body that is not valid JSON.
    Garbage,
}

#[derive(Debug, Default)]
struct MockState {
    faults: VecDeque<MockFault>,
    calls: Vec<(String, String)>,
    effects: HashMap<String, usize>,
    replies: HashMap<String, HttpReply>,
}

/// In-process implementation of the service's deterministic stub mode.
///
/// Guidance shifts the reference right by `round(delta_azimuth_deg)` pixels
/// with wrap-around, weight 1. Metrics report the mean absolute RGB
/// difference as `lpips` and `1 − min(1, mad)` as `clip_similarity`.
#[derive(Debug, Default)]
pub struct MockService {
    state: Mutex<MockState>,
}

impl MockService {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_faults(faults: impl IntoIterator<Item = MockFault>) -> Self {
        let s = Self::new();
        s.state.lock().unwrap().faults.extend(faults);
        s
    }

    /// (path, idempotency key) of every call received, including failed ones.
    pub fn calls(&self) -> Vec<(String, String)> {
        self.state.lock().unwrap().calls.clone()
    }

    /// How many times each idempotency key was actually processed.
    pub fn effects(&self) -> HashMap<String, usize> {
        self.state.lock().unwrap().effects.clone()
    }

    fn error(status: u16, msg: &str) -> HttpReply {
        HttpReply { status, body: serde_json::to_string(&ErrorBody { error: msg.into() }).unwrap() }
    }

    fn handle_guidance(body: &str, fault: Option<&MockFault>) -> HttpReply {
        let req: GuidanceWireRequest = match serde_json::from_str(body) {
            Ok(r) => r,
            Err(e) => return Self::error(400, &e.to_string()),
        };
        let (Ok(reference), Ok(rendered)) = (decode_image(&req.reference_png_b64), decode_image(&req.rendered_png_b64)) else {
            return Self::error(400, "undecodable image");
        };
        if reference.dims() != rendered.dims() {
            return Self::error(400, "rendered and reference sizes differ");
        }
        let target = if fault == Some(&MockFault::WrongDimensions) {
            ImageRGBA::new(reference.width + 1, reference.height)
        } else {
            shift_horizontal(&reference, req.delta_azimuth_deg.round() as i64)
        };
        let wire = GuidanceWireResponse { target_png_b64: encode_image(&target).unwrap(), weight: 1.0 };
        HttpReply { status: 200, body: serde_json::to_string(&wire).unwrap() }
    }

    fn handle_metrics(body: &str) -> HttpReply {
        let req: MetricsWireRequest = match serde_json::from_str(body) {
            Ok(r) => r,
            Err(e) => return Self::error(400, &e.to_string()),
        };
        let (Ok(a), Ok(b)) = (decode_image(&req.image_a_png_b64), decode_image(&req.image_b_png_b64)) else {
            return Self::error(400, "undecodable image");
        };
        if a.dims() != b.dims() {
            return Self::error(400, "image sizes differ");
        }
        let mad = stub_mean_abs_diff(&a, &b);
        let m = RemoteMetrics { lpips: mad, clip_similarity: 1.0 - mad.min(1.0) };
        HttpReply { status: 200, body: serde_json::to_string(&m).unwrap() }
    }
}

/// Mean absolute RGB difference, as the stub metrics define it.
pub fn stub_mean_abs_diff(a: &ImageRGBA, b: &ImageRGBA) -> f64 {
    let a = composite_over(a, [1.0; 3]);
    let b = composite_over(b, [1.0; 3]);
    let sum: f64 = a.pixels.iter().zip(&b.pixels).map(|(p, q)| (0..3).map(|c| (p[c] - q[c]).abs()).sum::<f64>()).sum();
    sum / (3 * a.pixels.len()).max(1) as f64
}

/// Moves every column right by `shift` pixels, wrapping around.
pub fn shift_horizontal(img: &ImageRGBA, shift: i64) -> ImageRGBA {
    let w = img.width as i64;
    ImageRGBA::from_fn(img.width, img.height, |x, y| {
        let src = (x as i64 - shift).rem_euclid(w.max(1));
        img.get(src as u32, y)
    })
}

impl Transport for MockService {
    fn post_json(&self, path: &str, body: &str, headers: &[(&str, String)]) -> Result<HttpReply, String> {
        let key = headers.iter().find(|(k, _)| *k == "Idempotency-Key").map(|(_, v)| v.clone()).unwrap_or_default();
        let mut st = self.state.lock().unwrap();
        st.calls.push((path.to_string(), key.clone()));
        let fault = st.faults.pop_front();
        match fault {
            Some(MockFault::Status(code)) => return Ok(Self::error(code, "injected failure")),
            Some(MockFault::Disconnect) => return Err("connection reset by peer".into()),
            Some(MockFault::Garbage) => return Ok(HttpReply { status: 200, body: "{not json".into() }),
            _ => {}
        }
        if let Some(cached) = st.replies.get(&key) {
            return Ok(cached.clone());
        }
        let reply = match path {
            GUIDANCE_PATH => Self::handle_guidance(body, fault.as_ref()),
            METRICS_PATH => Self::handle_metrics(body),
            _ => Self::error(404, "no such route"),
        };
        if reply.status == 200 {
            *st.effects.entry(key.clone()).or_default() += 1;
            st.replies.insert(key, reply.clone());
        }
        if fault == Some(MockFault::LoseReply) {
            return Err("reply lost".into());
        }
        Ok(reply)
    }

    fn get(&self, path: &str) -> Result<HttpReply, String> {
        let mut st = self.state.lock().unwrap();
        st.calls.push((path.to_string(), String::new()));
        match st.faults.pop_front() {
            Some(MockFault::Status(code)) => Ok(Self::error(code, "injected failure")),
            Some(MockFault::Disconnect) => Err("connection refused".into()),
            _ if path == HEALTH_PATH => Ok(HttpReply { status: 200, body: r#"{"status":"ok","model":"stub"}"#.into() }),
            _ => Ok(Self::error(404, "no such route")),
        }
    }
}

impl<T: Transport + ?Sized> Transport for std::sync::Arc<T> {
    fn post_json(&self, path: &str, body: &str, headers: &[(&str, String)]) -> Result<HttpReply, String> {
        (**self).post_json(path, body, headers)
    }

    fn get(&self, path: &str) -> Result<HttpReply, String> {
        (**self).get(path)
    }
}
