//! Gradient-oracle wire protocol: JSON bodies over HTTP with base64 `f32` tensors.
//!
//! Tensors travel as `{"shape": [H, W, 3], "dtype": "f32", "data": "<base64>"}` where
//! the payload is little-endian, row-major, channel-interleaved IEEE-754 floats.
//! Endpoints:
//!
//! | method | path           | request                                   | response                                   |
//! |--------|----------------|-------------------------------------------|--------------------------------------------|
//! | POST   | `/relight`     | `{lighting, image, seed}`                 | `{relit}`                                  |
//! | POST   | `/relight_vjp` | `{lighting, image, grad_out, seed}`       | `{grad_lighting, approx?}`                 |
//! | POST   | `/loss_grad`   | `{image, clean_image, text}`              | `{loss, match_term, nat_term, grad}`       |
//! | GET    | `/health`      |                                           | `{status, models}`                         |
//!
//! Failures carry a non-2xx status and `{code, message}`.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{GradientTensor, Image, CHANNELS};

pub const DTYPE_F32: &str = "f32";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireTensor {
    pub shape: Vec<usize>,
    pub dtype: String,
    pub data: String,
}

impl WireTensor {
    pub fn encode(height: usize, width: usize, values: &[f64]) -> Self {
        let mut bytes = Vec::with_capacity(values.len() * 4);
        for v in values {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        Self {
            shape: vec![height, width, CHANNELS],
            dtype: DTYPE_F32.to_string(),
            data: BASE64.encode(bytes),
        }
    }

    pub fn from_image(img: &Image) -> Self {
        Self::encode(img.height(), img.width(), img.data())
    }

    pub fn from_gradient(g: &GradientTensor) -> Self {
        Self::encode(g.height(), g.width(), g.data())
    }

    /// Validates shape and dtype and returns `(height, width, values)`.
    pub fn decode(&self) -> Result<(usize, usize, Vec<f64>)> {
        if self.dtype != DTYPE_F32 {
            return Err(Error::Parse(format!(
                "unsupported tensor dtype `{}`",
                self.dtype
            )));
        }
        let [h, w, c] = self.shape[..] else {
            return Err(Error::Parse(format!(
                "tensor shape {:?} is not [H, W, 3]",
                self.shape
            )));
        };
        if c != CHANNELS || h == 0 || w == 0 {
            return Err(Error::Parse(format!(
                "tensor shape {:?} is not [H, W, 3]",
                self.shape
            )));
        }
        let bytes = BASE64
            .decode(self.data.as_bytes())
            .map_err(|e| Error::Parse(format!("tensor base64: {e}")))?;
        if bytes.len() != h * w * c * 4 {
            return Err(Error::Parse(format!(
                "tensor payload has {} bytes, shape {:?} needs {}",
                bytes.len(),
                self.shape,
                h * w * c * 4
            )));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        Ok((h, w, values))
    }

    pub fn to_image(&self) -> Result<Image> {
        let (h, w, v) = self.decode()?;
        Image::new(h, w, v)
    }

    pub fn to_gradient(&self) -> Result<GradientTensor> {
        let (h, w, v) = self.decode()?;
        GradientTensor::new(h, w, v)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RelightRequest {
    pub lighting: WireTensor,
    pub image: WireTensor,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RelightResponse {
    pub relit: WireTensor,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RelightVjpRequest {
    pub lighting: WireTensor,
    pub image: WireTensor,
    pub grad_out: WireTensor,
    pub seed: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RelightVjpResponse {
    pub grad_lighting: WireTensor,
    /// Set by the server when the gradient is a straight-through approximation.
    #[serde(default)]
    pub approx: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LossGradRequest {
    pub image: WireTensor,
    pub clean_image: WireTensor,
    pub text: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LossGradResponse {
    pub loss: f64,
    pub match_term: f64,
    pub nat_term: f64,
    pub grad: WireTensor,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    #[serde(default)]
    pub models: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Base URL, e.g. `http://127.0.0.1:8900`.
    pub endpoint: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
}

fn default_timeout_secs() -> f64 {
    120.0
}

fn default_max_in_flight() -> usize {
    4
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout_secs: default_timeout_secs(),
            max_in_flight: default_max_in_flight(),
        }
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
pub(crate) struct Gate {
    active: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

pub(crate) struct Permit<'a>(&'a Gate);

impl Gate {
    pub(crate) fn new(limit: usize) -> Self {
        Self {
            active: Mutex::new(0),
            freed: Condvar::new(),
            limit: limit.max(1),
        }
    }

    pub(crate) fn acquire(&self) -> Permit<'_> {
        let mut active = self.active.lock().unwrap_or_else(|e| e.into_inner());
        while *active >= self.limit {
            active = self.freed.wait(active).unwrap_or_else(|e| e.into_inner());
        }
        *active += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut active = self.0.active.lock().unwrap_or_else(|e| e.into_inner());
        *active -= 1;
        self.0.freed.notify_one();
    }
}

/// Blocking JSON client for a gradient-oracle server.
#[derive(Debug)]
pub struct RemoteClient {
    config: RemoteConfig,
    agent: ureq::Agent,
    gate: Gate,
    id: String,
}

/// No practical cap on response bodies; tensors for large images exceed ureq's default.
const BODY_LIMIT: u64 = 1 << 34;

pub(crate) fn build_agent(timeout_secs: f64) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs_f64(timeout_secs.max(0.001))))
        .http_status_as_error(false)
        .build()
        .into()
}

pub(crate) fn read_json<T: DeserializeOwned>(
    resp: &mut ureq::http::Response<ureq::Body>,
) -> std::result::Result<T, ureq::Error> {
    resp.body_mut().with_config().limit(BODY_LIMIT).read_json()
}

impl RemoteClient {
    pub fn new(config: RemoteConfig) -> Self {
        let agent = build_agent(config.timeout_secs);
        let gate = Gate::new(config.max_in_flight);
        let id = format!("remote:{}", config.endpoint.trim_end_matches('/'));
        Self {
            config,
            agent,
            gate,
            id,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.config.endpoint.trim_end_matches('/'), path)
    }

    fn unavailable(&self, cause: impl std::fmt::Display) -> Error {
        Error::BackendUnavailable {
            backend: self.id.clone(),
            cause: cause.to_string(),
        }
    }

    fn finish<Resp: DeserializeOwned>(
        &self,
        path: &str,
        sent: std::result::Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> Result<Resp> {
        let mut resp = sent.map_err(|e| self.unavailable(e))?;
        let status = resp.status().as_u16();
        if !resp.status().is_success() {
            let (code, message) = read_json::<ErrorBody>(&mut resp)
                .map(|b| (b.code, b.message))
                .unwrap_or_else(|_| ("unknown".into(), "no error body".into()));
            return Err(Error::Remote {
                backend: self.id.clone(),
                status,
                code,
                message,
            });
        }
        read_json(&mut resp)
            .map_err(|e| self.unavailable(format!("malformed response body from {path}: {e}")))
    }

    pub fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        path: &str,
        req: &Req,
    ) -> Result<Resp> {
        let _permit = self.gate.acquire();
        let sent = self.agent.post(&self.url(path)).send_json(req);
        self.finish(path, sent)
    }

    pub fn health(&self) -> Result<HealthResponse> {
        let _permit = self.gate.acquire();
        let sent = self.agent.get(&self.url("/health")).call();
        self.finish("/health", sent)
    }
}
