//! HTTP client for remote logits servers.
//!
//! Protocol: `GET /meta` answers `{"shape":[C,H,W],"classes":K}`;
//! `POST /logits` takes `{"image":[...]}` (row-major, `C·H·W` floats in
//! `[0,1]`) and answers `{"logits":[...]}`. Any non-200 status, optionally
//! carrying `{"error":"..."}`, is an oracle error. Requests are never retried.

use std::io::Read;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, OracleError, Result};
use crate::models::ModelOracle;
use crate::tensor::{ImageTensor, LogitsVector, Shape};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaResponse {
    pub shape: [usize; 3],
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitsRequest {
    pub image: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitsResponse {
    pub logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

/// Serialises a `/logits` request body exactly as it goes on the wire.
pub fn encode_logits_request(image: &ImageTensor) -> Vec<u8> {
    let body = LogitsRequest { image: image.data().to_vec() };
    serde_json::to_vec(&body).expect("plain floats always serialise")
}

/// Parses a `/logits` response body, checking it carries `classes` finite values.
pub fn decode_logits_response(body: &[u8], classes: usize) -> Result<LogitsVector, OracleError> {
    let parsed: LogitsResponse =
        serde_json::from_slice(body).map_err(|e| OracleError::Malformed(e.to_string()))?;
    if parsed.logits.len() != classes {
        return Err(OracleError::Shape { expected: classes, actual: parsed.logits.len() });
    }
    LogitsVector::new(parsed.logits).map_err(|e| OracleError::Malformed(e.to_string()))
}

pub fn decode_meta_response(body: &[u8]) -> Result<MetaResponse, OracleError> {
    let meta: MetaResponse =
        serde_json::from_slice(body).map_err(|e| OracleError::Malformed(e.to_string()))?;
    if meta.classes < 2 || meta.shape.contains(&0) {
        return Err(OracleError::Malformed(format!("unusable metadata {meta:?}")));
    }
    Ok(meta)
}

/// Normalises `http:host:port`, `http://host:port/` and `host:port` to a base URL.
pub fn normalize_endpoint(endpoint: &str) -> String {
    let trimmed = endpoint.trim().trim_end_matches('/');
    if trimmed.starts_with("http://") || trimmed.starts_with("https://") {
        trimmed.to_string()
    } else if let Some(rest) = trimmed.strip_prefix("http:") {
        format!("http://{}", rest.trim_start_matches('/'))
    } else {
        format!("http://{trimmed}")
    }
}

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// A model served over HTTP. Shape and class count come from `/meta` at
/// connection time.
#[derive(Debug, Clone)]
pub struct RemoteModel {
    base: String,
    agent: ureq::Agent,
    shape: Shape,
    classes: usize,
}

impl RemoteModel {
    pub fn connect(endpoint: &str) -> Result<Self> {
        Self::connect_with_timeout(endpoint, DEFAULT_TIMEOUT)
    }

    pub fn connect_with_timeout(endpoint: &str, timeout: Duration) -> Result<Self> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let base = normalize_endpoint(endpoint);
        let body = fetch(agent.get(format!("{base}/meta")).call())?;
        let meta = decode_meta_response(&body)?;
        let [c, h, w] = meta.shape;
        Ok(Self { base, agent, shape: Shape::new(c, h, w), classes: meta.classes })
    }

    pub fn endpoint(&self) -> &str {
        &self.base
    }
}

fn fetch(result: std::result::Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<Vec<u8>, OracleError> {
    let mut response = result.map_err(transport_error)?;
    let status = response.status().as_u16();
    let mut body = Vec::new();
    response
        .body_mut()
        .as_reader()
        .read_to_end(&mut body)
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::TimedOut => OracleError::Timeout,
            _ => OracleError::Transport(e.to_string()),
        })?;
    if status != 200 {
        let message = serde_json::from_slice::<ErrorResponse>(&body)
            .map(|e| e.error)
            .unwrap_or_else(|_| String::from_utf8_lossy(&body).into_owned());
        return Err(OracleError::Status { status, message });
    }
    Ok(body)
}

fn transport_error(e: ureq::Error) -> OracleError {
    match e {
        ureq::Error::Timeout(_) => OracleError::Timeout,
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => OracleError::Timeout,
        other => OracleError::Transport(other.to_string()),
    }
}

impl ModelOracle for RemoteModel {
    fn input_shape(&self) -> Shape {
        self.shape
    }

    fn classes(&self) -> usize {
        self.classes
    }

    fn logits(&self, x: &ImageTensor) -> Result<LogitsVector> {
        if x.shape() != self.shape {
            return Err(Error::Oracle(OracleError::Shape {
                expected: self.shape.len(),
                actual: x.len(),
            }));
        }
        let request = self
            .agent
            .post(format!("{}/logits", self.base))
            .header("Content-Type", "application/json")
            .send(&encode_logits_request(x)[..]);
        let body = fetch(request)?;
        Ok(decode_logits_response(&body, self.classes)?)
    }
}
