//! The gateway/engine contract.
//!
//! Engines dial the gateway's `/engine` WebSocket endpoint. The first text
//! message is the engine's [`EngineDescriptor`]; the gateway answers with a
//! [`HandshakeAck`]. After that the gateway sends binary infer requests:
//!
//! ```text
//! request_id u32 BE | upstream_len u32 BE | upstream JSON | WireFrame bytes
//! ```
//!
//! and the engine answers each with an [`InferReply`] JSON text message.
//! `upstream_len` is zero when there is no prior pipeline stage.

mod client;
mod mock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::{run_mock_engine, EngineClientError, EngineConnection};
pub use mock::{FailureMode, MockBehavior, MockEngine, MockOutcome, ScriptEntry};

use crate::frame::{Frame, PixelFormat};
use crate::result::{Concept, Plane, PredictionResult, Verdict};
use crate::wire::{self, WireError};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("malformed descriptor: {0}")]
    MalformedDescriptor(String),
    #[error("infer request truncated")]
    TruncatedRequest,
    #[error("upstream result unreadable: {0}")]
    BadUpstream(String),
    #[error("frame unreadable: {0}")]
    BadFrame(#[from] WireError),
    #[error("reply unreadable: {0}")]
    BadReply(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineDescriptor {
    pub name: String,
    #[serde(default)]
    pub version: String,
    pub accepts: Vec<PixelFormat>,
    #[serde(default)]
    pub stage_role: String,
    #[serde(default = "one")]
    pub max_concurrent: u32,
}

fn one() -> u32 {
    1
}

impl EngineDescriptor {
    pub fn new(name: impl Into<String>, accepts: Vec<PixelFormat>) -> Self {
        EngineDescriptor {
            name: name.into(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            accepts,
            stage_role: String::new(),
            max_concurrent: 1,
        }
    }

    pub fn parse(text: &str) -> Result<Self, ProtocolError> {
        let d: EngineDescriptor = serde_json::from_str(text)
            .map_err(|e| ProtocolError::MalformedDescriptor(e.to_string()))?;
        if d.name.trim().is_empty() {
            return Err(ProtocolError::MalformedDescriptor("name is empty".into()));
        }
        if d.accepts.is_empty() {
            return Err(ProtocolError::MalformedDescriptor(
                "accepts is empty".into(),
            ));
        }
        if d.max_concurrent == 0 {
            return Err(ProtocolError::MalformedDescriptor(
                "max_concurrent must be >= 1".into(),
            ));
        }
        Ok(d)
    }
}

/// The gateway's answer to a descriptor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum HandshakeAck {
    Registered,
    Rejected { error: String, detail: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferRequest {
    pub request_id: u32,
    pub frame: Frame,
    pub upstream: Option<PredictionResult>,
}

impl InferRequest {
    pub fn encode(&self) -> Vec<u8> {
        let upstream = self
            .upstream
            .as_ref()
            .map(|u| serde_json::to_vec(u).expect("result is serializable"))
            .unwrap_or_default();
        let frame = wire::encode_frame(&self.frame);
        let mut out = Vec::with_capacity(8 + upstream.len() + frame.len());
        out.extend_from_slice(&self.request_id.to_be_bytes());
        out.extend_from_slice(&(upstream.len() as u32).to_be_bytes());
        out.extend_from_slice(&upstream);
        out.extend_from_slice(&frame);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ProtocolError> {
        if bytes.len() < 8 {
            return Err(ProtocolError::TruncatedRequest);
        }
        let request_id = u32::from_be_bytes(bytes[0..4].try_into().unwrap());
        let upstream_len = u32::from_be_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let frame_start = 8usize
            .checked_add(upstream_len)
            .filter(|&end| end <= bytes.len())
            .ok_or(ProtocolError::TruncatedRequest)?;
        let upstream = if upstream_len == 0 {
            None
        } else {
            Some(
                serde_json::from_slice(&bytes[8..frame_start])
                    .map_err(|e| ProtocolError::BadUpstream(e.to_string()))?,
            )
        };
        let frame = wire::decode_frame(&bytes[frame_start..])?;
        Ok(InferRequest {
            request_id,
            frame,
            upstream,
        })
    }
}

/// An engine's answer to one infer request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferReply {
    pub request_id: u32,
    pub frame_seq: u64,
    pub verdict: Verdict,
    pub plane: Plane,
    #[serde(default)]
    pub concepts: Vec<Concept>,
    /// Self-reported processing time.
    pub engine_ms: f64,
    #[serde(default)]
    pub upstream_seen: bool,
    /// Set when the engine caught an error instead of predicting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl InferReply {
    pub fn parse(text: &str) -> Result<Self, ProtocolError> {
        serde_json::from_str(text).map_err(|e| ProtocolError::BadReply(e.to_string()))
    }
}
