//! Scripted stand-in for a real model.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{InferReply, InferRequest};
use crate::result::{Concept, Plane, Verdict};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub verdict: Verdict,
    pub plane: Plane,
    #[serde(default)]
    pub concepts: Vec<Concept>,
    #[serde(default)]
    pub delay_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FailureMode {
    #[default]
    None,
    /// Answer `n` requests, then die on the next one.
    CrashAfterN { n: u64 },
    /// Answer `n` requests, then stop answering while staying connected.
    Hang {
        #[serde(default)]
        n: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockBehavior {
    /// Applied round-robin, one entry per request.
    pub script: Vec<ScriptEntry>,
    #[serde(default)]
    pub failure_mode: FailureMode,
}

impl MockBehavior {
    pub fn constant(verdict: Verdict, plane: Plane, concepts: Vec<Concept>, delay_ms: u64) -> Self {
        MockBehavior {
            script: vec![ScriptEntry {
                verdict,
                plane,
                concepts,
                delay_ms,
            }],
            failure_mode: FailureMode::None,
        }
    }

    /// A standard-plane head view with every landmark present.
    pub fn head_plane(delay_ms: u64) -> Self {
        Self::constant(
            Verdict::StandardPlane,
            Plane::Head,
            vec![
                Concept::new("skull", true, 0.97),
                Concept::new("midline", true, 0.92),
            ],
            delay_ms,
        )
    }

    pub fn with_failure(mut self, failure_mode: FailureMode) -> Self {
        self.failure_mode = failure_mode;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MockOutcome {
    Reply { reply: InferReply, delay: Duration },
    Crash,
    Hang,
}

/// Deterministic request handler: the same script and the same request
/// sequence always produce the same outcomes.
#[derive(Debug, Clone)]
pub struct MockEngine {
    behavior: MockBehavior,
    served: u64,
}

impl MockEngine {
    /// # Panics
    /// If the script is empty.
    pub fn new(behavior: MockBehavior) -> Self {
        assert!(
            !behavior.script.is_empty(),
            "mock script must have at least one entry"
        );
        MockEngine {
            behavior,
            served: 0,
        }
    }

    pub fn served(&self) -> u64 {
        self.served
    }

    pub fn respond(&mut self, request: &InferRequest) -> MockOutcome {
        match self.behavior.failure_mode {
            FailureMode::CrashAfterN { n } if self.served >= n => return MockOutcome::Crash,
            FailureMode::Hang { n } if self.served >= n => return MockOutcome::Hang,
            _ => {}
        }
        let entry =
            &self.behavior.script[(self.served % self.behavior.script.len() as u64) as usize];
        self.served += 1;
        MockOutcome::Reply {
            reply: InferReply {
                request_id: request.request_id,
                frame_seq: request.frame.seq(),
                verdict: entry.verdict,
                plane: entry.plane,
                concepts: entry.concepts.clone(),
                engine_ms: entry.delay_ms as f64,
                upstream_seen: request.upstream.is_some(),
                error: None,
            },
            delay: Duration::from_millis(entry.delay_ms),
        }
    }

    /// Answers on the calling thread, sleeping for the scripted delay.
    /// `None` for scripted crashes and hangs.
    pub fn handle_blocking(&mut self, request: &InferRequest) -> Option<InferReply> {
        let start = Instant::now();
        match self.respond(request) {
            MockOutcome::Reply { mut reply, delay } => {
                if !delay.is_zero() {
                    std::thread::sleep(delay);
                }
                reply.engine_ms = start.elapsed().as_secs_f64() * 1e3;
                Some(reply)
            }
            MockOutcome::Crash | MockOutcome::Hang => None,
        }
    }
}
