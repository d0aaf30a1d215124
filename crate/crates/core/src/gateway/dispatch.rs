//! The prediction loop: take the newest frame, run it through the pipeline
//! stages, publish the result.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use super::registry::{DispatchError, EngineRegistry};
use super::results::ResultHub;
use crate::bus::{RecvError, Subscription};
use crate::clock;
use crate::frame::Frame;
use crate::freeze::{freeze_score, freeze_update, FreezeConfig, FreezeState};
use crate::result::{PredictionResult, ResultStatus, RESULT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DispatchMode {
    #[default]
    Continuous,
    /// Only run inference once the display has been frozen.
    FrozenOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Engine names, run in order; each stage sees the previous result.
    pub stages: Vec<String>,
    #[serde(default)]
    pub mode: DispatchMode,
    #[serde(default)]
    pub freeze: FreezeConfig,
    #[serde(default = "default_timeout_ms")]
    pub engine_timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    2000
}

impl PipelineConfig {
    pub fn single(engine: impl Into<String>) -> Self {
        PipelineConfig {
            stages: vec![engine.into()],
            mode: DispatchMode::Continuous,
            freeze: FreezeConfig::default(),
            engine_timeout_ms: default_timeout_ms(),
        }
    }

    pub fn engine_timeout(&self) -> Duration {
        Duration::from_millis(self.engine_timeout_ms)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.stages.is_empty() {
            return Err("pipeline.stages must not be empty".into());
        }
        if !(self.freeze.tau.is_finite() && self.freeze.tau >= 0.0) {
            return Err(format!(
                "pipeline.freeze.tau must be >= 0, got {}",
                self.freeze.tau
            ));
        }
        if self.freeze.k == 0 {
            return Err("pipeline.freeze.k must be >= 1".into());
        }
        if self.freeze.downsample == 0 {
            return Err("pipeline.freeze.downsample must be >= 1".into());
        }
        if self.engine_timeout_ms == 0 {
            return Err("pipeline.engine_timeout_ms must be > 0".into());
        }
        Ok(())
    }
}

/// Runs `frame` through every stage. Failures come back as marker results;
/// a failed frame is abandoned, never retried.
pub async fn dispatch(
    frame: &Frame,
    pipeline: &PipelineConfig,
    registry: &EngineRegistry,
) -> PredictionResult {
    let timeout = pipeline.engine_timeout();
    let t_submit_ns = clock::monotonic_ns();
    let mut upstream: Option<PredictionResult> = None;
    let mut engine_ms_total = 0.0;
    for stage in &pipeline.stages {
        let reply = registry.infer(stage, frame, upstream.take(), timeout).await;
        let t_result_ns = clock::monotonic_ns();
        let marker = |status, detail: String| {
            PredictionResult::marker(
                frame.seq(),
                stage.as_str(),
                status,
                detail,
                frame.meta.t_capture_ns,
                t_submit_ns,
                t_result_ns,
            )
        };
        let reply = match reply {
            Ok(reply) => reply,
            Err(DispatchError::Timeout) => {
                return marker(
                    ResultStatus::Timeout,
                    format!(
                        "no reply from {stage} within {} ms",
                        pipeline.engine_timeout_ms
                    ),
                )
            }
            Err(DispatchError::EngineUnavailable(why)) => {
                return marker(ResultStatus::EngineUnavailable, why)
            }
        };
        if let Some(error) = reply.error {
            return marker(ResultStatus::EngineError, error);
        }
        engine_ms_total += reply.engine_ms.max(0.0);
        upstream = Some(PredictionResult {
            result_version: RESULT_VERSION,
            frame_seq: frame.seq(),
            engine: stage.clone(),
            status: ResultStatus::Ok,
            verdict: reply.verdict,
            plane: reply.plane,
            concepts: reply.concepts,
            t_capture_ns: frame.meta.t_capture_ns,
            t_submit_ns,
            t_result_ns,
            engine_ms: engine_ms_total,
            upstream_seen: reply.upstream_seen,
            detail: None,
        });
    }
    upstream.expect("pipeline has at least one stage")
}

/// When a frame left the mailbox and when its first request went out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmissionRecord {
    pub seq: u64,
    pub t_taken_ns: u64,
    pub t_submit_ns: u64,
}

#[derive(Debug, Default)]
pub struct DispatchStats {
    pub frames_taken: AtomicU64,
    pub dispatched: AtomicU64,
    freeze: Mutex<FreezeState>,
}

impl DispatchStats {
    pub fn freeze_state(&self) -> FreezeState {
        *self.freeze.lock().unwrap()
    }

    pub fn dispatched(&self) -> u64 {
        self.dispatched.load(Ordering::Relaxed)
    }

    pub fn frames_taken(&self) -> u64 {
        self.frames_taken.load(Ordering::Relaxed)
    }
}

pub struct Dispatcher {
    pipeline: PipelineConfig,
    registry: EngineRegistry,
    hub: ResultHub,
    stats: Arc<DispatchStats>,
    submissions: Option<Arc<Mutex<Vec<SubmissionRecord>>>>,
}

impl Dispatcher {
    pub fn new(pipeline: PipelineConfig, registry: EngineRegistry, hub: ResultHub) -> Self {
        Dispatcher {
            pipeline,
            registry,
            hub,
            stats: Arc::default(),
            submissions: None,
        }
    }

    /// Keeps a [`SubmissionRecord`] per dispatched frame in `log`.
    pub fn with_submission_log(mut self, log: Arc<Mutex<Vec<SubmissionRecord>>>) -> Self {
        self.submissions = Some(log);
        self
    }

    pub fn stats(&self) -> Arc<DispatchStats> {
        self.stats.clone()
    }

    /// Runs until the subscription closes. `mailbox` should be a latest-mode
    /// subscription so a busy engine never builds a backlog.
    pub async fn run(self, mut mailbox: Subscription) {
        let mut previous: Option<Frame> = None;
        loop {
            let (frame, t_taken_ns) = match mailbox.recv_stamped().await {
                Ok(item) => item,
                Err(RecvError::Closed) => break,
                Err(RecvError::Overflow { dropped }) => {
                    warn!(dropped, "dispatcher mailbox overflowed");
                    break;
                }
            };
            self.stats.frames_taken.fetch_add(1, Ordering::Relaxed);

            if self.pipeline.mode == DispatchMode::FrozenOnly
                && !self.entered_freeze(&previous, &frame)
            {
                previous = Some(frame);
                continue;
            }

            if let Some(log) = &self.submissions {
                log.lock().unwrap().push(SubmissionRecord {
                    seq: frame.seq(),
                    t_taken_ns,
                    t_submit_ns: clock::monotonic_ns(),
                });
            }
            self.stats.dispatched.fetch_add(1, Ordering::Relaxed);
            let result = dispatch(&frame, &self.pipeline, &self.registry).await;
            debug!(seq = result.frame_seq, status = ?result.status, "result");
            self.hub.publish_result(result);
            previous = Some(frame);
        }
    }

    /// Updates the freeze detector; true only on the comparison that
    /// switches it to frozen, so each freeze triggers one inference.
    fn entered_freeze(&self, previous: &Option<Frame>, frame: &Frame) -> bool {
        let Some(prev) = previous else {
            return false;
        };
        let score = match freeze_score(prev, frame, self.pipeline.freeze.downsample) {
            Ok(score) => score,
            Err(e) => {
                warn!(error = %e, "freeze score unavailable");
                f64::INFINITY
            }
        };
        let mut state = self.stats.freeze.lock().unwrap();
        let was_frozen = state.frozen;
        *state = freeze_update(*state, score, &self.pipeline.freeze);
        state.frozen && !was_frozen
    }
}
