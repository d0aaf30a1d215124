//! Per-frame latency, native versus through the framework.
//!
//! Native timing calls the engine directly on each frame. Framework timing
//! runs the full path (bus, gateway, WebSocket hop, engine, result hub) and
//! takes `t_result − t_capture` per frame. The difference of the two means
//! is the framework's overhead.

use std::io;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::TcpListener;

use crate::bus::{DeliveryMode, FrameBus};
use crate::engine::{run_mock_engine, EngineDescriptor, InferRequest, MockBehavior, MockEngine};
use crate::frame::{Frame, PixelFormat};
use crate::gateway::{router, Dispatcher, EngineRegistry, GatewayState, PipelineConfig, ResultHub};
use crate::recorder::start_recording;
use crate::source::{Pattern, SyntheticSource};

/// Fewest measured samples a run accepts.
pub const MIN_SAMPLES: usize = 30;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("need at least {min} samples, got {n}")]
    TooFewSamples { n: usize, min: usize },
    #[error("stack unhealthy: {0}")]
    StackUnhealthy(String),
    #[error("bench i/o: {0}")]
    Io(#[from] io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub n: usize,
    pub mean_s: f64,
    /// Sample standard deviation.
    pub std_s: f64,
    pub p50_s: f64,
    pub p95_s: f64,
    pub p99_s: f64,
    pub per_frame: Vec<f64>,
}

impl LatencyStats {
    pub fn from_samples(samples: Vec<f64>) -> Result<Self, BenchError> {
        let n = samples.len();
        if n < 2 {
            return Err(BenchError::TooFewSamples { n, min: 2 });
        }
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        Ok(LatencyStats {
            n,
            mean_s: mean,
            std_s: var.sqrt(),
            p50_s: percentile(&sorted, 50.0),
            p95_s: percentile(&sorted, 95.0),
            p99_s: percentile(&sorted, 99.0),
            per_frame: samples,
        })
    }
}

/// Linear interpolation between closest ranks; `sorted` must be ascending.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

fn check_samples(n_samples: usize) -> Result<(), BenchError> {
    if n_samples < MIN_SAMPLES {
        return Err(BenchError::TooFewSamples {
            n: n_samples,
            min: MIN_SAMPLES,
        });
    }
    Ok(())
}

/// Times `engine` on each frame in turn, cycling through `frames`.
pub fn measure_native<F: FnMut(&Frame)>(
    mut engine: F,
    frames: &[Frame],
    n_warmup: usize,
    n_samples: usize,
) -> Result<LatencyStats, BenchError> {
    check_samples(n_samples)?;
    assert!(
        !frames.is_empty(),
        "measure_native needs at least one frame"
    );
    let mut samples = Vec::with_capacity(n_samples);
    for i in 0..n_warmup + n_samples {
        let frame = &frames[i % frames.len()];
        let started = Instant::now();
        engine(frame);
        if i >= n_warmup {
            samples.push(started.elapsed().as_secs_f64());
        }
    }
    LatencyStats::from_samples(samples)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchConfig {
    pub engine_delay_ms: u64,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub warmup: usize,
    pub samples: usize,
    /// Record the stream while measuring, into this directory.
    pub record_to: Option<std::path::PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            engine_delay_ms: 0,
            width: 640,
            height: 480,
            fps: 10.0,
            warmup: 30,
            samples: 300,
            record_to: None,
        }
    }
}

impl BenchConfig {
    fn frames(&self, n: usize) -> Vec<Frame> {
        let mut source =
            SyntheticSource::new(Pattern::MovingGradient, self.width, self.height, self.fps);
        (0..n).map(|_| source.generate_now()).collect()
    }

    fn behavior(&self) -> MockBehavior {
        MockBehavior::head_plane(self.engine_delay_ms)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameSample {
    pub seq: u64,
    pub t_capture_ns: u64,
    pub t_result_ns: u64,
}

impl FrameSample {
    pub fn latency_s(&self) -> f64 {
        self.t_result_ns.saturating_sub(self.t_capture_ns) as f64 / 1e9
    }
}

#[derive(Debug, Clone)]
pub struct FrameworkRun {
    pub stats: LatencyStats,
    pub samples: Vec<FrameSample>,
    /// Frames the recorder wrote, when recording was on.
    pub recorded: Option<u64>,
}

/// The mock engine called in-process, the native baseline for [`measure_framework`].
pub fn measure_native_mock(config: &BenchConfig) -> Result<LatencyStats, BenchError> {
    check_samples(config.samples)?;
    let frames = config.frames(8);
    let mut engine = MockEngine::new(config.behavior());
    measure_native(
        |frame| {
            let request = InferRequest {
                request_id: 0,
                frame: frame.clone(),
                upstream: None,
            };
            engine.handle_blocking(&request);
        },
        &frames,
        config.warmup,
        config.samples,
    )
}

/// Runs the full stack with the mock engine connected over loopback
/// WebSocket and measures `t_result − t_capture` per frame.
///
/// Frames are paced at `fps`, but a frame is never captured while the
/// previous one is still in the pipeline, so every frame reaches the engine
/// and the number measured is path cost, not mailbox waiting time.
pub async fn measure_framework(config: &BenchConfig) -> Result<FrameworkRun, BenchError> {
    check_samples(config.samples)?;
    let unhealthy = |what: &str| BenchError::StackUnhealthy(what.to_string());

    let bus = FrameBus::new();
    let registry = EngineRegistry::new();
    let hub = ResultHub::new();
    let state = GatewayState::new(bus.clone(), registry.clone(), hub.clone());
    let listener = TcpListener::bind("127.0.0.1:0").await?;
    let addr = listener.local_addr()?;
    let app = router(state.clone());
    let server = tokio::spawn(async move {
        let _ = axum::serve(listener, app).await;
    });

    let mut recording = match &config.record_to {
        Some(dir) => Some(
            start_recording(&bus, dir, None)
                .map_err(|e| BenchError::StackUnhealthy(e.to_string()))?,
        ),
        None => None,
    };

    let engine_name = "bench-engine";
    let mut pipeline = PipelineConfig::single(engine_name);
    pipeline.engine_timeout_ms = (config.engine_delay_ms * 4).max(2000);
    let reply_timeout = pipeline.engine_timeout() + Duration::from_secs(1);
    let mailbox = bus.subscribe(DeliveryMode::Latest, None);
    let dispatcher =
        tokio::spawn(Dispatcher::new(pipeline, registry.clone(), hub.clone()).run(mailbox));

    let descriptor = EngineDescriptor::new(engine_name, vec![PixelFormat::Gray8]);
    let url = format!("ws://{addr}/engine");
    let engine = tokio::spawn({
        let behavior = config.behavior();
        async move { run_mock_engine(behavior, descriptor, &url).await }
    });

    let outcome = async {
        if !registry
            .wait_until_up(&[engine_name.to_string()], Duration::from_secs(10))
            .await
        {
            return Err(unhealthy("engine did not register within 10 s"));
        }
        let mut results = hub.tap();
        let mut source = SyntheticSource::new(
            Pattern::MovingGradient,
            config.width,
            config.height,
            config.fps,
        );
        let interval = Duration::from_secs_f64(1.0 / config.fps);
        let mut next_due = tokio::time::Instant::now();
        let mut samples = Vec::with_capacity(config.samples);
        for i in 0..config.warmup + config.samples {
            tokio::time::sleep_until(next_due).await;
            let frame = source.generate_now();
            let seq = frame.seq();
            bus.publish(frame).map_err(|e| unhealthy(&e.to_string()))?;
            let result = loop {
                match tokio::time::timeout(reply_timeout, results.recv()).await {
                    Ok(Some(r)) if r.frame_seq == seq => break r,
                    Ok(Some(_)) => continue,
                    Ok(None) => return Err(unhealthy("result stream closed")),
                    Err(_) => return Err(unhealthy(&format!("no result for frame {seq}"))),
                }
            };
            if result.is_marker() {
                return Err(unhealthy(&format!(
                    "frame {seq}: {:?} {}",
                    result.status,
                    result.detail.as_deref().unwrap_or("")
                )));
            }
            if i >= config.warmup {
                samples.push(FrameSample {
                    seq,
                    t_capture_ns: result.t_capture_ns,
                    t_result_ns: result.t_result_ns,
                });
            }
            next_due = (next_due + interval).max(tokio::time::Instant::now());
        }
        Ok(samples)
    }
    .await;

    bus.shutdown();
    let _ = dispatcher.await;
    hub.close();
    state.close();
    let _ = engine.await;
    server.abort();
    let recorded = match recording.as_mut() {
        Some(r) => Some(
            r.finalize()
                .map_err(|e| BenchError::StackUnhealthy(e.to_string()))?
                .frame_count,
        ),
        None => None,
    };

    let samples = outcome?;
    let stats = LatencyStats::from_samples(samples.iter().map(FrameSample::latency_s).collect())?;
    Ok(FrameworkRun {
        stats,
        samples,
        recorded,
    })
}

/// One column of the native/framework/difference table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffReport {
    pub label: String,
    pub native_mean_s: f64,
    pub native_std_s: f64,
    pub framework_mean_s: f64,
    pub framework_std_s: f64,
    pub diff_mean_s: f64,
    /// sqrt(s1²/n1 + s2²/n2): the two runs are independent, not paired.
    pub diff_std_s: f64,
}

pub fn diff_report(label: &str, native: &LatencyStats, framework: &LatencyStats) -> DiffReport {
    DiffReport {
        label: label.to_string(),
        native_mean_s: native.mean_s,
        native_std_s: native.std_s,
        framework_mean_s: framework.mean_s,
        framework_std_s: framework.std_s,
        diff_mean_s: framework.mean_s - native.mean_s,
        diff_std_s: (native.std_s.powi(2) / native.n as f64
            + framework.std_s.powi(2) / framework.n as f64)
            .sqrt(),
    }
}

fn pm(mean: f64, std: f64, decimals: usize) -> String {
    format!("{mean:.decimals$}±{std:.decimals$}")
}

impl DiffReport {
    /// Plain-text table in seconds.
    pub fn to_text(&self, decimals: usize) -> String {
        let w = self.label.len().max(10);
        format!(
            "{:<w$}  {:>16}\n{:<w$}  {:>16}\n{:<w$}  {:>16}\n{:<w$}  {:>16}\n",
            "",
            self.label,
            "native",
            pm(self.native_mean_s, self.native_std_s, decimals),
            "framework",
            pm(self.framework_mean_s, self.framework_std_s, decimals),
            "difference",
            pm(self.diff_mean_s, self.diff_std_s, decimals),
        )
    }

    pub fn to_csv(&self) -> Result<String, BenchError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.serialize(self)?;
        let bytes = w.into_inner().map_err(|e| BenchError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    seq: u64,
    t_capture_ns: u64,
    t_result_ns: u64,
    latency_s: f64,
}

/// Writes one row per measured frame: seq, t_capture_ns, t_result_ns, latency_s.
pub fn write_samples_csv(path: &Path, samples: &[FrameSample]) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path)?;
    for s in samples {
        w.serialize(CsvRow {
            seq: s.seq,
            t_capture_ns: s.t_capture_ns,
            t_result_ns: s.t_result_ns,
            latency_s: s.latency_s(),
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads back the `latency_s` column written by [`write_samples_csv`].
pub fn read_latencies_csv(path: &Path) -> Result<Vec<f64>, BenchError> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<CsvRow>()
        .map(|row| Ok(row?.latency_s))
        .collect()
}
