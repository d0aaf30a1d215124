//! A running session: source, bus, gateway, recorder and supervised engines.
//!
//! Startup goes bus → gateway → recorder → engines → source. Shutdown runs
//! the other way round: the source stops first, then the gateway drains,
//! then the recording is finalized, and engines are stopped last.

use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;
use tracing::{error, info, warn};

use crate::bus::{DeliveryMode, FrameBus};
use crate::config::SessionConfig;
use crate::gateway::{
    router, Dispatcher, EngineRegistry, GatewayState, RecorderStatus, ResultHub, SubmissionRecord,
};
use crate::recorder::{start_recording, RecorderError, RecordingHandle};
use crate::source::{open_source, FrameSource, SourceError};
use crate::supervisor::{Supervisor, SupervisorError, DEFAULT_SHUTDOWN_GRACE};

/// Environment variable carrying the engine endpoint to supervised children.
pub const GATEWAY_ENV: &str = "LIVEGATE_GATEWAY";

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Recorder(#[from] RecorderError),
    #[error(transparent)]
    Supervisor(#[from] SupervisorError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "end", rename_all = "kebab-case")]
pub enum SessionEnd {
    EndOfStream,
    Interrupted,
    SourceFailed { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecordingSummary {
    pub dir: PathBuf,
    pub frame_count: u64,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionSummary {
    #[serde(flatten)]
    pub end: SessionEnd,
    pub frames_published: u64,
    pub results_published: u64,
    pub marker_results: u64,
    pub recording: Option<RecordingSummary>,
}

impl std::fmt::Display for SessionSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let end = match &self.end {
            SessionEnd::EndOfStream => "end-of-stream".to_string(),
            SessionEnd::Interrupted => "interrupted".to_string(),
            SessionEnd::SourceFailed { reason } => format!("source failed ({reason})"),
        };
        write!(
            f,
            "session ended: {end}; frames={} results={} markers={}",
            self.frames_published, self.results_published, self.marker_results
        )?;
        if let Some(r) = &self.recording {
            write!(
                f,
                "; recording={} frames={} complete={}",
                r.dir.display(),
                r.frame_count,
                r.complete
            )?;
        }
        Ok(())
    }
}

/// Extra knobs used by tests and benches.
#[derive(Default)]
pub struct SessionOptions {
    /// Keep a publish log on the bus.
    pub publish_log: bool,
    /// Keep a record of every frame handed to the pipeline.
    pub submission_log: bool,
    /// Grace period between SIGTERM and SIGKILL for children.
    pub shutdown_grace: Option<Duration>,
}

pub struct Session {
    config: SessionConfig,
    addr: SocketAddr,
    bus: FrameBus,
    registry: EngineRegistry,
    hub: ResultHub,
    state: GatewayState,
    supervisor: Supervisor,
    recording: Option<RecordingHandle>,
    submissions: Option<Arc<std::sync::Mutex<Vec<SubmissionRecord>>>>,
    dispatcher: Option<JoinHandle<()>>,
    server: Option<JoinHandle<()>>,
    server_stop: Option<oneshot::Sender<()>>,
    source: Option<Box<dyn FrameSource>>,
    source_stop: Arc<AtomicBool>,
}

impl Session {
    /// Brings up everything except the source. Engines are given up to
    /// `engine_wait_ms` to register.
    pub async fn start(
        config: SessionConfig,
        options: SessionOptions,
    ) -> Result<Session, SessionError> {
        let source = open_source(&config.source)?;

        let bus = if options.publish_log {
            FrameBus::with_publish_log()
        } else {
            FrameBus::new()
        };
        let registry = EngineRegistry::new();
        let hub = ResultHub::new();

        let listener =
            TcpListener::bind(config.bind)
                .await
                .map_err(|source| SessionError::Bind {
                    addr: config.bind,
                    source,
                })?;
        let addr = listener.local_addr().map_err(|source| SessionError::Bind {
            addr: config.bind,
            source,
        })?;

        let mut state = GatewayState::new(bus.clone(), registry.clone(), hub.clone());
        state.viewer_dir = config.viewer_dir.clone();
        let app = router(state.clone());
        let (server_stop, stop_rx) = oneshot::channel::<()>();
        let server = tokio::spawn(async move {
            let serve = axum::serve(listener, app).with_graceful_shutdown(async {
                let _ = stop_rx.await;
            });
            if let Err(e) = serve.await {
                error!(error = %e, "gateway server failed");
            }
        });
        info!(%addr, "gateway listening");

        let recording = if config.record {
            let handle = start_recording(&bus, &config.output_dir, Some(config.source.clone()))?;
            state.status.set_recorder(RecorderStatus::Ok);
            Some(handle)
        } else {
            state.status.set_recorder(RecorderStatus::Off);
            None
        };

        let mailbox = bus.subscribe(DeliveryMode::Latest, None);
        let mut dispatcher =
            Dispatcher::new(config.pipeline.clone(), registry.clone(), hub.clone());
        let submissions: Option<Arc<std::sync::Mutex<Vec<SubmissionRecord>>>> =
            options.submission_log.then(Arc::default);
        if let Some(log) = &submissions {
            dispatcher = dispatcher.with_submission_log(log.clone());
        }
        state.status.set_dispatch(dispatcher.stats());
        let dispatcher = tokio::spawn(dispatcher.run(mailbox));

        let engine_host = if addr.ip().is_unspecified() {
            SocketAddr::from(([127, 0, 0, 1], addr.port()))
        } else {
            addr
        };
        let supervisor = Supervisor::with_options(
            Some(config.log_dir.clone()),
            options.shutdown_grace.unwrap_or(DEFAULT_SHUTDOWN_GRACE),
            vec![(
                GATEWAY_ENV.to_string(),
                format!("ws://{engine_host}/engine"),
            )],
        );
        state.status.set_supervisor(supervisor.clone());

        let mut session = Session {
            config,
            addr,
            bus,
            registry,
            hub,
            state,
            supervisor,
            recording,
            submissions,
            dispatcher: Some(dispatcher),
            server: Some(server),
            server_stop: Some(server_stop),
            source: Some(source),
            source_stop: Arc::new(AtomicBool::new(false)),
        };

        let specs: Vec<_> = session.config.supervised().cloned().collect();
        for spec in specs {
            if let Err(e) = session.supervisor.spawn(spec) {
                session.teardown().await;
                return Err(e.into());
            }
        }
        let wait = Duration::from_millis(session.config.engine_wait_ms);
        if !session
            .registry
            .wait_until_up(&session.config.pipeline.stages, wait)
            .await
        {
            warn!(
                stages = ?session.config.pipeline.stages,
                "not every pipeline engine registered in time; starting anyway"
            );
        }
        Ok(session)
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn bus(&self) -> &FrameBus {
        &self.bus
    }

    pub fn registry(&self) -> &EngineRegistry {
        &self.registry
    }

    pub fn hub(&self) -> &ResultHub {
        &self.hub
    }

    pub fn gateway(&self) -> &GatewayState {
        &self.state
    }

    pub fn supervisor(&self) -> &Supervisor {
        &self.supervisor
    }

    pub fn recording_dir(&self) -> Option<PathBuf> {
        self.recording.as_ref().map(|r| r.dir().to_path_buf())
    }

    pub fn submissions(&self) -> Vec<SubmissionRecord> {
        self.submissions
            .as_ref()
            .map(|log| log.lock().unwrap().clone())
            .unwrap_or_default()
    }

    /// Publishes frames until the source ends, fails, or `stop` resolves,
    /// then shuts everything down.
    pub async fn run(mut self, stop: impl Future<Output = ()>) -> SessionSummary {
        let mut source = self.source.take().expect("session already ran");
        let bus = self.bus.clone();
        let stop_flag = self.source_stop.clone();
        let (done_tx, mut done_rx) = oneshot::channel();
        let pump = std::thread::Builder::new()
            .name("source".into())
            .spawn(move || {
                let end = loop {
                    if stop_flag.load(Ordering::SeqCst) {
                        break SessionEnd::Interrupted;
                    }
                    match source.next_frame() {
                        Ok(Some(frame)) => {
                            if bus.publish(frame).is_err() {
                                break SessionEnd::Interrupted;
                            }
                        }
                        Ok(None) => break SessionEnd::EndOfStream,
                        Err(e) => {
                            break SessionEnd::SourceFailed {
                                reason: e.to_string(),
                            }
                        }
                    }
                };
                let _ = done_tx.send(end);
            })
            .expect("spawn source thread");

        tokio::pin!(stop);
        let mut tick = tokio::time::interval(Duration::from_millis(250));
        let end = loop {
            tokio::select! {
                end = &mut done_rx => break end.unwrap_or(SessionEnd::Interrupted),
                _ = &mut stop => {
                    info!("stop requested");
                    self.source_stop.store(true, Ordering::SeqCst);
                    break SessionEnd::Interrupted;
                }
                _ = tick.tick() => self.check_recorder(),
            }
        };
        let _ = tokio::task::spawn_blocking(move || pump.join()).await;
        match &end {
            SessionEnd::SourceFailed { reason } => error!(%reason, "source failed"),
            other => info!(end = ?other, "source finished"),
        }
        self.shutdown(end).await
    }

    /// Shuts down a session that was never [`run`](Self::run), for callers
    /// that publish frames themselves.
    pub async fn stop(self) -> SessionSummary {
        self.shutdown(SessionEnd::Interrupted).await
    }

    fn check_recorder(&self) {
        if self.recording.as_ref().is_some_and(|r| r.is_faulted()) {
            self.state.status.set_recorder(RecorderStatus::Faulted);
        }
    }

    async fn shutdown(mut self, end: SessionEnd) -> SessionSummary {
        self.bus.shutdown();
        if let Some(dispatcher) = self.dispatcher.take() {
            let stages = self.config.pipeline.stages.len() as u32;
            let budget = self.config.pipeline.engine_timeout() * stages + Duration::from_secs(1);
            let abort = dispatcher.abort_handle();
            if tokio::time::timeout(budget, dispatcher).await.is_err() {
                warn!("dispatcher did not drain in time");
                abort.abort();
            }
        }
        self.hub.close();
        self.state.close();
        if let Some(stop) = self.server_stop.take() {
            let _ = stop.send(());
        }

        let recording = self.recording.take().map(|mut handle| {
            let dir = handle.dir().to_path_buf();
            match handle.finalize() {
                Ok(m) => RecordingSummary {
                    dir,
                    frame_count: m.frame_count,
                    complete: m.complete,
                },
                Err(e) => {
                    error!(error = %e, "recording finalize failed");
                    RecordingSummary {
                        dir,
                        frame_count: handle.frame_count(),
                        complete: false,
                    }
                }
            }
        });

        self.supervisor.shutdown().await;
        if let Some(server) = self.server.take() {
            let abort = server.abort_handle();
            if tokio::time::timeout(Duration::from_secs(5), server)
                .await
                .is_err()
            {
                abort.abort();
            }
        }

        SessionSummary {
            end,
            frames_published: self.bus.published_count(),
            results_published: self.hub.published_count(),
            marker_results: self.hub.marker_count(),
            recording,
        }
    }

    /// Used when startup fails half way.
    async fn teardown(&mut self) {
        self.bus.shutdown();
        self.hub.close();
        self.state.close();
        if let Some(mut r) = self.recording.take() {
            let _ = r.finalize();
        }
        self.supervisor.shutdown().await;
        if let Some(stop) = self.server_stop.take() {
            let _ = stop.send(());
        }
        if let Some(d) = self.dispatcher.take() {
            d.abort();
        }
    }
}

/// Resolves on SIGINT or SIGTERM.
pub async fn interrupt() {
    use tokio::signal::unix::{signal, SignalKind};
    let mut term = signal(SignalKind::terminate()).expect("install SIGTERM handler");
    tokio::select! {
        _ = tokio::signal::ctrl_c() => {}
        _ = term.recv() => {}
    }
}
