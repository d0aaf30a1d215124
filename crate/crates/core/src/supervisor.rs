//! Process supervision for engines and other helpers.
//!
//! Each child gets its own monitor task. When a child exits, its restart
//! policy decides whether it comes back; restarts wait on a capped geometric
//! backoff that resets once the child has stayed up for
//! [`HEALTHY_UPTIME_RESET`]. Children run in their own process group so
//! shutdown reaches anything they spawned.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::path::PathBuf;
use std::process::Stdio;
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use nix::sys::signal::{killpg, Signal};
use nix::unistd::Pid;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::process::{Child, Command};
use tokio::sync::watch;
use tokio::task::JoinHandle;
use tokio::time::Instant;
use tracing::{info, warn};

use crate::clock;

/// Uptime after which a child's backoff starts over.
pub const HEALTHY_UPTIME_RESET: Duration = Duration::from_secs(60);
/// How long a child gets between SIGTERM and SIGKILL at shutdown.
pub const DEFAULT_SHUTDOWN_GRACE: Duration = Duration::from_secs(5);

#[derive(Debug, Error)]
pub enum SupervisorError {
    #[error("failed to spawn {name}: {reason}")]
    SpawnFailed { name: String, reason: String },
    #[error("invalid child spec {name}: {reason}")]
    InvalidSpec { name: String, reason: String },
    #[error("supervisor is shut down")]
    ShutDown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RestartPolicy {
    #[default]
    Always,
    OnFailure,
    Never,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Backoff {
    #[serde(default = "default_initial_ms")]
    pub initial_ms: u64,
    #[serde(default = "default_factor")]
    pub factor: f64,
    #[serde(default = "default_max_ms")]
    pub max_ms: u64,
}

fn default_initial_ms() -> u64 {
    1000
}
fn default_factor() -> f64 {
    2.0
}
fn default_max_ms() -> u64 {
    30_000
}

impl Default for Backoff {
    fn default() -> Self {
        Backoff {
            initial_ms: default_initial_ms(),
            factor: default_factor(),
            max_ms: default_max_ms(),
        }
    }
}

impl Backoff {
    /// Delay before the restart following `consecutive` earlier ones.
    pub fn delay(&self, consecutive: u32) -> Duration {
        let ms = self.initial_ms as f64 * self.factor.powi(consecutive.min(64) as i32);
        Duration::from_millis(ms.min(self.max_ms as f64) as u64)
    }

    fn validate(&self) -> Result<(), String> {
        if self.initial_ms == 0 {
            return Err("backoff.initial_ms must be > 0".into());
        }
        if !(self.factor.is_finite() && self.factor >= 1.0) {
            return Err("backoff.factor must be >= 1".into());
        }
        if self.max_ms < self.initial_ms {
            return Err("backoff.max_ms must be >= initial_ms".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HealthCheck {
    pub url: String,
    #[serde(default = "default_interval_ms")]
    pub interval_ms: u64,
    #[serde(default = "default_failures")]
    pub failures_to_kill: u32,
}

fn default_interval_ms() -> u64 {
    1000
}
fn default_failures() -> u32 {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChildSpec {
    pub name: String,
    pub command: Vec<String>,
    #[serde(default)]
    pub restart: RestartPolicy,
    #[serde(default)]
    pub backoff: Backoff,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub health: Option<HealthCheck>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub env: BTreeMap<String, String>,
}

impl ChildSpec {
    pub fn new(name: impl Into<String>, command: Vec<String>) -> Self {
        ChildSpec {
            name: name.into(),
            command,
            restart: RestartPolicy::Always,
            backoff: Backoff::default(),
            health: None,
            env: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<(), SupervisorError> {
        let invalid = |reason: String| SupervisorError::InvalidSpec {
            name: self.name.clone(),
            reason,
        };
        if self.name.trim().is_empty() {
            return Err(invalid("name is empty".into()));
        }
        if self.command.is_empty() {
            return Err(invalid("command is empty".into()));
        }
        self.backoff.validate().map_err(invalid)?;
        if let Some(h) = &self.health {
            if h.interval_ms == 0 || h.failures_to_kill == 0 {
                return Err(invalid(
                    "health interval and failures_to_kill must be > 0".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChildState {
    Starting,
    Up,
    BackingOff,
    Stopped,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExitAction {
    Restart { delay: Duration },
    Stop,
}

/// Restart bookkeeping for one child.
#[derive(Debug, Clone)]
pub struct RestartTracker {
    backoff: Backoff,
    consecutive: u32,
}

impl RestartTracker {
    pub fn new(backoff: Backoff) -> Self {
        RestartTracker {
            backoff,
            consecutive: 0,
        }
    }

    /// Decides what follows an exit after `uptime` of running.
    pub fn on_exit(
        &mut self,
        policy: RestartPolicy,
        success: bool,
        uptime: Duration,
    ) -> ExitAction {
        match policy {
            RestartPolicy::Never => return ExitAction::Stop,
            RestartPolicy::OnFailure if success => return ExitAction::Stop,
            _ => {}
        }
        if uptime >= HEALTHY_UPTIME_RESET {
            self.consecutive = 0;
        }
        let delay = self.backoff.delay(self.consecutive);
        self.consecutive = self.consecutive.saturating_add(1);
        ExitAction::Restart { delay }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum ChildEventKind {
    Spawned {
        pid: u32,
    },
    Up,
    Exited {
        code: Option<i32>,
        signal: Option<i32>,
    },
    RestartScheduled {
        delay_ms: u64,
    },
    SpawnFailed {
        reason: String,
    },
    HealthKill,
    Stopped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChildEvent {
    pub t_ns: u64,
    #[serde(flatten)]
    pub kind: ChildEventKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChildStatus {
    pub name: String,
    pub state: ChildState,
    pub pid: Option<u32>,
    pub restarts: u64,
}

struct ChildShared {
    spec: ChildSpec,
    state: watch::Sender<ChildState>,
    pid: AtomicU32,
    restarts: AtomicU64,
    events: Mutex<Vec<ChildEvent>>,
}

impl ChildShared {
    fn record(&self, kind: ChildEventKind) {
        self.events.lock().unwrap().push(ChildEvent {
            t_ns: clock::monotonic_ns(),
            kind,
        });
    }

    fn set_state(&self, state: ChildState) {
        self.state.send_replace(state);
    }
}

/// Observer for one supervised child.
#[derive(Clone)]
pub struct ChildHandle {
    shared: Arc<ChildShared>,
}

impl std::fmt::Debug for ChildHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChildHandle")
            .field("status", &self.status())
            .finish()
    }
}

impl ChildHandle {
    pub fn name(&self) -> &str {
        &self.shared.spec.name
    }

    pub fn state(&self) -> ChildState {
        *self.shared.state.borrow()
    }

    /// Current process id, if a process is running.
    pub fn pid(&self) -> Option<u32> {
        match self.shared.pid.load(Ordering::SeqCst) {
            0 => None,
            pid => Some(pid),
        }
    }

    pub fn restarts(&self) -> u64 {
        self.shared.restarts.load(Ordering::Relaxed)
    }

    pub fn events(&self) -> Vec<ChildEvent> {
        self.shared.events.lock().unwrap().clone()
    }

    pub fn status(&self) -> ChildStatus {
        ChildStatus {
            name: self.name().to_string(),
            state: self.state(),
            pid: self.pid(),
            restarts: self.restarts(),
        }
    }

    /// Waits until the child reaches `state`; false on timeout.
    pub async fn wait_for_state(&self, state: ChildState, timeout: Duration) -> bool {
        let mut rx = self.shared.state.subscribe();
        tokio::time::timeout(timeout, rx.wait_for(|s| *s == state))
            .await
            .is_ok_and(|r| r.is_ok())
    }
}

#[derive(Clone)]
pub struct Supervisor {
    inner: Arc<SupervisorInner>,
}

struct SupervisorInner {
    children: Mutex<Vec<ChildHandle>>,
    monitors: Mutex<Vec<JoinHandle<()>>>,
    shutdown: watch::Sender<bool>,
    shut_down: AtomicBool,
    log_dir: Option<PathBuf>,
    grace: Duration,
    env: Vec<(String, String)>,
}

impl Supervisor {
    /// Child output goes to `<log_dir>/<name>.log`, or is discarded when
    /// `log_dir` is `None`.
    pub fn new(log_dir: Option<PathBuf>) -> Self {
        Self::with_options(log_dir, DEFAULT_SHUTDOWN_GRACE, Vec::new())
    }

    /// `env` is added to every child's environment.
    pub fn with_options(
        log_dir: Option<PathBuf>,
        grace: Duration,
        env: Vec<(String, String)>,
    ) -> Self {
        Supervisor {
            inner: Arc::new(SupervisorInner {
                children: Mutex::new(Vec::new()),
                monitors: Mutex::new(Vec::new()),
                shutdown: watch::channel(false).0,
                shut_down: AtomicBool::new(false),
                log_dir,
                grace,
                env,
            }),
        }
    }

    pub fn children(&self) -> Vec<ChildStatus> {
        self.inner
            .children
            .lock()
            .unwrap()
            .iter()
            .map(ChildHandle::status)
            .collect()
    }

    pub fn child(&self, name: &str) -> Option<ChildHandle> {
        self.inner
            .children
            .lock()
            .unwrap()
            .iter()
            .find(|c| c.name() == name)
            .cloned()
    }

    /// Starts `spec` and begins monitoring it. Fails immediately if the
    /// first launch fails.
    pub fn spawn(&self, spec: ChildSpec) -> Result<ChildHandle, SupervisorError> {
        if self.inner.shut_down.load(Ordering::SeqCst) {
            return Err(SupervisorError::ShutDown);
        }
        spec.validate()?;
        let child = self
            .launch(&spec)
            .map_err(|reason| SupervisorError::SpawnFailed {
                name: spec.name.clone(),
                reason,
            })?;
        let shared = Arc::new(ChildShared {
            spec,
            state: watch::channel(ChildState::Starting).0,
            pid: AtomicU32::new(0),
            restarts: AtomicU64::new(0),
            events: Mutex::new(Vec::new()),
        });
        let handle = ChildHandle {
            shared: shared.clone(),
        };
        self.on_started(&shared, &child);
        info!(child = %shared.spec.name, pid = ?child.id(), "child spawned");
        let monitor = tokio::spawn(monitor(self.clone(), shared, child));
        self.inner.children.lock().unwrap().push(handle.clone());
        self.inner.monitors.lock().unwrap().push(monitor);
        Ok(handle)
    }

    /// Terminates every child: SIGTERM, then SIGKILL after the grace
    /// period. Returns once all are reaped. Calling it again does nothing.
    pub async fn shutdown(&self) {
        if self.inner.shut_down.swap(true, Ordering::SeqCst) {
            return;
        }
        self.inner.shutdown.send_replace(true);
        let monitors: Vec<JoinHandle<()>> = self.inner.monitors.lock().unwrap().drain(..).collect();
        for m in monitors {
            let _ = m.await;
        }
    }

    fn launch(&self, spec: &ChildSpec) -> Result<Child, String> {
        let mut cmd = Command::new(&spec.command[0]);
        cmd.args(&spec.command[1..])
            .envs(self.inner.env.iter().cloned())
            .envs(&spec.env)
            .stdin(Stdio::null())
            .process_group(0)
            .kill_on_drop(true);
        match &self.inner.log_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| e.to_string())?;
                let log = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(dir.join(format!("{}.log", spec.name)))
                    .map_err(|e| e.to_string())?;
                let err = log.try_clone().map_err(|e| e.to_string())?;
                cmd.stdout(log).stderr(err);
            }
            None => {
                cmd.stdout(Stdio::null()).stderr(Stdio::null());
            }
        }
        cmd.spawn().map_err(|e| format!("{}: {e}", spec.command[0]))
    }

    fn on_started(&self, shared: &ChildShared, child: &Child) {
        let pid = child.id().unwrap_or(0);
        shared.pid.store(pid, Ordering::SeqCst);
        shared.record(ChildEventKind::Spawned { pid });
        if shared.spec.health.is_none() {
            shared.set_state(ChildState::Up);
            shared.record(ChildEventKind::Up);
        } else {
            shared.set_state(ChildState::Starting);
        }
    }
}

async fn stop_requested(rx: &mut watch::Receiver<bool>) {
    let _ = rx.wait_for(|stop| *stop).await;
}

fn signal_group(pid: u32, signal: Signal) {
    if pid != 0 {
        let _ = killpg(Pid::from_raw(pid as i32), signal);
    }
}

async fn terminate(child: &mut Child, grace: Duration) {
    let pid = child.id().unwrap_or(0);
    signal_group(pid, Signal::SIGTERM);
    if tokio::time::timeout(grace, child.wait()).await.is_err() {
        warn!(pid, "child ignored SIGTERM; killing");
        signal_group(pid, Signal::SIGKILL);
        let _ = child.wait().await;
    }
    // Reap stragglers left in the group.
    signal_group(pid, Signal::SIGKILL);
}

async fn monitor(sup: Supervisor, shared: Arc<ChildShared>, mut child: Child) {
    let name = shared.spec.name.clone();
    let mut tracker = RestartTracker::new(shared.spec.backoff);
    let mut shutdown = sup.inner.shutdown.subscribe();
    loop {
        let started = Instant::now();
        let health = shared
            .spec
            .health
            .clone()
            .map(|h| tokio::spawn(health_probe(shared.clone(), h)));

        let status = tokio::select! {
            status = child.wait() => status,
            _ = stop_requested(&mut shutdown) => {
                if let Some(h) = health { h.abort(); }
                terminate(&mut child, sup.inner.grace).await;
                shared.pid.store(0, Ordering::SeqCst);
                shared.set_state(ChildState::Stopped);
                shared.record(ChildEventKind::Stopped);
                return;
            }
        };
        if let Some(h) = health {
            h.abort();
        }
        shared.pid.store(0, Ordering::SeqCst);
        let (code, signal, success) = match &status {
            Ok(s) => {
                use std::os::unix::process::ExitStatusExt;
                (s.code(), s.signal(), s.success())
            }
            Err(_) => (None, None, false),
        };
        shared.record(ChildEventKind::Exited { code, signal });
        warn!(child = %name, ?code, ?signal, "child exited");

        let mut action = tracker.on_exit(shared.spec.restart, success, started.elapsed());
        loop {
            let ExitAction::Restart { delay } = action else {
                shared.set_state(ChildState::Stopped);
                shared.record(ChildEventKind::Stopped);
                return;
            };
            shared.set_state(ChildState::BackingOff);
            shared.record(ChildEventKind::RestartScheduled {
                delay_ms: delay.as_millis() as u64,
            });
            tokio::select! {
                _ = tokio::time::sleep(delay) => {}
                _ = stop_requested(&mut shutdown) => {
                    shared.set_state(ChildState::Stopped);
                    shared.record(ChildEventKind::Stopped);
                    return;
                }
            }
            match sup.launch(&shared.spec) {
                Ok(c) => {
                    child = c;
                    shared.restarts.fetch_add(1, Ordering::Relaxed);
                    sup.on_started(&shared, &child);
                    info!(child = %name, pid = ?child.id(), "child restarted");
                    break;
                }
                Err(reason) => {
                    warn!(child = %name, %reason, "restart failed");
                    shared.record(ChildEventKind::SpawnFailed { reason });
                    action = tracker.on_exit(shared.spec.restart, false, Duration::ZERO);
                }
            }
        }
    }
}

async fn health_probe(shared: Arc<ChildShared>, check: HealthCheck) {
    let interval = Duration::from_millis(check.interval_ms);
    let client = match reqwest::Client::builder().timeout(interval).build() {
        Ok(c) => c,
        Err(e) => {
            warn!(error = %e, "health client unavailable");
            return;
        }
    };
    let mut failures = 0u32;
    loop {
        tokio::time::sleep(interval).await;
        let healthy = client
            .get(&check.url)
            .send()
            .await
            .is_ok_and(|r| r.status().is_success());
        if healthy {
            failures = 0;
            if *shared.state.borrow() == ChildState::Starting {
                shared.set_state(ChildState::Up);
                shared.record(ChildEventKind::Up);
            }
        } else {
            failures += 1;
            if failures >= check.failures_to_kill {
                warn!(child = %shared.spec.name, failures, "health check failed; killing");
                shared.record(ChildEventKind::HealthKill);
                signal_group(shared.pid.load(Ordering::SeqCst), Signal::SIGKILL);
                return;
            }
        }
    }
}
