//! Connected inference engines and request/reply matching.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;
use tokio::sync::{mpsc, oneshot, Semaphore};
use tokio::time::{timeout_at, Instant};

use crate::clock;
use crate::engine::{EngineDescriptor, InferReply, InferRequest};
use crate::frame::Frame;
use crate::result::PredictionResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineState {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StateTransition {
    pub state: EngineState,
    pub t_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EngineStatus {
    pub name: String,
    pub state: EngineState,
    pub version: String,
    pub stage_role: String,
    pub registrations: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("an engine named {0:?} is already connected")]
    DuplicateName(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DispatchError {
    #[error("engine unavailable: {0}")]
    EngineUnavailable(String),
    #[error("engine did not answer within the timeout")]
    Timeout,
}

/// The gateway's half of one engine connection.
pub struct EngineLink {
    generation: u64,
    descriptor: EngineDescriptor,
    outbound: mpsc::UnboundedSender<Vec<u8>>,
    pending: Mutex<HashMap<u32, oneshot::Sender<InferReply>>>,
    next_id: AtomicU32,
    permits: Semaphore,
}

impl EngineLink {
    pub fn descriptor(&self) -> &EngineDescriptor {
        &self.descriptor
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Routes a reply to its waiting request. Returns false for replies
    /// nobody is waiting for (unknown or already timed-out ids).
    pub fn complete(&self, reply: InferReply) -> bool {
        match self.pending.lock().unwrap().remove(&reply.request_id) {
            Some(waiter) => waiter.send(reply).is_ok(),
            None => false,
        }
    }

    fn fail_all(&self) {
        self.pending.lock().unwrap().clear();
        self.permits.close();
    }
}

/// What the connection task needs after a successful handshake.
pub struct Registration {
    pub link: Arc<EngineLink>,
    /// Encoded infer requests to forward to the engine.
    pub outbound: mpsc::UnboundedReceiver<Vec<u8>>,
}

struct EngineEntry {
    descriptor: EngineDescriptor,
    link: Option<Arc<EngineLink>>,
    transitions: Vec<StateTransition>,
    registrations: u64,
}

impl EngineEntry {
    fn state(&self) -> EngineState {
        if self.link.is_some() {
            EngineState::Up
        } else {
            EngineState::Down
        }
    }
}

#[derive(Clone, Default)]
pub struct EngineRegistry {
    entries: Arc<Mutex<HashMap<String, EngineEntry>>>,
    generations: Arc<AtomicU64>,
}

impl EngineRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a freshly handshaken engine. A name may be reused once
    /// its previous connection has gone away.
    pub fn register(&self, descriptor: EngineDescriptor) -> Result<Registration, RegistryError> {
        let mut entries = self.entries.lock().unwrap();
        if entries
            .get(&descriptor.name)
            .is_some_and(|e| e.link.is_some())
        {
            return Err(RegistryError::DuplicateName(descriptor.name));
        }
        let (tx, rx) = mpsc::unbounded_channel();
        let link = Arc::new(EngineLink {
            generation: self.generations.fetch_add(1, Ordering::Relaxed),
            descriptor: descriptor.clone(),
            outbound: tx,
            pending: Mutex::new(HashMap::new()),
            next_id: AtomicU32::new(1),
            permits: Semaphore::new(descriptor.max_concurrent as usize),
        });
        let entry = entries
            .entry(descriptor.name.clone())
            .or_insert_with(|| EngineEntry {
                descriptor: descriptor.clone(),
                link: None,
                transitions: Vec::new(),
                registrations: 0,
            });
        entry.descriptor = descriptor;
        entry.link = Some(link.clone());
        entry.registrations += 1;
        entry.transitions.push(StateTransition {
            state: EngineState::Up,
            t_ns: clock::monotonic_ns(),
        });
        Ok(Registration { link, outbound: rx })
    }

    /// Marks the engine down if `link` is still its current connection and
    /// fails every request in flight on it.
    pub fn deregister(&self, link: &EngineLink) {
        link.fail_all();
        let mut entries = self.entries.lock().unwrap();
        if let Some(entry) = entries.get_mut(&link.descriptor.name) {
            if entry
                .link
                .as_ref()
                .is_some_and(|l| l.generation == link.generation)
            {
                entry.link = None;
                entry.transitions.push(StateTransition {
                    state: EngineState::Down,
                    t_ns: clock::monotonic_ns(),
                });
            }
        }
    }

    pub fn state(&self, name: &str) -> Option<EngineState> {
        self.entries
            .lock()
            .unwrap()
            .get(name)
            .map(EngineEntry::state)
    }

    pub fn transitions(&self, name: &str) -> Vec<StateTransition> {
        self.entries
            .lock()
            .unwrap()
            .get(name)
            .map(|e| e.transitions.clone())
            .unwrap_or_default()
    }

    pub fn snapshot(&self) -> Vec<EngineStatus> {
        let entries = self.entries.lock().unwrap();
        let mut out: Vec<EngineStatus> = entries
            .iter()
            .map(|(name, e)| EngineStatus {
                name: name.clone(),
                state: e.state(),
                version: e.descriptor.version.clone(),
                stage_role: e.descriptor.stage_role.clone(),
                registrations: e.registrations,
            })
            .collect();
        out.sort_by(|a, b| a.name.cmp(&b.name));
        out
    }

    /// Polls until every named engine is up or `timeout` passes.
    pub async fn wait_until_up(&self, names: &[String], timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        loop {
            if names.iter().all(|n| self.state(n) == Some(EngineState::Up)) {
                return true;
            }
            if Instant::now() >= deadline {
                return false;
            }
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
    }

    /// Sends one request to `name` and waits for its reply. The timeout
    /// covers waiting for a free slot on the engine as well.
    pub async fn infer(
        &self,
        name: &str,
        frame: &Frame,
        upstream: Option<PredictionResult>,
        timeout: Duration,
    ) -> Result<InferReply, DispatchError> {
        let deadline = Instant::now() + timeout;
        let link = {
            let entries = self.entries.lock().unwrap();
            match entries.get(name) {
                None => {
                    return Err(DispatchError::EngineUnavailable(format!(
                        "engine {name} never connected"
                    )))
                }
                Some(entry) => entry.link.clone().ok_or_else(|| {
                    DispatchError::EngineUnavailable(format!("engine {name} offline"))
                })?,
            }
        };
        if !link.descriptor.accepts.contains(&frame.meta.pixel_format) {
            return Err(DispatchError::EngineUnavailable(format!(
                "engine {name} does not accept {}",
                frame.meta.pixel_format
            )));
        }
        let _permit = match timeout_at(deadline, link.permits.acquire()).await {
            Err(_) => return Err(DispatchError::Timeout),
            Ok(Err(_)) => {
                return Err(DispatchError::EngineUnavailable(format!(
                    "engine {name} disconnected"
                )))
            }
            Ok(Ok(permit)) => permit,
        };
        let request_id = link.next_id.fetch_add(1, Ordering::Relaxed);
        let (tx, rx) = oneshot::channel();
        link.pending.lock().unwrap().insert(request_id, tx);
        let request = InferRequest {
            request_id,
            frame: frame.clone(),
            upstream,
        };
        if link.outbound.send(request.encode()).is_err() {
            link.pending.lock().unwrap().remove(&request_id);
            return Err(DispatchError::EngineUnavailable(format!(
                "engine {name} disconnected"
            )));
        }
        match timeout_at(deadline, rx).await {
            Ok(Ok(reply)) => Ok(reply),
            Ok(Err(_)) => Err(DispatchError::EngineUnavailable(format!(
                "engine {name} connection lost"
            ))),
            Err(_) => {
                link.pending.lock().unwrap().remove(&request_id);
                Err(DispatchError::Timeout)
            }
        }
    }
}
