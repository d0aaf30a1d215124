//! Fan-out of prediction results to viewers.
//!
//! Viewers are latest-only: a slow one skips straight to the newest result.
//! A new viewer first gets the most recent result as a snapshot. Taps are
//! lossless in-process observers used for logging and measurement.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use tokio::sync::{mpsc, watch};

use crate::result::PredictionResult;

type Latest = Option<Arc<PredictionResult>>;

#[derive(Clone)]
pub struct ResultHub {
    inner: Arc<HubInner>,
}

struct HubInner {
    sender: Mutex<Option<watch::Sender<Latest>>>,
    template: watch::Receiver<Latest>,
    taps: Mutex<Vec<mpsc::UnboundedSender<Arc<PredictionResult>>>>,
    published: AtomicU64,
    markers: AtomicU64,
}

impl Default for ResultHub {
    fn default() -> Self {
        Self::new()
    }
}

impl ResultHub {
    pub fn new() -> Self {
        let (tx, rx) = watch::channel(None);
        ResultHub {
            inner: Arc::new(HubInner {
                sender: Mutex::new(Some(tx)),
                template: rx,
                taps: Mutex::new(Vec::new()),
                published: AtomicU64::new(0),
                markers: AtomicU64::new(0),
            }),
        }
    }

    pub fn publish_result(&self, result: PredictionResult) {
        let result = Arc::new(result);
        self.inner.published.fetch_add(1, Ordering::Relaxed);
        if result.is_marker() {
            self.inner.markers.fetch_add(1, Ordering::Relaxed);
        }
        self.inner
            .taps
            .lock()
            .unwrap()
            .retain(|tap| tap.send(result.clone()).is_ok());
        if let Some(tx) = self.inner.sender.lock().unwrap().as_ref() {
            tx.send_replace(Some(result));
        }
    }

    pub fn subscribe(&self) -> ResultSubscriber {
        ResultSubscriber {
            rx: self.inner.template.clone(),
            snapshot_pending: true,
        }
    }

    /// Receives every result published from now on.
    pub fn tap(&self) -> mpsc::UnboundedReceiver<Arc<PredictionResult>> {
        let (tx, rx) = mpsc::unbounded_channel();
        self.inner.taps.lock().unwrap().push(tx);
        rx
    }

    pub fn latest(&self) -> Option<Arc<PredictionResult>> {
        self.inner.template.borrow().clone()
    }

    pub fn published_count(&self) -> u64 {
        self.inner.published.load(Ordering::Relaxed)
    }

    pub fn marker_count(&self) -> u64 {
        self.inner.markers.load(Ordering::Relaxed)
    }

    /// Ends every subscription and tap.
    pub fn close(&self) {
        self.inner.sender.lock().unwrap().take();
        self.inner.taps.lock().unwrap().clear();
    }
}

pub struct ResultSubscriber {
    rx: watch::Receiver<Latest>,
    snapshot_pending: bool,
}

impl ResultSubscriber {
    /// The current result on first call (if any), then each newer one.
    /// `None` once the hub is closed.
    pub async fn next(&mut self) -> Option<Arc<PredictionResult>> {
        if std::mem::take(&mut self.snapshot_pending) {
            if let Some(current) = self.rx.borrow_and_update().clone() {
                return Some(current);
            }
        }
        loop {
            self.rx.changed().await.ok()?;
            if let Some(current) = self.rx.borrow_and_update().clone() {
                return Some(current);
            }
        }
    }
}
