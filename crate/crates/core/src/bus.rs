//! In-process frame broadcast with per-subscriber delivery modes.
//!
//! `Reliable` subscribers get every frame in order through a bounded queue
//! and fault with [`RecvError::Overflow`] instead of dropping silently.
//! `Latest` subscribers own a depth-1 mailbox: each publish replaces the
//! pending frame, so a slow consumer only ever sees the newest one.
//!
//! Publishing never waits on a consumer. Each subscriber slot is touched
//! under its own short lock.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Notify;

use crate::clock;
use crate::frame::Frame;

pub const DEFAULT_RELIABLE_CAPACITY: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DeliveryMode {
    Reliable,
    Latest,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PublishError {
    #[error("frame seq {got} is not greater than last published seq {last}")]
    NonMonotonicSeq { last: u64, got: u64 },
    #[error("bus is shut down")]
    Closed,
}

#[derive(Debug, Error, PartialEq, Eq, Clone, Copy)]
pub enum RecvError {
    #[error("bus closed")]
    Closed,
    #[error("reliable subscription overflowed; {dropped} frames dropped")]
    Overflow { dropped: u64 },
}

/// When a frame was handed to the bus, for offline staleness checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublishRecord {
    pub seq: u64,
    /// Stamped after the frame is visible to every subscriber.
    pub t_publish_ns: u64,
}

#[derive(Clone)]
pub struct FrameBus {
    inner: Arc<BusInner>,
}

struct BusInner {
    subscribers: Mutex<Vec<Arc<Slot>>>,
    // Also serializes publishers.
    last_seq: Mutex<Option<u64>>,
    closed: AtomicBool,
    published: AtomicU64,
    publish_log: Option<Mutex<Vec<PublishRecord>>>,
}

struct Slot {
    mode: DeliveryMode,
    capacity: usize,
    state: Mutex<SlotState>,
    notify: Notify,
    delivered: AtomicU64,
    dropped: AtomicU64,
}

#[derive(Default)]
struct SlotState {
    queue: VecDeque<Frame>,
    overflowed: bool,
    closed: bool,
}

impl Slot {
    fn push(&self, frame: &Frame) {
        let mut state = self.state.lock().unwrap();
        if state.closed {
            return;
        }
        match self.mode {
            DeliveryMode::Latest => {
                if state.queue.pop_front().is_some() {
                    self.dropped.fetch_add(1, Ordering::Relaxed);
                }
                state.queue.push_back(frame.clone());
            }
            DeliveryMode::Reliable => {
                if state.overflowed || state.queue.len() >= self.capacity {
                    state.overflowed = true;
                    self.dropped.fetch_add(1, Ordering::Relaxed);
                } else {
                    state.queue.push_back(frame.clone());
                }
            }
        }
        drop(state);
        self.notify.notify_one();
    }

    fn close(&self) {
        self.state.lock().unwrap().closed = true;
        self.notify.notify_one();
    }

    fn is_closed(&self) -> bool {
        self.state.lock().unwrap().closed
    }
}

impl Default for FrameBus {
    fn default() -> Self {
        Self::new()
    }
}

impl FrameBus {
    pub fn new() -> Self {
        Self::build(false)
    }

    /// A bus that keeps a [`PublishRecord`] for every frame.
    pub fn with_publish_log() -> Self {
        Self::build(true)
    }

    fn build(log: bool) -> Self {
        FrameBus {
            inner: Arc::new(BusInner {
                subscribers: Mutex::new(Vec::new()),
                last_seq: Mutex::new(None),
                closed: AtomicBool::new(false),
                published: AtomicU64::new(0),
                publish_log: log.then(|| Mutex::new(Vec::new())),
            }),
        }
    }

    pub fn publish(&self, frame: Frame) -> Result<(), PublishError> {
        let mut last_seq = self.inner.last_seq.lock().unwrap();
        if self.inner.closed.load(Ordering::Acquire) {
            return Err(PublishError::Closed);
        }
        if let Some(last) = *last_seq {
            if frame.seq() <= last {
                return Err(PublishError::NonMonotonicSeq {
                    last,
                    got: frame.seq(),
                });
            }
        }
        *last_seq = Some(frame.seq());

        let targets: Vec<Arc<Slot>> = {
            let mut subs = self.inner.subscribers.lock().unwrap();
            subs.retain(|s| !s.is_closed());
            subs.clone()
        };
        for slot in &targets {
            slot.push(&frame);
        }
        self.inner.published.fetch_add(1, Ordering::Relaxed);
        if let Some(log) = &self.inner.publish_log {
            log.lock().unwrap().push(PublishRecord {
                seq: frame.seq(),
                t_publish_ns: clock::monotonic_ns(),
            });
        }
        Ok(())
    }

    /// Subscribes starting from the next published frame. `capacity` only
    /// applies to reliable mode and defaults to [`DEFAULT_RELIABLE_CAPACITY`].
    pub fn subscribe(&self, mode: DeliveryMode, capacity: Option<usize>) -> Subscription {
        let capacity = match mode {
            DeliveryMode::Latest => 1,
            DeliveryMode::Reliable => capacity.unwrap_or(DEFAULT_RELIABLE_CAPACITY).max(1),
        };
        let slot = Arc::new(Slot {
            mode,
            capacity,
            state: Mutex::new(SlotState::default()),
            notify: Notify::new(),
            delivered: AtomicU64::new(0),
            dropped: AtomicU64::new(0),
        });
        if self.inner.closed.load(Ordering::Acquire) {
            slot.state.lock().unwrap().closed = true;
        }
        // Registration happens under the publish lock so the first frame a
        // subscriber sees is strictly after the subscribe call.
        let _publishing = self.inner.last_seq.lock().unwrap();
        self.inner.subscribers.lock().unwrap().push(slot.clone());
        Subscription { slot }
    }

    /// Closes the bus. Subscribers drain what is already queued, then see
    /// [`RecvError::Closed`]. Idempotent.
    pub fn shutdown(&self) {
        let _publishing = self.inner.last_seq.lock().unwrap();
        self.inner.closed.store(true, Ordering::Release);
        for slot in self.inner.subscribers.lock().unwrap().drain(..) {
            slot.close();
        }
    }

    pub fn is_closed(&self) -> bool {
        self.inner.closed.load(Ordering::Acquire)
    }

    pub fn published_count(&self) -> u64 {
        self.inner.published.load(Ordering::Relaxed)
    }

    pub fn last_seq(&self) -> Option<u64> {
        *self.inner.last_seq.lock().unwrap()
    }

    pub fn subscriber_count(&self) -> usize {
        let mut subs = self.inner.subscribers.lock().unwrap();
        subs.retain(|s| !s.is_closed());
        subs.len()
    }

    pub fn publish_log(&self) -> Vec<PublishRecord> {
        self.inner
            .publish_log
            .as_ref()
            .map(|l| l.lock().unwrap().clone())
            .unwrap_or_default()
    }
}

/// One consumer's view of the bus.
pub struct Subscription {
    slot: Arc<Slot>,
}

/// Closes a subscription from outside its consumer.
#[derive(Clone)]
pub struct SubscriptionCloser {
    slot: Arc<Slot>,
}

impl SubscriptionCloser {
    /// Queued frames remain receivable; afterwards `recv` yields `Closed`.
    pub fn close(&self) {
        self.slot.close();
    }
}

impl Subscription {
    pub fn mode(&self) -> DeliveryMode {
        self.slot.mode
    }

    pub fn capacity(&self) -> usize {
        self.slot.capacity
    }

    pub fn delivered_count(&self) -> u64 {
        self.slot.delivered.load(Ordering::Relaxed)
    }

    pub fn dropped_count(&self) -> u64 {
        self.slot.dropped.load(Ordering::Relaxed)
    }

    pub fn pending(&self) -> usize {
        self.slot.state.lock().unwrap().queue.len()
    }

    pub fn closer(&self) -> SubscriptionCloser {
        SubscriptionCloser {
            slot: self.slot.clone(),
        }
    }

    /// Waits for the next frame: the oldest undelivered one in reliable
    /// mode, the pending one in latest mode.
    pub async fn recv(&mut self) -> Result<Frame, RecvError> {
        self.recv_stamped().await.map(|(frame, _)| frame)
    }

    /// Like [`recv`](Self::recv), also returning the monotonic instant at
    /// which the frame was taken out of the slot.
    pub async fn recv_stamped(&mut self) -> Result<(Frame, u64), RecvError> {
        loop {
            if let Some(item) = self.try_take() {
                return item;
            }
            self.slot.notify.notified().await;
        }
    }

    /// Non-blocking variant; `None` when nothing is pending.
    pub fn try_recv(&mut self) -> Option<Result<Frame, RecvError>> {
        self.try_take().map(|r| r.map(|(f, _)| f))
    }

    /// Blocks the calling thread. Must not be called from async code.
    pub fn recv_blocking(&mut self) -> Result<Frame, RecvError> {
        futures::executor::block_on(self.recv())
    }

    fn try_take(&self) -> Option<Result<(Frame, u64), RecvError>> {
        let mut state = self.slot.state.lock().unwrap();
        if let Some(frame) = state.queue.pop_front() {
            let taken_at = clock::monotonic_ns();
            self.slot.delivered.fetch_add(1, Ordering::Relaxed);
            return Some(Ok((frame, taken_at)));
        }
        if state.overflowed {
            return Some(Err(RecvError::Overflow {
                dropped: self.slot.dropped.load(Ordering::Relaxed),
            }));
        }
        if state.closed {
            return Some(Err(RecvError::Closed));
        }
        None
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        self.slot.close();
    }
}

#[cfg(test)]
mod tests {
    use std::time::Duration;

    use super::*;
    use crate::frame::{FrameMeta, PixelFormat};

    fn frame(seq: u64) -> Frame {
        Frame {
            meta: FrameMeta {
                seq,
                t_capture_ns: seq,
                t_wall_ns: seq,
                width: 1,
                height: 1,
                pixel_format: PixelFormat::Gray8,
            },
            payload: vec![seq as u8].into(),
        }
    }

    #[tokio::test]
    async fn reliable_receives_everything_in_order() {
        let bus = FrameBus::new();
        let mut sub = bus.subscribe(DeliveryMode::Reliable, None);
        for s in 0..3 {
            bus.publish(frame(s)).unwrap();
        }
        for s in 0..3 {
            assert_eq!(sub.recv().await.unwrap().seq(), s);
        }
    }

    #[tokio::test]
    async fn latest_keeps_only_newest() {
        let bus = FrameBus::new();
        let mut sub = bus.subscribe(DeliveryMode::Latest, None);
        for s in 0..3 {
            bus.publish(frame(s)).unwrap();
        }
        assert_eq!(sub.recv().await.unwrap().seq(), 2);
        assert_eq!(sub.dropped_count(), 2);
        assert_eq!(sub.delivered_count(), 1);
    }

    #[tokio::test]
    async fn latest_blocks_until_next_publish() {
        let bus = FrameBus::new();
        let mut sub = bus.subscribe(DeliveryMode::Latest, None);
        bus.publish(frame(0)).unwrap();
        sub.recv().await.unwrap();
        let waiting = tokio::time::timeout(Duration::from_millis(50), sub.recv()).await;
        assert!(waiting.is_err(), "recv must block with nothing new");
        let publisher = bus.clone();
        tokio::spawn(async move {
            tokio::time::sleep(Duration::from_millis(20)).await;
            publisher.publish(frame(1)).unwrap();
        });
        assert_eq!(sub.recv().await.unwrap().seq(), 1);
    }

    #[test]
    fn non_monotonic_publish_is_rejected() {
        let bus = FrameBus::new();
        bus.publish(frame(5)).unwrap();
        assert_eq!(
            bus.publish(frame(5)),
            Err(PublishError::NonMonotonicSeq { last: 5, got: 5 })
        );
        assert!(bus.publish(frame(3)).is_err());
        // gaps are allowed; ordering is what matters
        bus.publish(frame(9)).unwrap();
    }

    #[tokio::test]
    async fn no_history_for_late_subscribers() {
        let bus = FrameBus::new();
        for s in 0..=5 {
            bus.publish(frame(s)).unwrap();
        }
        let mut sub = bus.subscribe(DeliveryMode::Reliable, None);
        bus.publish(frame(6)).unwrap();
        assert_eq!(sub.recv().await.unwrap().seq(), 6);
    }

    #[tokio::test]
    async fn reliable_overflow_is_reported() {
        let bus = FrameBus::new();
        let mut sub = bus.subscribe(DeliveryMode::Reliable, Some(4));
        for s in 0..10 {
            bus.publish(frame(s)).unwrap();
        }
        for s in 0..4 {
            assert_eq!(sub.recv().await.unwrap().seq(), s);
        }
        assert_eq!(sub.recv().await, Err(RecvError::Overflow { dropped: 6 }));
        assert_eq!(sub.dropped_count(), 6);
        // stays faulted
        bus.publish(frame(10)).unwrap();
        assert_eq!(sub.recv().await, Err(RecvError::Overflow { dropped: 7 }));
    }

    #[tokio::test]
    async fn shutdown_closes_after_drain() {
        let bus = FrameBus::new();
        let mut sub = bus.subscribe(DeliveryMode::Reliable, None);
        bus.publish(frame(7)).unwrap();
        bus.publish(frame(8)).unwrap();
        bus.shutdown();
        assert_eq!(sub.recv().await.unwrap().seq(), 7);
        assert_eq!(sub.recv().await.unwrap().seq(), 8);
        assert_eq!(sub.recv().await, Err(RecvError::Closed));
        assert_eq!(bus.publish(frame(9)), Err(PublishError::Closed));
        let mut late = bus.subscribe(DeliveryMode::Latest, None);
        assert_eq!(late.recv().await, Err(RecvError::Closed));
        bus.shutdown();
    }

    #[tokio::test]
    async fn shutdown_wakes_blocked_receiver() {
        let bus = FrameBus::new();
        let mut sub = bus.subscribe(DeliveryMode::Latest, None);
        let closer = bus.clone();
        tokio::spawn(async move {
            tokio::time::sleep(Duration::from_millis(20)).await;
            closer.shutdown();
        });
        assert_eq!(sub.recv().await, Err(RecvError::Closed));
    }

    #[test]
    fn dropped_subscriptions_are_pruned() {
        let bus = FrameBus::new();
        let a = bus.subscribe(DeliveryMode::Latest, None);
        let _b = bus.subscribe(DeliveryMode::Reliable, None);
        assert_eq!(bus.subscriber_count(), 2);
        drop(a);
        assert_eq!(bus.subscriber_count(), 1);
    }

    #[test]
    fn publish_log_records_every_frame() {
        let bus = FrameBus::with_publish_log();
        for s in [1, 2, 4] {
            bus.publish(frame(s)).unwrap();
        }
        let log = bus.publish_log();
        assert_eq!(log.iter().map(|r| r.seq).collect::<Vec<_>>(), vec![1, 2, 4]);
        assert!(log
            .windows(2)
            .all(|w| w[0].t_publish_ns <= w[1].t_publish_ns));
    }
}
