//! In-process publish/subscribe broker with at-most-once delivery.
//!
//! Every subscriber owns a bounded queue. Publishing never blocks: when a
//! queue is full its oldest message is discarded and the subscriber's drop
//! counter is incremented. There are no retained messages, so a subscriber
//! only sees what is published after it subscribed.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock, Weak};
use std::time::{Duration, Instant};

use thiserror::Error;

pub const DEFAULT_CAPACITY: usize = 1024;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BusError {
    #[error("broker is shut down")]
    Shutdown,
    #[error("topic name must be non-empty")]
    InvalidTopic,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum RecvError {
    #[error("timed out waiting for a message")]
    Timeout,
    #[error("subscription closed")]
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BusMessage {
    pub topic: String,
    pub payload: String,
}

struct QueueState {
    items: VecDeque<BusMessage>,
    dropped: u64,
    closed: bool,
}

struct Queue {
    id: u64,
    capacity: usize,
    state: Mutex<QueueState>,
    ready: Condvar,
}

impl Queue {
    fn push(&self, msg: BusMessage) {
        let mut state = self.state.lock().expect("queue poisoned");
        if state.closed {
            return;
        }
        if state.items.len() >= self.capacity {
            state.items.pop_front();
            state.dropped += 1;
        }
        state.items.push_back(msg);
        drop(state);
        self.ready.notify_one();
    }

    fn close(&self) {
        self.state.lock().expect("queue poisoned").closed = true;
        self.ready.notify_all();
    }
}

struct BusInner {
    subscribers: RwLock<HashMap<String, Vec<Arc<Queue>>>>,
    closed: AtomicBool,
    next_id: AtomicU64,
    capacity: usize,
}

/// Broker handle. Clones share the same broker.
#[derive(Clone)]
pub struct Bus {
    inner: Arc<BusInner>,
}

impl Default for Bus {
    fn default() -> Self {
        Self::new()
    }
}

impl std::fmt::Debug for Bus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Bus")
            .field("capacity", &self.inner.capacity)
            .finish_non_exhaustive()
    }
}

impl Bus {
    pub fn new() -> Self {
        Self::with_capacity(DEFAULT_CAPACITY)
    }

    /// A broker whose subscriber queues hold at most `capacity` messages.
    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            inner: Arc::new(BusInner {
                subscribers: RwLock::new(HashMap::new()),
                closed: AtomicBool::new(false),
                next_id: AtomicU64::new(0),
                capacity: capacity.max(1),
            }),
        }
    }

    /// Delivers a copy of the message to every current subscriber of
    /// `topic`. Fire-and-forget: a closed broker or an empty audience is not
    /// an error.
    /// Per-subscriber queue bound.
    pub fn capacity(&self) -> usize {
        self.inner.capacity
    }

    pub fn publish(&self, topic: &str, payload: impl Into<String>) -> Result<(), BusError> {
        if topic.is_empty() {
            return Err(BusError::InvalidTopic);
        }
        if self.is_closed() {
            return Ok(());
        }
        let subscribers = self
            .inner
            .subscribers
            .read()
            .expect("subscriber map poisoned");
        let Some(queues) = subscribers.get(topic) else {
            return Ok(());
        };
        let msg = BusMessage {
            topic: topic.to_owned(),
            payload: payload.into(),
        };
        for queue in queues {
            queue.push(msg.clone());
        }
        Ok(())
    }

    pub fn subscribe(&self, topic: &str) -> Result<Subscription, BusError> {
        if topic.is_empty() {
            return Err(BusError::InvalidTopic);
        }
        let queue = Arc::new(Queue {
            id: self.inner.next_id.fetch_add(1, Ordering::Relaxed),
            capacity: self.inner.capacity,
            state: Mutex::new(QueueState {
                items: VecDeque::new(),
                dropped: 0,
                closed: false,
            }),
            ready: Condvar::new(),
        });
        {
            let mut subscribers = self
                .inner
                .subscribers
                .write()
                .expect("subscriber map poisoned");
            // Checked under the write lock so `close` cannot miss this queue.
            if self.is_closed() {
                return Err(BusError::Shutdown);
            }
            subscribers
                .entry(topic.to_owned())
                .or_default()
                .push(queue.clone());
        }
        Ok(Subscription {
            topic: topic.to_owned(),
            queue,
            bus: Arc::downgrade(&self.inner),
        })
    }

    pub fn subscriber_count(&self, topic: &str) -> usize {
        self.inner
            .subscribers
            .read()
            .expect("subscriber map poisoned")
            .get(topic)
            .map_or(0, Vec::len)
    }

    /// Shuts the broker down. Subscribers drain what is already queued and
    /// then observe `Closed`.
    pub fn close(&self) {
        let mut subscribers = self
            .inner
            .subscribers
            .write()
            .expect("subscriber map poisoned");
        self.inner.closed.store(true, Ordering::SeqCst);
        for queue in subscribers.drain().flat_map(|(_, qs)| qs) {
            queue.close();
        }
    }

    pub fn is_closed(&self) -> bool {
        self.inner.closed.load(Ordering::SeqCst)
    }
}

/// Stream of messages published to one topic after subscription.
pub struct Subscription {
    topic: String,
    queue: Arc<Queue>,
    bus: Weak<BusInner>,
}

impl std::fmt::Debug for Subscription {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Subscription")
            .field("topic", &self.topic)
            .finish_non_exhaustive()
    }
}

impl Subscription {
    pub fn topic(&self) -> &str {
        &self.topic
    }

    /// Blocks for the next message; `None` once closed and drained.
    pub fn recv(&self) -> Option<BusMessage> {
        let mut state = self.queue.state.lock().expect("queue poisoned");
        loop {
            if let Some(msg) = state.items.pop_front() {
                return Some(msg);
            }
            if state.closed {
                return None;
            }
            state = self.queue.ready.wait(state).expect("queue poisoned");
        }
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Result<BusMessage, RecvError> {
        let deadline = Instant::now() + timeout;
        let mut state = self.queue.state.lock().expect("queue poisoned");
        loop {
            if let Some(msg) = state.items.pop_front() {
                return Ok(msg);
            }
            if state.closed {
                return Err(RecvError::Closed);
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(RecvError::Timeout);
            }
            state = self
                .queue
                .ready
                .wait_timeout(state, deadline - now)
                .expect("queue poisoned")
                .0;
        }
    }

    pub fn try_recv(&self) -> Option<BusMessage> {
        self.queue
            .state
            .lock()
            .expect("queue poisoned")
            .items
            .pop_front()
    }

    /// Messages discarded because this subscriber's queue overflowed.
    pub fn dropped(&self) -> u64 {
        self.queue.state.lock().expect("queue poisoned").dropped
    }

    pub fn pending(&self) -> usize {
        self.queue.state.lock().expect("queue poisoned").items.len()
    }

    /// Unsubscribes; queued messages are discarded.
    pub fn close(self) {}
}

impl Drop for Subscription {
    fn drop(&mut self) {
        self.queue.close();
        if let Some(bus) = self.bus.upgrade() {
            let mut subscribers = bus.subscribers.write().expect("subscriber map poisoned");
            if let Some(queues) = subscribers.get_mut(&self.topic) {
                queues.retain(|q| q.id != self.queue.id);
                if queues.is_empty() {
                    subscribers.remove(&self.topic);
                }
            }
        }
    }
}
