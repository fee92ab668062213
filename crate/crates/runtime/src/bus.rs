//! In-process topic bus with bounded per-subscriber queues.

use std::collections::{BTreeMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard, Weak};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::now_ns;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub topic: String,
    pub stamp_ns: u64,
    pub seq: u64,
    pub payload: Vec<f64>,
}

/// A message as seen by one subscriber.
#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub msg: Message,
    /// Bus clock at publication.
    pub published_ns: u64,
    /// Global publication order across all topics.
    pub order: u64,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BusError {
    #[error("bus is closed")]
    BusClosed,
    #[error("queue depth must be at least 1")]
    ZeroDepth,
    #[error("stamp {got} on `{topic}` is older than the previous stamp {last}")]
    StampRegression { topic: String, got: u64, last: u64 },
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// Wakes one waiter that watches several subscriptions at once.
#[derive(Debug, Default)]
pub struct Doorbell {
    rings: Mutex<u64>,
    cv: Condvar,
}

impl Doorbell {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn ring(&self) {
        *lock(&self.rings) += 1;
        self.cv.notify_all();
    }

    /// Current ring count; pass it to [`Doorbell::wait_past`].
    pub fn rings(&self) -> u64 {
        *lock(&self.rings)
    }

    /// Blocks until the ring count moves past `seen` or `timeout` elapses.
    pub fn wait_past(&self, seen: u64, timeout: Duration) -> u64 {
        let guard = lock(&self.rings);
        let (guard, _) = self
            .cv
            .wait_timeout_while(guard, timeout, |r| *r == seen)
            .unwrap_or_else(|e| e.into_inner());
        *guard
    }
}

#[derive(Debug)]
struct QueueState {
    items: VecDeque<Envelope>,
    received: u64,
    drops: u64,
    closed: bool,
}

#[derive(Debug)]
struct SubQueue {
    id: u64,
    depth: usize,
    state: Mutex<QueueState>,
    cv: Condvar,
    doorbell: Option<Arc<Doorbell>>,
}

impl SubQueue {
    fn push(&self, env: Envelope) {
        {
            let mut st = lock(&self.state);
            if st.items.len() == self.depth {
                st.items.pop_front();
                st.drops += 1;
            }
            st.items.push_back(env);
            st.received += 1;
        }
        self.cv.notify_all();
        if let Some(bell) = &self.doorbell {
            bell.ring();
        }
    }

    fn close(&self) {
        lock(&self.state).closed = true;
        self.cv.notify_all();
        if let Some(bell) = &self.doorbell {
            bell.ring();
        }
    }
}

#[derive(Debug, Default)]
struct Registry {
    closed: bool,
    topics: BTreeMap<String, Vec<Arc<SubQueue>>>,
    next_id: u64,
}

#[derive(Debug, Default)]
struct Shared {
    registry: Mutex<Registry>,
    order: AtomicU64,
}

/// Cheap to clone; all clones share one set of topics.
#[derive(Debug, Clone, Default)]
pub struct Bus {
    shared: Arc<Shared>,
}

impl Bus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Delivers `msg` to every current subscriber of its topic, in
    /// subscription order. Returns the number of subscribers reached.
    pub fn publish(&self, msg: Message) -> Result<usize, BusError> {
        // Holding the registry lock while enqueuing keeps the global order
        // consistent with every subscriber's queue order.
        let reg = lock(&self.shared.registry);
        if reg.closed {
            return Err(BusError::BusClosed);
        }
        let Some(subs) = reg.topics.get(&msg.topic) else {
            return Ok(0);
        };
        let published_ns = now_ns();
        let order = self.shared.order.fetch_add(1, Ordering::Relaxed);
        for q in subs {
            q.push(Envelope {
                msg: msg.clone(),
                published_ns,
                order,
            });
        }
        Ok(subs.len())
    }

    pub fn subscribe(&self, topic: &str, queue_depth: usize) -> Result<Subscription, BusError> {
        self.subscribe_inner(topic, queue_depth, None)
    }

    /// Like [`Bus::subscribe`], also ringing `doorbell` on every delivery.
    pub fn subscribe_with(
        &self,
        topic: &str,
        queue_depth: usize,
        doorbell: Arc<Doorbell>,
    ) -> Result<Subscription, BusError> {
        self.subscribe_inner(topic, queue_depth, Some(doorbell))
    }

    fn subscribe_inner(
        &self,
        topic: &str,
        queue_depth: usize,
        doorbell: Option<Arc<Doorbell>>,
    ) -> Result<Subscription, BusError> {
        if queue_depth == 0 {
            return Err(BusError::ZeroDepth);
        }
        let mut reg = lock(&self.shared.registry);
        if reg.closed {
            return Err(BusError::BusClosed);
        }
        reg.next_id += 1;
        let queue = Arc::new(SubQueue {
            id: reg.next_id,
            depth: queue_depth,
            state: Mutex::new(QueueState {
                items: VecDeque::new(),
                received: 0,
                drops: 0,
                closed: false,
            }),
            cv: Condvar::new(),
            doorbell,
        });
        reg.topics.entry(topic.to_string()).or_default().push(queue.clone());
        Ok(Subscription {
            topic: topic.to_string(),
            queue,
            bus: Arc::downgrade(&self.shared),
        })
    }

    pub fn publisher(&self, topic: &str) -> Publisher {
        Publisher {
            bus: self.clone(),
            topic: topic.to_string(),
            seq: 0,
            last_stamp: 0,
        }
    }

    /// Rejects further publishes and subscriptions and wakes blocked takers.
    pub fn close(&self) {
        let mut reg = lock(&self.shared.registry);
        reg.closed = true;
        for q in reg.topics.values().flatten() {
            q.close();
        }
    }

    pub fn is_closed(&self) -> bool {
        lock(&self.shared.registry).closed
    }
}

/// Publishes on one topic with a per-publisher sequence number and
/// non-decreasing stamps.
#[derive(Debug)]
pub struct Publisher {
    bus: Bus,
    topic: String,
    seq: u64,
    last_stamp: u64,
}

impl Publisher {
    pub fn topic(&self) -> &str {
        &self.topic
    }

    /// Publishes `payload` stamped with the current bus clock.
    pub fn publish(&mut self, payload: Vec<f64>) -> Result<Message, BusError> {
        let stamp = now_ns().max(self.last_stamp);
        self.publish_stamped(stamp, payload)
    }

    /// Publishes with an explicit stamp, e.g. a sensor time.
    pub fn publish_stamped(&mut self, stamp_ns: u64, payload: Vec<f64>) -> Result<Message, BusError> {
        if self.seq > 0 && stamp_ns < self.last_stamp {
            return Err(BusError::StampRegression {
                topic: self.topic.clone(),
                got: stamp_ns,
                last: self.last_stamp,
            });
        }
        let msg = Message {
            topic: self.topic.clone(),
            stamp_ns,
            seq: self.seq,
            payload,
        };
        self.bus.publish(msg.clone())?;
        self.seq += 1;
        self.last_stamp = stamp_ns;
        Ok(msg)
    }
}

/// Receiving end of one subscription. Unsubscribes on drop.
#[derive(Debug)]
pub struct Subscription {
    topic: String,
    queue: Arc<SubQueue>,
    bus: Weak<Shared>,
}

impl Subscription {
    pub fn topic(&self) -> &str {
        &self.topic
    }

    /// Oldest queued message, if any.
    pub fn try_take(&self) -> Option<Envelope> {
        lock(&self.queue.state).items.pop_front()
    }

    /// Global order of the oldest queued message, if any.
    pub fn peek_order(&self) -> Option<u64> {
        lock(&self.queue.state).items.front().map(|e| e.order)
    }

    /// Waits up to `timeout` for a message. `Ok(None)` on timeout;
    /// `BusClosed` once the bus is closed and the queue is drained.
    pub fn take(&self, timeout: Duration) -> Result<Option<Envelope>, BusError> {
        let st = lock(&self.queue.state);
        let (mut st, _) = self
            .queue
            .cv
            .wait_timeout_while(st, timeout, |s| s.items.is_empty() && !s.closed)
            .unwrap_or_else(|e| e.into_inner());
        match st.items.pop_front() {
            Some(env) => Ok(Some(env)),
            None if st.closed => Err(BusError::BusClosed),
            None => Ok(None),
        }
    }

    pub fn len(&self) -> usize {
        lock(&self.queue.state).items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Messages delivered to this subscription, including dropped ones.
    pub fn received(&self) -> u64 {
        lock(&self.queue.state).received
    }

    /// Messages discarded because the queue was full.
    pub fn drops(&self) -> u64 {
        lock(&self.queue.state).drops
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        if let Some(shared) = self.bus.upgrade() {
            let mut reg = lock(&shared.registry);
            if let Some(subs) = reg.topics.get_mut(&self.topic) {
                subs.retain(|q| q.id != self.queue.id);
            }
        }
    }
}
