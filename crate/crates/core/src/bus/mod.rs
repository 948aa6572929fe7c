//! Topic-addressed publish/subscribe.
//!
//! Delivery is pull-based: every subscription owns a bounded queue that drops
//! its oldest entry when full, so a publisher never waits on a slow consumer.
//! [`tcp`] bridges two buses over one multiplexed TCP connection.

pub mod codec;
pub mod capture;
pub mod message;
pub mod tcp;

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::{Duration, Instant};

pub use message::{topics, ArmState, BusMessage, CameraFrame, Payload, Topic, TopicError};

use crate::clock::Clock;

/// Identifies where a message entered the bus. Taps skip their own origin.
pub type Origin = u64;
pub const LOCAL_ORIGIN: Origin = 0;

#[derive(Debug, Default)]
pub struct BusMetrics {
    published: AtomicU64,
    delivered: AtomicU64,
    overflow_drops: AtomicU64,
}

impl BusMetrics {
    pub fn published(&self) -> u64 {
        self.published.load(Ordering::Relaxed)
    }
    pub fn delivered(&self) -> u64 {
        self.delivered.load(Ordering::Relaxed)
    }
    /// Messages discarded by drop-oldest queues across all subscriptions.
    pub fn overflow_drops(&self) -> u64 {
        self.overflow_drops.load(Ordering::Relaxed)
    }
}

struct Queue {
    items: Mutex<VecDeque<BusMessage>>,
    ready: Condvar,
    capacity: usize,
    dropped: AtomicU64,
    closed: AtomicBool,
}

impl Queue {
    fn new(capacity: usize) -> Arc<Self> {
        Arc::new(Self {
            items: Mutex::new(VecDeque::with_capacity(capacity.min(1024))),
            ready: Condvar::new(),
            capacity,
            dropped: AtomicU64::new(0),
            closed: AtomicBool::new(false),
        })
    }

    /// Returns true if an older message was evicted.
    fn push(&self, msg: BusMessage) -> bool {
        let mut items = self.items.lock().unwrap();
        let evicted = if items.len() == self.capacity {
            items.pop_front();
            self.dropped.fetch_add(1, Ordering::Relaxed);
            true
        } else {
            false
        };
        items.push_back(msg);
        drop(items);
        self.ready.notify_one();
        evicted
    }
}

struct Tap {
    queue: Arc<Queue>,
    skip_origin: Option<Origin>,
}

#[derive(Default)]
struct Inner {
    topics: RwLock<HashMap<String, Vec<Arc<Queue>>>>,
    taps: RwLock<Vec<Tap>>,
    metrics: BusMetrics,
    next_origin: AtomicU64,
}

/// In-process bus handle; clones share the same topics.
#[derive(Clone, Default)]
pub struct Bus {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for Bus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Bus")
            .field("published", &self.inner.metrics.published())
            .finish()
    }
}

impl Bus {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn metrics(&self) -> &BusMetrics {
        &self.inner.metrics
    }

    /// Allocate a fresh origin id for a bridge.
    pub fn new_origin(&self) -> Origin {
        self.inner.next_origin.fetch_add(1, Ordering::Relaxed) + 1
    }

    pub fn publish(&self, msg: BusMessage) {
        self.publish_from(LOCAL_ORIGIN, msg)
    }

    /// Deliver to every live subscription of the topic and to every tap that
    /// does not skip `origin`.
    pub fn publish_from(&self, origin: Origin, msg: BusMessage) {
        let m = &self.inner.metrics;
        m.published.fetch_add(1, Ordering::Relaxed);
        let mut prune = false;
        {
            let topics = self.inner.topics.read().unwrap();
            if let Some(queues) = topics.get(msg.topic.as_str()) {
                for q in queues {
                    if q.closed.load(Ordering::Acquire) {
                        prune = true;
                        continue;
                    }
                    self.deliver(q, msg.clone());
                }
            }
        }
        {
            let taps = self.inner.taps.read().unwrap();
            for tap in taps.iter() {
                if tap.queue.closed.load(Ordering::Acquire) {
                    prune = true;
                    continue;
                }
                if tap.skip_origin == Some(origin) {
                    continue;
                }
                self.deliver(&tap.queue, msg.clone());
            }
        }
        if prune {
            self.prune();
        }
    }

    fn deliver(&self, q: &Queue, msg: BusMessage) {
        let m = &self.inner.metrics;
        if q.push(msg) {
            m.overflow_drops.fetch_add(1, Ordering::Relaxed);
        }
        m.delivered.fetch_add(1, Ordering::Relaxed);
    }

    fn prune(&self) {
        let mut topics = self.inner.topics.write().unwrap();
        for queues in topics.values_mut() {
            queues.retain(|q| !q.closed.load(Ordering::Acquire));
        }
        topics.retain(|_, v| !v.is_empty());
        drop(topics);
        self.inner
            .taps
            .write()
            .unwrap()
            .retain(|t| !t.queue.closed.load(Ordering::Acquire));
    }

    /// Receive messages published on `topic` from now on.
    ///
    /// # Panics
    /// If `capacity` is zero.
    pub fn subscribe(&self, topic: &Topic, capacity: usize) -> Subscription {
        assert!(capacity >= 1, "subscription capacity must be at least 1");
        let q = Queue::new(capacity);
        self.inner
            .topics
            .write()
            .unwrap()
            .entry(topic.as_str().to_owned())
            .or_default()
            .push(q.clone());
        Subscription { queue: q }
    }

    /// Receive every message on every topic, except those published with `skip_origin`.
    pub fn tap(&self, capacity: usize, skip_origin: Option<Origin>) -> Subscription {
        assert!(capacity >= 1, "subscription capacity must be at least 1");
        let q = Queue::new(capacity);
        self.inner.taps.write().unwrap().push(Tap {
            queue: q.clone(),
            skip_origin,
        });
        Subscription { queue: q }
    }

    pub fn subscriber_count(&self, topic: &Topic) -> usize {
        self.inner
            .topics
            .read()
            .unwrap()
            .get(topic.as_str())
            .map(|v| v.iter().filter(|q| !q.closed.load(Ordering::Acquire)).count())
            .unwrap_or(0)
    }
}

/// Single-consumer handle on a bounded drop-oldest queue.
pub struct Subscription {
    queue: Arc<Queue>,
}

impl Subscription {
    pub fn try_recv(&self) -> Option<BusMessage> {
        self.queue.items.lock().unwrap().pop_front()
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<BusMessage> {
        let deadline = Instant::now() + timeout;
        let mut items = self.queue.items.lock().unwrap();
        loop {
            if let Some(m) = items.pop_front() {
                return Some(m);
            }
            let now = Instant::now();
            if now >= deadline {
                return None;
            }
            items = self.queue.ready.wait_timeout(items, deadline - now).unwrap().0;
        }
    }

    pub fn drain(&self) -> Vec<BusMessage> {
        self.queue.items.lock().unwrap().drain(..).collect()
    }

    pub fn len(&self) -> usize {
        self.queue.items.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Messages this subscription lost to drop-oldest eviction.
    pub fn dropped(&self) -> u64 {
        self.queue.dropped.load(Ordering::Relaxed)
    }
}

impl Drop for Subscription {
    fn drop(&mut self) {
        self.queue.closed.store(true, Ordering::Release);
    }
}

/// Stamps and sequences messages for one publishing node.
pub struct Publisher {
    bus: Bus,
    clock: Clock,
    origin: Origin,
    seqs: HashMap<Topic, u64>,
    last_stamp: u64,
}

impl Publisher {
    pub fn new(bus: Bus, clock: Clock) -> Self {
        Self {
            bus,
            clock,
            origin: LOCAL_ORIGIN,
            seqs: HashMap::new(),
            last_stamp: 0,
        }
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    pub fn clock(&self) -> &Clock {
        &self.clock
    }

    /// Publish stamped with the current clock reading.
    pub fn publish(&mut self, topic: &Topic, payload: Payload) -> BusMessage {
        let now = self.clock.now_ns();
        self.publish_at(topic, now, payload)
    }

    /// Publish with an explicit stamp. Stamps are kept non-decreasing.
    pub fn publish_at(&mut self, topic: &Topic, stamp: u64, payload: Payload) -> BusMessage {
        let stamp = stamp.max(self.last_stamp);
        self.last_stamp = stamp;
        let seq = self.seqs.entry(topic.clone()).or_insert(0);
        let msg = BusMessage {
            topic: topic.clone(),
            stamp,
            seq: *seq,
            payload,
        };
        *seq += 1;
        self.bus.publish_from(self.origin, msg.clone());
        msg
    }
}
