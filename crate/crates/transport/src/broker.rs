//! Topic-based publish/subscribe with at-most-once delivery.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::ledger::{Accounting, ByteLedger, Direction, EndpointId, Transfer};
use crate::wire::{Message, MessageKind, WireError};

/// Round-scoped topic names.
pub mod topics {
    pub fn contribution(round: u32) -> String {
        format!("contrib/{round}")
    }

    pub fn ensemble(round: u32) -> String {
        format!("ensemble/{round}")
    }

    pub fn params(round: u32) -> String {
        format!("params/{round}")
    }
}

/// The topic a message of this kind and round belongs on.
pub fn topic_for(kind: MessageKind, round: u32) -> String {
    match kind {
        MessageKind::Contribution => topics::contribution(round),
        MessageKind::Broadcast => topics::ensemble(round),
        MessageKind::Parameters => topics::params(round),
    }
}

#[derive(Debug, Error)]
pub enum BrokerError {
    #[error("broker unavailable")]
    BrokerUnavailable,
    #[error("poll timed out")]
    Timeout,
    #[error("topic must be non-empty")]
    EmptyTopic,
    #[error("topic {topic} does not carry {kind:?} messages")]
    TopicMismatch { topic: String, kind: MessageKind },
    #[error("unknown subscription {0}")]
    UnknownSubscription(u64),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PublishAck {
    pub deliveries: usize,
    pub bytes: u64,
}

/// Handle for one subscriber's queue on one topic. Not `Clone`: each
/// queue has exactly one consumer.
#[derive(Debug, PartialEq, Eq)]
pub struct Subscription {
    id: u64,
    subscriber: EndpointId,
    topic: String,
}

impl Subscription {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn subscriber(&self) -> EndpointId {
        self.subscriber
    }

    pub fn topic(&self) -> &str {
        &self.topic
    }
}

pub trait Broker: Send + Sync {
    fn publish(
        &self,
        publisher: EndpointId,
        topic: &str,
        msg: &Message,
    ) -> Result<PublishAck, BrokerError>;

    fn subscribe(&self, subscriber: EndpointId, topic: &str) -> Result<Subscription, BrokerError>;

    /// Next queued message in FIFO order, or `Timeout` once `timeout` has
    /// elapsed with the queue still empty.
    fn poll(&self, sub: &Subscription, timeout: Duration) -> Result<Message, BrokerError>;

    fn unsubscribe(&self, sub: Subscription) -> Result<(), BrokerError>;
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Frame {
    kind: MessageKind,
    round: u32,
    count: u32,
    n_classes: u16,
}

impl Frame {
    pub(crate) fn of(msg: &Message) -> Self {
        let (count, n_classes) = msg.dimensions();
        Frame {
            kind: msg.kind(),
            round: msg.round(),
            count: count as u32,
            n_classes: n_classes as u16,
        }
    }

    pub(crate) fn transfer(&self, endpoint: EndpointId, direction: Direction, bytes: u64) -> Transfer {
        Transfer {
            endpoint,
            direction,
            kind: self.kind,
            round: self.round,
            count: self.count,
            n_classes: self.n_classes,
            bytes,
        }
    }
}

type Payload = (Arc<[u8]>, Frame);

struct Queue {
    subscriber: EndpointId,
    items: VecDeque<Payload>,
}

#[derive(Default)]
struct State {
    shut_down: bool,
    next_id: u64,
    topics: HashMap<String, Vec<u64>>,
    queues: HashMap<u64, Queue>,
}

struct Inner {
    state: Mutex<State>,
    ready: Condvar,
    accounting: Accounting,
}

/// In-process fan-out broker. Cloning yields another handle to the same broker.
#[derive(Clone)]
pub struct InProcBroker {
    inner: Arc<Inner>,
}

impl Default for InProcBroker {
    fn default() -> Self {
        Self::new(Accounting::default())
    }
}

impl InProcBroker {
    pub fn new(accounting: Accounting) -> Self {
        Self {
            inner: Arc::new(Inner {
                state: Mutex::new(State::default()),
                ready: Condvar::new(),
                accounting,
            }),
        }
    }

    pub fn accounting(&self) -> &Accounting {
        &self.inner.accounting
    }

    pub fn ledger(&self) -> ByteLedger {
        self.inner.accounting.ledger()
    }

    pub fn shutdown(&self) {
        let mut s = self.lock();
        s.shut_down = true;
        s.queues.clear();
        s.topics.clear();
        drop(s);
        self.inner.ready.notify_all();
    }

    pub fn is_running(&self) -> bool {
        !self.lock().shut_down
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.inner.state.lock().expect("broker lock")
    }

    /// Enqueue already-encoded bytes. `credit` is the endpoint to charge an
    /// upload to, if any.
    pub(crate) fn publish_encoded(
        &self,
        credit: Option<EndpointId>,
        topic: &str,
        bytes: Arc<[u8]>,
        frame: Frame,
    ) -> Result<PublishAck, BrokerError> {
        if topic.is_empty() {
            return Err(BrokerError::EmptyTopic);
        }
        let mut s = self.lock();
        if s.shut_down {
            return Err(BrokerError::BrokerUnavailable);
        }
        let len = bytes.len() as u64;
        if let Some(endpoint) = credit {
            self.inner
                .accounting
                .record(frame.transfer(endpoint, Direction::Upload, len));
        }
        let subs = s.topics.get(topic).cloned().unwrap_or_default();
        for id in &subs {
            if let Some(q) = s.queues.get_mut(id) {
                q.items.push_back((bytes.clone(), frame));
            }
        }
        drop(s);
        if !subs.is_empty() {
            self.inner.ready.notify_all();
        }
        Ok(PublishAck {
            deliveries: subs.len(),
            bytes: len,
        })
    }
}

impl Broker for InProcBroker {
    fn publish(
        &self,
        publisher: EndpointId,
        topic: &str,
        msg: &Message,
    ) -> Result<PublishAck, BrokerError> {
        if !self.is_running() {
            return Err(BrokerError::BrokerUnavailable);
        }
        let bytes: Arc<[u8]> = msg.encode()?.into();
        self.publish_encoded(Some(publisher), topic, bytes, Frame::of(msg))
    }

    fn subscribe(&self, subscriber: EndpointId, topic: &str) -> Result<Subscription, BrokerError> {
        if topic.is_empty() {
            return Err(BrokerError::EmptyTopic);
        }
        let mut s = self.lock();
        if s.shut_down {
            return Err(BrokerError::BrokerUnavailable);
        }
        let id = s.next_id;
        s.next_id += 1;
        s.topics.entry(topic.to_string()).or_default().push(id);
        s.queues.insert(
            id,
            Queue {
                subscriber,
                items: VecDeque::new(),
            },
        );
        Ok(Subscription {
            id,
            subscriber,
            topic: topic.to_string(),
        })
    }

    fn poll(&self, sub: &Subscription, timeout: Duration) -> Result<Message, BrokerError> {
        let deadline = Instant::now() + timeout;
        let mut s = self.lock();
        loop {
            if s.shut_down {
                return Err(BrokerError::BrokerUnavailable);
            }
            let q = s
                .queues
                .get_mut(&sub.id)
                .ok_or(BrokerError::UnknownSubscription(sub.id))?;
            if let Some((bytes, frame)) = q.items.pop_front() {
                let subscriber = q.subscriber;
                drop(s);
                self.inner.accounting.record(frame.transfer(
                    subscriber,
                    Direction::Download,
                    bytes.len() as u64,
                ));
                return Ok(Message::decode(&bytes)?);
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(BrokerError::Timeout);
            }
            s = self
                .inner
                .ready
                .wait_timeout(s, deadline - now)
                .expect("broker lock")
                .0;
        }
    }

    fn unsubscribe(&self, sub: Subscription) -> Result<(), BrokerError> {
        let mut s = self.lock();
        if s.queues.remove(&sub.id).is_none() {
            return Err(BrokerError::UnknownSubscription(sub.id));
        }
        if let Some(ids) = s.topics.get_mut(&sub.topic) {
            ids.retain(|&i| i != sub.id);
        }
        Ok(())
    }
}
