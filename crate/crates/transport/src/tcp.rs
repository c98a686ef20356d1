//! Length-prefixed TCP carriage of the wire format.
//!
//! Each frame is a `u32` little-endian length followed by one encoded
//! message. Topics are not sent: the hub files every uplink frame under
//! the round-scoped topic implied by its kind and round, and relays every
//! server publication to all connected clients. A connection is bound to
//! the `client_id` of the first frame it sends.

use std::collections::HashMap;
use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crate::broker::{topic_for, Broker, BrokerError, Frame, InProcBroker, PublishAck, Subscription};
use crate::ledger::{Accounting, Direction, EndpointId};
use crate::wire::{Message, MessageKind, MAX_MESSAGE_LEN};

pub fn write_frame<W: Write>(w: &mut W, payload: &[u8]) -> io::Result<()> {
    let len = u32::try_from(payload.len())
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

/// Reads one frame; `Ok(None)` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_le_bytes(len) as u64;
    if len > MAX_MESSAGE_LEN {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "frame exceeds size limit"));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)?;
    Ok(Some(buf))
}

/// Bound connections, each tagged with a serial so a closing connection
/// never unbinds a newer one for the same client.
type Connections = Arc<Mutex<HashMap<EndpointId, (u64, TcpStream)>>>;

static NEXT_CONN: AtomicU64 = AtomicU64::new(0);

/// Server side: accepts client streams and exposes a [`Broker`] to the coordinator.
pub struct TcpHub {
    broker: InProcBroker,
    addr: SocketAddr,
    conns: Connections,
    stopping: Arc<AtomicBool>,
    acceptor: Mutex<Option<JoinHandle<()>>>,
}

impl TcpHub {
    /// Listens on `127.0.0.1:port`; port 0 picks a free port.
    pub fn bind(port: u16, accounting: Accounting) -> io::Result<Self> {
        let listener = TcpListener::bind(("127.0.0.1", port))?;
        let addr = listener.local_addr()?;
        let broker = InProcBroker::new(accounting);
        let conns: Connections = Arc::default();
        let stopping = Arc::new(AtomicBool::new(false));
        let acceptor = {
            let (broker, conns, stopping) = (broker.clone(), conns.clone(), stopping.clone());
            thread::spawn(move || accept_loop(listener, broker, conns, stopping))
        };
        Ok(Self {
            broker,
            addr,
            conns,
            stopping,
            acceptor: Mutex::new(Some(acceptor)),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn connected_clients(&self) -> Vec<EndpointId> {
        let mut ids: Vec<_> = self.conns.lock().expect("conns").keys().copied().collect();
        ids.sort_unstable();
        ids
    }

    pub fn shutdown(&self) {
        if self.stopping.swap(true, Ordering::SeqCst) {
            return;
        }
        // Unblock accept().
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.acceptor.lock().expect("acceptor").take() {
            let _ = h.join();
        }
        for (_, (_, s)) in self.conns.lock().expect("conns").drain() {
            let _ = s.shutdown(Shutdown::Both);
        }
        self.broker.shutdown();
    }
}

impl Drop for TcpHub {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn accept_loop(listener: TcpListener, broker: InProcBroker, conns: Connections, stopping: Arc<AtomicBool>) {
    for stream in listener.incoming() {
        if stopping.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = stream else { continue };
        let _ = stream.set_nodelay(true);
        let (broker, conns) = (broker.clone(), conns.clone());
        thread::spawn(move || serve_connection(stream, broker, conns));
    }
}

fn serve_connection(mut stream: TcpStream, broker: InProcBroker, conns: Connections) {
    let serial = NEXT_CONN.fetch_add(1, Ordering::Relaxed);
    let mut bound: Option<EndpointId> = None;
    while let Ok(Some(bytes)) = read_frame(&mut stream) {
        // At-most-once: malformed frames are dropped.
        let Ok(msg) = Message::decode(&bytes) else { continue };
        if msg.kind() == MessageKind::Broadcast {
            continue;
        }
        if bound.is_none() {
            if let Ok(writer) = stream.try_clone() {
                conns.lock().expect("conns").insert(msg.sender(), (serial, writer));
                bound = Some(msg.sender());
            }
        }
        let topic = topic_for(msg.kind(), msg.round());
        if broker
            .publish_encoded(None, &topic, bytes.into(), Frame::of(&msg))
            .is_err()
        {
            break;
        }
    }
    if let Some(id) = bound {
        let mut conns = conns.lock().expect("conns");
        if conns.get(&id).is_some_and(|(s, _)| *s == serial) {
            conns.remove(&id);
        }
    }
}

/// [`Broker`] view of a [`TcpHub`] for the coordinator.
#[derive(Clone)]
pub struct HubBroker {
    broker: InProcBroker,
    conns: Connections,
}

impl TcpHub {
    pub fn broker(&self) -> HubBroker {
        HubBroker {
            broker: self.broker.clone(),
            conns: self.conns.clone(),
        }
    }
}

impl Broker for HubBroker {
    fn publish(&self, publisher: EndpointId, topic: &str, msg: &Message) -> Result<PublishAck, BrokerError> {
        let bytes: Arc<[u8]> = msg.encode()?.into();
        let mut ack = self
            .broker
            .publish_encoded(Some(publisher), topic, bytes.clone(), Frame::of(msg))?;
        let mut conns = self.conns.lock().expect("conns");
        let mut dead = Vec::new();
        let mut ids: Vec<_> = conns.keys().copied().collect();
        ids.sort_unstable();
        for id in ids {
            let (_, stream) = conns.get_mut(&id).expect("listed");
            if write_frame(stream, &bytes).is_ok() {
                ack.deliveries += 1;
            } else {
                dead.push(id);
            }
        }
        for id in dead {
            conns.remove(&id);
        }
        Ok(ack)
    }

    fn subscribe(&self, subscriber: EndpointId, topic: &str) -> Result<Subscription, BrokerError> {
        self.broker.subscribe(subscriber, topic)
    }

    fn poll(&self, sub: &Subscription, timeout: Duration) -> Result<Message, BrokerError> {
        self.broker.poll(sub, timeout)
    }

    fn unsubscribe(&self, sub: Subscription) -> Result<(), BrokerError> {
        self.broker.unsubscribe(sub)
    }
}

/// Client side of a TCP connection to a [`TcpHub`].
///
/// Publishing writes a frame; frames relayed by the hub land in a local
/// queue set that `subscribe`/`poll` read from. Dropping the link closes
/// the connection.
pub struct TcpLink {
    endpoint: EndpointId,
    writer: Mutex<TcpStream>,
    local: InProcBroker,
    accounting: Accounting,
    reader: Option<JoinHandle<()>>,
}

impl TcpLink {
    pub fn connect(addr: SocketAddr, endpoint: EndpointId, accounting: Accounting) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let mut reader_stream = stream.try_clone()?;
        // Relayed frames are charged when polled, not on arrival.
        let local = InProcBroker::new(accounting.clone());
        let sink = local.clone();
        let reader = thread::spawn(move || {
            while let Ok(Some(bytes)) = read_frame(&mut reader_stream) {
                let Ok(msg) = Message::decode(&bytes) else { continue };
                let topic = topic_for(msg.kind(), msg.round());
                if sink.publish_encoded(None, &topic, bytes.into(), Frame::of(&msg)).is_err() {
                    break;
                }
            }
        });
        Ok(Self {
            endpoint,
            writer: Mutex::new(stream),
            local,
            accounting,
            reader: Some(reader),
        })
    }

    pub fn endpoint(&self) -> EndpointId {
        self.endpoint
    }
}

impl Drop for TcpLink {
    fn drop(&mut self) {
        if let Ok(s) = self.writer.lock() {
            let _ = s.shutdown(Shutdown::Both);
        }
        if let Some(h) = self.reader.take() {
            let _ = h.join();
        }
        self.local.shutdown();
    }
}

impl Broker for TcpLink {
    fn publish(&self, publisher: EndpointId, topic: &str, msg: &Message) -> Result<PublishAck, BrokerError> {
        if topic.is_empty() {
            return Err(BrokerError::EmptyTopic);
        }
        if topic != topic_for(msg.kind(), msg.round()) {
            return Err(BrokerError::TopicMismatch {
                topic: topic.to_string(),
                kind: msg.kind(),
            });
        }
        let bytes = msg.encode()?;
        {
            let mut w = self.writer.lock().expect("writer");
            write_frame(&mut *w, &bytes).map_err(|_| BrokerError::BrokerUnavailable)?;
        }
        let len = bytes.len() as u64;
        self.accounting
            .record(Frame::of(msg).transfer(publisher, Direction::Upload, len));
        Ok(PublishAck {
            deliveries: 1,
            bytes: len,
        })
    }

    fn subscribe(&self, subscriber: EndpointId, topic: &str) -> Result<Subscription, BrokerError> {
        self.local.subscribe(subscriber, topic)
    }

    fn poll(&self, sub: &Subscription, timeout: Duration) -> Result<Message, BrokerError> {
        self.local.poll(sub, timeout)
    }

    fn unsubscribe(&self, sub: Subscription) -> Result<(), BrokerError> {
        self.local.unsubscribe(sub)
    }
}
