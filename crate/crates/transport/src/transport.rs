//! Runtime-selectable transport modes.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::broker::{Broker, BrokerError, InProcBroker};
use crate::ledger::{Accounting, ByteLedger, EndpointId, Transfer};
use crate::tcp::{TcpHub, TcpLink};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportMode {
    InProc,
    Tcp,
}

impl TransportMode {
    pub const NAMES: [&'static str; 2] = ["inproc", "tcp"];

    pub fn as_str(self) -> &'static str {
        match self {
            TransportMode::InProc => "inproc",
            TransportMode::Tcp => "tcp",
        }
    }
}

impl fmt::Display for TransportMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TransportMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inproc" => Ok(TransportMode::InProc),
            "tcp" => Ok(TransportMode::Tcp),
            other => Err(format!(
                "unknown transport mode `{other}` (expected one of: {})",
                Self::NAMES.join(", ")
            )),
        }
    }
}

/// A set of endpoints sharing one byte ledger.
pub trait Transport: Send + Sync {
    fn mode(&self) -> TransportMode;

    /// Broker handle used by the coordinator.
    fn server(&self) -> Arc<dyn Broker>;

    /// Broker handle for one client. Dropping it disconnects the client.
    fn connect(&self, client: EndpointId) -> Result<Arc<dyn Broker>, BrokerError>;

    fn accounting(&self) -> &Accounting;

    fn ledger(&self) -> ByteLedger {
        self.accounting().ledger()
    }

    fn drain_transfers(&self) -> Vec<Transfer> {
        self.accounting().drain_transfers()
    }

    fn shutdown(&self);
}

pub struct InProcTransport {
    broker: InProcBroker,
}

impl InProcTransport {
    pub fn new() -> Self {
        Self {
            broker: InProcBroker::default(),
        }
    }
}

impl Default for InProcTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl Transport for InProcTransport {
    fn mode(&self) -> TransportMode {
        TransportMode::InProc
    }

    fn server(&self) -> Arc<dyn Broker> {
        Arc::new(self.broker.clone())
    }

    fn connect(&self, _client: EndpointId) -> Result<Arc<dyn Broker>, BrokerError> {
        if !self.broker.is_running() {
            return Err(BrokerError::BrokerUnavailable);
        }
        Ok(Arc::new(self.broker.clone()))
    }

    fn accounting(&self) -> &Accounting {
        self.broker.accounting()
    }

    fn shutdown(&self) {
        self.broker.shutdown();
    }
}

/// Loopback TCP: a hub on `127.0.0.1` and one socket per client.
pub struct TcpTransport {
    hub: TcpHub,
    accounting: Accounting,
}

impl TcpTransport {
    pub fn bind(port: u16) -> Result<Self, BrokerError> {
        let accounting = Accounting::default();
        let hub = TcpHub::bind(port, accounting.clone())?;
        Ok(Self { hub, accounting })
    }

    pub fn hub(&self) -> &TcpHub {
        &self.hub
    }
}

impl Transport for TcpTransport {
    fn mode(&self) -> TransportMode {
        TransportMode::Tcp
    }

    fn server(&self) -> Arc<dyn Broker> {
        Arc::new(self.hub.broker())
    }

    fn connect(&self, client: EndpointId) -> Result<Arc<dyn Broker>, BrokerError> {
        let link = TcpLink::connect(self.hub.local_addr(), client, self.accounting.clone())?;
        Ok(Arc::new(link))
    }

    fn accounting(&self) -> &Accounting {
        &self.accounting
    }

    fn shutdown(&self) {
        self.hub.shutdown();
    }
}

/// Opens a transport of the given mode. `port` is only used by TCP; 0 picks a free port.
pub fn open_transport(mode: TransportMode, port: u16) -> Result<Box<dyn Transport>, BrokerError> {
    Ok(match mode {
        TransportMode::InProc => Box::new(InProcTransport::new()),
        TransportMode::Tcp => Box::new(TcpTransport::bind(port)?),
    })
}
