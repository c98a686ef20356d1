//! Wire format, pub/sub brokers and byte accounting for probability-sharing federations.

pub mod broker;
pub mod ledger;
pub mod tcp;
pub mod transport;
pub mod wire;

pub use broker::{topic_for, topics, Broker, BrokerError, InProcBroker, PublishAck, Subscription};
pub use ledger::{Accounting, ByteLedger, Direction, EndpointId, LedgerEntry, LedgerKey, Transfer};
pub use tcp::{HubBroker, TcpHub, TcpLink};
pub use transport::{open_transport, InProcTransport, TcpTransport, Transport, TransportMode};
pub use wire::{
    parameter_message_len, probability_message_len, ContributionMessage, EnsembleBroadcast, Message,
    MessageKind, ParameterMessage, ProbabilityEntry, WireError, HEADER_LEN, SERVER_ID,
};
