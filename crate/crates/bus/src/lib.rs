//! Topic-based publish/subscribe bus with per-agent authorization for the
//! transactive market agents.
//!
//! Two modes share one broker core and one ACL semantics:
//! a deterministic in-process mode (synchronous fan-out, bit-reproducible
//! logs) for tests and reproduction, and a networked mode over a
//! length-prefixed JSON-frame TCP protocol. Coordination between the three
//! protocol stages is an explicit barrier owned by a non-trading
//! coordinator, built from control topics.

pub mod acl;
pub mod audit;
pub mod broker;
pub mod deterministic;
pub mod envelope;
pub mod error;
pub mod framing;
pub mod port;
pub mod tcp;
pub mod topic;

pub use acl::AuthPolicy;
pub use audit::{AuditLog, AuditRecord};
pub use deterministic::{DetPort, DeterministicBus};
pub use envelope::{log_to_ndjson, MessageEnvelope};
pub use error::BusError;
pub use port::{
    send_fault, send_stage_ack, wait_for_stage, BarrierReceipt, BusPort, ControlMessage,
    StageBarrier,
};
pub use tcp::{BrokerLogs, TcpBroker, TcpBusClient};
pub use topic::{
    Topic, TopicPattern, TOPIC_CONTROL_ACK, TOPIC_CONTROL_FAULT, TOPIC_CONTROL_STAGE,
};
