//! The unit of delivery: a topic-addressed payload with a per-(sender,
//! topic) sequence number assigned by the broker.

use serde::{Deserialize, Serialize};

use crate::topic::Topic;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageEnvelope {
    pub topic: Topic,
    pub sender_id: String,
    pub sequence_number: u64,
    pub payload: serde_json::Value,
}

/// Newline-delimited JSON rendering of a message log.
pub fn log_to_ndjson(log: &[MessageEnvelope]) -> String {
    let mut out = String::new();
    for env in log {
        out.push_str(&serde_json::to_string(env).expect("envelopes serialize"));
        out.push('\n');
    }
    out
}
