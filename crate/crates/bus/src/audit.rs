//! Append-only audit trail of every authorization decision and delivery.
//! Timestamps are a logical counter so identical runs produce identical
//! logs byte for byte.

use serde::{Deserialize, Serialize};

pub const VERDICT_GRANTED: &str = "granted";
pub const VERDICT_DENIED_ACL: &str = "denied-acl";
pub const VERDICT_DENIED_SCHEMA: &str = "denied-schema";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub ts: u64,
    pub agent: String,
    pub action: String,
    pub topic: String,
    pub verdict: String,
}

#[derive(Debug, Clone, Default)]
pub struct AuditLog {
    records: Vec<AuditRecord>,
    clock: u64,
}

impl AuditLog {
    pub fn record(&mut self, agent: &str, action: &str, topic: &str, verdict: &str) {
        self.records.push(AuditRecord {
            ts: self.clock,
            agent: agent.to_string(),
            action: action.to_string(),
            topic: topic.to_string(),
            verdict: verdict.to_string(),
        });
        self.clock += 1;
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("audit records serialize"));
            out.push('\n');
        }
        out
    }
}
