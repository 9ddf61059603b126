//! Transport-independent broker state: authorization, payload validation,
//! sequence numbering, subscription matching, the message log, and the audit
//! trail. The deterministic bus and the TCP broker both drive this core, so
//! ACL semantics cannot drift between modes.

use std::collections::BTreeMap;

use serde_json::Value;
use temarket_core::messages::validate_stage_payload;

use crate::acl::AuthPolicy;
use crate::audit::{AuditLog, VERDICT_DENIED_ACL, VERDICT_DENIED_SCHEMA, VERDICT_GRANTED};
use crate::envelope::MessageEnvelope;
use crate::error::BusError;
use crate::topic::{Topic, TopicPattern};

#[derive(Debug, Clone)]
struct Subscription {
    id: u64,
    agent: String,
    pattern: TopicPattern,
}

/// Outcome of a publish: the assigned sequence number and the recipients
/// (each authorized subscriber at most once).
#[derive(Debug)]
pub struct PublishOutcome {
    pub sequence_number: u64,
    pub envelope: MessageEnvelope,
    pub recipients: Vec<String>,
}

#[derive(Debug, Default)]
pub struct BrokerCore {
    policy: AuthPolicy,
    subscriptions: Vec<Subscription>,
    next_subscription: u64,
    sequences: BTreeMap<(String, String), u64>,
    message_log: Vec<MessageEnvelope>,
    audit: AuditLog,
}

impl BrokerCore {
    pub fn new(policy: AuthPolicy) -> Self {
        Self {
            policy,
            ..Default::default()
        }
    }

    pub fn policy(&self) -> &AuthPolicy {
        &self.policy
    }

    /// Register a subscription. No replay: only messages published after
    /// this call are delivered to it.
    pub fn subscribe(&mut self, agent: &str, pattern: &TopicPattern) -> Result<u64, BusError> {
        if !self.policy.may_subscribe(agent, pattern) {
            self.audit
                .record(agent, "subscribe", &pattern.to_string(), VERDICT_DENIED_ACL);
            return Err(BusError::Auth {
                agent: agent.to_string(),
                action: "subscribe to",
                topic: pattern.to_string(),
            });
        }
        self.audit
            .record(agent, "subscribe", &pattern.to_string(), VERDICT_GRANTED);
        let id = self.next_subscription;
        self.next_subscription += 1;
        self.subscriptions.push(Subscription {
            id,
            agent: agent.to_string(),
            pattern: pattern.clone(),
        });
        Ok(id)
    }

    /// Authorize, validate, sequence, log, and fan out one publication.
    /// Denied or malformed messages are dropped (audited, never delivered).
    pub fn publish(
        &mut self,
        agent: &str,
        topic: &Topic,
        payload: Value,
    ) -> Result<PublishOutcome, BusError> {
        let topic_str = topic.to_string();
        if !self.policy.may_publish(agent, topic) {
            self.audit.record(agent, "publish", &topic_str, VERDICT_DENIED_ACL);
            return Err(BusError::Auth {
                agent: agent.to_string(),
                action: "publish to",
                topic: topic_str,
            });
        }
        if let Some(stage) = topic.stage() {
            let sender_seg = topic.sender_segment().expect("stage topic");
            let receiver_seg = topic.receiver_segment().expect("stage topic");
            if sender_seg != agent {
                self.audit
                    .record(agent, "publish", &topic_str, VERDICT_DENIED_SCHEMA);
                return Err(BusError::Schema(format!(
                    "sender segment {sender_seg} does not match publishing agent {agent}"
                )));
            }
            if let Err(e) = validate_stage_payload(stage, sender_seg, receiver_seg, &payload) {
                self.audit
                    .record(agent, "publish", &topic_str, VERDICT_DENIED_SCHEMA);
                return Err(BusError::Schema(e.to_string()));
            }
        } else if !payload.is_object() {
            self.audit
                .record(agent, "publish", &topic_str, VERDICT_DENIED_SCHEMA);
            return Err(BusError::Schema(
                "control payloads must be JSON objects".into(),
            ));
        }

        let seq = self
            .sequences
            .entry((agent.to_string(), topic_str.clone()))
            .and_modify(|s| *s += 1)
            .or_insert(1);
        let envelope = MessageEnvelope {
            topic: topic.clone(),
            sender_id: agent.to_string(),
            sequence_number: *seq,
            payload,
        };
        self.audit.record(agent, "publish", &topic_str, VERDICT_GRANTED);

        // Fan out in subscription-registration order, once per agent.
        let mut recipients: Vec<String> = Vec::new();
        for sub in &self.subscriptions {
            if sub.pattern.matches(topic) && !recipients.iter().any(|r| r == &sub.agent) {
                recipients.push(sub.agent.clone());
            }
        }
        for r in &recipients {
            self.audit.record(r, "deliver", &topic_str, VERDICT_GRANTED);
        }
        self.message_log.push(envelope.clone());
        Ok(PublishOutcome {
            sequence_number: envelope.sequence_number,
            envelope,
            recipients,
        })
    }

    pub fn message_log(&self) -> &[MessageEnvelope] {
        &self.message_log
    }

    pub fn audit(&self) -> &AuditLog {
        &self.audit
    }

    /// Subscription count, used by tests.
    pub fn subscription_count(&self) -> usize {
        self.subscriptions.len()
    }

    /// The ids handed out so far; subscription ids are monotone.
    pub fn last_subscription_id(&self) -> Option<u64> {
        self.subscriptions.last().map(|s| s.id)
    }
}
