//! In-process deterministic bus: one logical delivery loop, synchronous
//! fan-out into per-agent mailboxes, exactly-once delivery, and
//! bit-reproducible logs.

use std::cell::RefCell;
use std::collections::{BTreeMap, VecDeque};
use std::rc::Rc;
use std::time::Duration;

use serde_json::Value;

use crate::broker::BrokerCore;
use crate::acl::AuthPolicy;
use crate::audit::AuditLog;
use crate::envelope::MessageEnvelope;
use crate::error::BusError;
use crate::port::BusPort;
use crate::topic::{Topic, TopicPattern};

#[derive(Debug)]
pub struct DeterministicBus {
    core: BrokerCore,
    mailboxes: BTreeMap<String, VecDeque<MessageEnvelope>>,
}

impl DeterministicBus {
    pub fn new(policy: AuthPolicy) -> Self {
        Self {
            core: BrokerCore::new(policy),
            mailboxes: BTreeMap::new(),
        }
    }

    pub fn register_agent(&mut self, agent: &str) {
        self.mailboxes.entry(agent.to_string()).or_default();
    }

    pub fn subscribe(&mut self, agent: &str, pattern: &TopicPattern) -> Result<u64, BusError> {
        if !self.mailboxes.contains_key(agent) {
            return Err(BusError::UnknownAgent(agent.to_string()));
        }
        self.core.subscribe(agent, pattern)
    }

    /// Publish and deliver synchronously: by the time this returns every
    /// authorized matching subscriber has the message in its mailbox.
    pub fn publish(&mut self, agent: &str, topic: &Topic, payload: Value) -> Result<u64, BusError> {
        if !self.mailboxes.contains_key(agent) {
            return Err(BusError::UnknownAgent(agent.to_string()));
        }
        let outcome = self.core.publish(agent, topic, payload)?;
        for recipient in &outcome.recipients {
            self.mailboxes
                .get_mut(recipient)
                .expect("subscribers are registered")
                .push_back(outcome.envelope.clone());
        }
        Ok(outcome.sequence_number)
    }

    pub fn pop(&mut self, agent: &str) -> Result<Option<MessageEnvelope>, BusError> {
        self.mailboxes
            .get_mut(agent)
            .map(|q| q.pop_front())
            .ok_or_else(|| BusError::UnknownAgent(agent.to_string()))
    }

    pub fn pending(&self, agent: &str) -> usize {
        self.mailboxes.get(agent).map(|q| q.len()).unwrap_or(0)
    }

    pub fn message_log(&self) -> &[MessageEnvelope] {
        self.core.message_log()
    }

    pub fn audit(&self) -> &AuditLog {
        self.core.audit()
    }

    pub fn core(&self) -> &BrokerCore {
        &self.core
    }
}

/// A per-agent handle onto a shared deterministic bus. The deterministic
/// runtime is single-threaded by design, so shared ownership is an `Rc`.
#[derive(Clone)]
pub struct DetPort {
    bus: Rc<RefCell<DeterministicBus>>,
    agent: String,
}

impl DetPort {
    pub fn new(bus: Rc<RefCell<DeterministicBus>>, agent: impl Into<String>) -> Self {
        let agent = agent.into();
        bus.borrow_mut().register_agent(&agent);
        Self { bus, agent }
    }
}

impl BusPort for DetPort {
    fn agent_id(&self) -> &str {
        &self.agent
    }

    fn publish(&mut self, topic: &Topic, payload: Value) -> Result<u64, BusError> {
        self.bus.borrow_mut().publish(&self.agent, topic, payload)
    }

    fn subscribe(&mut self, pattern: &TopicPattern) -> Result<u64, BusError> {
        self.bus.borrow_mut().subscribe(&self.agent, pattern)
    }

    fn poll(&mut self, _timeout: Option<Duration>) -> Result<Option<MessageEnvelope>, BusError> {
        self.bus.borrow_mut().pop(&self.agent)
    }
}
