//! The agent-facing bus interface and the coordinator's stage barrier.
//!
//! `BusPort` is the only surface agents use; the deterministic handle and
//! the TCP client both implement it, which is what makes agent code
//! transport-independent.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::envelope::MessageEnvelope;
use crate::error::BusError;
use crate::topic::{Topic, TopicPattern, TOPIC_CONTROL_ACK, TOPIC_CONTROL_FAULT, TOPIC_CONTROL_STAGE};

pub trait BusPort {
    fn agent_id(&self) -> &str;
    fn publish(&mut self, topic: &Topic, payload: Value) -> Result<u64, BusError>;
    fn subscribe(&mut self, pattern: &TopicPattern) -> Result<u64, BusError>;
    /// Next pending envelope, waiting up to `timeout` in transports that
    /// have real latency. `None` means no message within the wait.
    fn poll(&mut self, timeout: Option<Duration>) -> Result<Option<MessageEnvelope>, BusError>;
}

/// Coordination payloads on the `market/control/*` topics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ControlMessage {
    StageBegin { stage: String, round: u64 },
    StageAck { agent_id: String, stage: String, round: u64 },
    Fault { agent_id: String, round: u64, detail: String },
    Shutdown,
}

impl ControlMessage {
    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("control messages serialize")
    }

    pub fn from_envelope(env: &MessageEnvelope) -> Option<ControlMessage> {
        if !env.topic.is_control() {
            return None;
        }
        serde_json::from_value(env.payload.clone()).ok()
    }
}

/// Proof that a stage barrier opened: who acknowledged the prior stage and
/// who was excused by a fault report.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierReceipt {
    pub stage: String,
    pub round: u64,
    pub acked: Vec<String>,
    pub faulted: Vec<String>,
}

/// Coordinator-owned synchronization between protocol stages. Agents
/// acknowledge stage completion on the control ack topic; faults excuse an
/// agent for the rest of the round.
pub struct StageBarrier {
    agents: BTreeSet<String>,
    faulted: BTreeSet<String>,
    round: u64,
}

impl StageBarrier {
    pub fn new(agents: impl IntoIterator<Item = String>, round: u64) -> Self {
        Self {
            agents: agents.into_iter().collect(),
            faulted: BTreeSet::new(),
            round,
        }
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn faulted(&self) -> impl Iterator<Item = &str> {
        self.faulted.iter().map(|s| s.as_str())
    }

    /// Wait until every registered, non-faulted agent has acknowledged
    /// `stage` for this barrier's round. In transports without latency the
    /// wait degenerates to draining the mailbox; an exhausted mailbox with
    /// missing acknowledgments is a timeout naming the laggards.
    pub fn collect_acks(
        &mut self,
        port: &mut dyn BusPort,
        stage: &str,
        timeout: Option<Duration>,
    ) -> Result<Vec<String>, BusError> {
        let mut acked: BTreeSet<String> = BTreeSet::new();
        let deadline = timeout.map(|t| Instant::now() + t);
        loop {
            let outstanding: Vec<String> = self
                .agents
                .iter()
                .filter(|a| !acked.contains(*a) && !self.faulted.contains(*a))
                .cloned()
                .collect();
            if outstanding.is_empty() {
                return Ok(acked.into_iter().collect());
            }
            let slice = match (timeout, deadline) {
                (None, _) => None,
                (Some(_), Some(d)) => {
                    let now = Instant::now();
                    if now >= d {
                        return Err(BusError::StageTimeout {
                            stage: stage.to_string(),
                            laggards: outstanding,
                        });
                    }
                    Some((d - now).min(Duration::from_millis(50)))
                }
                _ => unreachable!(),
            };
            let Some(env) = port.poll(slice)? else {
                if timeout.is_none() {
                    // Nothing pending and nothing can arrive later.
                    return Err(BusError::StageTimeout {
                        stage: stage.to_string(),
                        laggards: outstanding,
                    });
                }
                continue;
            };
            match ControlMessage::from_envelope(&env) {
                Some(ControlMessage::StageAck {
                    agent_id,
                    stage: acked_stage,
                    round,
                }) if acked_stage == stage && round == self.round => {
                    acked.insert(agent_id);
                }
                Some(ControlMessage::Fault { agent_id, round, detail }) => {
                    if round == self.round {
                        log::warn!("agent {agent_id} faulted in round {round}: {detail}");
                        self.faulted.insert(agent_id);
                    }
                }
                _ => {
                    log::debug!("barrier ignoring {}", env.topic);
                }
            }
        }
    }

    /// Broadcast the beginning of `stage` for this barrier's round.
    pub fn begin_stage(&self, port: &mut dyn BusPort, stage: &str) -> Result<(), BusError> {
        port.publish(
            &Topic::parse(TOPIC_CONTROL_STAGE).expect("static topic"),
            ControlMessage::StageBegin {
                stage: stage.to_string(),
                round: self.round,
            }
            .to_value(),
        )?;
        Ok(())
    }

    /// Collect acknowledgments for `prior` (when given), then unblock
    /// agents into `stage`. With `prior = None` the barrier opens
    /// immediately (the first stage of a run).
    pub fn advance_stage(
        &mut self,
        port: &mut dyn BusPort,
        prior: Option<&str>,
        stage: &str,
        timeout: Option<Duration>,
    ) -> Result<BarrierReceipt, BusError> {
        let acked = match prior {
            Some(prior_stage) => {
                // Timeouts are reported against the stage being opened.
                match self.collect_acks(port, prior_stage, timeout) {
                    Ok(acked) => acked,
                    Err(BusError::StageTimeout { laggards, .. }) => {
                        return Err(BusError::StageTimeout {
                            stage: stage.to_string(),
                            laggards,
                        })
                    }
                    Err(e) => return Err(e),
                }
            }
            None => Vec::new(),
        };
        self.begin_stage(port, stage)?;
        Ok(BarrierReceipt {
            stage: stage.to_string(),
            round: self.round,
            acked,
            faulted: self.faulted.iter().cloned().collect(),
        })
    }
}

/// Agent-side helper: acknowledge completion of `stage`.
pub fn send_stage_ack(port: &mut dyn BusPort, stage: &str, round: u64) -> Result<u64, BusError> {
    let agent = port.agent_id().to_string();
    port.publish(
        &Topic::parse(TOPIC_CONTROL_ACK).expect("static topic"),
        ControlMessage::StageAck {
            agent_id: agent,
            stage: stage.to_string(),
            round,
        }
        .to_value(),
    )
}

/// Agent-side helper: report a fault and bow out of the round.
pub fn send_fault(port: &mut dyn BusPort, round: u64, detail: &str) -> Result<u64, BusError> {
    let agent = port.agent_id().to_string();
    port.publish(
        &Topic::parse(TOPIC_CONTROL_FAULT).expect("static topic"),
        ControlMessage::Fault {
            agent_id: agent,
            round,
            detail: detail.to_string(),
        }
        .to_value(),
    )
}

/// Block until the coordinator opens `stage` for `round`, buffering nothing:
/// non-control messages seen while waiting are returned so the caller can
/// consume them.
pub fn wait_for_stage(
    port: &mut dyn BusPort,
    stage: &str,
    round: u64,
    timeout: Option<Duration>,
) -> Result<Vec<MessageEnvelope>, BusError> {
    let deadline = timeout.map(|t| Instant::now() + t);
    let mut seen = Vec::new();
    loop {
        let slice = match deadline {
            None => None,
            Some(d) => {
                let now = Instant::now();
                if now >= d {
                    return Err(BusError::StageTimeout {
                        stage: stage.to_string(),
                        laggards: vec![port.agent_id().to_string()],
                    });
                }
                Some((d - now).min(Duration::from_millis(50)))
            }
        };
        let Some(env) = port.poll(slice)? else {
            if deadline.is_none() {
                return Err(BusError::StageTimeout {
                    stage: stage.to_string(),
                    laggards: vec![port.agent_id().to_string()],
                });
            }
            continue;
        };
        match ControlMessage::from_envelope(&env) {
            Some(ControlMessage::StageBegin { stage: s, round: r }) if s == stage && r == round => {
                return Ok(seen);
            }
            Some(_) => {}
            None => seen.push(env),
        }
    }
}
