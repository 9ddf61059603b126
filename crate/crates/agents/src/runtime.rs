//! Scenario execution: the three-stage protocol over the bus, in a
//! single-threaded deterministic mode (seeded round-robin agent order,
//! bit-reproducible logs) or a threaded TCP mode with real barrier
//! timeouts. Both drive the same agent state machines.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::rc::Rc;
use std::sync::mpsc::{channel, Sender};
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use temarket_bus::{
    send_fault, send_stage_ack, wait_for_stage, AuditRecord, AuthPolicy, BusError, BusPort,
    DetPort, DeterministicBus, MessageEnvelope, StageBarrier, TcpBroker, TcpBusClient,
    TopicPattern, TOPIC_CONTROL_ACK, TOPIC_CONTROL_FAULT, TOPIC_CONTROL_STAGE,
};
use temarket_core::auction::ClearingResult;
use temarket_core::curve::PriceDemandCurve;
use temarket_core::portfolio::BidOffer;

use crate::agents::{curves_from_envelopes, offers_from_envelopes, AskerAgent, BidderAgent};
use crate::config::{BusMode, ConfigError, ScenarioConfig, COORDINATOR_ID};

pub const STAGE_SETUP: &str = "setup";
pub const STAGE_DEMAND_BID: &str = "demand-bid";
pub const STAGE_BID_OFFER: &str = "bid-offer";
pub const STAGE_MARKET_CLEARING: &str = "market-clearing";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("run failed: {0}")]
    Internal(String),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub mode: Option<BusMode>,
    pub seed: u64,
}

/// Everything observed in one market round.
#[derive(Debug, Clone, Default)]
pub struct RoundReport {
    pub round: u64,
    pub curves: Vec<PriceDemandCurve>,
    pub offers: Vec<BidOffer>,
    pub results: Vec<ClearingResult>,
    /// Askers whose auction cleared nothing.
    pub unserved: Vec<String>,
    pub faults: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct MarketReport {
    pub scenario: String,
    pub mode: String,
    pub seed: u64,
    pub rounds: Vec<RoundReport>,
    /// Abnormal-completion markers (for example a stage timeout).
    pub flags: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub report: MarketReport,
    pub messages: Vec<MessageEnvelope>,
    pub audit: Vec<AuditRecord>,
}

pub fn run_scenario(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<RunArtifacts, RunError> {
    cfg.validate()?;
    let mode = opts.mode.unwrap_or(cfg.bus.mode);
    match mode {
        BusMode::Deterministic => run_deterministic(cfg, opts.seed),
        BusMode::Tcp => run_tcp(cfg, opts.seed),
    }
}

fn asker_subscriptions(id: &str) -> Vec<TopicPattern> {
    vec![
        TopicPattern::parse(&format!("market/bid-offer/*/{id}")).expect("valid"),
        TopicPattern::parse(TOPIC_CONTROL_STAGE).expect("valid"),
    ]
}

fn bidder_subscriptions(id: &str) -> Vec<TopicPattern> {
    vec![
        TopicPattern::parse("market/demand-bid/*/*").expect("valid"),
        TopicPattern::parse(&format!("market/market-clearing/*/{id}")).expect("valid"),
        TopicPattern::parse(TOPIC_CONTROL_STAGE).expect("valid"),
    ]
}

fn finish_round(mut round: RoundReport) -> RoundReport {
    round
        .curves
        .sort_by(|a, b| a.asker_id.cmp(&b.asker_id));
    round.offers.sort_by(|a, b| {
        a.bidder_id
            .cmp(&b.bidder_id)
            .then_with(|| a.asker_id.cmp(&b.asker_id))
            .then_with(|| a.price_cents.partial_cmp(&b.price_cents).expect("finite"))
    });
    round.results.sort_by(|a, b| a.asker_id.cmp(&b.asker_id));
    round.unserved = round
        .results
        .iter()
        .filter(|r| r.transactions.is_empty())
        .map(|r| r.asker_id.clone())
        .collect();
    round.unserved.sort();
    round.faults.sort();
    round
}

fn run_deterministic(cfg: &ScenarioConfig, seed: u64) -> Result<RunArtifacts, RunError> {
    let policy: AuthPolicy = cfg.auth_policy()?;
    let bus = Rc::new(RefCell::new(DeterministicBus::new(policy)));

    let mut coordinator = DetPort::new(Rc::clone(&bus), COORDINATOR_ID);
    coordinator.subscribe(&TopicPattern::parse(TOPIC_CONTROL_ACK).expect("valid"))?;
    coordinator.subscribe(&TopicPattern::parse(TOPIC_CONTROL_FAULT).expect("valid"))?;

    let mut askers: Vec<(AskerAgent, DetPort)> = Vec::new();
    for section in &cfg.askers {
        let agent = AskerAgent::from_config(section)
            .map_err(|e| ConfigError::new(format!("askers.{}", section.id), e))?;
        let mut port = DetPort::new(Rc::clone(&bus), section.id.clone());
        for pattern in asker_subscriptions(&section.id) {
            port.subscribe(&pattern)?;
        }
        askers.push((agent, port));
    }
    let mut bidders: Vec<(BidderAgent, DetPort)> = Vec::new();
    for section in &cfg.bidders {
        let agent = BidderAgent::from_config(section)
            .map_err(|e| ConfigError::new(format!("bidders.{}", section.id), e))?;
        let mut port = DetPort::new(Rc::clone(&bus), section.id.clone());
        for pattern in bidder_subscriptions(&section.id) {
            port.subscribe(&pattern)?;
        }
        bidders.push((agent, port));
    }

    let agent_ids: Vec<String> = cfg
        .askers
        .iter()
        .map(|a| a.id.clone())
        .chain(cfg.bidders.iter().map(|b| b.id.clone()))
        .collect();

    // Setup acknowledgments mirror the networked mode so both transports
    // speak the same protocol.
    for (_, port) in askers.iter_mut() {
        send_stage_ack(port, STAGE_SETUP, 0)?;
    }
    for (_, port) in bidders.iter_mut() {
        send_stage_ack(port, STAGE_SETUP, 0)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rounds: Vec<RoundReport> = Vec::new();

    for round in 0..cfg.rounds {
        let mut barrier = StageBarrier::new(agent_ids.iter().cloned(), round);
        if round == 0 {
            StageBarrier::new(agent_ids.iter().cloned(), 0)
                .collect_acks(&mut coordinator, STAGE_SETUP, None)?;
        }
        barrier.begin_stage(&mut coordinator, STAGE_DEMAND_BID)?;

        let mut report = RoundReport {
            round,
            ..Default::default()
        };
        let mut round_faults: BTreeSet<String> = BTreeSet::new();

        let mut asker_order: Vec<usize> = (0..askers.len()).collect();
        asker_order.shuffle(&mut rng);
        let mut bidder_order: Vec<usize> = (0..bidders.len()).collect();
        bidder_order.shuffle(&mut rng);

        for &i in &asker_order {
            let (agent, port) = &mut askers[i];
            wait_for_stage(port, STAGE_DEMAND_BID, round, None)?;
            match agent.run_stage1(port, round) {
                Ok(curve) => {
                    report.curves.push(curve);
                    send_stage_ack(port, STAGE_DEMAND_BID, round)?;
                }
                Err(e) => {
                    log::warn!("asker {} faulted in stage 1: {e}", agent.id);
                    round_faults.insert(agent.id.clone());
                    send_fault(port, round, &e.to_string())?;
                }
            }
        }
        // Bidders are passive in stage 1; they still acknowledge it.
        for &i in &bidder_order {
            let (_, port) = &mut bidders[i];
            wait_for_stage(port, STAGE_DEMAND_BID, round, None)?;
            send_stage_ack(port, STAGE_DEMAND_BID, round)?;
        }
        barrier.advance_stage(&mut coordinator, Some(STAGE_DEMAND_BID), STAGE_BID_OFFER, None)?;

        for &i in &bidder_order {
            let (agent, port) = &mut bidders[i];
            let buffered = wait_for_stage(port, STAGE_BID_OFFER, round, None)?;
            let curves = curves_from_envelopes(&buffered, round);
            match agent.run_stage2(port, &curves, round) {
                Ok(offers) => {
                    report.offers.extend(offers);
                    send_stage_ack(port, STAGE_BID_OFFER, round)?;
                }
                Err(e) => {
                    log::warn!("bidder {} faulted in stage 2: {e}", agent.id);
                    round_faults.insert(agent.id.clone());
                    send_fault(port, round, &e.to_string())?;
                }
            }
        }
        for &i in &asker_order {
            let (_, port) = &mut askers[i];
            wait_for_stage(port, STAGE_BID_OFFER, round, None)?;
            send_stage_ack(port, STAGE_BID_OFFER, round)?;
        }
        barrier.advance_stage(
            &mut coordinator,
            Some(STAGE_BID_OFFER),
            STAGE_MARKET_CLEARING,
            None,
        )?;

        for &i in &asker_order {
            let (agent, port) = &mut askers[i];
            let buffered = wait_for_stage(port, STAGE_MARKET_CLEARING, round, None)?;
            if round_faults.contains(&agent.id) {
                continue;
            }
            let offers = offers_from_envelopes(&buffered, &agent.id, round);
            match agent.run_stage3(port, &offers, round) {
                Ok(result) => {
                    report.results.push(result);
                    send_stage_ack(port, STAGE_MARKET_CLEARING, round)?;
                }
                Err(e) => {
                    log::warn!("asker {} faulted in stage 3: {e}", agent.id);
                    round_faults.insert(agent.id.clone());
                    send_fault(port, round, &e.to_string())?;
                }
            }
        }
        for &i in &bidder_order {
            let (_, port) = &mut bidders[i];
            wait_for_stage(port, STAGE_MARKET_CLEARING, round, None)?;
            send_stage_ack(port, STAGE_MARKET_CLEARING, round)?;
        }
        barrier.collect_acks(&mut coordinator, STAGE_MARKET_CLEARING, None)?;

        if round + 1 < cfg.rounds {
            for (agent, _) in askers.iter_mut() {
                if !round_faults.contains(&agent.id) {
                    if let Err(e) = agent.advance_round() {
                        log::warn!("asker {} plant step failed: {e}", agent.id);
                    }
                }
            }
        }

        report.faults = round_faults.into_iter().collect();
        rounds.push(finish_round(report));
    }

    let bus_ref = bus.borrow();
    Ok(RunArtifacts {
        report: MarketReport {
            scenario: cfg.name.clone(),
            mode: BusMode::Deterministic.to_string(),
            seed,
            rounds,
            flags: Vec::new(),
        },
        messages: bus_ref.message_log().to_vec(),
        audit: bus_ref.audit().records().to_vec(),
    })
}

enum AgentEvent {
    Curve { round: u64, curve: PriceDemandCurve },
    Offers { round: u64, offers: Vec<BidOffer> },
    Result { round: u64, result: ClearingResult },
    Fault { round: u64, agent: String, detail: String },
}

fn asker_thread(
    mut agent: AskerAgent,
    mut port: TcpBusClient,
    rounds: u64,
    timeout: Duration,
    tx: Sender<AgentEvent>,
) {
    for pattern in asker_subscriptions(&agent.id.clone()) {
        if port.subscribe(&pattern).is_err() {
            return;
        }
    }
    if send_stage_ack(&mut port, STAGE_SETUP, 0).is_err() {
        return;
    }
    for round in 0..rounds {
        if wait_for_stage(&mut port, STAGE_DEMAND_BID, round, Some(timeout)).is_err() {
            return;
        }
        let mut skip = false;
        match agent.run_stage1(&mut port, round) {
            Ok(curve) => {
                let _ = tx.send(AgentEvent::Curve { round, curve });
                if send_stage_ack(&mut port, STAGE_DEMAND_BID, round).is_err() {
                    return;
                }
            }
            Err(e) => {
                let _ = tx.send(AgentEvent::Fault {
                    round,
                    agent: agent.id.clone(),
                    detail: e.to_string(),
                });
                let _ = send_fault(&mut port, round, &e.to_string());
                skip = true;
            }
        }
        // Passive in stage 2, but the barrier still expects the ack.
        if wait_for_stage(&mut port, STAGE_BID_OFFER, round, Some(timeout)).is_err() {
            return;
        }
        if !skip && send_stage_ack(&mut port, STAGE_BID_OFFER, round).is_err() {
            return;
        }
        let Ok(buffered) = wait_for_stage(&mut port, STAGE_MARKET_CLEARING, round, Some(timeout))
        else {
            return;
        };
        if !skip {
            let offers = offers_from_envelopes(&buffered, &agent.id, round);
            match agent.run_stage3(&mut port, &offers, round) {
                Ok(result) => {
                    let _ = tx.send(AgentEvent::Result { round, result });
                    if send_stage_ack(&mut port, STAGE_MARKET_CLEARING, round).is_err() {
                        return;
                    }
                }
                Err(e) => {
                    let _ = tx.send(AgentEvent::Fault {
                        round,
                        agent: agent.id.clone(),
                        detail: e.to_string(),
                    });
                    let _ = send_fault(&mut port, round, &e.to_string());
                }
            }
        }
        if round + 1 < rounds {
            if let Err(e) = agent.advance_round() {
                log::warn!("asker {} plant step failed: {e}", agent.id);
            }
        }
    }
}

fn bidder_thread(
    mut agent: BidderAgent,
    mut port: TcpBusClient,
    rounds: u64,
    timeout: Duration,
    tx: Sender<AgentEvent>,
) {
    for pattern in bidder_subscriptions(&agent.id.clone()) {
        if port.subscribe(&pattern).is_err() {
            return;
        }
    }
    if send_stage_ack(&mut port, STAGE_SETUP, 0).is_err() {
        return;
    }
    for round in 0..rounds {
        // Passive in stage 1: acknowledge and let the curves accumulate.
        if wait_for_stage(&mut port, STAGE_DEMAND_BID, round, Some(timeout)).is_err() {
            return;
        }
        if send_stage_ack(&mut port, STAGE_DEMAND_BID, round).is_err() {
            return;
        }
        let Ok(buffered) = wait_for_stage(&mut port, STAGE_BID_OFFER, round, Some(timeout)) else {
            return;
        };
        let curves = curves_from_envelopes(&buffered, round);
        let mut skip = false;
        match agent.run_stage2(&mut port, &curves, round) {
            Ok(offers) => {
                let _ = tx.send(AgentEvent::Offers { round, offers });
                if send_stage_ack(&mut port, STAGE_BID_OFFER, round).is_err() {
                    return;
                }
            }
            Err(e) => {
                let _ = tx.send(AgentEvent::Fault {
                    round,
                    agent: agent.id.clone(),
                    detail: e.to_string(),
                });
                let _ = send_fault(&mut port, round, &e.to_string());
                skip = true;
            }
        }
        // Passive in stage 3.
        if wait_for_stage(&mut port, STAGE_MARKET_CLEARING, round, Some(timeout)).is_err() {
            return;
        }
        if !skip && send_stage_ack(&mut port, STAGE_MARKET_CLEARING, round).is_err() {
            return;
        }
    }
}

fn run_tcp(cfg: &ScenarioConfig, seed: u64) -> Result<RunArtifacts, RunError> {
    let policy = cfg.auth_policy()?;
    let bind = cfg.bus.addr.clone().unwrap_or_else(|| "127.0.0.1:0".to_string());
    let broker = TcpBroker::start(bind.as_str(), policy)
        .map_err(|e| RunError::Internal(format!("broker bind failed: {e}")))?;
    let addr = broker.local_addr();
    let timeout = Duration::from_millis(cfg.bus.stage_timeout_ms.max(1));

    let mut coordinator = TcpBusClient::connect(addr, COORDINATOR_ID)?;
    coordinator.subscribe(&TopicPattern::parse(TOPIC_CONTROL_ACK).expect("valid"))?;
    coordinator.subscribe(&TopicPattern::parse(TOPIC_CONTROL_FAULT).expect("valid"))?;

    let (tx, rx) = channel::<AgentEvent>();
    let mut handles = Vec::new();
    for section in &cfg.askers {
        let agent = AskerAgent::from_config(section)
            .map_err(|e| ConfigError::new(format!("askers.{}", section.id), e))?;
        let port = TcpBusClient::connect(addr, section.id.clone())?;
        let tx = tx.clone();
        let rounds = cfg.rounds;
        handles.push(std::thread::spawn(move || {
            asker_thread(agent, port, rounds, timeout, tx)
        }));
    }
    for section in &cfg.bidders {
        let agent = BidderAgent::from_config(section)
            .map_err(|e| ConfigError::new(format!("bidders.{}", section.id), e))?;
        let port = TcpBusClient::connect(addr, section.id.clone())?;
        let tx = tx.clone();
        let rounds = cfg.rounds;
        handles.push(std::thread::spawn(move || {
            bidder_thread(agent, port, rounds, timeout, tx)
        }));
    }
    drop(tx);

    let agent_ids: Vec<String> = cfg
        .askers
        .iter()
        .map(|a| a.id.clone())
        .chain(cfg.bidders.iter().map(|b| b.id.clone()))
        .collect();

    let mut flags = Vec::new();
    'rounds: for round in 0..cfg.rounds {
        let mut barrier = StageBarrier::new(agent_ids.iter().cloned(), round);
        if round == 0 {
            if let Err(e) = StageBarrier::new(agent_ids.iter().cloned(), 0).collect_acks(
                &mut coordinator,
                STAGE_SETUP,
                Some(timeout),
            ) {
                flags.push(format!("setup: {e}"));
                break 'rounds;
            }
        }
        barrier.begin_stage(&mut coordinator, STAGE_DEMAND_BID)?;
        for (prior, next) in [
            (STAGE_DEMAND_BID, STAGE_BID_OFFER),
            (STAGE_BID_OFFER, STAGE_MARKET_CLEARING),
        ] {
            if let Err(e) =
                barrier.advance_stage(&mut coordinator, Some(prior), next, Some(timeout))
            {
                flags.push(format!("round {round}: {e}"));
                break 'rounds;
            }
        }
        if let Err(e) = barrier.collect_acks(&mut coordinator, STAGE_MARKET_CLEARING, Some(timeout))
        {
            flags.push(format!("round {round}: {e}"));
            break 'rounds;
        }
    }

    for handle in handles {
        let _ = handle.join();
    }
    drop(coordinator);

    // Assemble rounds from agent events.
    let mut rounds: Vec<RoundReport> = (0..cfg.rounds)
        .map(|round| RoundReport {
            round,
            ..Default::default()
        })
        .collect();
    for event in rx.iter() {
        match event {
            AgentEvent::Curve { round, curve } => rounds[round as usize].curves.push(curve),
            AgentEvent::Offers { round, offers } => {
                rounds[round as usize].offers.extend(offers)
            }
            AgentEvent::Result { round, result } => rounds[round as usize].results.push(result),
            AgentEvent::Fault { round, agent, detail } => {
                log::warn!("agent {agent} faulted in round {round}: {detail}");
                rounds[round as usize].faults.push(agent);
            }
        }
    }
    let rounds = rounds.into_iter().map(finish_round).collect();

    let logs = broker.shutdown();
    Ok(RunArtifacts {
        report: MarketReport {
            scenario: cfg.name.clone(),
            mode: BusMode::Tcp.to_string(),
            seed,
            rounds,
            flags,
        },
        messages: logs.messages,
        audit: logs.audit,
    })
}
