//! Shared helpers for the runtime and acceptance suites.

use std::collections::BTreeMap;
use std::path::PathBuf;

use temarket_agents::config::ScenarioConfig;
use temarket_agents::runtime::RunArtifacts;
use temarket_bus::MessageEnvelope;
use temarket_core::messages::StageMessage;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

pub fn load_scenario(name: &str) -> ScenarioConfig {
    let text = std::fs::read_to_string(scenario_path(name)).expect("scenario file");
    ScenarioConfig::from_json(&text).expect("scenario parses")
}

fn stage_index(stage: &str) -> usize {
    match stage {
        "demand-bid" => 0,
        "bid-offer" => 1,
        "market-clearing" => 2,
        other => panic!("unknown stage {other}"),
    }
}

/// Per round, the market-stage subsequence of the log must be a word of
/// (demand-bid)+ (bid-offer)* (market-clearing)*.
pub fn assert_stage_ordered(messages: &[MessageEnvelope]) {
    let mut progress: BTreeMap<u64, usize> = BTreeMap::new();
    let mut demand_counts: BTreeMap<u64, usize> = BTreeMap::new();
    for env in messages {
        let Some(stage) = env.topic.stage() else {
            continue;
        };
        let msg: StageMessage =
            serde_json::from_value(env.payload.clone()).expect("stage payloads parse");
        let round = msg.timestep();
        let idx = stage_index(stage);
        let entry = progress.entry(round).or_insert(0);
        assert!(
            idx >= *entry,
            "stage {stage} observed after a later stage in round {round}"
        );
        *entry = idx;
        if idx == 0 {
            *demand_counts.entry(round).or_insert(0) += 1;
        }
    }
    for (round, _) in progress {
        assert!(
            demand_counts.get(&round).copied().unwrap_or(0) >= 1,
            "round {round} has market traffic but no demand-bid message"
        );
    }
}

/// Every cleared kilowatt must trace back to a published offer and forward
/// to exactly one report transaction.
pub fn assert_conservation(artifacts: &RunArtifacts) {
    for round in &artifacts.report.rounds {
        for result in &round.results {
            for t in &result.transactions {
                let offered: f64 = round
                    .offers
                    .iter()
                    .filter(|o| o.bidder_id == t.bidder_id && o.asker_id == result.asker_id)
                    .map(|o| o.quantity_kw)
                    .sum();
                assert!(
                    t.cleared_quantity_kw <= offered + 1e-9,
                    "round {}: {} cleared {} kW from {} but only {} offered",
                    round.round,
                    result.asker_id,
                    t.cleared_quantity_kw,
                    t.bidder_id,
                    offered
                );
            }
            let total: f64 = result.transactions.iter().map(|t| t.cleared_quantity_kw).sum();
            assert!(
                (total - result.equilibrium_quantity_kw).abs() <= 1e-9,
                "round {}: {} dispatch does not sum to the equilibrium",
                round.round,
                result.asker_id
            );
        }
        // Each clearing message in the log corresponds to exactly one
        // report transaction of that round.
        let mut log_pairs: Vec<(String, String, f64, f64)> = Vec::new();
        for env in &artifacts.messages {
            if env.topic.stage() != Some("market-clearing") {
                continue;
            }
            let msg: StageMessage =
                serde_json::from_value(env.payload.clone()).expect("stage payloads parse");
            if msg.timestep() != round.round {
                continue;
            }
            if let StageMessage::MarketClearing {
                sender,
                receiver,
                cleared_quantity_kw,
                clearing_price_cents,
                ..
            } = msg
            {
                log_pairs.push((sender, receiver, cleared_quantity_kw, clearing_price_cents));
            }
        }
        let mut report_pairs: Vec<(String, String, f64, f64)> = round
            .results
            .iter()
            .flat_map(|r| {
                r.transactions.iter().map(|t| {
                    (
                        r.asker_id.clone(),
                        t.bidder_id.clone(),
                        t.cleared_quantity_kw,
                        t.clearing_price_cents,
                    )
                })
            })
            .collect();
        let key = |p: &(String, String, f64, f64)| (p.0.clone(), p.1.clone());
        log_pairs.sort_by_key(&key);
        report_pairs.sort_by_key(&key);
        assert_eq!(
            log_pairs, report_pairs,
            "round {}: clearing messages and report rows disagree",
            round.round
        );
    }
}
