//! Report rendering: the transactions CSV, newline-delimited message and
//! audit logs, a human summary, and optional SVG bar charts of auction
//! outcomes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use temarket_bus::log_to_ndjson;

use crate::runtime::{MarketReport, RoundReport, RunArtifacts, RunError};

/// `round,asker_id,bidder_id,cleared_quantity_kw,clearing_price_cents` rows,
/// one per transaction, ordered by (round, asker, bidder).
pub fn report_to_csv(report: &MarketReport) -> String {
    let mut out = String::from("round,asker_id,bidder_id,cleared_quantity_kw,clearing_price_cents\n");
    for round in &report.rounds {
        for result in &round.results {
            for t in &result.transactions {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    round.round,
                    result.asker_id,
                    t.bidder_id,
                    t.cleared_quantity_kw,
                    t.clearing_price_cents
                );
            }
        }
    }
    out
}

pub fn audit_to_ndjson(artifacts: &RunArtifacts) -> String {
    let mut out = String::new();
    for record in &artifacts.audit {
        out.push_str(&serde_json::to_string(record).expect("audit records serialize"));
        out.push('\n');
    }
    out
}

pub fn summary(report: &MarketReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "scenario {} ({} mode, seed {})",
        report.scenario, report.mode, report.seed
    );
    for round in &report.rounds {
        let _ = writeln!(out, "round {}:", round.round);
        for result in &round.results {
            if result.transactions.is_empty() {
                let _ = writeln!(
                    out,
                    "  {}: no trade (equilibrium {} kW)",
                    result.asker_id, result.equilibrium_quantity_kw
                );
            }
            for t in &result.transactions {
                let _ = writeln!(
                    out,
                    "  {} <- {}: {} kW @ {} cents/kW",
                    result.asker_id, t.bidder_id, t.cleared_quantity_kw, t.clearing_price_cents
                );
            }
        }
        if !round.unserved.is_empty() {
            let _ = writeln!(out, "  unserved demand: {}", round.unserved.join(", "));
        }
        if !round.faults.is_empty() {
            let _ = writeln!(out, "  faulted agents: {}", round.faults.join(", "));
        }
    }
    for flag in &report.flags {
        let _ = writeln!(out, "flag: {flag}");
    }
    out
}

/// A grouped bar chart of one asker's auction: offered vs cleared quantity
/// per bidder, annotated with offer and clearing prices.
pub fn auction_chart_svg(round: &RoundReport, asker_id: &str) -> Option<String> {
    let result = round.results.iter().find(|r| r.asker_id == asker_id)?;
    let offers: Vec<_> = round
        .offers
        .iter()
        .filter(|o| o.asker_id == asker_id)
        .collect();
    if offers.is_empty() && result.transactions.is_empty() {
        return None;
    }

    let mut bidders: Vec<String> = offers.iter().map(|o| o.bidder_id.clone()).collect();
    for t in &result.transactions {
        if !bidders.contains(&t.bidder_id) {
            bidders.push(t.bidder_id.clone());
        }
    }
    bidders.sort();
    bidders.dedup();

    let max_q = offers
        .iter()
        .map(|o| o.quantity_kw)
        .chain(result.transactions.iter().map(|t| t.cleared_quantity_kw))
        .fold(0.1_f64, f64::max);

    let bar_w = 34.0;
    let group_w = 110.0;
    let plot_h = 180.0;
    let base_y = 230.0;
    let width = 80.0 + group_w * bidders.len() as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"300\" \
         viewBox=\"0 0 {width} 300\">"
    );
    let _ = writeln!(
        svg,
        "<text x=\"10\" y=\"22\" font-family=\"monospace\" font-size=\"14\">auction of {} \
         (round {}, equilibrium {} kW)</text>",
        asker_id, round.round, result.equilibrium_quantity_kw
    );
    let _ = writeln!(
        svg,
        "<line x1=\"40\" y1=\"{base_y}\" x2=\"{}\" y2=\"{base_y}\" stroke=\"black\"/>",
        width - 20.0
    );
    for (i, bidder) in bidders.iter().enumerate() {
        let x0 = 60.0 + i as f64 * group_w;
        let offered: f64 = offers
            .iter()
            .filter(|o| &o.bidder_id == bidder)
            .map(|o| o.quantity_kw)
            .sum();
        let cleared = result
            .transactions
            .iter()
            .find(|t| &t.bidder_id == bidder)
            .map(|t| (t.cleared_quantity_kw, t.clearing_price_cents));
        let offered_h = plot_h * offered / max_q;
        let _ = writeln!(
            svg,
            "<rect x=\"{x0}\" y=\"{}\" width=\"{bar_w}\" height=\"{offered_h}\" \
             fill=\"#9ecae1\"/>",
            base_y - offered_h
        );
        if let Some((q, price)) = cleared {
            let cleared_h = plot_h * q / max_q;
            let _ = writeln!(
                svg,
                "<rect x=\"{}\" y=\"{}\" width=\"{bar_w}\" height=\"{cleared_h}\" \
                 fill=\"#3182bd\"/>",
                x0 + bar_w + 4.0,
                base_y - cleared_h
            );
            let _ = writeln!(
                svg,
                "<text x=\"{x0}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\">{q} kW @ \
                 {price}c</text>",
                base_y + 32.0
            );
        } else {
            let _ = writeln!(
                svg,
                "<text x=\"{x0}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\">not \
                 dispatched</text>",
                base_y + 32.0
            );
        }
        let _ = writeln!(
            svg,
            "<text x=\"{x0}\" y=\"{}\" font-family=\"monospace\" font-size=\"12\">{bidder} \
             (offered {offered} kW)</text>",
            base_y + 16.0
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"40\" y=\"40\" font-family=\"monospace\" font-size=\"11\">light: offered, \
         dark: cleared</text>"
    );
    svg.push_str("</svg>\n");
    Some(svg)
}

/// Write `report.csv`, `messages.ndjson`, `audit.ndjson`, and (optionally)
/// `auction_<asker>.svg` charts of the final round into `out_dir`.
pub fn write_artifacts(
    artifacts: &RunArtifacts,
    out_dir: &Path,
    charts: bool,
) -> Result<(), RunError> {
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("report.csv"), report_to_csv(&artifacts.report))?;
    fs::write(out_dir.join("messages.ndjson"), log_to_ndjson(&artifacts.messages))?;
    fs::write(out_dir.join("audit.ndjson"), audit_to_ndjson(artifacts))?;
    if charts {
        if let Some(last) = artifacts.report.rounds.last() {
            let mut askers: Vec<&str> =
                last.results.iter().map(|r| r.asker_id.as_str()).collect();
            askers.sort_unstable();
            for asker in askers {
                if let Some(svg) = auction_chart_svg(last, asker) {
                    fs::write(out_dir.join(format!("auction_{asker}.svg")), svg)?;
                }
            }
        }
    }
    Ok(())
}
