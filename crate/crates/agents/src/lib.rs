//! Agent runtime for the bilateral transactive market: scenario
//! configuration, asker/bidder state machines over the bus, the scenario
//! runner in deterministic and TCP modes, and report rendering.

pub mod agents;
pub mod config;
pub mod oracle_cli;
pub mod report;
pub mod runtime;

pub use agents::{curves_from_envelopes, offers_from_envelopes, AskerAgent, BidderAgent};
pub use config::{BusMode, ConfigError, ScenarioConfig};
pub use report::{report_to_csv, summary, write_artifacts};
pub use runtime::{run_scenario, MarketReport, RoundReport, RunArtifacts, RunError, RunOptions};
