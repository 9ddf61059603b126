//! Market primitives for a bilateral transactive retail electricity market.
//!
//! Askers (buildings with flexible HVAC and battery load) schedule
//! themselves with a receding-horizon controller, publish price-demand
//! curves, and clear received offers through simultaneous second-price
//! sealed-bid auctions. Bidders (generators) allocate capacity across askers
//! by minimizing portfolio variance under a rate-of-return floor. This crate
//! holds the numerical and market machinery; transport and agent runtimes
//! live in the companion crates.

pub mod auction;
pub mod curve;
pub mod messages;
pub mod mpc;
pub mod oracle;
pub mod portfolio;
pub mod thermal;

pub use auction::{aggregate_bids, clear_spsba, find_equilibrium, ClearingResult, SupplyCurve};
pub use curve::{CurvePoint, CurveSweepConfig, PriceDemandCurve};
pub use messages::StageMessage;
pub use mpc::{mpc_step, run_receding_horizon, solve_horizon, MpcConfig, ScheduleTrajectory};
pub use portfolio::{
    make_bids, normalize_curves, return_samples, return_stats, solve_mpo, BidOffer, BidderConfig,
    PortfolioWeights, ReturnStatistics,
};
pub use thermal::{
    hvac_power, step_bess, step_thermal, BessParams, BessState, BuildingThermalModel, FanCoeffs,
    ThermalState,
};
