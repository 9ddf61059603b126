//! Instance-file formats for the `temarket oracle` subcommands, which run
//! the brute-force reference computations on hand-written inputs for
//! cross-checking.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::json;

use temarket_core::curve::{CurvePoint, PriceDemandCurve};
use temarket_core::mpc::MpcConfig;
use temarket_core::oracle::auction::clear_spsba_oracle;
use temarket_core::oracle::mpc::{mpc_grid_search, GridSpec};
use temarket_core::oracle::mpo::{naive_return_stats, simplex_grid_search};
use temarket_core::portfolio::BidOffer;
use temarket_core::thermal::{BessState, ThermalState};

use crate::config::{BessSection, ConfigError, ModelSection};

#[derive(Debug, Deserialize)]
pub struct AuctionInstance {
    pub offers: Vec<BidOffer>,
    pub demand: DemandInstance,
}

#[derive(Debug, Deserialize)]
pub struct DemandInstance {
    pub asker_id: String,
    #[serde(default)]
    pub timestep: u64,
    pub points: Vec<CurvePoint>,
}

pub fn run_auction_oracle(json: &str) -> Result<String, ConfigError> {
    let instance: AuctionInstance =
        serde_json::from_str(json).map_err(|e| ConfigError::new("$", e))?;
    let demand = PriceDemandCurve::new(
        instance.demand.asker_id.clone(),
        instance.demand.timestep,
        instance.demand.points,
    )
    .map_err(|e| ConfigError::new("demand.points", e))?;
    let result = clear_spsba_oracle(&instance.offers, &demand)
        .map_err(|e| ConfigError::new("offers", e))?;
    serde_json::to_string_pretty(&result).map_err(|e| ConfigError::new("$", e))
}

#[derive(Debug, Deserialize)]
pub struct MpoInstance {
    /// Raw N x L return samples; when given, the statistics are recomputed
    /// with the double-loop reference.
    #[serde(default)]
    pub samples: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub r_bar: Option<Vec<f64>>,
    #[serde(default)]
    pub sigma: Option<Vec<Vec<f64>>>,
    pub rorm: f64,
    pub grid_step: f64,
}

pub fn run_mpo_oracle(json: &str) -> Result<String, ConfigError> {
    let instance: MpoInstance = serde_json::from_str(json).map_err(|e| ConfigError::new("$", e))?;
    let (r_bar, sigma) = match (&instance.samples, &instance.r_bar, &instance.sigma) {
        (Some(samples), _, _) => {
            let n = samples.len();
            let l = samples.first().map(|r| r.len()).unwrap_or(0);
            if n < 2 || l == 0 {
                return Err(ConfigError::new("samples", "need at least 2 rows and 1 column"));
            }
            let flat: Vec<f64> = samples.iter().flatten().copied().collect();
            if flat.len() != n * l {
                return Err(ConfigError::new("samples", "ragged sample matrix"));
            }
            naive_return_stats(&DMatrix::from_row_slice(n, l, &flat))
        }
        (None, Some(r_bar), Some(sigma)) => {
            let l = r_bar.len();
            let flat: Vec<f64> = sigma.iter().flatten().copied().collect();
            if flat.len() != l * l {
                return Err(ConfigError::new("sigma", "must be L x L"));
            }
            (
                DVector::from_vec(r_bar.clone()),
                DMatrix::from_row_slice(l, l, &flat),
            )
        }
        _ => {
            return Err(ConfigError::new(
                "$",
                "provide either samples or both r_bar and sigma",
            ))
        }
    };
    match simplex_grid_search(&r_bar, &sigma, instance.rorm, instance.grid_step) {
        Some(sol) => {
            let out = json!({
                "weights": sol.w.iter().cloned().collect::<Vec<f64>>(),
                "objective": sol.objective,
                "expected_return": r_bar.dot(&sol.w),
            });
            serde_json::to_string_pretty(&out).map_err(|e| ConfigError::new("$", e))
        }
        None => {
            let out = json!({"infeasible": true, "rorm": instance.rorm});
            serde_json::to_string_pretty(&out).map_err(|e| ConfigError::new("$", e))
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct MpcInstance {
    pub model: ModelSection,
    pub bess: BessSection,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub t0: usize,
    pub soc0: f64,
    pub window: usize,
    pub prices: Vec<f64>,
    pub disturbances: Vec<Vec<f64>>,
    pub y_min: Vec<Vec<f64>>,
    pub y_max: Vec<Vec<f64>>,
    #[serde(default = "default_u_levels")]
    pub u_levels: usize,
    #[serde(default = "default_p_levels")]
    pub p_levels: usize,
}

fn default_u_levels() -> usize {
    21
}

fn default_p_levels() -> usize {
    11
}

#[derive(Debug, Serialize)]
struct MpcOracleOutput {
    cost: f64,
    u: Vec<Vec<f64>>,
    p_cd: Vec<f64>,
}

pub fn run_mpc_oracle(json: &str) -> Result<String, ConfigError> {
    let instance: MpcInstance = serde_json::from_str(json).map_err(|e| ConfigError::new("$", e))?;
    let model = instance.model.build("model")?;
    let bess = instance.bess.build("bess")?;
    let x0 = ThermalState::new(DVector::from_vec(instance.x0.clone()), instance.t0);
    let soc0 = BessState::new(instance.soc0, &bess).map_err(|e| ConfigError::new("soc0", e))?;
    let to_vecs = |rows: &[Vec<f64>]| -> Vec<DVector<f64>> {
        rows.iter().map(|r| DVector::from_vec(r.clone())).collect()
    };
    let cfg = MpcConfig::new(
        instance.window,
        instance.prices.clone(),
        to_vecs(&instance.disturbances),
        to_vecs(&instance.y_min),
        to_vecs(&instance.y_max),
    );
    cfg.validate(&model, instance.t0, instance.window)
        .map_err(|e| ConfigError::new("$", e))?;
    let spec = GridSpec {
        u_levels: instance.u_levels,
        p_levels: instance.p_levels,
    };
    match mpc_grid_search(&model, &bess, &x0, &soc0, &cfg, spec) {
        Some(sol) => {
            let out = MpcOracleOutput {
                cost: sol.cost,
                u: sol.u.iter().map(|u| u.iter().cloned().collect()).collect(),
                p_cd: sol.p_cd,
            };
            serde_json::to_string_pretty(&out).map_err(|e| ConfigError::new("$", e))
        }
        None => {
            let out = json!({"infeasible": true});
            serde_json::to_string_pretty(&out).map_err(|e| ConfigError::new("$", e))
        }
    }
}
