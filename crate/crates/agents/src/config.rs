//! Scenario configuration: one JSON document describing askers, bidders,
//! bus mode, rounds, and (optionally) the topic ACLs. Validation reports the
//! offending field path; when `acl` is omitted a policy covering exactly the
//! declared market flows is generated.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use temarket_bus::{AuthPolicy, Topic, TopicPattern, TOPIC_CONTROL_ACK, TOPIC_CONTROL_FAULT, TOPIC_CONTROL_STAGE};
use temarket_core::curve::{CurvePoint, CurveSweepConfig, PriceDemandCurve};
use temarket_core::mpc::{MpcConfig, DEFAULT_FAN_SEGMENTS};
use temarket_core::portfolio::BidderConfig;
use temarket_core::thermal::{BessParams, BessState, BuildingThermalModel, FanCoeffs, ThermalState};

#[derive(Debug, Error)]
#[error("{path}: {detail}")]
pub struct ConfigError {
    pub path: String,
    pub detail: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, detail: impl std::fmt::Display) -> Self {
        Self {
            path: path.into(),
            detail: detail.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BusMode {
    #[default]
    Deterministic,
    Tcp,
}

impl std::fmt::Display for BusMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BusMode::Deterministic => write!(f, "deterministic"),
            BusMode::Tcp => write!(f, "tcp"),
        }
    }
}

fn default_stage_timeout() -> u64 {
    30_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BusSection {
    #[serde(default)]
    pub mode: BusMode,
    /// Barrier timeout in networked mode; the deterministic mode is
    /// logically instantaneous and ignores it.
    #[serde(default = "default_stage_timeout")]
    pub stage_timeout_ms: u64,
    /// Bind address for the networked broker; port 0 picks an ephemeral one.
    #[serde(default)]
    pub addr: Option<String>,
}

impl Default for BusSection {
    fn default() -> Self {
        Self {
            mode: BusMode::Deterministic,
            stage_timeout_ms: default_stage_timeout(),
            addr: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSection {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub e: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    /// (c1, c2, c3, c4) of the fan cubic.
    pub fan_coeffs: [f64; 4],
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
}

fn matrix(path: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, ConfigError> {
    if rows.is_empty() {
        // A 0xN matrix is legitimate only for disturbances; reject here and
        // let callers special-case empties explicitly.
        return Err(ConfigError::new(path, "matrix must have at least one row"));
    }
    let ncols = rows[0].len();
    for (i, r) in rows.iter().enumerate() {
        if r.len() != ncols {
            return Err(ConfigError::new(
                format!("{path}[{i}]"),
                format!("ragged matrix: row 0 has {ncols} columns, row {i} has {}", r.len()),
            ));
        }
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

impl ModelSection {
    pub fn build(&self, path: &str) -> Result<BuildingThermalModel, ConfigError> {
        let n_x = self.a.len();
        let a = matrix(&format!("{path}.a"), &self.a)?;
        let b = matrix(&format!("{path}.b"), &self.b)?;
        // Disturbance matrix may have zero columns (no disturbances).
        let e = if self.e.iter().all(|r| r.is_empty()) && self.e.len() == n_x {
            DMatrix::zeros(n_x, 0)
        } else {
            matrix(&format!("{path}.e"), &self.e)?
        };
        let c = matrix(&format!("{path}.c"), &self.c)?;
        let [c1, c2, c3, c4] = self.fan_coeffs;
        BuildingThermalModel::new(
            a,
            b,
            e,
            c,
            FanCoeffs::new(c1, c2, c3, c4),
            DVector::from_vec(self.u_min.clone()),
            DVector::from_vec(self.u_max.clone()),
        )
        .map_err(|e| ConfigError::new(path, e))
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BessSection {
    pub eta: f64,
    pub rho: f64,
    pub q_bat: f64,
    pub tau: f64,
    pub e_min: f64,
    pub e_max: f64,
    pub d_r: f64,
    pub c_r: f64,
}

impl BessSection {
    pub fn build(&self, path: &str) -> Result<BessParams, ConfigError> {
        BessParams::new(
            self.eta, self.rho, self.q_bat, self.tau, self.e_min, self.e_max, self.d_r, self.c_r,
        )
        .map_err(|e| ConfigError::new(path, e))
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SweepSection {
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub segments: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MpcSection {
    pub model: ModelSection,
    pub bess: BessSection,
    pub x0: Vec<f64>,
    pub soc0: f64,
    pub window: usize,
    pub prices: Vec<f64>,
    pub disturbances: Vec<Vec<f64>>,
    pub y_min: Vec<Vec<f64>>,
    pub y_max: Vec<Vec<f64>>,
    #[serde(default)]
    pub slack_penalty: Option<f64>,
    #[serde(default = "default_fan_segments")]
    pub fan_segments: usize,
    #[serde(default)]
    pub polish: bool,
    pub sweep: SweepSection,
}

fn default_fan_segments() -> usize {
    DEFAULT_FAN_SEGMENTS
}

/// Everything an MPC-driven asker needs at runtime.
#[derive(Debug, Clone)]
pub struct MpcPipeline {
    pub model: BuildingThermalModel,
    pub bess: BessParams,
    pub state: ThermalState,
    pub soc: BessState,
    pub cfg: MpcConfig,
    pub sweep: CurveSweepConfig,
}

impl MpcSection {
    pub fn build(&self, path: &str) -> Result<MpcPipeline, ConfigError> {
        let model = self.model.build(&format!("{path}.model"))?;
        let bess = self.bess.build(&format!("{path}.bess"))?;
        if self.x0.len() != model.n_states() {
            return Err(ConfigError::new(
                format!("{path}.x0"),
                format!("expected {} states, got {}", model.n_states(), self.x0.len()),
            ));
        }
        let state = ThermalState::new(DVector::from_vec(self.x0.clone()), 0);
        let soc = BessState::new(self.soc0, &bess)
            .map_err(|e| ConfigError::new(format!("{path}.soc0"), e))?;
        let to_vecs = |rows: &[Vec<f64>]| -> Vec<DVector<f64>> {
            rows.iter().map(|r| DVector::from_vec(r.clone())).collect()
        };
        let mut cfg = MpcConfig::new(
            self.window,
            self.prices.clone(),
            to_vecs(&self.disturbances),
            to_vecs(&self.y_min),
            to_vecs(&self.y_max),
        );
        cfg.slack_penalty = self.slack_penalty;
        cfg.fan_segments = self.fan_segments;
        cfg.polish = self.polish;
        cfg.validate(&model, 0, self.window)
            .map_err(|e| ConfigError::new(path, e))?;
        let sweep = CurveSweepConfig::new(self.sweep.lambda_lo, self.sweep.lambda_hi, self.sweep.segments)
            .map_err(|e| ConfigError::new(format!("{path}.sweep"), e))?;
        Ok(MpcPipeline {
            model,
            bess,
            state,
            soc,
            cfg,
            sweep,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveSource {
    /// Publish this fixed staircase every round.
    Fixed { points: Vec<CurvePoint> },
    /// Generate the curve each round with the horizon sweep.
    Mpc(Box<MpcSection>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AskerSection {
    pub id: String,
    pub curve: CurveSource,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixedOffer {
    pub asker_id: String,
    pub quantity_kw: f64,
    pub price_cents: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OfferSource {
    /// Publish these offers every round.
    Fixed { offers: Vec<FixedOffer> },
    /// Run the portfolio pipeline on the received curves.
    Computed {
        rorm: f64,
        ask_prices: BTreeMap<String, f64>,
        n_samples: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BidderSection {
    pub id: String,
    pub capacity_kw: f64,
    pub offers: OfferSource,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AclSection {
    #[serde(default)]
    pub publish: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub subscribe: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default = "default_rounds")]
    pub rounds: u64,
    #[serde(default)]
    pub bus: BusSection,
    pub askers: Vec<AskerSection>,
    pub bidders: Vec<BidderSection>,
    /// Explicit topic ACLs; omitted means "exactly the declared flows".
    #[serde(default)]
    pub acl: Option<AclSection>,
}

fn default_rounds() -> u64 {
    1
}

pub const COORDINATOR_ID: &str = "coordinator";

fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id != COORDINATOR_ID
        && id != "broadcast"
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl ScenarioConfig {
    pub fn from_json(json: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(json).map_err(|e| ConfigError::new("$", e))
    }

    pub fn asker_ids(&self) -> Vec<&str> {
        self.askers.iter().map(|a| a.id.as_str()).collect()
    }

    pub fn bidder_ids(&self) -> Vec<&str> {
        self.bidders.iter().map(|b| b.id.as_str()).collect()
    }

    /// Full validation: id uniqueness, per-agent engine construction, offer
    /// consistency, forecast coverage for the configured rounds, and ACL
    /// coverage of every declared flow.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut ids: BTreeSet<&str> = BTreeSet::new();
        for (i, a) in self.askers.iter().enumerate() {
            if !valid_id(&a.id) {
                return Err(ConfigError::new(
                    format!("askers[{i}].id"),
                    format!("invalid agent id {:?}", a.id),
                ));
            }
            if !ids.insert(&a.id) {
                return Err(ConfigError::new(
                    format!("askers[{i}].id"),
                    format!("duplicate agent id {:?}", a.id),
                ));
            }
        }
        for (i, b) in self.bidders.iter().enumerate() {
            if !valid_id(&b.id) {
                return Err(ConfigError::new(
                    format!("bidders[{i}].id"),
                    format!("invalid agent id {:?}", b.id),
                ));
            }
            if !ids.insert(&b.id) {
                return Err(ConfigError::new(
                    format!("bidders[{i}].id"),
                    format!("duplicate agent id {:?}", b.id),
                ));
            }
        }

        let asker_ids: BTreeSet<&str> = self.asker_ids().into_iter().collect();
        for (i, a) in self.askers.iter().enumerate() {
            match &a.curve {
                CurveSource::Fixed { points } => {
                    PriceDemandCurve::new(a.id.clone(), 0, points.clone())
                        .map_err(|e| ConfigError::new(format!("askers[{i}].curve.fixed"), e))?;
                }
                CurveSource::Mpc(section) => {
                    let pipeline = section.build(&format!("askers[{i}].curve.mpc"))?;
                    let needed = self.rounds.max(1) as usize - 1 + pipeline.cfg.window;
                    if pipeline.cfg.prices.len() < needed {
                        return Err(ConfigError::new(
                            format!("askers[{i}].curve.mpc.prices"),
                            format!(
                                "forecast covers {} steps but {} rounds with window {} need {needed}",
                                pipeline.cfg.prices.len(),
                                self.rounds,
                                pipeline.cfg.window
                            ),
                        ));
                    }
                }
            }
        }

        for (i, b) in self.bidders.iter().enumerate() {
            if !(b.capacity_kw > 0.0) {
                return Err(ConfigError::new(
                    format!("bidders[{i}].capacity_kw"),
                    "capacity must be > 0",
                ));
            }
            match &b.offers {
                OfferSource::Fixed { offers } => {
                    let mut total = 0.0;
                    for (j, o) in offers.iter().enumerate() {
                        if !asker_ids.contains(o.asker_id.as_str()) {
                            return Err(ConfigError::new(
                                format!("bidders[{i}].offers.fixed[{j}].asker_id"),
                                format!("unknown asker {:?}", o.asker_id),
                            ));
                        }
                        if !(o.quantity_kw > 0.0 && o.quantity_kw.is_finite()) {
                            return Err(ConfigError::new(
                                format!("bidders[{i}].offers.fixed[{j}].quantity_kw"),
                                "quantity must be finite and > 0",
                            ));
                        }
                        if !(o.price_cents > 0.0 && o.price_cents.is_finite()) {
                            return Err(ConfigError::new(
                                format!("bidders[{i}].offers.fixed[{j}].price_cents"),
                                "price must be finite and > 0",
                            ));
                        }
                        total += o.quantity_kw;
                    }
                    if total > b.capacity_kw + 1e-8 {
                        return Err(ConfigError::new(
                            format!("bidders[{i}].offers.fixed"),
                            format!(
                                "offers total {total} kW exceed capacity {} kW",
                                b.capacity_kw
                            ),
                        ));
                    }
                }
                OfferSource::Computed {
                    rorm,
                    ask_prices,
                    n_samples,
                } => {
                    BidderConfig::new(b.id.clone(), b.capacity_kw, *rorm, ask_prices.clone(), *n_samples)
                        .map_err(|e| ConfigError::new(format!("bidders[{i}].offers.computed"), e))?;
                    for asker in ask_prices.keys() {
                        if !asker_ids.contains(asker.as_str()) {
                            return Err(ConfigError::new(
                                format!("bidders[{i}].offers.computed.ask_prices"),
                                format!("unknown asker {asker:?}"),
                            ));
                        }
                    }
                    for asker in &asker_ids {
                        if !ask_prices.contains_key(*asker) {
                            return Err(ConfigError::new(
                                format!("bidders[{i}].offers.computed.ask_prices"),
                                format!("missing ask price for asker {asker:?}"),
                            ));
                        }
                    }
                }
            }
        }

        let policy = self.auth_policy()?;
        self.check_acl_coverage(&policy)?;
        Ok(())
    }

    /// The policy actually used for the run: the explicit section when
    /// present, otherwise a generated one covering the declared flows.
    pub fn auth_policy(&self) -> Result<AuthPolicy, ConfigError> {
        match &self.acl {
            Some(section) => {
                let mut policy = AuthPolicy::default();
                for (agent, patterns) in &section.publish {
                    for (i, p) in patterns.iter().enumerate() {
                        let parsed = TopicPattern::parse(p).map_err(|e| {
                            ConfigError::new(format!("acl.publish.{agent}[{i}]"), e)
                        })?;
                        policy.allow_publish(agent, parsed);
                    }
                }
                for (agent, patterns) in &section.subscribe {
                    for (i, p) in patterns.iter().enumerate() {
                        let parsed = TopicPattern::parse(p).map_err(|e| {
                            ConfigError::new(format!("acl.subscribe.{agent}[{i}]"), e)
                        })?;
                        policy.allow_subscribe(agent, parsed);
                    }
                }
                Ok(policy)
            }
            None => Ok(self.default_policy()),
        }
    }

    fn default_policy(&self) -> AuthPolicy {
        let mut policy = AuthPolicy::default();
        let pat = |s: &str| TopicPattern::parse(s).expect("static pattern");
        policy.allow_publish(COORDINATOR_ID, pat(TOPIC_CONTROL_STAGE));
        policy.allow_subscribe(COORDINATOR_ID, pat(TOPIC_CONTROL_ACK));
        policy.allow_subscribe(COORDINATOR_ID, pat(TOPIC_CONTROL_FAULT));
        for a in &self.askers {
            policy.allow_publish(&a.id, pat(&format!("market/demand-bid/{}/broadcast", a.id)));
            policy.allow_publish(&a.id, pat(&format!("market/market-clearing/{}/*", a.id)));
            policy.allow_subscribe(&a.id, pat(&format!("market/bid-offer/*/{}", a.id)));
            policy.allow_subscribe(&a.id, pat(TOPIC_CONTROL_STAGE));
            policy.allow_publish(&a.id, pat(TOPIC_CONTROL_ACK));
            policy.allow_publish(&a.id, pat(TOPIC_CONTROL_FAULT));
        }
        for b in &self.bidders {
            policy.allow_publish(&b.id, pat(&format!("market/bid-offer/{}/*", b.id)));
            policy.allow_subscribe(&b.id, pat("market/demand-bid/*/*"));
            policy.allow_subscribe(&b.id, pat(&format!("market/market-clearing/*/{}", b.id)));
            policy.allow_subscribe(&b.id, pat(TOPIC_CONTROL_STAGE));
            policy.allow_publish(&b.id, pat(TOPIC_CONTROL_ACK));
            policy.allow_publish(&b.id, pat(TOPIC_CONTROL_FAULT));
        }
        policy
    }

    /// Every flow Algorithm-style staging needs must be covered, whatever
    /// the ACL section says.
    fn check_acl_coverage(&self, policy: &AuthPolicy) -> Result<(), ConfigError> {
        let pat = |s: &str| TopicPattern::parse(s).expect("static pattern");
        let must_publish = |agent: &str, topic: &str| -> Result<(), ConfigError> {
            let t = Topic::parse(topic).expect("static topic");
            if !policy.may_publish(agent, &t) {
                return Err(ConfigError::new(
                    "acl.publish",
                    format!("{agent} cannot publish required topic {topic}"),
                ));
            }
            Ok(())
        };
        let must_subscribe = |agent: &str, pattern: &str| -> Result<(), ConfigError> {
            if !policy.may_subscribe(agent, &pat(pattern)) {
                return Err(ConfigError::new(
                    "acl.subscribe",
                    format!("{agent} cannot subscribe required pattern {pattern}"),
                ));
            }
            Ok(())
        };

        must_publish(COORDINATOR_ID, TOPIC_CONTROL_STAGE)?;
        must_subscribe(COORDINATOR_ID, TOPIC_CONTROL_ACK)?;
        must_subscribe(COORDINATOR_ID, TOPIC_CONTROL_FAULT)?;
        for a in &self.askers {
            must_publish(&a.id, &format!("market/demand-bid/{}/broadcast", a.id))?;
            for b in &self.bidders {
                must_publish(&a.id, &format!("market/market-clearing/{}/{}", a.id, b.id))?;
            }
            must_subscribe(&a.id, &format!("market/bid-offer/*/{}", a.id))?;
            must_subscribe(&a.id, TOPIC_CONTROL_STAGE)?;
            must_publish(&a.id, TOPIC_CONTROL_ACK)?;
            must_publish(&a.id, TOPIC_CONTROL_FAULT)?;
        }
        for b in &self.bidders {
            for a in &self.askers {
                must_publish(&b.id, &format!("market/bid-offer/{}/{}", b.id, a.id))?;
            }
            must_subscribe(&b.id, "market/demand-bid/*/*")?;
            must_subscribe(&b.id, TOPIC_CONTROL_STAGE)?;
            must_publish(&b.id, TOPIC_CONTROL_ACK)?;
            must_publish(&b.id, TOPIC_CONTROL_FAULT)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> String {
        r#"{
            "name": "t",
            "askers": [
                {"id": "asker1", "curve": {"fixed": {"points": [
                    {"price_cents": 8.0, "quantity_kw": 0.4},
                    {"price_cents": 1.6, "quantity_kw": 2.0}
                ]}}}
            ],
            "bidders": [
                {"id": "bidder1", "capacity_kw": 1.3, "offers": {"fixed": {"offers": [
                    {"asker_id": "asker1", "quantity_kw": 1.3, "price_cents": 4.0}
                ]}}}
            ]
        }"#
        .to_string()
    }

    #[test]
    fn minimal_scenario_validates() {
        let cfg = ScenarioConfig::from_json(&minimal_json()).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.rounds, 1);
        assert_eq!(cfg.bus.mode, BusMode::Deterministic);
    }

    #[test]
    fn duplicate_ids_are_rejected_with_a_path() {
        let json = minimal_json().replace("\"bidder1\"", "\"asker1\"");
        let cfg = ScenarioConfig::from_json(&json).unwrap();
        let err = cfg.validate().unwrap_err();
        assert_eq!(err.path, "bidders[0].id");
    }

    #[test]
    fn fixed_offer_to_unknown_asker_is_rejected() {
        let json = minimal_json().replace("\"asker_id\": \"asker1\"", "\"asker_id\": \"nobody\"");
        let cfg = ScenarioConfig::from_json(&json).unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.path.contains("offers.fixed[0].asker_id"));
    }

    #[test]
    fn over_capacity_offers_are_rejected() {
        let json = minimal_json().replace("\"capacity_kw\": 1.3", "\"capacity_kw\": 1.0");
        let cfg = ScenarioConfig::from_json(&json).unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.path.contains("offers.fixed"));
    }

    #[test]
    fn computed_bidder_must_price_every_asker() {
        let json = r#"{
            "name": "t",
            "askers": [
                {"id": "asker1", "curve": {"fixed": {"points": [
                    {"price_cents": 8.0, "quantity_kw": 0.4}
                ]}}},
                {"id": "asker2", "curve": {"fixed": {"points": [
                    {"price_cents": 8.0, "quantity_kw": 0.4}
                ]}}}
            ],
            "bidders": [
                {"id": "bidder1", "capacity_kw": 1.0, "offers": {"computed": {
                    "rorm": 0.1,
                    "ask_prices": {"asker1": 4.0},
                    "n_samples": 4
                }}}
            ]
        }"#;
        let cfg = ScenarioConfig::from_json(json).unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.detail.contains("missing ask price for asker \"asker2\""));
    }

    #[test]
    fn partial_explicit_acl_fails_coverage() {
        let json = r#"{
            "name": "t",
            "askers": [
                {"id": "asker1", "curve": {"fixed": {"points": [
                    {"price_cents": 8.0, "quantity_kw": 0.4}
                ]}}}
            ],
            "bidders": [],
            "acl": {"publish": {"asker1": ["market/demand-bid/asker1/broadcast"]}, "subscribe": {}}
        }"#;
        let cfg = ScenarioConfig::from_json(json).unwrap();
        let err = cfg.validate().unwrap_err();
        assert!(err.path.starts_with("acl."));
    }

    #[test]
    fn generated_policy_covers_the_flows() {
        let cfg = ScenarioConfig::from_json(&minimal_json()).unwrap();
        let policy = cfg.auth_policy().unwrap();
        cfg.check_acl_coverage(&policy).unwrap();
        // Deny-by-default still holds for undeclared flows.
        let foreign = Topic::parse("market/demand-bid/asker1/broadcast").unwrap();
        assert!(!policy.may_publish("bidder1", &foreign));
    }
}
