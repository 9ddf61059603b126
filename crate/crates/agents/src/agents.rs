//! Asker and bidder state machines. Each method performs one protocol stage
//! over a `BusPort`; transports differ, the logic does not.

use serde_json::Value;
use thiserror::Error;

use temarket_bus::{BusError, BusPort, MessageEnvelope, Topic};
use temarket_core::auction::{clear_spsba, ClearingResult};
use temarket_core::curve::{generate_curve, PriceDemandCurve};
use temarket_core::messages::{
    clearing_to_messages, curve_from_message, curve_to_message, offer_from_message,
    offer_to_message, StageMessage,
};
use temarket_core::mpc::mpc_step;
use temarket_core::portfolio::{
    make_bids, normalize_curves, return_samples, return_stats, solve_mpo, BidOffer, BidderConfig,
    PortfolioError,
};

use crate::config::{AskerSection, BidderSection, CurveSource, FixedOffer, MpcPipeline, OfferSource};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("bus: {0}")]
    Bus(#[from] BusError),
    #[error("{0}")]
    Fault(String),
}

fn to_value(msg: &StageMessage) -> Value {
    serde_json::to_value(msg).expect("stage messages serialize")
}

pub enum CurveEngine {
    Fixed(Vec<temarket_core::curve::CurvePoint>),
    Mpc(Box<MpcPipeline>),
}

pub struct AskerAgent {
    pub id: String,
    engine: CurveEngine,
    last_curve: Option<PriceDemandCurve>,
}

impl AskerAgent {
    pub fn from_config(section: &AskerSection) -> Result<Self, AgentError> {
        let engine = match &section.curve {
            CurveSource::Fixed { points } => CurveEngine::Fixed(points.clone()),
            CurveSource::Mpc(mpc) => CurveEngine::Mpc(Box::new(
                mpc.build("asker.curve.mpc")
                    .map_err(|e| AgentError::Fault(e.to_string()))?,
            )),
        };
        Ok(Self {
            id: section.id.clone(),
            engine,
            last_curve: None,
        })
    }

    /// Stage 1: produce this round's demand-bid curve and broadcast it.
    pub fn run_stage1(
        &mut self,
        port: &mut dyn BusPort,
        round: u64,
    ) -> Result<PriceDemandCurve, AgentError> {
        let curve = match &mut self.engine {
            CurveEngine::Fixed(points) => PriceDemandCurve::new(self.id.clone(), round, points.clone())
                .map_err(|e| AgentError::Fault(format!("fixed curve invalid: {e}")))?,
            CurveEngine::Mpc(pipeline) => {
                let build = generate_curve(
                    &pipeline.model,
                    &pipeline.bess,
                    &pipeline.state,
                    &pipeline.soc,
                    &pipeline.cfg,
                    &pipeline.sweep,
                    self.id.clone(),
                )
                .map_err(|e| AgentError::Fault(format!("curve generation failed: {e}")))?;
                if build.repaired_points > 0 {
                    log::info!(
                        "asker {}: isotonic repair touched {} points (max {} kW)",
                        self.id,
                        build.repaired_points,
                        build.max_repair_kw
                    );
                }
                build.curve
            }
        };
        let topic = Topic::market("demand-bid", &self.id, "broadcast")
            .expect("asker ids are valid segments");
        port.publish(&topic, to_value(&curve_to_message(&curve)))?;
        self.last_curve = Some(curve.clone());
        Ok(curve)
    }

    /// Stage 3: clear the received offers against this round's curve and
    /// notify every dispatched bidder.
    pub fn run_stage3(
        &mut self,
        port: &mut dyn BusPort,
        offers: &[BidOffer],
        round: u64,
    ) -> Result<ClearingResult, AgentError> {
        let curve = self
            .last_curve
            .as_ref()
            .ok_or_else(|| AgentError::Fault("no curve for this round".into()))?;
        if curve.timestep != round {
            return Err(AgentError::Fault(format!(
                "curve is for round {}, clearing round {round}",
                curve.timestep
            )));
        }
        let result = clear_spsba(offers, curve)
            .map_err(|e| AgentError::Fault(format!("clearing failed: {e}")))?;
        if result.transactions.is_empty() {
            log::info!("asker {}: no offers dispatched, demand unserved", self.id);
        }
        for msg in clearing_to_messages(&result) {
            let receiver = msg.receiver().expect("clearing messages have receivers");
            let topic = Topic::market("market-clearing", &self.id, receiver)
                .expect("agent ids are valid segments");
            port.publish(&topic, to_value(&msg))?;
        }
        Ok(result)
    }

    /// Between rounds an MPC asker applies the first horizon entry through
    /// its plant model (the receding-horizon coupling); fixed askers carry
    /// no state.
    pub fn advance_round(&mut self) -> Result<(), AgentError> {
        if let CurveEngine::Mpc(pipeline) = &mut self.engine {
            let (_, _, next_state, next_soc) = mpc_step(
                &pipeline.model,
                &pipeline.bess,
                &pipeline.state,
                &pipeline.soc,
                &pipeline.cfg,
            )
            .map_err(|e| AgentError::Fault(format!("plant step failed: {e}")))?;
            pipeline.state = next_state;
            pipeline.soc = next_soc;
        }
        Ok(())
    }
}

pub enum OfferEngine {
    Fixed(Vec<FixedOffer>),
    Computed(BidderConfig),
}

pub struct BidderAgent {
    pub id: String,
    engine: OfferEngine,
}

impl BidderAgent {
    pub fn from_config(section: &BidderSection) -> Result<Self, AgentError> {
        let engine = match &section.offers {
            OfferSource::Fixed { offers } => OfferEngine::Fixed(offers.clone()),
            OfferSource::Computed {
                rorm,
                ask_prices,
                n_samples,
            } => OfferEngine::Computed(
                BidderConfig::new(
                    section.id.clone(),
                    section.capacity_kw,
                    *rorm,
                    ask_prices.clone(),
                    *n_samples,
                )
                .map_err(|e| AgentError::Fault(e.to_string()))?,
            ),
        };
        Ok(Self {
            id: section.id.clone(),
            engine,
        })
    }

    /// Stage 2: turn the received curves into bilateral offers and send each
    /// to its asker. An unattainable return floor is an abstention, not a
    /// fault: the bidder publishes nothing.
    pub fn run_stage2(
        &mut self,
        port: &mut dyn BusPort,
        curves: &[PriceDemandCurve],
        round: u64,
    ) -> Result<Vec<BidOffer>, AgentError> {
        let offers: Vec<BidOffer> = match &self.engine {
            OfferEngine::Fixed(fixed) => fixed
                .iter()
                .map(|o| BidOffer {
                    bidder_id: self.id.clone(),
                    asker_id: o.asker_id.clone(),
                    quantity_kw: o.quantity_kw,
                    price_cents: o.price_cents,
                })
                .collect(),
            OfferEngine::Computed(cfg) => {
                let (_q, p) = normalize_curves(curves, cfg)
                    .map_err(|e| AgentError::Fault(format!("normalization failed: {e}")))?;
                let r = return_samples(&p);
                let stats = return_stats(&r)
                    .map_err(|e| AgentError::Fault(format!("return statistics failed: {e}")))?;
                match solve_mpo(&stats, cfg) {
                    Ok(weights) => make_bids(&weights, cfg),
                    Err(PortfolioError::InfeasibleRorm {
                        max_expected_return,
                        rorm,
                    }) => {
                        log::info!(
                            "bidder {}: abstaining, max expected return {max_expected_return} \
                             below floor {rorm}",
                            self.id
                        );
                        Vec::new()
                    }
                    Err(e) => return Err(AgentError::Fault(format!("portfolio solve failed: {e}"))),
                }
            }
        };
        for offer in &offers {
            let topic = Topic::market("bid-offer", &self.id, &offer.asker_id)
                .expect("agent ids are valid segments");
            port.publish(&topic, to_value(&offer_to_message(offer, round)))?;
        }
        Ok(offers)
    }
}

/// Extract this round's demand curves from buffered stage-1 envelopes.
pub fn curves_from_envelopes(envelopes: &[MessageEnvelope], round: u64) -> Vec<PriceDemandCurve> {
    let mut curves = Vec::new();
    for env in envelopes {
        if env.topic.stage() != Some("demand-bid") {
            continue;
        }
        let Ok(msg) = serde_json::from_value::<StageMessage>(env.payload.clone()) else {
            continue;
        };
        if msg.timestep() != round {
            continue;
        }
        if let Ok(curve) = curve_from_message(&msg) {
            curves.push(curve);
        }
    }
    curves.sort_by(|a, b| a.asker_id.cmp(&b.asker_id));
    curves
}

/// Extract this round's offers addressed to `asker` from buffered stage-2
/// envelopes, in arrival order.
pub fn offers_from_envelopes(
    envelopes: &[MessageEnvelope],
    asker: &str,
    round: u64,
) -> Vec<BidOffer> {
    let mut offers = Vec::new();
    for env in envelopes {
        if env.topic.stage() != Some("bid-offer") {
            continue;
        }
        let Ok(msg) = serde_json::from_value::<StageMessage>(env.payload.clone()) else {
            continue;
        };
        if msg.timestep() != round {
            continue;
        }
        if let Ok(offer) = offer_from_message(&msg) {
            if offer.asker_id == asker {
                offers.push(offer);
            }
        }
    }
    // Arrival order is transport-dependent; sort for a deterministic
    // clearing input.
    offers.sort_by(|a, b| {
        a.bidder_id
            .cmp(&b.bidder_id)
            .then_with(|| a.price_cents.partial_cmp(&b.price_cents).expect("finite"))
    });
    offers
}
