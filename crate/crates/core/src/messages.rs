//! The three stage payloads exchanged over the market bus, with their exact
//! JSON shapes. Field order in the serialized form follows the declaration
//! order here and is part of the wire contract.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auction::ClearingResult;
use crate::curve::{CurveError, CurvePoint, PriceDemandCurve};
use crate::portfolio::BidOffer;

pub const STAGE_DEMAND_BID: &str = "demand-bid";
pub const STAGE_BID_OFFER: &str = "bid-offer";
pub const STAGE_MARKET_CLEARING: &str = "market-clearing";

#[derive(Debug, Error)]
pub enum MessageError {
    #[error("payload is not a valid stage message: {0}")]
    Malformed(String),
    #[error("payload stage {payload} does not match topic stage {topic}")]
    StageMismatch { payload: String, topic: String },
    #[error("field {field} = {value} does not match topic segment {segment}")]
    FieldMismatch {
        field: &'static str,
        value: String,
        segment: String,
    },
    #[error("curve invalid: {0}")]
    Curve(#[from] CurveError),
    #[error("{field} must be finite and >= 0, got {value}")]
    BadQuantity { field: &'static str, value: f64 },
}

/// A protocol payload, tagged by its stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", deny_unknown_fields)]
pub enum StageMessage {
    #[serde(rename = "demand-bid")]
    DemandBid {
        sender: String,
        timestep: u64,
        curve: Vec<CurvePoint>,
    },
    #[serde(rename = "bid-offer")]
    BidOffer {
        sender: String,
        receiver: String,
        timestep: u64,
        quantity_kw: f64,
        price_cents: f64,
    },
    #[serde(rename = "market-clearing")]
    MarketClearing {
        sender: String,
        receiver: String,
        timestep: u64,
        cleared_quantity_kw: f64,
        clearing_price_cents: f64,
    },
}

impl StageMessage {
    pub fn stage(&self) -> &'static str {
        match self {
            StageMessage::DemandBid { .. } => STAGE_DEMAND_BID,
            StageMessage::BidOffer { .. } => STAGE_BID_OFFER,
            StageMessage::MarketClearing { .. } => STAGE_MARKET_CLEARING,
        }
    }

    pub fn sender(&self) -> &str {
        match self {
            StageMessage::DemandBid { sender, .. }
            | StageMessage::BidOffer { sender, .. }
            | StageMessage::MarketClearing { sender, .. } => sender,
        }
    }

    pub fn receiver(&self) -> Option<&str> {
        match self {
            StageMessage::DemandBid { .. } => None,
            StageMessage::BidOffer { receiver, .. }
            | StageMessage::MarketClearing { receiver, .. } => Some(receiver),
        }
    }

    pub fn timestep(&self) -> u64 {
        match self {
            StageMessage::DemandBid { timestep, .. }
            | StageMessage::BidOffer { timestep, .. }
            | StageMessage::MarketClearing { timestep, .. } => *timestep,
        }
    }
}

/// Serialize a demand curve into its stage-1 payload.
pub fn curve_to_message(curve: &PriceDemandCurve) -> StageMessage {
    StageMessage::DemandBid {
        sender: curve.asker_id.clone(),
        timestep: curve.timestep,
        curve: curve.points().to_vec(),
    }
}

/// Parse a stage-1 payload back into a validated curve.
pub fn curve_from_message(msg: &StageMessage) -> Result<PriceDemandCurve, MessageError> {
    match msg {
        StageMessage::DemandBid {
            sender,
            timestep,
            curve,
        } => Ok(PriceDemandCurve::new(sender.clone(), *timestep, curve.clone())?),
        other => Err(MessageError::StageMismatch {
            payload: other.stage().to_string(),
            topic: STAGE_DEMAND_BID.to_string(),
        }),
    }
}

pub fn offer_to_message(offer: &BidOffer, timestep: u64) -> StageMessage {
    StageMessage::BidOffer {
        sender: offer.bidder_id.clone(),
        receiver: offer.asker_id.clone(),
        timestep,
        quantity_kw: offer.quantity_kw,
        price_cents: offer.price_cents,
    }
}

pub fn offer_from_message(msg: &StageMessage) -> Result<BidOffer, MessageError> {
    match msg {
        StageMessage::BidOffer {
            sender,
            receiver,
            quantity_kw,
            price_cents,
            ..
        } => Ok(BidOffer {
            bidder_id: sender.clone(),
            asker_id: receiver.clone(),
            quantity_kw: *quantity_kw,
            price_cents: *price_cents,
        }),
        other => Err(MessageError::StageMismatch {
            payload: other.stage().to_string(),
            topic: STAGE_BID_OFFER.to_string(),
        }),
    }
}

/// One stage-3 message per dispatched bidder of a clearing result.
pub fn clearing_to_messages(result: &ClearingResult) -> Vec<StageMessage> {
    result
        .transactions
        .iter()
        .map(|t| StageMessage::MarketClearing {
            sender: result.asker_id.clone(),
            receiver: t.bidder_id.clone(),
            timestep: result.timestep,
            cleared_quantity_kw: t.cleared_quantity_kw,
            clearing_price_cents: t.clearing_price_cents,
        })
        .collect()
}

/// Validate a raw payload for publication on a market stage topic: it must
/// parse as the topic's stage, the embedded sender/receiver must match the
/// topic segments, and stage-specific shape rules must hold (demand-bid
/// curves must be valid curves, quantities finite and non-negative).
/// Demand-bid topics address the literal receiver segment `broadcast`.
pub fn validate_stage_payload(
    stage: &str,
    sender_segment: &str,
    receiver_segment: &str,
    payload: &serde_json::Value,
) -> Result<StageMessage, MessageError> {
    let msg: StageMessage = serde_json::from_value(payload.clone())
        .map_err(|e| MessageError::Malformed(e.to_string()))?;
    if msg.stage() != stage {
        return Err(MessageError::StageMismatch {
            payload: msg.stage().to_string(),
            topic: stage.to_string(),
        });
    }
    if msg.sender() != sender_segment {
        return Err(MessageError::FieldMismatch {
            field: "sender",
            value: msg.sender().to_string(),
            segment: sender_segment.to_string(),
        });
    }
    match &msg {
        StageMessage::DemandBid {
            sender,
            timestep,
            curve,
        } => {
            if receiver_segment != "broadcast" {
                return Err(MessageError::FieldMismatch {
                    field: "receiver",
                    value: "broadcast".to_string(),
                    segment: receiver_segment.to_string(),
                });
            }
            PriceDemandCurve::new(sender.clone(), *timestep, curve.clone())?;
        }
        StageMessage::BidOffer {
            receiver,
            quantity_kw,
            price_cents,
            ..
        } => {
            if receiver != receiver_segment {
                return Err(MessageError::FieldMismatch {
                    field: "receiver",
                    value: receiver.clone(),
                    segment: receiver_segment.to_string(),
                });
            }
            if !(quantity_kw.is_finite() && *quantity_kw >= 0.0) {
                return Err(MessageError::BadQuantity {
                    field: "quantity_kw",
                    value: *quantity_kw,
                });
            }
            if !(price_cents.is_finite() && *price_cents >= 0.0) {
                return Err(MessageError::BadQuantity {
                    field: "price_cents",
                    value: *price_cents,
                });
            }
        }
        StageMessage::MarketClearing {
            receiver,
            cleared_quantity_kw,
            clearing_price_cents,
            ..
        } => {
            if receiver != receiver_segment {
                return Err(MessageError::FieldMismatch {
                    field: "receiver",
                    value: receiver.clone(),
                    segment: receiver_segment.to_string(),
                });
            }
            if !(cleared_quantity_kw.is_finite() && *cleared_quantity_kw >= 0.0) {
                return Err(MessageError::BadQuantity {
                    field: "cleared_quantity_kw",
                    value: *cleared_quantity_kw,
                });
            }
            if !(clearing_price_cents.is_finite() && *clearing_price_cents >= 0.0) {
                return Err(MessageError::BadQuantity {
                    field: "clearing_price_cents",
                    value: *clearing_price_cents,
                });
            }
        }
    }
    Ok(msg)
}
