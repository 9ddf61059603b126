//! Asker-side simultaneous second-price sealed-bid auction: aggregate the
//! received offers into a non-decreasing supply curve, intersect it with the
//! demand curve, dispatch everything left of the intersection, and price
//! every transaction by re-running the auction without that bidder.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curve::PriceDemandCurve;
use crate::portfolio::BidOffer;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AuctionError {
    #[error("offers address different askers: {0} and {1}")]
    MixedReceivers(String, String),
    #[error("offer from {bidder} invalid: {detail}")]
    InvalidOffer { bidder: String, detail: String },
}

/// One step of the aggregated supply curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupplySegment {
    pub bidder_id: String,
    pub quantity_kw: f64,
    pub price_cents: f64,
}

/// Offers sorted by ascending price, ties broken by bidder id, with multiple
/// offers from one bidder at one price level merged.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SupplyCurve {
    segments: Vec<SupplySegment>,
}

impl SupplyCurve {
    pub fn segments(&self) -> &[SupplySegment] {
        &self.segments
    }

    pub fn total_quantity(&self) -> f64 {
        self.segments.iter().map(|s| s.quantity_kw).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Price of the segment supplying the unit at cumulative position `q`
    /// (segment `j` covers `(s_{j-1}, s_j]`).
    fn price_at(&self, q: f64) -> Option<f64> {
        let mut cum = 0.0;
        for seg in &self.segments {
            cum += seg.quantity_kw;
            if q <= cum {
                return Some(seg.price_cents);
            }
        }
        None
    }
}

/// One cleared transaction of an auction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transaction {
    pub bidder_id: String,
    pub cleared_quantity_kw: f64,
    pub clearing_price_cents: f64,
}

/// Outcome of one asker's auction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClearingResult {
    pub asker_id: String,
    pub timestep: u64,
    pub equilibrium_quantity_kw: f64,
    pub transactions: Vec<Transaction>,
}

impl ClearingResult {
    pub fn empty(asker_id: impl Into<String>, timestep: u64) -> Self {
        Self {
            asker_id: asker_id.into(),
            timestep,
            equilibrium_quantity_kw: 0.0,
            transactions: Vec::new(),
        }
    }
}

/// Sort the received offers in ascending price order into a supply curve.
/// Offers from the same bidder at the same price are merged (quantities
/// summed in input order); price ties across bidders order lexicographically
/// by bidder id so results are reproducible.
pub fn aggregate_bids(offers: &[BidOffer]) -> Result<SupplyCurve, AuctionError> {
    if let Some(first) = offers.first() {
        for o in offers {
            if o.asker_id != first.asker_id {
                return Err(AuctionError::MixedReceivers(
                    first.asker_id.clone(),
                    o.asker_id.clone(),
                ));
            }
        }
    }
    let mut merged: Vec<SupplySegment> = Vec::with_capacity(offers.len());
    for o in offers {
        if !(o.quantity_kw.is_finite() && o.quantity_kw > 0.0) {
            return Err(AuctionError::InvalidOffer {
                bidder: o.bidder_id.clone(),
                detail: format!("quantity {} must be finite and > 0", o.quantity_kw),
            });
        }
        if !(o.price_cents.is_finite() && o.price_cents >= 0.0) {
            return Err(AuctionError::InvalidOffer {
                bidder: o.bidder_id.clone(),
                detail: format!("price {} must be finite and >= 0", o.price_cents),
            });
        }
        match merged
            .iter_mut()
            .find(|s| s.bidder_id == o.bidder_id && s.price_cents == o.price_cents)
        {
            Some(seg) => seg.quantity_kw += o.quantity_kw,
            None => merged.push(SupplySegment {
                bidder_id: o.bidder_id.clone(),
                quantity_kw: o.quantity_kw,
                price_cents: o.price_cents,
            }),
        }
    }
    merged.sort_by(|a, b| {
        a.price_cents
            .partial_cmp(&b.price_cents)
            .expect("prices are finite")
            .then_with(|| a.bidder_id.cmp(&b.bidder_id))
    });
    Ok(SupplyCurve { segments: merged })
}

/// Equilibrium quantity and the marginal supply price at the intersection
/// of supply and demand. The equilibrium is the largest cumulative quantity
/// such that every supplied unit up to it is offered at or below the demand
/// curve's willingness-to-pay at that position.
fn equilibrium_with_price(supply: &SupplyCurve, demand: &PriceDemandCurve) -> (f64, Option<f64>) {
    if supply.is_empty() {
        return (0.0, None);
    }
    let mut breakpoints: Vec<f64> = Vec::new();
    let mut cum = 0.0;
    for seg in supply.segments() {
        cum += seg.quantity_kw;
        breakpoints.push(cum);
    }
    let total = cum;
    for p in demand.points() {
        if p.quantity_kw > 0.0 && p.quantity_kw < total {
            breakpoints.push(p.quantity_kw);
        }
    }
    breakpoints.sort_by(|a, b| a.partial_cmp(b).expect("quantities are finite"));
    breakpoints.dedup();

    let mut q_star = 0.0;
    let mut marginal_price = None;
    let mut prev = 0.0;
    for &bp in &breakpoints {
        if bp <= prev {
            continue;
        }
        let mid = 0.5 * (prev + bp);
        let sp = supply.price_at(mid).expect("midpoint within supply");
        let wtp = demand.willingness_at(mid);
        if sp <= wtp {
            q_star = bp;
            marginal_price = Some(sp);
            prev = bp;
        } else {
            break;
        }
    }
    (q_star, marginal_price)
}

/// Equilibrium quantity of the step-step intersection; 0 when there is no
/// trade.
pub fn find_equilibrium(supply: &SupplyCurve, demand: &PriceDemandCurve) -> f64 {
    equilibrium_with_price(supply, demand).0
}

/// Quantity dispatched per segment given the equilibrium: every segment
/// wholly left of it, the marginal one partially.
fn dispatch(supply: &SupplyCurve, q_star: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(supply.segments().len());
    let mut before = 0.0;
    for seg in supply.segments() {
        let cleared = seg.quantity_kw.min((q_star - before).max(0.0));
        out.push(cleared);
        before += seg.quantity_kw;
    }
    out
}

/// Run the second-price sealed-bid auction for one asker.
///
/// Every dispatched bidder's clearing price is the equilibrium price of the
/// auction re-run without that bidder's offers. When the re-run auction has
/// no trade (for example a sole bidder), the price falls back to the demand
/// curve's willingness-to-pay at the start of the bidder's dispatched
/// interval: the asker's reserve for those units.
pub fn clear_spsba(
    offers: &[BidOffer],
    demand: &PriceDemandCurve,
) -> Result<ClearingResult, AuctionError> {
    for o in offers {
        if o.asker_id != demand.asker_id {
            return Err(AuctionError::MixedReceivers(
                demand.asker_id.clone(),
                o.asker_id.clone(),
            ));
        }
    }
    let supply = aggregate_bids(offers)?;
    if supply.is_empty() {
        return Ok(ClearingResult::empty(&demand.asker_id, demand.timestep));
    }
    let (q_star, _) = equilibrium_with_price(&supply, demand);
    let cleared = dispatch(&supply, q_star);

    // Aggregate per bidder in first-dispatch order.
    let mut order: Vec<&str> = Vec::new();
    let mut totals: Vec<f64> = Vec::new();
    let mut starts: Vec<f64> = Vec::new();
    let mut before = 0.0;
    for (seg, &qty) in supply.segments().iter().zip(&cleared) {
        if qty > 0.0 {
            match order.iter().position(|b| *b == seg.bidder_id) {
                Some(i) => totals[i] += qty,
                None => {
                    order.push(&seg.bidder_id);
                    totals.push(qty);
                    starts.push(before);
                }
            }
        }
        before += seg.quantity_kw;
    }

    let mut transactions = Vec::with_capacity(order.len());
    for ((bidder, qty), start) in order.iter().zip(&totals).zip(&starts) {
        let rest: Vec<BidOffer> = offers
            .iter()
            .filter(|o| o.bidder_id != *bidder)
            .cloned()
            .collect();
        let rerun_supply = aggregate_bids(&rest)?;
        let (rerun_q, rerun_price) = equilibrium_with_price(&rerun_supply, demand);
        let price = match rerun_price {
            Some(p) if rerun_q > 0.0 => p,
            _ => {
                let reserve = demand.willingness_above(*start);
                log::debug!(
                    "second-price fallback for bidder {bidder} in auction of {}: \
                     reserve price {reserve}",
                    demand.asker_id
                );
                reserve
            }
        };
        transactions.push(Transaction {
            bidder_id: (*bidder).to_string(),
            cleared_quantity_kw: *qty,
            clearing_price_cents: price,
        });
    }

    Ok(ClearingResult {
        asker_id: demand.asker_id.clone(),
        timestep: demand.timestep,
        equilibrium_quantity_kw: q_star,
        transactions,
    })
}
