//! Exhaustive breakpoint-enumeration reference for the second-price
//! sealed-bid auction. Shares the data types with the clearing engine but
//! none of its code: merging, sorting, the equilibrium scan, dispatch, and
//! the second-price reruns are all written out longhand here.

use crate::auction::{AuctionError, ClearingResult, Transaction};
use crate::curve::PriceDemandCurve;
use crate::portfolio::BidOffer;

#[derive(Debug, Clone)]
struct Seg {
    bidder: String,
    qty: f64,
    price: f64,
}

fn merge_and_sort(offers: &[BidOffer]) -> Result<Vec<Seg>, AuctionError> {
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
    let mut segs: Vec<Seg> = Vec::new();
    for o in offers {
        if !(o.quantity_kw.is_finite() && o.quantity_kw > 0.0) {
            return Err(AuctionError::InvalidOffer {
                bidder: o.bidder_id.clone(),
                detail: "quantity must be finite and > 0".into(),
            });
        }
        let mut found = false;
        for s in segs.iter_mut() {
            if s.bidder == o.bidder_id && s.price == o.price_cents {
                s.qty += o.quantity_kw;
                found = true;
                break;
            }
        }
        if !found {
            segs.push(Seg {
                bidder: o.bidder_id.clone(),
                qty: o.quantity_kw,
                price: o.price_cents,
            });
        }
    }
    segs.sort_by(|a, b| {
        a.price
            .partial_cmp(&b.price)
            .expect("finite prices")
            .then_with(|| a.bidder.cmp(&b.bidder))
    });
    Ok(segs)
}

fn willingness(points: &PriceDemandCurve, q: f64) -> f64 {
    for p in points.points() {
        if p.quantity_kw >= q {
            return p.price_cents;
        }
    }
    0.0
}

fn supply_price(segs: &[Seg], q: f64) -> Option<f64> {
    let mut cum = 0.0;
    for s in segs {
        cum += s.qty;
        if q <= cum {
            return Some(s.price);
        }
    }
    None
}

/// Equilibrium quantity and marginal supply price by enumerating every
/// cumulative-quantity breakpoint and testing the interval midpoints.
fn equilibrium(segs: &[Seg], demand: &PriceDemandCurve) -> (f64, Option<f64>) {
    if segs.is_empty() {
        return (0.0, None);
    }
    let mut cum = 0.0;
    let mut bps: Vec<f64> = Vec::new();
    for s in segs {
        cum += s.qty;
        bps.push(cum);
    }
    let total = cum;
    for p in demand.points() {
        if p.quantity_kw > 0.0 && p.quantity_kw < total {
            bps.push(p.quantity_kw);
        }
    }
    bps.sort_by(|a, b| a.partial_cmp(b).expect("finite quantities"));
    bps.dedup();

    let mut q_star = 0.0;
    let mut price = None;
    let mut prev = 0.0;
    for &bp in &bps {
        if bp <= prev {
            continue;
        }
        let mid = 0.5 * (prev + bp);
        let sp = supply_price(segs, mid).expect("mid within supply");
        if sp <= willingness(demand, mid) {
            q_star = bp;
            price = Some(sp);
            prev = bp;
        } else {
            break;
        }
    }
    (q_star, price)
}

/// Reference second-price clearing: dispatch left of the equilibrium, then
/// price every dispatched bidder by re-running the auction without it, with
/// the reserve fallback when the rerun has no trade.
pub fn clear_spsba_oracle(
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
    let segs = merge_and_sort(offers)?;
    if segs.is_empty() {
        return Ok(ClearingResult::empty(&demand.asker_id, demand.timestep));
    }
    let (q_star, _) = equilibrium(&segs, demand);

    let mut bidders: Vec<String> = Vec::new();
    let mut totals: Vec<f64> = Vec::new();
    let mut starts: Vec<f64> = Vec::new();
    let mut before = 0.0;
    for s in &segs {
        let cleared = s.qty.min((q_star - before).max(0.0));
        if cleared > 0.0 {
            let mut idx = None;
            for (i, b) in bidders.iter().enumerate() {
                if *b == s.bidder {
                    idx = Some(i);
                    break;
                }
            }
            match idx {
                Some(i) => totals[i] += cleared,
                None => {
                    bidders.push(s.bidder.clone());
                    totals.push(cleared);
                    starts.push(before);
                }
            }
        }
        before += s.qty;
    }

    let mut transactions = Vec::new();
    for i in 0..bidders.len() {
        let rest: Vec<BidOffer> = offers
            .iter()
            .filter(|o| o.bidder_id != bidders[i])
            .cloned()
            .collect();
        let rest_segs = merge_and_sort(&rest)?;
        let (rerun_q, rerun_price) = equilibrium(&rest_segs, demand);
        let price = if rerun_q > 0.0 {
            rerun_price.expect("positive equilibrium has a marginal price")
        } else {
            // Reserve: willingness-to-pay for the unit just past the start
            // of this bidder's dispatched interval.
            let mut reserve = 0.0;
            for p in demand.points() {
                if p.quantity_kw > starts[i] {
                    reserve = p.price_cents;
                    break;
                }
            }
            reserve
        };
        transactions.push(Transaction {
            bidder_id: bidders[i].clone(),
            cleared_quantity_kw: totals[i],
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
