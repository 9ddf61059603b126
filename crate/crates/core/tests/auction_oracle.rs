//! Randomized equivalence between the clearing engine and the exhaustive
//! breakpoint oracle, plus the second-price independence property.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use temarket_core::auction::{aggregate_bids, clear_spsba, ClearingResult};
use temarket_core::curve::{CurvePoint, PriceDemandCurve};
use temarket_core::oracle::auction::clear_spsba_oracle;
use temarket_core::portfolio::BidOffer;

pub fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<BidOffer>, PriceDemandCurve) {
    let grid = |rng: &mut ChaCha8Rng, lo: i64, hi: i64| 0.05 * rng.gen_range(lo..=hi) as f64;
    let n_steps = rng.gen_range(1..=6usize);
    let mut prices: Vec<f64> = Vec::new();
    while prices.len() < n_steps {
        let p = grid(rng, 1, 200);
        if !prices.contains(&p) {
            prices.push(p);
        }
    }
    prices.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut quantities: Vec<f64> = (0..n_steps).map(|_| grid(rng, 1, 40)).collect();
    quantities.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let points = prices
        .iter()
        .zip(&quantities)
        .map(|(&price_cents, &quantity_kw)| CurvePoint {
            price_cents,
            quantity_kw,
        })
        .collect();
    let demand = PriceDemandCurve::new("asker1", 0, points).unwrap();

    let n_bidders = rng.gen_range(1..=5usize);
    let mut offers = Vec::new();
    for b in 0..n_bidders {
        let n_offers = if rng.gen_bool(0.2) { 2 } else { 1 };
        for _ in 0..n_offers {
            offers.push(BidOffer {
                bidder_id: format!("bidder{b}"),
                asker_id: "asker1".into(),
                quantity_kw: grid(rng, 1, 30),
                price_cents: grid(rng, 1, 200),
            });
        }
    }
    (offers, demand)
}

#[test]
fn randomized_clearing_matches_the_oracle_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..300 {
        let (offers, demand) = random_instance(&mut rng);
        let got = clear_spsba(&offers, &demand).unwrap();
        let want = clear_spsba_oracle(&offers, &demand).unwrap();
        assert_eq!(got, want, "offers: {offers:?}, demand: {:?}", demand.points());
    }
}

#[test]
fn conservation_and_asker_rationality_hold() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..300 {
        let (offers, demand) = random_instance(&mut rng);
        let result = clear_spsba(&offers, &demand).unwrap();
        let total: f64 = result
            .transactions
            .iter()
            .map(|t| t.cleared_quantity_kw)
            .sum();
        assert!(
            (total - result.equilibrium_quantity_kw).abs() <= 1e-9,
            "dispatch does not conserve the equilibrium quantity"
        );
        // Dispatched offer prices stay within the willingness-to-pay along
        // the dispatched span.
        let supply = aggregate_bids(&offers).unwrap();
        let mut before = 0.0;
        for seg in supply.segments() {
            let cleared = seg
                .quantity_kw
                .min((result.equilibrium_quantity_kw - before).max(0.0));
            if cleared > 1e-12 {
                let wtp = demand.willingness_at(before + cleared);
                assert!(
                    seg.price_cents <= wtp + 1e-12,
                    "dispatched offer above willingness-to-pay"
                );
            }
            before += seg.quantity_kw;
        }
        // Each bidder's cleared quantity stays within what it offered.
        for t in &result.transactions {
            let offered: f64 = offers
                .iter()
                .filter(|o| o.bidder_id == t.bidder_id)
                .map(|o| o.quantity_kw)
                .sum();
            assert!(t.cleared_quantity_kw <= offered + 1e-12);
        }
    }
}

fn sort_signature(offers: &[BidOffer]) -> Vec<String> {
    aggregate_bids(offers)
        .unwrap()
        .segments()
        .iter()
        .map(|s| s.bidder_id.clone())
        .collect()
}

#[test]
fn clearing_price_is_independent_of_own_offer_price() {
    let mut rng = ChaCha8Rng::seed_from_u64(777);
    let mut tested = 0;
    while tested < 150 {
        let (offers, demand) = random_instance(&mut rng);
        let base = clear_spsba(&offers, &demand).unwrap();
        if base.transactions.is_empty() {
            continue;
        }
        let victim = &base.transactions[rng.gen_range(0..base.transactions.len())];
        let signature = sort_signature(&offers);
        let mut perturbed_any = false;
        for _ in 0..6 {
            // Off-grid jitter so we never create new price ties.
            let delta = rng.gen_range(-0.02..0.02) + 0.001 * rng.gen_range(1..10) as f64;
            let mut alt = offers.clone();
            for o in alt.iter_mut() {
                if o.bidder_id == victim.bidder_id {
                    o.price_cents = (o.price_cents + delta).max(0.01);
                }
            }
            if sort_signature(&alt) != signature {
                continue;
            }
            let re = clear_spsba(&alt, &demand).unwrap();
            if re.equilibrium_quantity_kw != base.equilibrium_quantity_kw {
                continue;
            }
            let re_tx = re
                .transactions
                .iter()
                .find(|t| t.bidder_id == victim.bidder_id)
                .expect("still dispatched: sort order and equilibrium unchanged");
            assert_eq!(
                re_tx.clearing_price_cents, victim.clearing_price_cents,
                "second price moved with the bidder's own offer price"
            );
            perturbed_any = true;
        }
        if perturbed_any {
            tested += 1;
        }
    }
}

#[test]
fn removing_non_dispatched_offers_preserves_dispatch_and_prices() {
    let mut rng = ChaCha8Rng::seed_from_u64(31337);
    let mut tested = 0;
    while tested < 100 {
        let (offers, demand) = random_instance(&mut rng);
        let base = clear_spsba(&offers, &demand).unwrap();
        let dispatched: Vec<&str> = base
            .transactions
            .iter()
            .map(|t| t.bidder_id.as_str())
            .collect();
        // Pick a bidder with zero dispatch, if any.
        let Some(loser) = offers
            .iter()
            .map(|o| o.bidder_id.as_str())
            .find(|b| !dispatched.contains(b))
        else {
            continue;
        };
        let trimmed: Vec<BidOffer> = offers
            .iter()
            .filter(|o| o.bidder_id != loser)
            .cloned()
            .collect();
        let re = clear_spsba(&trimmed, &demand).unwrap();
        assert_eq!(re.equilibrium_quantity_kw, base.equilibrium_quantity_kw);
        // Dispatched quantities are unchanged; prices may only change for
        // bidders whose counterfactual rerun contained the removed loser.
        for t in &base.transactions {
            let rt = re
                .transactions
                .iter()
                .find(|x| x.bidder_id == t.bidder_id)
                .expect("dispatch preserved");
            assert_eq!(rt.cleared_quantity_kw, t.cleared_quantity_kw);
        }
        tested += 1;
    }
}

#[test]
fn oracle_and_engine_agree_on_the_scenario_auctions() {
    let demand = |asker: &str| {
        PriceDemandCurve::new(
            asker,
            0,
            vec![
                CurvePoint {
                    price_cents: 8.0,
                    quantity_kw: 0.4,
                },
                CurvePoint {
                    price_cents: 1.6,
                    quantity_kw: 2.0,
                },
            ],
        )
        .unwrap()
    };
    let offer = |b: &str, a: &str, q: f64, p: f64| BidOffer {
        bidder_id: b.into(),
        asker_id: a.into(),
        quantity_kw: q,
        price_cents: p,
    };
    let cases: Vec<(Vec<BidOffer>, PriceDemandCurve)> = vec![
        // Auction 1 and 2 with the paper's fixed offers, first scenario.
        (
            vec![
                offer("bidder1", "asker1", 1.3, 4.0),
                offer("bidder2", "asker1", 0.3, 7.0),
            ],
            demand("asker1"),
        ),
        (vec![offer("bidder2", "asker2", 0.9, 6.0)], demand("asker2")),
        // Third scenario.
        (
            vec![
                offer("bidder1", "asker1", 0.45, 7.0),
                offer("bidder2", "asker1", 1.2, 7.5),
            ],
            demand("asker1"),
        ),
        (vec![offer("bidder1", "asker2", 0.85, 6.0)], demand("asker2")),
    ];
    for (offers, dem) in cases {
        let got = clear_spsba(&offers, &dem).unwrap();
        let want = clear_spsba_oracle(&offers, &dem).unwrap();
        assert_eq!(got, want);
    }
}

#[test]
fn empty_offer_list_yields_empty_result_in_both() {
    let demand = PriceDemandCurve::new(
        "asker1",
        3,
        vec![CurvePoint {
            price_cents: 5.0,
            quantity_kw: 1.0,
        }],
    )
    .unwrap();
    let got = clear_spsba(&[], &demand).unwrap();
    let want = clear_spsba_oracle(&[], &demand).unwrap();
    assert_eq!(got, want);
    assert_eq!(got, ClearingResult::empty("asker1", 3));
}
