//! Bidder-side pipeline: normalize received demand curves against capacity
//! and bilateral ask prices, estimate return statistics, minimize portfolio
//! variance subject to a rate-of-return floor, and emit bilateral offers.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curve::PriceDemandCurve;

/// Offers below this are not published: a zero-weight asker receives no bid.
pub const QUANTITY_EPSILON: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PortfolioError {
    #[error("bidder configuration invalid: {0}")]
    Config(String),
    #[error("missing ask price for asker {0}")]
    MissingAskPrice(String),
    #[error("missing demand curve for asker {0}")]
    MissingCurve(String),
    #[error("return statistics invalid: {0}")]
    Stats(String),
    #[error(
        "no portfolio attains the return floor: max expected return \
         {max_expected_return} < RoRM {rorm}"
    )]
    InfeasibleRorm {
        max_expected_return: f64,
        rorm: f64,
    },
}

/// Static bidder parameters. Asker order everywhere in this module is the
/// sorted order of `ask_prices` keys, which fixes the column indexing of the
/// sample matrices and the weight vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidderConfig {
    pub bidder_id: String,
    pub capacity_kw: f64,
    pub rorm: f64,
    pub ask_prices: BTreeMap<String, f64>,
    pub n_samples: usize,
}

impl BidderConfig {
    pub fn new(
        bidder_id: impl Into<String>,
        capacity_kw: f64,
        rorm: f64,
        ask_prices: BTreeMap<String, f64>,
        n_samples: usize,
    ) -> Result<Self, PortfolioError> {
        if !(capacity_kw > 0.0) || !capacity_kw.is_finite() {
            return Err(PortfolioError::Config(format!(
                "capacity_kw = {capacity_kw} must be finite and > 0"
            )));
        }
        if n_samples < 2 {
            return Err(PortfolioError::Config(format!(
                "n_samples = {n_samples} must be >= 2"
            )));
        }
        if ask_prices.is_empty() {
            return Err(PortfolioError::Config("ask_prices must be non-empty".into()));
        }
        if !rorm.is_finite() {
            return Err(PortfolioError::Config("rorm must be finite".into()));
        }
        for (asker, price) in &ask_prices {
            if !(price.is_finite() && *price > 0.0) {
                return Err(PortfolioError::Config(format!(
                    "ask price for {asker} must be finite and > 0, got {price}"
                )));
            }
        }
        Ok(Self {
            bidder_id: bidder_id.into(),
            capacity_kw,
            rorm,
            ask_prices,
            n_samples,
        })
    }

    /// Asker ids in column order.
    pub fn askers(&self) -> Vec<&str> {
        self.ask_prices.keys().map(|s| s.as_str()).collect()
    }
}

/// Expected returns and covariance of the normalized returns, together with
/// the samples they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnStatistics {
    pub r_bar: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub sample_matrix: DMatrix<f64>,
}

/// Portfolio weights on the capacity simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct PortfolioWeights {
    pub w: DVector<f64>,
}

/// A bilateral quantity-price offer from one bidder to one asker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidOffer {
    pub bidder_id: String,
    pub asker_id: String,
    pub quantity_kw: f64,
    pub price_cents: f64,
}

/// Sample `n` (quantity, willingness-price) points from a demand curve,
/// uniformly in quantity over its support. When `n` equals the number of
/// curve points the curve's own points are used directly. Samples are
/// ordered by ascending quantity.
fn sample_curve(curve: &PriceDemandCurve, n: usize) -> Vec<(f64, f64)> {
    let pts = curve.points();
    if n == pts.len() {
        // Storage order (descending price) is ascending quantity already.
        return pts.iter().map(|p| (p.quantity_kw, p.price_cents)).collect();
    }
    let q_max = curve.max_quantity();
    (1..=n)
        .map(|i| {
            let q = q_max * i as f64 / n as f64;
            (q, curve.willingness_at(q))
        })
        .collect()
}

/// Normalize the demand curves of the bidder's askers: quantities against
/// the generation capacity, prices against the bilateral ask prices.
/// Returns `N x L` matrices of normalized quantities and prices, columns in
/// sorted asker order.
pub fn normalize_curves(
    curves: &[PriceDemandCurve],
    cfg: &BidderConfig,
) -> Result<(DMatrix<f64>, DMatrix<f64>), PortfolioError> {
    let mut by_asker: BTreeMap<&str, &PriceDemandCurve> = BTreeMap::new();
    for curve in curves {
        if !cfg.ask_prices.contains_key(&curve.asker_id) {
            return Err(PortfolioError::MissingAskPrice(curve.asker_id.clone()));
        }
        by_asker.insert(curve.asker_id.as_str(), curve);
    }
    let n = cfg.n_samples;
    let l = cfg.ask_prices.len();
    let mut q = DMatrix::zeros(n, l);
    let mut p = DMatrix::zeros(n, l);
    for (col, (asker, ask_price)) in cfg.ask_prices.iter().enumerate() {
        let curve = by_asker
            .get(asker.as_str())
            .ok_or_else(|| PortfolioError::MissingCurve(asker.clone()))?;
        let samples = sample_curve(curve, n);
        for (row, (quantity, price)) in samples.into_iter().enumerate() {
            q[(row, col)] = quantity / cfg.capacity_kw;
            p[(row, col)] = price / ask_price;
        }
    }
    Ok((q, p))
}

/// Rate-of-return samples: a normalized price of 1 (selling at the own ask)
/// is a zero return.
pub fn return_samples(p: &DMatrix<f64>) -> DMatrix<f64> {
    p.map(|v| v - 1.0)
}

/// Sample mean and 1/N covariance of the return samples (rows are samples,
/// columns are askers).
pub fn return_stats(r: &DMatrix<f64>) -> Result<ReturnStatistics, PortfolioError> {
    let n = r.nrows();
    let l = r.ncols();
    if n < 2 {
        return Err(PortfolioError::Stats(format!(
            "need at least 2 samples, got {n}"
        )));
    }
    let r_bar = DVector::from_fn(l, |j, _| r.column(j).sum() / n as f64);
    let mut centered = r.clone();
    for j in 0..l {
        for i in 0..n {
            centered[(i, j)] -= r_bar[j];
        }
    }
    let mut sigma = centered.transpose() * &centered / n as f64;
    // Exact symmetry: averaging kills accumulation-order dust.
    for i in 0..l {
        for j in 0..i {
            let v = 0.5 * (sigma[(i, j)] + sigma[(j, i)]);
            sigma[(i, j)] = v;
            sigma[(j, i)] = v;
        }
    }
    let min_eig = sigma
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min_eig < -1e-9 {
        return Err(PortfolioError::Stats(format!(
            "covariance not positive semidefinite: min eigenvalue {min_eig}"
        )));
    }
    Ok(ReturnStatistics {
        r_bar,
        sigma,
        sample_matrix: r.clone(),
    })
}

fn project_simplex(v: &DVector<f64>) -> DVector<f64> {
    let n = v.len();
    let mut u: Vec<f64> = v.iter().cloned().collect();
    u.sort_by(|a, b| b.partial_cmp(a).expect("weights must not be NaN"));
    let mut css = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        css += uj;
        let t = (css - 1.0) / (j as f64 + 1.0);
        if uj - t > 0.0 {
            theta = t;
        }
    }
    DVector::from_fn(n, |i, _| (v[i] - theta).max(0.0))
}

fn project_halfspace(v: &DVector<f64>, r_bar: &DVector<f64>, rorm: f64) -> DVector<f64> {
    let norm_sq = r_bar.norm_squared();
    if norm_sq < 1e-30 {
        return v.clone();
    }
    let viol = rorm - r_bar.dot(v);
    if viol <= 0.0 {
        v.clone()
    } else {
        v + r_bar * (viol / norm_sq)
    }
}

/// Dykstra's alternating projections onto the intersection of the weight
/// simplex and the return half-space. The final application is the simplex
/// projection, so the simplex constraints hold to machine precision.
fn project_feasible(v: &DVector<f64>, r_bar: &DVector<f64>, rorm: f64) -> DVector<f64> {
    let n = v.len();
    let mut x = v.clone();
    let mut p = DVector::zeros(n);
    let mut q = DVector::zeros(n);
    let mut y = project_simplex(&(&x + &p));
    for _ in 0..20_000 {
        let p_next = &x + &p - &y;
        let x_next = project_halfspace(&(&y + &q), r_bar, rorm);
        let q_next = &y + &q - &x_next;
        let shift = (&x_next - &x).norm();
        x = x_next;
        p = p_next;
        q = q_next;
        let y_next = project_simplex(&(&x + &p));
        let gap = (&y_next - &x).norm();
        y = y_next;
        if shift < 1e-15 && gap < 1e-12 {
            break;
        }
    }
    y
}

fn lambda_max(sigma: &DMatrix<f64>) -> f64 {
    let n = sigma.nrows();
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..100 {
        let w = sigma * &v;
        let norm = w.norm();
        if norm < 1e-300 {
            return 0.0;
        }
        v = w / norm;
        lambda = norm;
    }
    lambda
}

/// Minimize `w' Sigma w` over the simplex intersected with the return
/// half-space `r_bar . w >= rorm` by projected gradient descent.
pub fn solve_mpo(
    stats: &ReturnStatistics,
    cfg: &BidderConfig,
) -> Result<PortfolioWeights, PortfolioError> {
    let l = stats.r_bar.len();
    if l != cfg.ask_prices.len() {
        return Err(PortfolioError::Config(format!(
            "statistics cover {l} askers but the bidder prices {}",
            cfg.ask_prices.len()
        )));
    }
    if stats.sigma.nrows() != l || stats.sigma.ncols() != l {
        return Err(PortfolioError::Stats("covariance shape mismatch".into()));
    }
    let max_return = stats
        .r_bar
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    if max_return < cfg.rorm {
        return Err(PortfolioError::InfeasibleRorm {
            max_expected_return: max_return,
            rorm: cfg.rorm,
        });
    }

    let r_bar = &stats.r_bar;
    let sigma = &stats.sigma;
    let lip = 2.0 * lambda_max(sigma);
    let step = 1.0 / lip.max(1e-9);

    let uniform = DVector::from_element(l, 1.0 / l as f64);
    let mut w = project_feasible(&uniform, r_bar, cfg.rorm);
    let mut stall = 0;
    for _ in 0..100_000 {
        let grad = sigma * &w * 2.0;
        let next = project_feasible(&(&w - &grad * step), r_bar, cfg.rorm);
        let moved = (&next - &w).norm();
        w = next;
        if moved < 1e-13 {
            stall += 1;
            if stall >= 3 {
                break;
            }
        } else {
            stall = 0;
        }
    }
    Ok(PortfolioWeights { w })
}

/// Turn portfolio weights into bilateral offers: `w_l * capacity` at the
/// bidder's ask price, in sorted asker order, dropping dust quantities.
pub fn make_bids(weights: &PortfolioWeights, cfg: &BidderConfig) -> Vec<BidOffer> {
    cfg.ask_prices
        .iter()
        .enumerate()
        .filter_map(|(l, (asker, price))| {
            let quantity = weights.w[l] * cfg.capacity_kw;
            if quantity < QUANTITY_EPSILON {
                None
            } else {
                Some(BidOffer {
                    bidder_id: cfg.bidder_id.clone(),
                    asker_id: asker.clone(),
                    quantity_kw: quantity,
                    price_cents: *price,
                })
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curve::CurvePoint;
    use approx::assert_relative_eq;

    fn curve(asker: &str, pts: &[(f64, f64)]) -> PriceDemandCurve {
        PriceDemandCurve::new(
            asker,
            0,
            pts.iter()
                .map(|&(price_cents, quantity_kw)| CurvePoint {
                    price_cents,
                    quantity_kw,
                })
                .collect(),
        )
        .unwrap()
    }

    fn config(capacity: f64, rorm: f64, prices: &[(&str, f64)], n: usize) -> BidderConfig {
        BidderConfig::new(
            "bidder1",
            capacity,
            rorm,
            prices.iter().map(|&(a, p)| (a.to_string(), p)).collect(),
            n,
        )
        .unwrap()
    }

    #[test]
    fn self_normalization_is_unity() {
        let cfg = config(2.0, 0.0, &[("asker1", 1.6)], 2);
        let c = curve("asker1", &[(8.0, 0.4), (1.6, 2.0)]);
        let (q, p) = normalize_curves(&[c], &cfg).unwrap();
        // Own points are used because n_samples == number of points; the
        // (2.0 kW, 1.6 c/kW) point normalizes to exactly (1, 1).
        assert_relative_eq!(q[(1, 0)], 1.0, max_relative = 1e-12);
        assert_relative_eq!(p[(1, 0)], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn scenario_one_normalization() {
        let cfg = config(1.3, 0.0, &[("asker1", 4.0)], 2);
        let c = curve("asker1", &[(8.0, 0.4), (1.6, 2.0)]);
        let (q, p) = normalize_curves(&[c], &cfg).unwrap();
        assert_relative_eq!(q[(0, 0)], 0.4 / 1.3, max_relative = 1e-12);
        assert_relative_eq!(p[(0, 0)], 2.0, max_relative = 1e-12);
    }

    #[test]
    fn doubling_capacity_halves_quantities_only() {
        let pts = [(8.0, 0.4), (1.6, 2.0)];
        let cfg1 = config(1.0, 0.0, &[("asker1", 4.0)], 5);
        let cfg2 = config(2.0, 0.0, &[("asker1", 4.0)], 5);
        let (q1, p1) = normalize_curves(&[curve("asker1", &pts)], &cfg1).unwrap();
        let (q2, p2) = normalize_curves(&[curve("asker1", &pts)], &cfg2).unwrap();
        for i in 0..5 {
            assert_relative_eq!(q2[(i, 0)], q1[(i, 0)] / 2.0, max_relative = 1e-12);
            assert_eq!(p1[(i, 0)], p2[(i, 0)]);
        }
    }

    #[test]
    fn missing_ask_price_is_an_error() {
        let cfg = config(1.0, 0.0, &[("asker1", 4.0)], 2);
        let err = normalize_curves(&[curve("asker2", &[(5.0, 1.0)])], &cfg).unwrap_err();
        assert!(matches!(err, PortfolioError::MissingAskPrice(a) if a == "asker2"));
    }

    #[test]
    fn return_samples_shift_by_one() {
        let p = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 0.5]);
        let r = return_samples(&p);
        assert_eq!(r[(0, 0)], 0.0);
        assert_eq!(r[(1, 0)], 1.0);
        assert_eq!(r[(2, 0)], -0.5);
    }

    #[test]
    fn identical_samples_have_zero_covariance() {
        let r = DMatrix::from_row_slice(3, 2, &[0.2, -0.1, 0.2, -0.1, 0.2, -0.1]);
        let stats = return_stats(&r).unwrap();
        assert_relative_eq!(stats.r_bar[0], 0.2, max_relative = 1e-12);
        assert_relative_eq!(stats.r_bar[1], -0.1, max_relative = 1e-12);
        assert!(stats.sigma.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn two_sample_variance_uses_one_over_n() {
        let r = DMatrix::from_row_slice(2, 1, &[0.0, 2.0]);
        let stats = return_stats(&r).unwrap();
        assert_relative_eq!(stats.r_bar[0], 1.0, max_relative = 1e-12);
        assert_relative_eq!(stats.sigma[(0, 0)], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn single_sample_is_rejected() {
        let r = DMatrix::from_row_slice(1, 2, &[0.1, 0.2]);
        assert!(matches!(
            return_stats(&r),
            Err(PortfolioError::Stats(_))
        ));
    }

    #[test]
    fn single_asker_gets_full_weight() {
        let cfg = config(1.0, 0.2, &[("asker1", 4.0)], 2);
        let r = DMatrix::from_row_slice(2, 1, &[0.4, 0.6]);
        let stats = return_stats(&r).unwrap();
        let w = solve_mpo(&stats, &cfg).unwrap();
        assert_relative_eq!(w.w[0], 1.0, max_relative = 1e-9);
    }

    #[test]
    fn identical_assets_split_evenly() {
        let cfg = config(1.0, 0.0, &[("asker1", 4.0), ("asker2", 4.0)], 2);
        let stats = ReturnStatistics {
            r_bar: DVector::from_vec(vec![0.5, 0.5]),
            sigma: DMatrix::identity(2, 2),
            sample_matrix: DMatrix::zeros(2, 2),
        };
        let w = solve_mpo(&stats, &cfg).unwrap();
        assert_relative_eq!(w.w[0], 0.5, epsilon = 1e-6);
        assert_relative_eq!(w.w[1], 0.5, epsilon = 1e-6);
    }

    #[test]
    fn active_return_floor_pins_the_split() {
        // min w1^2 + 4 w2^2 with 0.1 w1 + 0.9 w2 >= 0.5 forces w1 <= 0.5;
        // the unconstrained simplex minimum (w1 = 0.8) is cut off.
        let cfg = config(1.0, 0.5, &[("asker1", 4.0), ("asker2", 4.0)], 2);
        let stats = ReturnStatistics {
            r_bar: DVector::from_vec(vec![0.1, 0.9]),
            sigma: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 4.0]),
            sample_matrix: DMatrix::zeros(2, 2),
        };
        let w = solve_mpo(&stats, &cfg).unwrap();
        assert_relative_eq!(w.w[0], 0.5, epsilon = 1e-5);
        assert_relative_eq!(w.w[1], 0.5, epsilon = 1e-5);
        assert!(stats.r_bar.dot(&w.w) >= 0.5 - 1e-8);
    }

    #[test]
    fn unattainable_floor_is_infeasible() {
        let cfg = config(1.0, 0.8, &[("asker1", 4.0), ("asker2", 4.0)], 2);
        let stats = ReturnStatistics {
            r_bar: DVector::from_vec(vec![0.1, 0.5]),
            sigma: DMatrix::identity(2, 2),
            sample_matrix: DMatrix::zeros(2, 2),
        };
        assert!(matches!(
            solve_mpo(&stats, &cfg),
            Err(PortfolioError::InfeasibleRorm { .. })
        ));
    }

    #[test]
    fn full_weight_single_offer() {
        let cfg = config(1.3, 0.0, &[("asker1", 4.0), ("asker2", 9.0)], 2);
        let w = PortfolioWeights {
            w: DVector::from_vec(vec![1.0, 0.0]),
        };
        let bids = make_bids(&w, &cfg);
        assert_eq!(bids.len(), 1);
        assert_eq!(bids[0].asker_id, "asker1");
        assert_relative_eq!(bids[0].quantity_kw, 1.3, max_relative = 1e-12);
        assert_eq!(bids[0].price_cents, 4.0);
    }

    #[test]
    fn scenario_two_bidder_two_offers() {
        let cfg = config(1.2, 0.0, &[("asker1", 5.5), ("asker2", 6.0)], 2);
        let w = PortfolioWeights {
            w: DVector::from_vec(vec![0.25, 0.75]),
        };
        let bids = make_bids(&w, &cfg);
        assert_eq!(bids.len(), 2);
        assert_relative_eq!(bids[0].quantity_kw, 0.3, max_relative = 1e-12);
        assert_eq!(bids[0].price_cents, 5.5);
        assert_relative_eq!(bids[1].quantity_kw, 0.9, max_relative = 1e-12);
        assert_eq!(bids[1].price_cents, 6.0);
    }

    #[test]
    fn zero_capacity_yields_no_offers() {
        // Capacity itself must be positive, so model a zero-capacity round
        // with weights that put nothing anywhere above the dust threshold.
        let cfg = config(1e-9, 0.0, &[("asker1", 4.0), ("asker2", 5.0)], 2);
        let w = PortfolioWeights {
            w: DVector::from_vec(vec![0.5, 0.5]),
        };
        assert!(make_bids(&w, &cfg).is_empty());
    }
}
