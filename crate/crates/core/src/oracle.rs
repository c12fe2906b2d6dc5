//! Independent verification machinery for the smoothing bias.
//!
//! For the two-bidder first-price auction with uniform priors and a linear
//! opponent strategy `β₂(v₂) = s·v₂`, the interim utility of bidder 1 has a
//! closed form in both the original and the smoothed game, and their absolute
//! difference is expressible through the dilogarithm. This module carries
//! that closed form, a quadrature route to the same quantity, the linear
//! ex ante bound `(ln 2 + 1)·λ/s`, and a Monte Carlo route through the game
//! engine itself — three independent ways to measure the same bias.

use std::f64::consts::PI;

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::mechanisms::{utility_exact, BatchRole, BidderBatch, MechanismSpec, PaymentRule};
use crate::quad::{integrate_adaptive, GaussLegendre};
use crate::rng::{substream, Stream};
use crate::scalar::{sigmoid, softplus};
use crate::smoothing::{utility_soft, SmoothingConfig};
use rand::Rng as _;

/// Linear opponent strategy `β(v) = s·v` (zero intercept).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearOpponent {
    pub slope: f64,
}

impl LinearOpponent {
    pub fn new(slope: f64) -> Result<Self> {
        if !(slope > 0.0 && slope <= 1.0) {
            return Err(Error::domain(format!(
                "opponent slope must lie in (0, 1], got {slope}"
            )));
        }
        Ok(LinearOpponent { slope })
    }
}

/// Series evaluation of Spence's function on `|x| <= 0.5`.
fn dilog_series(x: f64) -> f64 {
    debug_assert!(x.abs() <= 0.5 + 1e-12);
    let mut term = x;
    let mut acc = x;
    let mut k = 1.0;
    while term.abs() > 1e-18 * (1.0 + acc.abs()) {
        k += 1.0;
        term *= x;
        acc += term / (k * k);
        if k > 400.0 {
            break;
        }
    }
    acc
}

/// Spence's function `Li₂(x) = Σ x^k / k²` on `(-∞, 1]`, via the direct
/// series inside `|x| <= 0.5` and the standard Landen / inversion /
/// reflection identities outside it. Absolute error below 1e-12.
pub fn dilog(x: f64) -> Result<f64> {
    if !(x <= 1.0) {
        return Err(Error::domain(format!("dilog needs x <= 1, got {x}")));
    }
    let pi2_6 = PI * PI / 6.0;
    if x == 1.0 {
        return Ok(pi2_6);
    }
    if x < -1.0 {
        // inversion: Li₂(x) + Li₂(1/x) = -π²/6 - ln²(-x)/2 for x < 0
        let ln_neg = (-x).ln();
        return Ok(-pi2_6 - 0.5 * ln_neg * ln_neg - dilog(1.0 / x)?);
    }
    if x < -0.5 {
        // Landen: Li₂(x) = -Li₂(x/(x-1)) - ln²(1-x)/2, argument lands in [1/3, 1/2]
        let ln1m = (1.0 - x).ln();
        return Ok(-dilog_series(x / (x - 1.0)) - 0.5 * ln1m * ln1m);
    }
    if x <= 0.5 {
        return Ok(dilog_series(x));
    }
    // reflection: Li₂(x) + Li₂(1-x) = π²/6 - ln(x)·ln(1-x) on (0, 1)
    Ok(pi2_6 - x.ln() * (1.0 - x).ln() - dilog_series(1.0 - x))
}

/// `Li₂(-e^a)` without forming `e^a`, stable for arbitrarily large `a`.
pub fn dilog_neg_exp(a: f64) -> f64 {
    if a <= 0.0 {
        dilog(-a.exp()).expect("argument is in [-1, 0]")
    } else {
        // inversion identity with -e^a < -1 and ln(e^a) = a
        -PI * PI / 6.0 - 0.5 * a * a - dilog_neg_exp(-a)
    }
}

fn check_bid_domain(b1: f64, opponent: &LinearOpponent) -> Result<()> {
    let s = opponent.slope;
    if !(0.0..=s).contains(&b1) {
        return Err(Error::domain(format!(
            "the closed forms hold for 0 <= b1 <= s, got b1 = {b1}, s = {s}"
        )));
    }
    Ok(())
}

/// Interim utility of bidding `b1` with value `v1` in the original two-bidder
/// first-price game against the linear opponent: `(v1 - b1) · b1 / s`.
pub fn interim_utility_original(v1: f64, b1: f64, opponent: &LinearOpponent) -> Result<f64> {
    check_bid_domain(b1, opponent)?;
    Ok((v1 - b1) * b1 / opponent.slope)
}

/// Closed-form absolute interim utility difference between the original and
/// the smoothed game, term by term through the dilogarithm.
pub fn interim_error_exact(
    v1: f64,
    b1: f64,
    opponent: &LinearOpponent,
    lambda: f64,
) -> Result<f64> {
    check_bid_domain(b1, opponent)?;
    if !(lambda > 0.0) {
        return Err(Error::domain(format!("temperature must be positive, got {lambda}")));
    }
    let s = opponent.slope;
    let alpha = (s - b1) / lambda;
    // ln(e^{s/λ} + e^{b1/λ}), max-shifted (s >= b1 on the domain)
    let log_sum = s / lambda + softplus((b1 - s) / lambda);
    let total = -s * softplus(alpha)
        - lambda * (dilog_neg_exp(alpha) + PI * PI / 12.0)
        + v1 * log_sum
        + ((s * s - b1 * b1) / 2.0 - v1 * s) / lambda
        + (b1 - v1) * softplus(-b1 / lambda);
    Ok(lambda / s * total)
}

/// Linear ex ante bound on the utility bias: `(ln 2 + 1) · λ / s`.
pub fn ex_ante_bound(opponent: &LinearOpponent, lambda: f64) -> Result<f64> {
    if lambda < 0.0 {
        return Err(Error::domain(format!("temperature must be nonnegative, got {lambda}")));
    }
    Ok((2.0f64.ln() + 1.0) * lambda / opponent.slope)
}

/// Smoothed interim utility by Gauss-Legendre quadrature over the opponent
/// valuation, panel-split at the price kink `v2 = b1/s` and refined
/// adaptively to an absolute target below 1e-8.
pub fn interim_utility_smooth_quadrature(
    v1: f64,
    b1: f64,
    opponent: &LinearOpponent,
    lambda: f64,
    nodes: usize,
) -> Result<f64> {
    check_bid_domain(b1, opponent)?;
    if nodes < 16 {
        return Err(Error::config(format!("quadrature needs >= 16 nodes, got {nodes}")));
    }
    if !(lambda > 0.0) {
        return Err(Error::domain(format!("temperature must be positive, got {lambda}")));
    }
    let s = opponent.slope;
    let mut integrand = |v2: f64| {
        let opp_bid = s * v2;
        let price = b1.max(opp_bid);
        // two-bidder softmax of (b1, opp_bid) is a logistic in their gap
        let share = sigmoid((b1 - opp_bid) / lambda);
        (v1 - price) * share
    };
    let rule = GaussLegendre::new(nodes);
    let kink = b1 / s;
    let tol = 1e-10;
    let mut total = 0.0;
    if kink > 0.0 {
        total += integrate_adaptive(&mut integrand, 0.0, kink.min(1.0), tol, &rule);
    }
    if kink < 1.0 {
        total += integrate_adaptive(&mut integrand, kink, 1.0, tol, &rule);
    }
    Ok(total)
}

/// Monte Carlo estimate of the absolute ex ante utility difference
/// `|ũ₁ - ũ₁^SM|` with both bidders playing `β(v) = s·v`, routed through the
/// exact and smoothed game engines.
pub fn ex_ante_error_mc(
    opponent: &LinearOpponent,
    lambda: f64,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    let spec = MechanismSpec::new(PaymentRule::FirstPrice, 2, 1)?;
    let smoothing = SmoothingConfig::new(lambda)?;
    let s = opponent.slope;
    let mut rng = substream(seed, Stream::Eval);
    let chunk = 1 << 14;
    let mut remaining = n_samples;
    let mut acc = 0.0;
    while remaining > 0 {
        let take = remaining.min(chunk);
        let values = Array3::from_shape_simple_fn((take, 2, 1), || rng.gen::<f64>());
        let bids = BidderBatch::from_trusted(values.mapv(|v| s * v), BatchRole::Bids);
        let values = BidderBatch::new(values, BatchRole::Valuations)?;
        let exact = utility_exact(&values, &bids, &spec)?;
        let smooth = utility_soft(&values, &bids, &spec, &smoothing)?;
        for b in 0..take {
            acc += exact[[b, 0]] - smooth[[b, 0]];
        }
        remaining -= take;
    }
    Ok((acc / n_samples as f64).abs())
}

/// One row of the oracle comparison report.
#[derive(Debug, Clone, Copy)]
pub struct OracleRow {
    pub v1: f64,
    pub b1: f64,
    pub lambda: f64,
    pub exact_error: f64,
    pub quadrature_error: f64,
    pub bound: f64,
}

/// Closed form vs. quadrature vs. bound over a `(v1, λ)` grid at the
/// equilibrium bid `b1 = s·v1`.
pub fn oracle_grid(v1s: &[f64], lambdas: &[f64], opponent: &LinearOpponent) -> Result<Vec<OracleRow>> {
    let mut rows = Vec::with_capacity(v1s.len() * lambdas.len());
    for &v1 in v1s {
        for &lambda in lambdas {
            let b1 = opponent.slope * v1;
            let exact_error = interim_error_exact(v1, b1, opponent, lambda)?;
            let original = interim_utility_original(v1, b1, opponent)?;
            let smooth = interim_utility_smooth_quadrature(v1, b1, opponent, lambda, 32)?;
            rows.push(OracleRow {
                v1,
                b1,
                lambda,
                exact_error,
                quadrature_error: (original - smooth).abs(),
                bound: ex_ante_bound(opponent, lambda)?,
            });
        }
    }
    Ok(rows)
}
