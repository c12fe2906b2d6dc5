//! The smoothed surrogate market.
//!
//! Allocations are relaxed from the item-wise argmax to a temperature-scaled
//! softmax, and the per-item price is the *sum* of the exact payments (only
//! the winner pays, so the sum equals the winner's payment). The smoothed ex
//! post utility
//!
//! `u_i = Σ_items (v_i − p) · x_i`
//!
//! is continuous in the bids, and its gradient with respect to a bidder's own
//! bid has a closed form used by the first-order estimator.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::mechanisms::{top_two_indices, BidderBatch, MechanismSpec, PaymentRule};

/// Lower bound on the temperature. Below this the allocation sharpness makes
/// `exp((b - b_max)/λ)` underflow to an all-or-nothing allocation and the
/// closed-form gradient magnitude `x(1-x)/λ` exceeds what f64 resolves.
pub const MIN_TEMPERATURE: f64 = 1e-6;

/// Softmax temperature of the surrogate game.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothingConfig {
    pub temperature: f64,
}

impl SmoothingConfig {
    pub fn new(temperature: f64) -> Result<Self> {
        if !temperature.is_finite() || temperature < MIN_TEMPERATURE {
            return Err(Error::config(format!(
                "temperature must be finite and >= {MIN_TEMPERATURE}, got {temperature}"
            )));
        }
        Ok(SmoothingConfig { temperature })
    }
}

impl Default for SmoothingConfig {
    fn default() -> Self {
        SmoothingConfig { temperature: 0.01 }
    }
}

/// Max-shifted softmax of `scores / lambda` written into `out`.
#[inline]
fn softmax_column(scores: &[f64], lambda: f64, out: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut denom = 0.0;
    for (o, &s) in out.iter_mut().zip(scores) {
        let e = ((s - max) / lambda).exp();
        *o = e;
        denom += e;
    }
    for o in out.iter_mut() {
        *o /= denom;
    }
}

/// Fractional softmax allocation per item, shape `(batch, n, m)`.
pub fn allocate_soft(bids: &BidderBatch, smoothing: &SmoothingConfig) -> Result<Array3<f64>> {
    let (batch, n, m) = (bids.batch_size(), bids.n_bidders(), bids.n_items());
    let data = bids.data();
    let lambda = smoothing.temperature;
    let mut alloc = Array3::zeros((batch, n, m));
    let mut column = vec![0.0; n];
    let mut soft = vec![0.0; n];
    for b in 0..batch {
        for k in 0..m {
            for i in 0..n {
                column[i] = data[[b, i, k]];
            }
            softmax_column(&column, lambda, &mut soft);
            for i in 0..n {
                alloc[[b, i, k]] = soft[i];
            }
        }
    }
    Ok(alloc)
}

/// Per-item smoothed price: the sum over bidders of the exact payments.
///
/// Only the winner pays, so this is the highest bid under the first-price
/// rule and the second-highest bid under the second-price rule. Shape
/// `(batch, m)`.
pub fn price_soft(bids: &BidderBatch, spec: &MechanismSpec) -> Result<Array2<f64>> {
    bids.check_spec(spec)?;
    let (batch, n, m) = (bids.batch_size(), bids.n_bidders(), bids.n_items());
    let data = bids.data();
    let mut prices = Array2::zeros((batch, m));
    let mut column = vec![0.0; n];
    for b in 0..batch {
        for k in 0..m {
            for i in 0..n {
                column[i] = data[[b, i, k]];
            }
            let (first, second) = top_two_indices(&column);
            prices[[b, k]] = match spec.payment_rule {
                PaymentRule::FirstPrice => column[first],
                PaymentRule::SecondPrice => column[second],
            };
        }
    }
    Ok(prices)
}

/// Smoothed ex post utility `u_i = Σ_items (v_i − p) · x_i`, shape `(batch, n)`.
pub fn utility_soft(
    values: &BidderBatch,
    bids: &BidderBatch,
    spec: &MechanismSpec,
    smoothing: &SmoothingConfig,
) -> Result<Array2<f64>> {
    bids.check_spec(spec)?;
    if values.data().shape() != bids.data().shape() {
        return Err(Error::shape(
            format!("{:?}", bids.data().shape()),
            format!("{:?}", values.data().shape()),
        ));
    }
    let (batch, n, m) = (bids.batch_size(), bids.n_bidders(), bids.n_items());
    let bd = bids.data();
    let vd = values.data();
    let lambda = smoothing.temperature;
    let mut util = Array2::zeros((batch, n));
    let mut column = vec![0.0; n];
    let mut soft = vec![0.0; n];
    for b in 0..batch {
        for k in 0..m {
            for i in 0..n {
                column[i] = bd[[b, i, k]];
            }
            let (first, second) = top_two_indices(&column);
            let price = match spec.payment_rule {
                PaymentRule::FirstPrice => column[first],
                PaymentRule::SecondPrice => column[second],
            };
            softmax_column(&column, lambda, &mut soft);
            for i in 0..n {
                util[[b, i]] += (vd[[b, i, k]] - price) * soft[i];
            }
        }
    }
    Ok(util)
}

/// Closed-form `∂u_i/∂b_{i,k}` of the smoothed utility, shape `(batch, n, m)`.
///
/// Per item, with `x_i` the softmax allocation and `p` the summed price:
///
/// `∂u_i/∂b_i = (v_i − p) · x_i (1 − x_i) / λ − (∂p/∂b_i) · x_i`
///
/// where `∂p/∂b_i` is 1 exactly when bidder `i` holds the item's price-setting
/// bid (the max under the first-price rule, the second-highest under the
/// second-price rule) and 0 otherwise. At kinks the lowest-index subgradient
/// is taken, consistent with the exact mechanism's tie-break.
pub fn grad_utility_soft_wrt_bid(
    values: &BidderBatch,
    bids: &BidderBatch,
    spec: &MechanismSpec,
    smoothing: &SmoothingConfig,
) -> Result<Array3<f64>> {
    bids.check_spec(spec)?;
    if values.data().shape() != bids.data().shape() {
        return Err(Error::shape(
            format!("{:?}", bids.data().shape()),
            format!("{:?}", values.data().shape()),
        ));
    }
    let (batch, n, m) = (bids.batch_size(), bids.n_bidders(), bids.n_items());
    let bd = bids.data();
    let vd = values.data();
    let lambda = smoothing.temperature;
    let mut grad = Array3::zeros((batch, n, m));
    let mut column = vec![0.0; n];
    let mut soft = vec![0.0; n];
    for b in 0..batch {
        for k in 0..m {
            for i in 0..n {
                column[i] = bd[[b, i, k]];
            }
            let (first, second) = top_two_indices(&column);
            let (price, price_setter) = match spec.payment_rule {
                PaymentRule::FirstPrice => (column[first], first),
                PaymentRule::SecondPrice => (column[second], second),
            };
            softmax_column(&column, lambda, &mut soft);
            for i in 0..n {
                let x = soft[i];
                let mut g = (vd[[b, i, k]] - price) * x * (1.0 - x) / lambda;
                if i == price_setter {
                    g -= x;
                }
                grad[[b, i, k]] = g;
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::{payments_exact, utility_exact, BatchRole};
    use approx::assert_abs_diff_eq;
    use ndarray::Array3;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn batch(bids: &[f64]) -> BidderBatch {
        let n = bids.len();
        BidderBatch::new(
            Array3::from_shape_vec((1, n, 1), bids.to_vec()).unwrap(),
            BatchRole::Bids,
        )
        .unwrap()
    }

    fn fpsb(n: usize) -> MechanismSpec {
        MechanismSpec::new(PaymentRule::FirstPrice, n, 1).unwrap()
    }

    fn spsb(n: usize) -> MechanismSpec {
        MechanismSpec::new(PaymentRule::SecondPrice, n, 1).unwrap()
    }

    fn lam(t: f64) -> SmoothingConfig {
        SmoothingConfig::new(t).unwrap()
    }

    #[test]
    fn temperature_floor_rejected() {
        assert!(SmoothingConfig::new(0.0).is_err());
        assert!(SmoothingConfig::new(-0.1).is_err());
        assert!(SmoothingConfig::new(1e-7).is_err());
        assert!(SmoothingConfig::new(1e-6).is_ok());
    }

    #[test]
    fn symmetric_bids_split_evenly() {
        let a = allocate_soft(&batch(&[0.5, 0.5]), &lam(0.01)).unwrap();
        assert_abs_diff_eq!(a[[0, 0, 0]], 0.5);
        assert_abs_diff_eq!(a[[0, 1, 0]], 0.5);
        let a3 = allocate_soft(&batch(&[0.7, 0.7, 0.7]), &lam(0.3)).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(a3[[0, i, 0]], 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn softmax_value_matches_direct_formula() {
        // (0.3, 0.5) at lambda 0.01: x_1 = 1 / (1 + e^20)
        let a = allocate_soft(&batch(&[0.3, 0.5]), &lam(0.01)).unwrap();
        let expected = 1.0 / (1.0 + 20.0f64.exp());
        assert_abs_diff_eq!(a[[0, 0, 0]], expected, epsilon = 1e-22);
        assert_abs_diff_eq!(a[[0, 0, 0]], 2.061153622438558e-9, epsilon = 1e-17);
    }

    #[test]
    fn price_soft_matches_summed_payments() {
        // oracle: sum the exact per-bidder payments
        let cases: &[(&[f64], MechanismSpec, f64)] = &[
            (&[0.3, 0.5], fpsb(2), 0.5),
            (&[0.3, 0.5], spsb(2), 0.3),
            (&[0.7, 0.2, 0.5], fpsb(3), 0.7),
        ];
        for (bids_raw, spec, expected) in cases {
            let bids = batch(bids_raw);
            let p = price_soft(&bids, spec).unwrap();
            assert_abs_diff_eq!(p[[0, 0]], *expected);
            let alloc = crate::mechanisms::allocate_exact(&bids, spec).unwrap();
            let pay = payments_exact(&bids, &alloc, spec).unwrap();
            let summed: f64 = (0..spec.n_bidders).map(|i| pay[[0, i, 0]]).sum();
            assert_abs_diff_eq!(p[[0, 0]], summed);
        }
    }

    #[test]
    fn utility_soft_symmetric_tie() {
        let v = batch(&[1.0, 0.8]);
        let b = batch(&[0.5, 0.5]);
        let u = utility_soft(&v, &b, &fpsb(2), &lam(0.01)).unwrap();
        assert_abs_diff_eq!(u[[0, 0]], 0.25);
    }

    #[test]
    fn utility_soft_far_from_tie_matches_exact() {
        let v = batch(&[1.0, 0.8]);
        let b = batch(&[0.9, 0.1]);
        let spec = fpsb(2);
        let soft = utility_soft(&v, &b, &spec, &lam(0.01)).unwrap();
        let exact = utility_exact(&v, &b, &spec).unwrap();
        assert_abs_diff_eq!(soft[[0, 0]], exact[[0, 0]], epsilon = 1e-8);
        assert_abs_diff_eq!(soft[[0, 0]], 0.1, epsilon = 1e-8);
    }

    #[test]
    fn ex_post_convergence_is_monotone_in_lambda() {
        let v = batch(&[1.0, 0.8]);
        let b = batch(&[0.62, 0.55]);
        let spec = fpsb(2);
        let exact = utility_exact(&v, &b, &spec).unwrap();
        let mut errs = Vec::new();
        for t in [0.1, 0.01, 0.001] {
            let soft = utility_soft(&v, &b, &spec, &lam(t)).unwrap();
            let err = (0..2)
                .map(|i| (soft[[0, i]] - exact[[0, i]]).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        assert!(errs[2] < errs[1] && errs[1] < errs[0], "errs={errs:?}");
    }

    #[test]
    fn tie_gradient_allocation_term() {
        // x(1-x)/lambda at x = 1/2 is 0.25/lambda; with v=1, b=(0.5,0.5), FPSB:
        // bidder 0 also sets the price (lowest-index subgradient), so
        // g_0 = (1-0.5)*0.25/l - 0.5 while bidder 1 keeps the pure allocation term
        let l = 0.01;
        let g = grad_utility_soft_wrt_bid(&batch(&[1.0, 0.8]), &batch(&[0.5, 0.5]), &fpsb(2), &lam(l))
            .unwrap();
        let alloc_term = 0.5 * 0.25 / l;
        assert_abs_diff_eq!(g[[0, 0, 0]], alloc_term - 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(g[[0, 1, 0]], (0.8 - 0.5) * 0.25 / l, epsilon = 1e-12);
    }

    #[test]
    fn losing_bid_still_gets_positive_feedback() {
        // far-losing bidder: gradient ~ x (v - p) / lambda > 0 when v > p
        let l = 0.01;
        let v = batch(&[0.9, 0.2]);
        let b = batch(&[0.1, 0.5]);
        let g = grad_utility_soft_wrt_bid(&v, &b, &fpsb(2), &lam(l)).unwrap();
        let x = 1.0 / (1.0 + (0.4 / l).exp());
        assert!(g[[0, 0, 0]] > 0.0);
        assert_abs_diff_eq!(
            g[[0, 0, 0]],
            x * (1.0 - x) * (0.9 - 0.5) / l,
            epsilon = 1e-12
        );
    }

    /// Central finite differences of `utility_soft` in each own-bid coordinate.
    fn fd_grad(
        values: &BidderBatch,
        bids: &BidderBatch,
        spec: &MechanismSpec,
        sm: &SmoothingConfig,
        step: f64,
    ) -> Array3<f64> {
        let (batch, n, m) = (
            bids.batch_size(),
            bids.n_bidders(),
            bids.n_items(),
        );
        let mut out = Array3::zeros((batch, n, m));
        for b in 0..batch {
            for i in 0..n {
                for k in 0..m {
                    let mut hi = bids.data().clone();
                    let mut lo = bids.data().clone();
                    hi[[b, i, k]] += step;
                    lo[[b, i, k]] -= step;
                    let hi_b = BidderBatch::new(hi, BatchRole::Bids).unwrap();
                    let lo_b = BidderBatch::new(lo, BatchRole::Bids).unwrap();
                    let u_hi = utility_soft(values, &hi_b, spec, sm).unwrap();
                    let u_lo = utility_soft(values, &lo_b, spec, sm).unwrap();
                    out[[b, i, k]] = (u_hi[[b, i]] - u_lo[[b, i]]) / (2.0 * step);
                }
            }
        }
        out
    }

    /// Random profiles with all per-item pairwise bid gaps above `gap` and
    /// all bids at least `step` inside the interval.
    fn random_nondegenerate(
        rng: &mut impl Rng,
        n: usize,
        m: usize,
        gap: f64,
    ) -> (BidderBatch, BidderBatch) {
        loop {
            let v = Array3::from_shape_simple_fn((1, n, m), || rng.gen::<f64>());
            let b = Array3::from_shape_simple_fn((1, n, m), || 0.01 + 0.98 * rng.gen::<f64>());
            let mut ok = true;
            for k in 0..m {
                for i in 0..n {
                    for j in (i + 1)..n {
                        if (b[[0, i, k]] - b[[0, j, k]]).abs() <= gap {
                            ok = false;
                        }
                    }
                }
            }
            if ok {
                return (
                    BidderBatch::new(v, BatchRole::Valuations).unwrap(),
                    BidderBatch::new(b, BatchRole::Bids).unwrap(),
                );
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        let step = 1e-6;
        let mut checked = 0usize;
        for case in 0..1000 {
            let (rule, n, m) = match case % 4 {
                0 => (PaymentRule::FirstPrice, 2, 1),
                1 => (PaymentRule::SecondPrice, 2, 1),
                2 => (PaymentRule::FirstPrice, 3, 2),
                _ => (PaymentRule::SecondPrice, 4, 1),
            };
            let spec = MechanismSpec::new(rule, n, m).unwrap();
            let sm = lam(if case % 2 == 0 { 0.1 } else { 0.02 });
            let (v, b) = random_nondegenerate(&mut rng, n, m, 1e-3);
            let analytic = grad_utility_soft_wrt_bid(&v, &b, &spec, &sm).unwrap();
            let numeric = fd_grad(&v, &b, &spec, &sm, step);
            for i in 0..n {
                for k in 0..m {
                    let a = analytic[[0, i, k]];
                    let f = numeric[[0, i, k]];
                    let mag = a.abs().max(f.abs());
                    if mag >= 1e-4 {
                        let rel = (a - f).abs() / mag;
                        assert!(
                            rel <= 1e-6,
                            "case {case}: rel err {rel:.3e} (analytic {a}, fd {f})"
                        );
                        checked += 1;
                    } else {
                        // tiny gradients: absolute agreement at fd noise scale
                        assert!((a - f).abs() <= 1e-9);
                    }
                }
            }
        }
        assert!(checked >= 1000, "only {checked} non-tiny coordinates checked");
    }

    proptest! {
        // softmax normalization: allocations sum to one per item
        #[test]
        fn allocations_normalize(
            raw in prop::collection::vec(0.0..1.0f64, 4 * 2),
            t in prop_oneof![Just(0.001), Just(0.01), Just(0.1), Just(1.0)],
        ) {
            let b = BidderBatch::new(
                Array3::from_shape_vec((1, 4, 2), raw).unwrap(),
                BatchRole::Bids,
            ).unwrap();
            let a = allocate_soft(&b, &lam(t)).unwrap();
            for k in 0..2 {
                let total: f64 = (0..4).map(|i| a[[0, i, k]]).sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
                let col: Vec<f64> = (0..4).map(|i| b.data()[[0, i, k]]).collect();
                let spread = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                    - col.iter().cloned().fold(f64::INFINITY, f64::min);
                for i in 0..4 {
                    prop_assert!(a[[0, i, k]] >= 0.0 && a[[0, i, k]] <= 1.0);
                    // the strict interior stops being representable in f64 once
                    // exp(-spread/t) drops below the 2^-53 rounding scale
                    if spread / t < 30.0 {
                        prop_assert!(a[[0, i, k]] > 0.0 && a[[0, i, k]] < 1.0);
                    }
                }
            }
        }

        // shift invariance: adding a constant to every bid leaves allocations unchanged
        #[test]
        fn shift_invariance(
            raw in prop::collection::vec(0.0..1.0f64, 3),
            c in 0.0..0.5f64,
        ) {
            let b = BidderBatch::new(
                Array3::from_shape_vec((1, 3, 1), raw.clone()).unwrap(),
                BatchRole::Bids,
            ).unwrap();
            let shifted = BidderBatch::new(
                Array3::from_shape_vec((1, 3, 1), raw.iter().map(|x| x + c).collect()).unwrap(),
                BatchRole::Bids,
            ).unwrap();
            let a = allocate_soft(&b, &lam(0.05)).unwrap();
            let a_shift = allocate_soft(&shifted, &lam(0.05)).unwrap();
            for i in 0..3 {
                prop_assert!((a[[0, i, 0]] - a_shift[[0, i, 0]]).abs() < 1e-12);
            }
        }

        // monotone sharpening: the strict max's allocation grows as lambda shrinks
        #[test]
        fn winner_share_sharpens(raw in prop::collection::vec(0.0..1.0f64, 3)) {
            let mut sorted = raw.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            prop_assume!(sorted[2] - sorted[1] > 1e-3);
            let b = BidderBatch::new(
                Array3::from_shape_vec((1, 3, 1), raw.clone()).unwrap(),
                BatchRole::Bids,
            ).unwrap();
            let winner = (0..3).max_by(|&i, &j| raw[i].partial_cmp(&raw[j]).unwrap()).unwrap();
            let shares: Vec<f64> = [0.1, 0.01, 0.001]
                .iter()
                .map(|&t| allocate_soft(&b, &lam(t)).unwrap()[[0, winner, 0]])
                .collect();
            prop_assert!(shares[0] < shares[1]);
            // strictness saturates once the share rounds to 1.0 in f64
            prop_assert!(shares[1] < shares[2] || shares[2] >= 1.0 - 1e-15);
        }
    }
}
