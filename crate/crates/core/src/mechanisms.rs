//! Exact (non-smoothed) sealed-bid auction mechanics.
//!
//! Items are sold separately: every operation decomposes item-wise, so a
//! multi-item auction is `m` independent single-item auctions sharing one
//! bid profile. The winner of an item is the highest bidder, with ties broken
//! deterministically in favor of the lowest bidder index.

use ndarray::{Array2, Array3};
use rand::Rng;

use crate::error::{Error, Result};

/// Payment rule of a sealed-bid auction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PaymentRule {
    /// Winner pays their own bid.
    FirstPrice,
    /// Winner pays the highest losing bid.
    SecondPrice,
}

impl std::str::FromStr for PaymentRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fpsb" | "first" | "first-price" | "firstprice" => Ok(PaymentRule::FirstPrice),
            "spsb" | "second" | "second-price" | "secondprice" => Ok(PaymentRule::SecondPrice),
            other => Err(Error::config(format!("unknown payment rule `{other}`"))),
        }
    }
}

impl std::fmt::Display for PaymentRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PaymentRule::FirstPrice => write!(f, "fpsb"),
            PaymentRule::SecondPrice => write!(f, "spsb"),
        }
    }
}

/// Maximum number of separately sold items.
pub const MAX_ITEMS: usize = 8;

/// Auction definition: payment rule, bidder count, item count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MechanismSpec {
    pub payment_rule: PaymentRule,
    pub n_bidders: usize,
    pub n_items: usize,
}

impl MechanismSpec {
    pub fn new(payment_rule: PaymentRule, n_bidders: usize, n_items: usize) -> Result<Self> {
        if n_bidders < 2 {
            return Err(Error::config(format!(
                "need at least 2 bidders, got {n_bidders}"
            )));
        }
        if n_items < 1 || n_items > MAX_ITEMS {
            return Err(Error::config(format!(
                "item count must be in 1..={MAX_ITEMS}, got {n_items}"
            )));
        }
        Ok(MechanismSpec {
            payment_rule,
            n_bidders,
            n_items,
        })
    }
}

/// Whether a batch holds private valuations or submitted bids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchRole {
    Valuations,
    Bids,
}

/// Batched profiles of shape `(batch, n_bidders, n_items)` with finite,
/// nonnegative entries.
#[derive(Debug, Clone)]
pub struct BidderBatch {
    data: Array3<f64>,
    role: BatchRole,
}

impl BidderBatch {
    pub fn new(data: Array3<f64>, role: BatchRole) -> Result<Self> {
        if data.iter().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(Error::config(
                "batch entries must be finite and nonnegative".to_string(),
            ));
        }
        Ok(BidderBatch { data, role })
    }

    /// Uniform i.i.d. draws on `[0, v_max]` per entry.
    pub fn sample_uniform(
        batch: usize,
        n_bidders: usize,
        n_items: usize,
        v_max: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let data =
            Array3::from_shape_simple_fn((batch, n_bidders, n_items), || rng.gen::<f64>() * v_max);
        BidderBatch {
            data,
            role: BatchRole::Valuations,
        }
    }

    /// Construct without the entry scan, for tensors whose nonnegativity is
    /// structural (ReLU outputs, clamped action samples).
    pub(crate) fn from_trusted(data: Array3<f64>, role: BatchRole) -> Self {
        debug_assert!(data.iter().all(|&x| x.is_finite() && x >= 0.0));
        BidderBatch { data, role }
    }

    pub(crate) fn data_mut(&mut self) -> &mut Array3<f64> {
        &mut self.data
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn role(&self) -> BatchRole {
        self.role
    }

    pub fn batch_size(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn n_bidders(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn n_items(&self) -> usize {
        self.data.shape()[2]
    }

    pub(crate) fn check_spec(&self, spec: &MechanismSpec) -> Result<()> {
        if self.n_bidders() != spec.n_bidders || self.n_items() != spec.n_items {
            return Err(Error::shape(
                format!("(_, {}, {})", spec.n_bidders, spec.n_items),
                format!("(_, {}, {})", self.n_bidders(), self.n_items()),
            ));
        }
        Ok(())
    }
}

/// Allocations and payments of one auction run, `(batch, n, m)` each.
///
/// Exact mode has binary allocations with exactly one winner per item;
/// smoothed mode has fractional allocations summing to one per item.
#[derive(Debug, Clone)]
pub struct AuctionOutcome {
    pub allocations: Array3<f64>,
    pub payments: Array3<f64>,
}

/// Index of the winning bidder for one item: argmax with lowest-index
/// tie-break.
#[inline]
pub(crate) fn winner_index(bids: &[f64]) -> usize {
    let mut best = 0;
    for (i, &b) in bids.iter().enumerate().skip(1) {
        if b > bids[best] {
            best = i;
        }
    }
    best
}

/// Indices of the highest and second-highest bids (tie-break by lowest
/// index: equal values are ordered by position).
#[inline]
pub(crate) fn top_two_indices(bids: &[f64]) -> (usize, usize) {
    debug_assert!(bids.len() >= 2);
    let (mut first, mut second) = if bids[1] > bids[0] { (1, 0) } else { (0, 1) };
    for (i, &b) in bids.iter().enumerate().skip(2) {
        if b > bids[first] {
            second = first;
            first = i;
        } else if b > bids[second] {
            second = i;
        }
    }
    (first, second)
}

/// Winner-take-all allocation per item.
pub fn allocate_exact(bids: &BidderBatch, spec: &MechanismSpec) -> Result<Array3<f64>> {
    bids.check_spec(spec)?;
    let (batch, n, m) = (bids.batch_size(), bids.n_bidders(), bids.n_items());
    let data = bids.data();
    let mut alloc = Array3::zeros((batch, n, m));
    let mut column = vec![0.0; n];
    for b in 0..batch {
        for k in 0..m {
            for i in 0..n {
                column[i] = data[[b, i, k]];
            }
            alloc[[b, winner_index(&column), k]] = 1.0;
        }
    }
    Ok(alloc)
}

/// Payments under the spec's payment rule given exact binary allocations.
pub fn payments_exact(
    bids: &BidderBatch,
    allocations: &Array3<f64>,
    spec: &MechanismSpec,
) -> Result<Array3<f64>> {
    bids.check_spec(spec)?;
    if allocations.shape() != bids.data().shape() {
        return Err(Error::shape(
            format!("{:?}", bids.data().shape()),
            format!("{:?}", allocations.shape()),
        ));
    }
    let (batch, n, m) = (bids.batch_size(), bids.n_bidders(), bids.n_items());
    let data = bids.data();
    let mut payments = Array3::zeros((batch, n, m));
    let mut column = vec![0.0; n];
    for b in 0..batch {
        for k in 0..m {
            for i in 0..n {
                column[i] = data[[b, i, k]];
            }
            let winner = (0..n)
                .find(|&i| allocations[[b, i, k]] == 1.0)
                .ok_or_else(|| Error::config("allocations have no winner for an item"))?;
            let price = match spec.payment_rule {
                PaymentRule::FirstPrice => column[winner],
                PaymentRule::SecondPrice => {
                    let (first, second) = top_two_indices(&column);
                    if winner == first {
                        column[second]
                    } else {
                        // winner differs from the bid argmax only under an
                        // externally supplied allocation; highest losing bid
                        // is then the overall max
                        column[first]
                    }
                }
            };
            payments[[b, winner, k]] = price;
        }
    }
    Ok(payments)
}

/// Ex post utility `u_i = Σ_items (v_i · x_i − p_i)`, shape `(batch, n)`.
///
/// Fused winner/price computation; equals the composition of
/// [`allocate_exact`] and [`payments_exact`] (tested).
pub fn utility_exact(
    values: &BidderBatch,
    bids: &BidderBatch,
    spec: &MechanismSpec,
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
    let mut util = Array2::zeros((batch, n));
    let mut column = vec![0.0; n];
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
            util[[b, first]] += vd[[b, first, k]] - price;
        }
    }
    Ok(util)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::arr3;
    use proptest::prelude::*;

    fn batch2(bids: &[f64]) -> BidderBatch {
        let n = bids.len();
        let data = Array3::from_shape_vec((1, n, 1), bids.to_vec()).unwrap();
        BidderBatch::new(data, BatchRole::Bids).unwrap()
    }

    fn spec(rule: PaymentRule, n: usize, m: usize) -> MechanismSpec {
        MechanismSpec::new(rule, n, m).unwrap()
    }

    #[test]
    fn spec_rejects_degenerate_sizes() {
        assert!(MechanismSpec::new(PaymentRule::FirstPrice, 1, 1).is_err());
        assert!(MechanismSpec::new(PaymentRule::FirstPrice, 2, 0).is_err());
        assert!(MechanismSpec::new(PaymentRule::FirstPrice, 2, 9).is_err());
        assert!(MechanismSpec::new(PaymentRule::FirstPrice, 2, 8).is_ok());
    }

    #[test]
    fn batch_rejects_nonfinite_and_negative() {
        let bad = Array3::from_elem((1, 2, 1), -0.1);
        assert!(BidderBatch::new(bad, BatchRole::Bids).is_err());
        let nan = Array3::from_elem((1, 2, 1), f64::NAN);
        assert!(BidderBatch::new(nan, BatchRole::Bids).is_err());
    }

    #[test]
    fn allocate_strict_argmax() {
        let s = spec(PaymentRule::FirstPrice, 2, 1);
        let a = allocate_exact(&batch2(&[0.3, 0.5]), &s).unwrap();
        assert_eq!(a, arr3(&[[[0.0], [1.0]]]));
    }

    #[test]
    fn allocate_tie_goes_to_lowest_index() {
        let s = spec(PaymentRule::FirstPrice, 2, 1);
        let a = allocate_exact(&batch2(&[0.4, 0.4]), &s).unwrap();
        assert_eq!(a, arr3(&[[[1.0], [0.0]]]));
    }

    #[test]
    fn allocate_three_bidders() {
        let s = spec(PaymentRule::FirstPrice, 3, 1);
        let a = allocate_exact(&batch2(&[0.2, 0.9, 0.5]), &s).unwrap();
        assert_eq!(a, arr3(&[[[0.0], [1.0], [0.0]]]));
    }

    #[test]
    fn allocate_shape_mismatch_is_config_error() {
        let s = spec(PaymentRule::FirstPrice, 3, 1);
        assert!(allocate_exact(&batch2(&[0.1, 0.2]), &s).is_err());
    }

    #[test]
    fn fpsb_winner_pays_own_bid() {
        let s = spec(PaymentRule::FirstPrice, 2, 1);
        let bids = batch2(&[0.3, 0.5]);
        let alloc = allocate_exact(&bids, &s).unwrap();
        let p = payments_exact(&bids, &alloc, &s).unwrap();
        assert_eq!(p, arr3(&[[[0.0], [0.5]]]));
    }

    #[test]
    fn spsb_winner_pays_second_highest() {
        let s = spec(PaymentRule::SecondPrice, 2, 1);
        let bids = batch2(&[0.3, 0.5]);
        let alloc = allocate_exact(&bids, &s).unwrap();
        let p = payments_exact(&bids, &alloc, &s).unwrap();
        assert_eq!(p, arr3(&[[[0.0], [0.3]]]));
    }

    #[test]
    fn spsb_three_bidders() {
        let s = spec(PaymentRule::SecondPrice, 3, 1);
        let bids = batch2(&[0.7, 0.2, 0.5]);
        let alloc = allocate_exact(&bids, &s).unwrap();
        let p = payments_exact(&bids, &alloc, &s).unwrap();
        assert_eq!(p, arr3(&[[[0.5], [0.0], [0.0]]]));
    }

    #[test]
    fn utility_fpsb_single_item() {
        let s = spec(PaymentRule::FirstPrice, 2, 1);
        let v = batch2(&[1.0, 0.8]);
        let b = batch2(&[0.5, 0.4]);
        let u = utility_exact(&v, &b, &s).unwrap();
        assert_abs_diff_eq!(u[[0, 0]], 0.5);
        assert_abs_diff_eq!(u[[0, 1]], 0.0);
    }

    #[test]
    fn utility_spsb_truthful_tie_free() {
        let s = spec(PaymentRule::SecondPrice, 2, 1);
        let v = batch2(&[1.0, 0.8]);
        let b = batch2(&[1.0, 0.8]);
        let u = utility_exact(&v, &b, &s).unwrap();
        assert_abs_diff_eq!(u[[0, 0]], 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(u[[0, 1]], 0.0);
    }

    #[test]
    fn utility_two_items_decomposes() {
        let s = spec(PaymentRule::FirstPrice, 2, 2);
        let v = BidderBatch::new(
            arr3(&[[[1.0, 1.0], [0.0, 0.0]]]).to_owned(),
            BatchRole::Valuations,
        )
        .unwrap();
        let b = BidderBatch::new(
            arr3(&[[[0.4, 0.6], [0.0, 0.0]]]).to_owned(),
            BatchRole::Bids,
        )
        .unwrap();
        let u = utility_exact(&v, &b, &s).unwrap();
        assert_abs_diff_eq!(u[[0, 0]], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(u[[0, 1]], 0.0);
    }

    fn bid_profiles(n: usize, m: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0..1.0f64, n * m)
    }

    proptest! {
        // one winner per item for generic (tie-free w.p. 1) profiles
        #[test]
        fn one_winner_per_item(raw in bid_profiles(4, 2)) {
            let s = spec(PaymentRule::FirstPrice, 4, 2);
            let data = Array3::from_shape_vec((1, 4, 2), raw).unwrap();
            let bids = BidderBatch::new(data, BatchRole::Bids).unwrap();
            let alloc = allocate_exact(&bids, &s).unwrap();
            for k in 0..2 {
                let total: f64 = (0..4).map(|i| alloc[[0, i, k]]).sum();
                prop_assert_eq!(total, 1.0);
            }
        }

        // FPSB: winner's payment equals winner's bid, losers pay zero
        #[test]
        fn fpsb_payment_identity(raw in bid_profiles(3, 1)) {
            let s = spec(PaymentRule::FirstPrice, 3, 1);
            let data = Array3::from_shape_vec((1, 3, 1), raw).unwrap();
            let bids = BidderBatch::new(data.clone(), BatchRole::Bids).unwrap();
            let alloc = allocate_exact(&bids, &s).unwrap();
            let pay = payments_exact(&bids, &alloc, &s).unwrap();
            for i in 0..3 {
                if alloc[[0, i, 0]] == 1.0 {
                    prop_assert_eq!(pay[[0, i, 0]], data[[0, i, 0]]);
                } else {
                    prop_assert_eq!(pay[[0, i, 0]], 0.0);
                }
            }
        }

        // SPSB: winner's payment equals the max of losing bids
        #[test]
        fn spsb_payment_identity(raw in bid_profiles(3, 1)) {
            let s = spec(PaymentRule::SecondPrice, 3, 1);
            let data = Array3::from_shape_vec((1, 3, 1), raw).unwrap();
            let bids = BidderBatch::new(data.clone(), BatchRole::Bids).unwrap();
            let alloc = allocate_exact(&bids, &s).unwrap();
            let pay = payments_exact(&bids, &alloc, &s).unwrap();
            let winner = (0..3).find(|&i| alloc[[0, i, 0]] == 1.0).unwrap();
            let losing_max = (0..3)
                .filter(|&i| i != winner)
                .map(|i| data[[0, i, 0]])
                .fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(pay[[0, winner, 0]], losing_max);
        }

        // multi-item utility equals the sum of per-item single-item utilities
        #[test]
        fn multi_item_utility_is_itemwise_sum(
            vals in bid_profiles(3, 2),
            bids_raw in bid_profiles(3, 2),
        ) {
            let s2 = spec(PaymentRule::FirstPrice, 3, 2);
            let s1 = spec(PaymentRule::FirstPrice, 3, 1);
            let v = BidderBatch::new(
                Array3::from_shape_vec((1, 3, 2), vals).unwrap(),
                BatchRole::Valuations,
            ).unwrap();
            let b = BidderBatch::new(
                Array3::from_shape_vec((1, 3, 2), bids_raw).unwrap(),
                BatchRole::Bids,
            ).unwrap();
            let joint = utility_exact(&v, &b, &s2).unwrap();
            let mut per_item = Array2::<f64>::zeros((1, 3));
            for k in 0..2 {
                let vk = BidderBatch::new(
                    v.data().slice(ndarray::s![.., .., k..k + 1]).to_owned(),
                    BatchRole::Valuations,
                ).unwrap();
                let bk = BidderBatch::new(
                    b.data().slice(ndarray::s![.., .., k..k + 1]).to_owned(),
                    BatchRole::Bids,
                ).unwrap();
                per_item = per_item + utility_exact(&vk, &bk, &s1).unwrap();
            }
            for i in 0..3 {
                prop_assert!((joint[[0, i]] - per_item[[0, i]]).abs() < 1e-12);
            }
        }

        // losing a single-item auction gives utility exactly zero
        #[test]
        fn losers_get_exactly_zero(raw in bid_profiles(3, 1), vals in bid_profiles(3, 1)) {
            let s = spec(PaymentRule::FirstPrice, 3, 1);
            let b = BidderBatch::new(
                Array3::from_shape_vec((1, 3, 1), raw).unwrap(),
                BatchRole::Bids,
            ).unwrap();
            let v = BidderBatch::new(
                Array3::from_shape_vec((1, 3, 1), vals).unwrap(),
                BatchRole::Valuations,
            ).unwrap();
            let alloc = allocate_exact(&b, &s).unwrap();
            let u = utility_exact(&v, &b, &s).unwrap();
            for i in 0..3 {
                if alloc[[0, i, 0]] == 0.0 {
                    prop_assert_eq!(u[[0, i]], 0.0);
                }
            }
        }
    }
}
