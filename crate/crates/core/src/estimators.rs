//! Gradient estimators for the self-play utility objective.
//!
//! Three routes to `∇_θ` of the learner's expected utility:
//!
//! * `SM` — first-order: backpropagate the closed-form smoothed ex post
//!   utility gradient through the policy (surrogate game).
//! * `ES` — zeroth-order evolution strategies: randomized finite differences
//!   over parameter-space perturbations, evaluated in the original game.
//! * `REINFORCE` — zeroth-order score function over Gaussian mixed
//!   strategies in action space, evaluated in the original game.
//!
//! All estimators follow the simultaneous-ascent self-play convention: the
//! learner occupies bidder slot 0, opponents play the same shared policy, and
//! only the learner's computational path is differentiated.

use ndarray::{s, Array1, Array2, Array3};
use rand_chacha::rand_core::RngCore;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::mechanisms::{utility_exact, BatchRole, BidderBatch, MechanismSpec};
use crate::policy::{PolicyHead, PolicyNet};
use crate::rng::{keyed, Stream};
use crate::scalar::{sigmoid, softplus};
use crate::smoothing::{grad_utility_soft_wrt_bid, SmoothingConfig};

/// Bidder slot whose parameters are being updated.
pub const LEARNER: usize = 0;

/// Which gradient estimator produced an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Sm,
    Es,
    Reinforce,
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sm" => Ok(EstimatorKind::Sm),
            "es" | "npga" => Ok(EstimatorKind::Es),
            "reinforce" => Ok(EstimatorKind::Reinforce),
            other => Err(Error::config(format!("unknown estimator `{other}`"))),
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EstimatorKind::Sm => write!(f, "sm"),
            EstimatorKind::Es => write!(f, "es"),
            EstimatorKind::Reinforce => write!(f, "reinforce"),
        }
    }
}

/// Estimator selection and its kind-specific knobs.
#[derive(Debug, Clone, Copy)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    /// Softmax temperature of the surrogate game (SM).
    pub smoothing: SmoothingConfig,
    /// Population size of the parameter perturbation (ES).
    pub population_size: usize,
    /// Base perturbation deviation, scaled by `1/sqrt(d)` for a `d`-parameter
    /// policy (ES).
    pub sigma: f64,
    /// Mirror the perturbations in antithetic pairs (ES).
    pub antithetic: bool,
    /// Deviation the Gaussian head is pretrained toward (REINFORCE).
    pub init_sigma: f64,
}

impl EstimatorConfig {
    pub fn new(kind: EstimatorKind) -> Self {
        EstimatorConfig {
            kind,
            smoothing: SmoothingConfig::default(),
            population_size: 64,
            sigma: 1.0,
            antithetic: false,
            init_sigma: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == EstimatorKind::Es {
            if self.population_size < 2 {
                return Err(Error::config(format!(
                    "population size must be >= 2, got {}",
                    self.population_size
                )));
            }
            if self.antithetic && self.population_size % 2 != 0 {
                return Err(Error::config(
                    "antithetic pairing needs an even population size".to_string(),
                ));
            }
            if !(self.sigma > 0.0) {
                return Err(Error::config(format!(
                    "perturbation deviation must be positive, got {}",
                    self.sigma
                )));
            }
        }
        if self.kind == EstimatorKind::Reinforce && !(self.init_sigma > 0.0) {
            return Err(Error::config(format!(
                "initial action deviation must be positive, got {}",
                self.init_sigma
            )));
        }
        Ok(())
    }

    /// The policy head this estimator drives.
    pub fn policy_head(&self) -> PolicyHead {
        match self.kind {
            EstimatorKind::Reinforce => PolicyHead::Gaussian,
            _ => PolicyHead::Deterministic,
        }
    }
}

/// A parameter-gradient sample with estimator provenance.
#[derive(Debug, Clone)]
pub struct GradientEstimate {
    /// Gradient aligned with the policy's flat parameter vector.
    pub grad: Vec<f64>,
    pub estimator: EstimatorKind,
    /// Game evaluations consumed by the estimate.
    pub sample_size: usize,
    /// Per-parameter variance of the individual terms being averaged
    /// (Monte Carlo samples for SM, population members for ES). The standard
    /// error of `grad` is `sqrt(variance / terms)`.
    pub per_parameter_variance: Option<Vec<f64>>,
}

impl GradientEstimate {
    pub fn check_finite(&self) -> Result<()> {
        if self.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::config("gradient estimate has non-finite entries".to_string()));
        }
        Ok(())
    }
}

fn check_net_for(net: &PolicyNet, spec: &MechanismSpec, head: PolicyHead) -> Result<()> {
    if net.head() != head {
        return Err(Error::config(format!(
            "estimator needs a {:?} policy head, net has {:?}",
            head,
            net.head()
        )));
    }
    if net.n_items() != spec.n_items {
        return Err(Error::shape(
            format!("policy over {} items", spec.n_items),
            format!("policy over {} items", net.n_items()),
        ));
    }
    Ok(())
}

/// Learner valuations as a `(batch, m)` matrix.
fn learner_values(values: &BidderBatch) -> Array2<f64> {
    values.data().slice(s![.., LEARNER, ..]).to_owned()
}

/// Opponent valuations flattened to `(batch·(n-1), m)`.
fn opponent_values(values: &BidderBatch) -> Array2<f64> {
    let (batch, n, m) = (
        values.batch_size(),
        values.n_bidders(),
        values.n_items(),
    );
    let mut flat = Array2::zeros((batch * (n - 1), m));
    for b in 0..batch {
        for i in 1..n {
            for k in 0..m {
                flat[[b * (n - 1) + (i - 1), k]] = values.data()[[b, i, k]];
            }
        }
    }
    flat
}

/// Scatter learner and opponent bids back into a `(batch, n, m)` profile.
fn assemble_bids(
    learner_bids: &Array2<f64>,
    opponent_bids: &Array2<f64>,
    batch: usize,
    n: usize,
    m: usize,
) -> Array3<f64> {
    let mut bids = Array3::zeros((batch, n, m));
    for b in 0..batch {
        for k in 0..m {
            bids[[b, LEARNER, k]] = learner_bids[[b, k]];
        }
        for i in 1..n {
            for k in 0..m {
                bids[[b, i, k]] = opponent_bids[[b * (n - 1) + (i - 1), k]];
            }
        }
    }
    bids
}

/// First-order estimate through the smoothed game.
///
/// The batch mean of the learner's smoothed ex post utility gradient,
/// chain-ruled through the policy. Opponent bids come from the same shared
/// policy but are constants with respect to the update.
pub fn estimate_sm(
    net: &PolicyNet,
    values: &BidderBatch,
    spec: &MechanismSpec,
    smoothing: &SmoothingConfig,
) -> Result<GradientEstimate> {
    estimate_sm_impl(net, values, spec, smoothing, false)
}

/// [`estimate_sm`] plus the per-sample gradient variance (one backward pass
/// per sample; used for standard-error bands).
pub fn estimate_sm_with_variance(
    net: &PolicyNet,
    values: &BidderBatch,
    spec: &MechanismSpec,
    smoothing: &SmoothingConfig,
) -> Result<GradientEstimate> {
    estimate_sm_impl(net, values, spec, smoothing, true)
}

fn estimate_sm_impl(
    net: &PolicyNet,
    values: &BidderBatch,
    spec: &MechanismSpec,
    smoothing: &SmoothingConfig,
    with_variance: bool,
) -> Result<GradientEstimate> {
    values.check_spec(spec)?;
    check_net_for(net, spec, PolicyHead::Deterministic)?;
    let (batch, n, m) = (
        values.batch_size(),
        values.n_bidders(),
        values.n_items(),
    );

    let (learner_bids, cache) = net.forward(learner_values(values).view())?;
    let opponent_bids = net.forward_nocache(opponent_values(values).view())?;
    let bids = BidderBatch::from_trusted(
        assemble_bids(&learner_bids, &opponent_bids, batch, n, m),
        BatchRole::Bids,
    );

    let bid_grads = grad_utility_soft_wrt_bid(values, &bids, spec, smoothing)?;
    let upstream = bid_grads.slice(s![.., LEARNER, ..]).to_owned();

    let mut grad = net.backward(&cache, upstream.view())?;
    let inv = 1.0 / batch as f64;
    for g in grad.iter_mut() {
        *g *= inv;
    }

    let per_parameter_variance = if with_variance {
        let d = net.param_count();
        let mut mean = vec![0.0; d];
        let mut m2 = vec![0.0; d];
        for r in 0..batch {
            let gr = net.backward_rows(&cache, upstream.view(), r, r + 1);
            let count = (r + 1) as f64;
            for p in 0..d {
                let delta = gr[p] - mean[p];
                mean[p] += delta / count;
                m2[p] += delta * (gr[p] - mean[p]);
            }
        }
        let denom = (batch.max(2) - 1) as f64;
        Some(m2.iter().map(|v| v / denom).collect())
    } else {
        None
    };

    let est = GradientEstimate {
        grad,
        estimator: EstimatorKind::Sm,
        sample_size: batch,
        per_parameter_variance,
    };
    est.check_finite()?;
    Ok(est)
}

/// Randomized-finite-difference gradient of a black-box objective:
/// the population mean of `(ε/σ) · f(θ + σ·ε)` with `ε ~ N(0, I)`.
///
/// Returns the estimate and the per-parameter variance of the averaged terms
/// (perturbation terms, or mirrored-pair terms when `antithetic`). Each
/// population member draws from its own keyed stream, so the result does not
/// depend on evaluation order.
pub fn es_gradient(
    params: &[f64],
    mut objective: impl FnMut(&[f64]) -> f64,
    population_size: usize,
    sigma_eff: f64,
    antithetic: bool,
    rng: &mut ChaCha20Rng,
) -> (Vec<f64>, Vec<f64>) {
    let d = params.len();
    let base = rng.next_u64();
    let terms = if antithetic {
        population_size / 2
    } else {
        population_size
    };
    let mut mean = vec![0.0; d];
    let mut m2 = vec![0.0; d];
    let mut eps = vec![0.0; d];
    let mut probe = params.to_vec();
    for t in 0..terms {
        let mut member_rng = keyed(base, Stream::EstimatorNoise, t as u64);
        for e in eps.iter_mut() {
            *e = StandardNormal.sample(&mut member_rng);
        }
        let term: Vec<f64> = if antithetic {
            for (p, (&theta, &e)) in probe.iter_mut().zip(params.iter().zip(&eps)) {
                *p = theta + sigma_eff * e;
            }
            let f_plus = objective(&probe);
            for (p, (&theta, &e)) in probe.iter_mut().zip(params.iter().zip(&eps)) {
                *p = theta - sigma_eff * e;
            }
            let f_minus = objective(&probe);
            let scale = (f_plus - f_minus) / (2.0 * sigma_eff);
            eps.iter().map(|e| e * scale).collect()
        } else {
            for (p, (&theta, &e)) in probe.iter_mut().zip(params.iter().zip(&eps)) {
                *p = theta + sigma_eff * e;
            }
            let f = objective(&probe);
            let scale = f / sigma_eff;
            eps.iter().map(|e| e * scale).collect()
        };
        let count = (t + 1) as f64;
        for p in 0..d {
            let delta = term[p] - mean[p];
            mean[p] += delta / count;
            m2[p] += delta * (term[p] - mean[p]);
        }
    }
    let denom = (terms.max(2) - 1) as f64;
    let variance = m2.iter().map(|v| v / denom).collect();
    (mean, variance)
}

/// Zeroth-order evolution-strategies estimate, evaluated in the original
/// (non-smoothed) game.
///
/// Only the learner's parameters are perturbed; opponents bid with the
/// unperturbed shared policy. The objective of each population member is the
/// batch-mean exact utility of the learner.
pub fn estimate_es(
    net: &PolicyNet,
    values: &BidderBatch,
    spec: &MechanismSpec,
    config: &EstimatorConfig,
    rng: &mut ChaCha20Rng,
) -> Result<GradientEstimate> {
    values.check_spec(spec)?;
    check_net_for(net, spec, PolicyHead::Deterministic)?;
    config.validate()?;
    let (batch, n, m) = (
        values.batch_size(),
        values.n_bidders(),
        values.n_items(),
    );

    let learner_vals = learner_values(values);
    let opponent_bids = net.forward_nocache(opponent_values(values).view())?;
    let mut bids = BidderBatch::from_trusted(
        assemble_bids(
            &Array2::zeros((batch, m)),
            &opponent_bids,
            batch,
            n,
            m,
        ),
        BatchRole::Bids,
    );

    let d = net.param_count();
    let sigma_eff = config.sigma / (d as f64).sqrt();
    let layer_sizes = net.layer_sizes().to_vec();
    let head = net.head();

    let mut objective = |theta: &[f64]| -> f64 {
        let probe = PolicyNet::from_params(&layer_sizes, head, theta.to_vec())
            .expect("perturbed parameters keep the architecture");
        let learner_bids = probe
            .forward_nocache(learner_vals.view())
            .expect("shape checked above");
        bids.data_mut()
            .slice_mut(s![.., LEARNER, ..])
            .assign(&learner_bids);
        let util = utility_exact(values, &bids, spec).expect("shapes checked above");
        util.column(LEARNER).mean().unwrap()
    };

    let (grad, variance) = es_gradient(
        net.params(),
        &mut objective,
        config.population_size,
        sigma_eff,
        config.antithetic,
        rng,
    );

    let est = GradientEstimate {
        grad,
        estimator: EstimatorKind::Es,
        sample_size: config.population_size * batch,
        per_parameter_variance: Some(variance),
    };
    est.check_finite()?;
    Ok(est)
}

/// Score-function contribution of one Gaussian action coordinate:
/// `(∂ log N(a; μ, σ²)/∂μ, ∂ log N(a; μ, σ²)/∂σ)`.
#[inline]
pub fn gaussian_score(action: f64, mu: f64, sigma: f64) -> (f64, f64) {
    let z = action - mu;
    let s2 = sigma * sigma;
    (z / s2, (z * z - s2) / (s2 * sigma))
}

/// REINFORCE estimate with an arbitrary per-sample reward.
///
/// Every bidder samples actions `a ~ N(μ(v), softplus(ρ(v))²)` per item from
/// the shared mixed strategy; nonnegative bids are `max(a, 0)`. The reward
/// closure sees both the clamped bid profile and the raw actions and returns
/// the learner's per-sample reward. The score is taken at the raw action, so
/// the estimate is unbiased for the reward of the clamped policy.
pub fn estimate_reinforce_with_reward(
    net: &PolicyNet,
    values: &BidderBatch,
    reward: impl Fn(&BidderBatch, &Array3<f64>) -> Result<Array1<f64>>,
    rng: &mut ChaCha20Rng,
) -> Result<GradientEstimate> {
    if net.head() != PolicyHead::Gaussian {
        return Err(Error::config(
            "REINFORCE needs a Gaussian policy head (doubled output dimension)".to_string(),
        ));
    }
    let (batch, n, m) = (
        values.batch_size(),
        values.n_bidders(),
        values.n_items(),
    );
    if net.n_items() != m {
        return Err(Error::shape(
            format!("policy over {m} items"),
            format!("policy over {} items", net.n_items()),
        ));
    }

    let (learner_out, cache) = net.forward(learner_values(values).view())?;
    let opponent_out = net.forward_nocache(opponent_values(values).view())?;

    let mut actions = Array3::zeros((batch, n, m));
    let sample = |out: &Array2<f64>, row: usize, k: usize, r: &mut ChaCha20Rng| -> f64 {
        let mu = out[[row, k]];
        let sigma = softplus(out[[row, m + k]]);
        let z: f64 = StandardNormal.sample(r);
        mu + sigma * z
    };
    for b in 0..batch {
        for k in 0..m {
            actions[[b, LEARNER, k]] = sample(&learner_out, b, k, rng);
        }
        for i in 1..n {
            for k in 0..m {
                actions[[b, i, k]] = sample(&opponent_out, b * (n - 1) + (i - 1), k, rng);
            }
        }
    }
    let bids = BidderBatch::from_trusted(actions.mapv(|a| a.max(0.0)), BatchRole::Bids);
    let rewards = reward(&bids, &actions)?;
    if rewards.len() != batch {
        return Err(Error::shape(
            format!("({batch},)"),
            format!("({},)", rewards.len()),
        ));
    }

    // upstream on the (mu, rho) output: reward times the score, with the
    // softplus chain factor on the deviation head
    let mut upstream = Array2::zeros((batch, 2 * m));
    for b in 0..batch {
        let r = rewards[b];
        for k in 0..m {
            let mu = learner_out[[b, k]];
            let rho = learner_out[[b, m + k]];
            let sigma = softplus(rho);
            let (d_mu, d_sigma) = gaussian_score(actions[[b, LEARNER, k]], mu, sigma);
            upstream[[b, k]] = r * d_mu;
            upstream[[b, m + k]] = r * d_sigma * sigmoid(rho);
        }
    }

    let mut grad = net.backward(&cache, upstream.view())?;
    let inv = 1.0 / batch as f64;
    for g in grad.iter_mut() {
        *g *= inv;
    }

    let est = GradientEstimate {
        grad,
        estimator: EstimatorKind::Reinforce,
        sample_size: batch,
        per_parameter_variance: None,
    };
    est.check_finite()?;
    Ok(est)
}

/// REINFORCE estimate with the auction utility as reward.
pub fn estimate_reinforce(
    net: &PolicyNet,
    values: &BidderBatch,
    spec: &MechanismSpec,
    rng: &mut ChaCha20Rng,
) -> Result<GradientEstimate> {
    values.check_spec(spec)?;
    estimate_reinforce_with_reward(net, values, |bids, _| {
        let util = utility_exact(values, bids, spec)?;
        Ok(util.column(LEARNER).to_owned())
    }, rng)
}

/// Dispatch on the configured estimator kind.
pub fn estimate(
    net: &PolicyNet,
    values: &BidderBatch,
    spec: &MechanismSpec,
    config: &EstimatorConfig,
    rng: &mut ChaCha20Rng,
) -> Result<GradientEstimate> {
    match config.kind {
        EstimatorKind::Sm => estimate_sm(net, values, spec, &config.smoothing),
        EstimatorKind::Es => estimate_es(net, values, spec, config, rng),
        EstimatorKind::Reinforce => estimate_reinforce(net, values, spec, rng),
    }
}

/// Mean over parameters of the per-parameter sample variance across
/// `repeats` independent estimates at fixed policy parameters.
///
/// Each repeat draws a fresh valuation batch and fresh estimator noise from
/// keyed streams of `seed`.
pub fn gradient_variance(
    net: &PolicyNet,
    spec: &MechanismSpec,
    config: &EstimatorConfig,
    batch_size: usize,
    v_max: f64,
    repeats: usize,
    seed: u64,
) -> Result<f64> {
    if repeats < 2 {
        return Err(Error::config(format!(
            "variance needs at least 2 repeats, got {repeats}"
        )));
    }
    let d = net.param_count();
    let mut mean = vec![0.0; d];
    let mut m2 = vec![0.0; d];
    for k in 0..repeats {
        let mut data_rng = keyed(seed, Stream::Eval, k as u64);
        let values = BidderBatch::sample_uniform(
            batch_size,
            spec.n_bidders,
            spec.n_items,
            v_max,
            &mut data_rng,
        );
        let mut noise_rng = keyed(seed, Stream::EstimatorNoise, k as u64);
        let est = estimate(net, &values, spec, config, &mut noise_rng)?;
        let count = (k + 1) as f64;
        for p in 0..d {
            let delta = est.grad[p] - mean[p];
            mean[p] += delta / count;
            m2[p] += delta * (est.grad[p] - mean[p]);
        }
    }
    let denom = (repeats - 1) as f64;
    Ok(m2.iter().map(|v| v / denom).sum::<f64>() / d as f64)
}
