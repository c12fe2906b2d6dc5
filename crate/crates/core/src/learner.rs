//! Self-play training loop.
//!
//! All bidders share one policy (the auctions are symmetric). Each iteration
//! samples a fresh valuation batch from the prior, estimates the learner's
//! utility gradient, and applies one adaptive-moment ascent step. Every
//! `eval_every` iterations the L2 distance to the analytic equilibrium is
//! measured on an independent evaluation stream, so evaluation never
//! perturbs the training trajectory.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::estimators::{estimate, EstimatorConfig, EstimatorKind};
use crate::evaluation::{
    bne_strategy, l2_distance, utility_loss_max, MetricRecord, UtilityLossParams,
};
use crate::mechanisms::{BidderBatch, MechanismSpec};
use crate::optim::{AdamState, OptimizerConfig};
use crate::policy::{pretrain, PolicyNet};
use crate::rng::{keyed, substream, Stream};
use crate::scalar::softplus_inv;

/// Everything one training run needs.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub mechanism: MechanismSpec,
    pub estimator: EstimatorConfig,
    pub iterations: usize,
    pub batch_size: usize,
    pub pretrain_iterations: usize,
    pub seed: u64,
    pub eval_every: usize,
    /// Independent sample count behind each L2 record.
    pub eval_batch: usize,
    pub optimizer: OptimizerConfig,
    /// Pretraining uses its own, larger step size: 50 iterations at the
    /// training step size cannot move a random init anywhere near truthful.
    pub pretrain_optimizer: OptimizerConfig,
    pub v_max: f64,
    /// Override the default (m, 10, 10, out) architecture.
    pub layer_sizes: Option<Vec<usize>>,
    /// Estimate the worst-case utility loss after the final iteration.
    pub final_utility_loss: bool,
    pub loss_params: UtilityLossParams,
}

impl ExperimentConfig {
    pub fn new(mechanism: MechanismSpec, estimator: EstimatorConfig) -> Self {
        ExperimentConfig {
            mechanism,
            estimator,
            iterations: 2000,
            batch_size: 1 << 14,
            pretrain_iterations: 50,
            seed: 0,
            eval_every: 50,
            eval_batch: 1 << 16,
            optimizer: OptimizerConfig::default(),
            pretrain_optimizer: OptimizerConfig::with_step_size(0.03),
            v_max: 1.0,
            layer_sizes: None,
            final_utility_loss: false,
            loss_params: UtilityLossParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.estimator.validate()?;
        self.optimizer.validate()?;
        self.pretrain_optimizer.validate()?;
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive".to_string()));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval cadence must be positive".to_string()));
        }
        if self.eval_batch == 0 {
            return Err(Error::config("eval batch must be positive".to_string()));
        }
        if !(self.v_max > 0.0) {
            return Err(Error::config(format!(
                "maximum valuation must be positive, got {}",
                self.v_max
            )));
        }
        if let Some(sizes) = &self.layer_sizes {
            if sizes.first() != Some(&self.mechanism.n_items) {
                return Err(Error::config(format!(
                    "policy input dimension {:?} does not match {} items",
                    sizes.first(),
                    self.mechanism.n_items
                )));
            }
        }
        Ok(())
    }

    fn resolved_layer_sizes(&self) -> Vec<usize> {
        self.layer_sizes.clone().unwrap_or_else(|| {
            PolicyNet::default_layer_sizes(self.mechanism.n_items, self.estimator.policy_head())
        })
    }
}

/// Result of one training run.
#[derive(Debug)]
pub struct TrainingRun {
    pub net: PolicyNet,
    pub records: Vec<MetricRecord>,
}

impl TrainingRun {
    /// L2 of the last metric record, when any.
    pub fn final_l2(&self) -> Option<f64> {
        self.records.last().map(|r| r.l2)
    }
}

/// Pretrain a fresh policy for `config`, without any self-play iterations.
pub fn pretrained_policy(config: &ExperimentConfig) -> Result<PolicyNet> {
    config.validate()?;
    let head = config.estimator.policy_head();
    let sizes = config.resolved_layer_sizes();
    let mut init_rng = substream(config.seed, Stream::Init);
    let mut net = PolicyNet::init_alive(&sizes, head, config.v_max, &mut init_rng)?;
    let aux_target = match head {
        crate::policy::PolicyHead::Gaussian => softplus_inv(config.estimator.init_sigma),
        crate::policy::PolicyHead::Deterministic => 0.0,
    };
    let mut pretrain_rng = substream(config.seed, Stream::Pretrain);
    pretrain(
        &mut net,
        config.v_max,
        config.pretrain_iterations,
        config.batch_size,
        &config.pretrain_optimizer,
        aux_target,
        &mut pretrain_rng,
    )?;
    Ok(net)
}

/// Run pretraining followed by `iterations` rounds of sample → estimate →
/// ascend, recording metrics every `eval_every` iterations (plus a final
/// record when the horizon is not a multiple of the cadence).
///
/// Deterministic under `(config, seed)` up to wall-clock timing.
pub fn run_training(config: &ExperimentConfig) -> Result<TrainingRun> {
    config.validate()?;
    let spec = config.mechanism;
    let mut net = pretrained_policy(config)?;
    let bne = bne_strategy(&spec);

    let mut adam = AdamState::new(config.optimizer, net.param_count());
    let mut train_rng = substream(config.seed, Stream::Training);
    let mut noise_rng = substream(config.seed, Stream::EstimatorNoise);

    let mut records = Vec::new();
    let mut window = Instant::now();
    let mut window_iters = 0usize;

    for t in 1..=config.iterations {
        let values = BidderBatch::sample_uniform(
            config.batch_size,
            spec.n_bidders,
            spec.n_items,
            config.v_max,
            &mut train_rng,
        );
        let est = estimate(&net, &values, &spec, &config.estimator, &mut noise_rng)?;
        adam.ascend(net.params_mut(), &est.grad);
        window_iters += 1;

        let last = t == config.iterations;
        if t % config.eval_every == 0 || last {
            let seconds_per_iter = window.elapsed().as_secs_f64() / window_iters as f64;
            let l2 = match &bne {
                Some(reference) => l2_distance(
                    &net,
                    reference,
                    config.eval_batch,
                    config.v_max,
                    &mut keyed(config.seed, Stream::Eval, t as u64),
                )?,
                None => f64::NAN,
            };
            let utility_loss = if last && config.final_utility_loss {
                Some(
                    utility_loss_max(&net, &spec, config.v_max, &config.loss_params, config.seed)?
                        .loss,
                )
            } else {
                None
            };
            records.push(MetricRecord {
                iteration: t,
                l2,
                utility_loss,
                grad_variance: None,
                seconds_per_iter,
            });
            window = Instant::now();
            window_iters = 0;
        }
    }

    Ok(TrainingRun { net, records })
}

/// One row of a temperature sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub lambda: f64,
    pub seed: u64,
    pub final_l2: f64,
}

/// One `run_training` per temperature, sharing the seed and everything else.
///
/// Only meaningful for the first-order estimator; other kinds are rejected.
pub fn lambda_sweep(config: &ExperimentConfig, lambdas: &[f64]) -> Result<Vec<SweepPoint>> {
    if config.estimator.kind != EstimatorKind::Sm {
        return Err(Error::config(
            "temperature sweeps need the first-order estimator".to_string(),
        ));
    }
    if lambdas.is_empty() {
        return Err(Error::config("temperature list must be nonempty".to_string()));
    }
    let mut points = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let mut run_config = config.clone();
        run_config.estimator.smoothing = crate::smoothing::SmoothingConfig::new(lambda)?;
        let run = run_training(&run_config)?;
        let final_l2 = match run.final_l2() {
            Some(l2) => l2,
            None => {
                // zero-iteration runs have no records; measure the pretrained net
                let bne = bne_strategy(&config.mechanism)
                    .ok_or_else(|| Error::config("sweep needs an analytic equilibrium".to_string()))?;
                l2_distance(
                    &run.net,
                    &bne,
                    config.eval_batch,
                    config.v_max,
                    &mut keyed(config.seed, Stream::Eval, 0),
                )?
            }
        };
        points.push(SweepPoint {
            lambda,
            seed: config.seed,
            final_l2,
        });
    }
    Ok(points)
}
