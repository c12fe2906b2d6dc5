//! Approximate Bayes-Nash equilibria of sealed-bid auctions by self-play
//! gradient ascent on neural bid strategies.
//!
//! The winner-take-all allocation makes first-order gradient estimates of the
//! expected utility systematically misleading, so learning runs in a smoothed
//! surrogate game ([`smoothing`]) whose softmax allocations admit unbiased
//! sample gradients. Zeroth-order baselines (evolution strategies, REINFORCE)
//! operate on the original game ([`estimators`]), and [`oracle`] carries the
//! closed-form error machinery used to verify how far the surrogate strays
//! from the original game.

pub mod error;
pub mod mechanisms;
pub mod optim;
pub mod oracle;
pub mod quad;
pub mod estimators;
pub mod evaluation;
pub mod learner;
pub mod policy;
pub mod rng;
pub mod scalar;
pub mod smoothing;

pub use error::{Error, Result};
pub use mechanisms::{
    allocate_exact, payments_exact, utility_exact, AuctionOutcome, BatchRole, BidderBatch,
    MechanismSpec, PaymentRule,
};
pub use estimators::{
    estimate, estimate_es, estimate_reinforce, estimate_sm, gradient_variance, EstimatorConfig,
    EstimatorKind, GradientEstimate,
};
pub use evaluation::{
    bne_strategy, l2_distance, utility_loss_max, utility_loss_noise_floor, BidStrategy,
    BneReference, MetricRecord, UtilityLossParams, UtilityLossReport,
};
pub use learner::{lambda_sweep, pretrained_policy, run_training, ExperimentConfig, SweepPoint, TrainingRun};
pub use optim::{AdamState, OptimizerConfig};
pub use policy::{PolicyHead, PolicyNet};
pub use smoothing::{
    allocate_soft, grad_utility_soft_wrt_bid, price_soft, utility_soft, SmoothingConfig,
};
