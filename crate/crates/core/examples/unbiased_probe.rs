use ndarray::{Array2, Array3};
use smoothmkt::estimators::estimate_sm_with_variance;
use smoothmkt::mechanisms::{BatchRole, BidderBatch, MechanismSpec, PaymentRule};
use smoothmkt::policy::{PolicyHead, PolicyNet};
use smoothmkt::quad::{integrate_adaptive, GaussLegendre};
use smoothmkt::rng::{keyed, Stream};
use smoothmkt::scalar::sigmoid;
use smoothmkt::smoothing::SmoothingConfig;
use rand::Rng;

/// Interim smoothed utility of bidding `b0` with value `v0` against the
/// frozen opponent policy, by adaptive quadrature over the opponent value.
fn interim_quad(v0: f64, b0: f64, opp: &PolicyNet, lambda: f64, rule: &GaussLegendre) -> f64 {
    let mut f = |v1: f64| {
        let out = opp
            .forward_nocache(Array2::from_elem((1, 1), v1).view())
            .unwrap();
        let b1 = out[[0, 0]];
        (v0 - b0.max(b1)) * sigmoid((b0 - b1) / lambda)
    };
    integrate_adaptive(&mut f, 0.0, 1.0, 1e-10, rule)
}

fn main() {
    let spec = MechanismSpec::new(PaymentRule::FirstPrice, 2, 1).unwrap();
    let sm = SmoothingConfig::default();
    let rule = GaussLegendre::new(15);
    let sizes = vec![1usize, 10, 10, 1];
    let batch = 1 << 16;
    let mut worst_z: f64 = 0.0;
    let mut over3 = 0usize;
    let mut total = 0usize;
    for net_idx in 0..20u64 {
        let mut rng = keyed(600, Stream::Init, net_idx);
        let net = PolicyNet::init_alive(&sizes, PolicyHead::Deterministic, 1.0, &mut rng).unwrap();
        let v0: f64 = rng.gen();

        // quadrature interim gradient by central differences over theta
        let step = 1e-5;
        let mut probe = net.clone();
        let mut quad_grad = vec![0.0; net.param_count()];
        for p in 0..net.param_count() {
            let orig = probe.params()[p];
            probe.params_mut()[p] = orig + step;
            let b_hi = probe.forward_nocache(Array2::from_elem((1, 1), v0).view()).unwrap()[[0, 0]];
            let hi = interim_quad(v0, b_hi, &net, sm.temperature, &rule);
            probe.params_mut()[p] = orig - step;
            let b_lo = probe.forward_nocache(Array2::from_elem((1, 1), v0).view()).unwrap()[[0, 0]];
            let lo = interim_quad(v0, b_lo, &net, sm.temperature, &rule);
            probe.params_mut()[p] = orig;
            quad_grad[p] = (hi - lo) / (2.0 * step);
        }

        // sample-mean interim gradient: constant own valuation, sampled opponents
        let mut data_rng = keyed(601, Stream::Training, net_idx);
        let mut values = Array3::zeros((batch, 2, 1));
        for b in 0..batch {
            values[[b, 0, 0]] = v0;
            values[[b, 1, 0]] = data_rng.gen::<f64>();
        }
        let values = BidderBatch::new(values, BatchRole::Valuations).unwrap();
        let est = estimate_sm_with_variance(&net, &values, &spec, &sm).unwrap();
        let var = est.per_parameter_variance.as_ref().unwrap();
        for p in 0..net.param_count() {
            let se = (var[p] / batch as f64).sqrt();
            if se < 1e-14 {
                assert!(
                    (est.grad[p] - quad_grad[p]).abs() < 1e-8,
                    "net {net_idx} param {p}: {} vs {}",
                    est.grad[p],
                    quad_grad[p]
                );
                continue;
            }
            let z = (est.grad[p] - quad_grad[p]).abs() / se;
            if z > worst_z { worst_z = z; }
            if z > 3.0 { over3 += 1; }
            total += 1;
        }
    }
    println!(
        "coords {total}, over 3se: {over3} ({:.2}%), worst z {worst_z:.2}",
        100.0 * over3 as f64 / total as f64
    );
}
