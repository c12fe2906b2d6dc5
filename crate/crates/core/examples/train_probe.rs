use smoothmkt::estimators::{EstimatorConfig, EstimatorKind};
use smoothmkt::learner::{lambda_sweep, run_training, ExperimentConfig};
use smoothmkt::mechanisms::{MechanismSpec, PaymentRule};
use std::time::Instant;

fn base(rule: PaymentRule, m: usize, kind: EstimatorKind, seed: u64) -> ExperimentConfig {
    let spec = MechanismSpec::new(rule, 2, m).unwrap();
    let mut config = ExperimentConfig::new(spec, EstimatorConfig::new(kind));
    config.seed = seed;
    config
}

fn main() {
    let mode = std::env::args().nth(1).unwrap_or_default();
    match mode.as_str() {
        "m2" => {
            for seed in [1, 2, 3] {
                let config = base(PaymentRule::FirstPrice, 2, EstimatorKind::Sm, seed);
                let t0 = Instant::now();
                let run = run_training(&config).unwrap();
                println!("m2 seed {seed}: l2 {:.5} ({:.0}s)", run.final_l2().unwrap(), t0.elapsed().as_secs_f64());
            }
        }
        "reinforce" => {
            for seed in [1, 2, 3] {
                let config = base(PaymentRule::FirstPrice, 1, EstimatorKind::Reinforce, seed);
                let t0 = Instant::now();
                let run = run_training(&config).unwrap();
                println!("reinforce seed {seed}: l2 {:.5} ({:.0}s, {:.4} s/iter)", run.final_l2().unwrap(), t0.elapsed().as_secs_f64(), run.records.last().unwrap().seconds_per_iter);
            }
        }
        "es-time" => {
            let mut config = base(PaymentRule::FirstPrice, 1, EstimatorKind::Es, 1);
            config.iterations = 20;
            config.eval_every = 20;
            let run = run_training(&config).unwrap();
            println!("es: {:.4} s/iter", run.records.last().unwrap().seconds_per_iter);
            let mut config = base(PaymentRule::FirstPrice, 1, EstimatorKind::Sm, 1);
            config.iterations = 100;
            config.eval_every = 100;
            let run = run_training(&config).unwrap();
            println!("sm: {:.4} s/iter", run.records.last().unwrap().seconds_per_iter);
        }
        "sweep" => {
            let config = base(PaymentRule::FirstPrice, 1, EstimatorKind::Sm, 1);
            let t0 = Instant::now();
            let points = lambda_sweep(&config, &[0.1, 0.03, 0.0119, 0.003, 0.001]).unwrap();
            for p in &points {
                println!("lambda {:.4}: l2 {:.5}", p.lambda, p.final_l2);
            }
            println!("({:.0}s total)", t0.elapsed().as_secs_f64());
        }
        other => eprintln!("unknown mode {other}"),
    }
}
