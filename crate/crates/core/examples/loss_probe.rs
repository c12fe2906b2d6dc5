use smoothmkt::estimators::{EstimatorConfig, EstimatorKind};
use smoothmkt::evaluation::{utility_loss_max, utility_loss_noise_floor, UtilityLossParams};
use smoothmkt::learner::{run_training, ExperimentConfig};
use smoothmkt::mechanisms::{MechanismSpec, PaymentRule};

fn main() {
    let params = UtilityLossParams::default();
    for rule in [PaymentRule::SecondPrice, PaymentRule::FirstPrice] {
        let spec = MechanismSpec::new(rule, 2, 1).unwrap();
        let floor = utility_loss_noise_floor(&spec, 1.0, &params, &[101, 102, 103]).unwrap();
        println!("{rule}: noise floor {floor:.6}");
        for seed in [1, 2, 3] {
            let mut config = ExperimentConfig::new(spec, EstimatorConfig::new(EstimatorKind::Sm));
            config.seed = seed;
            let run = run_training(&config).unwrap();
            let loss = utility_loss_max(&run.net, &spec, 1.0, &params, seed).unwrap();
            println!(
                "  seed {seed}: l2 {:.5}, loss {:.6} ({}x floor)",
                run.final_l2().unwrap(),
                loss.loss,
                (loss.loss / floor).round()
            );
        }
    }
}
