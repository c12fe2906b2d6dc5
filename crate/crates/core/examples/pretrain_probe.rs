use smoothmkt::policy::{pretrain, truthful_mse, PolicyHead, PolicyNet};
use smoothmkt::optim::OptimizerConfig;
use smoothmkt::rng::{substream, Stream};

fn main() {
    for lr in [0.03, 0.035, 0.04, 0.045] {
        let mut worst: f64 = 0.0;
        let mut above = 0;
        for seed in 0..40u64 {
            let mut init_rng = substream(seed, Stream::Init);
            let mut net = PolicyNet::init_alive(&[1, 10, 10, 1], PolicyHead::Deterministic, 1.0, &mut init_rng).unwrap();
            let mut data_rng = substream(seed, Stream::Pretrain);
            let opt = OptimizerConfig::with_step_size(lr);
            pretrain(&mut net, 1.0, 50, 16384, &opt, 0.0, &mut data_rng).unwrap();
            let mse = truthful_mse(&net, 1.0, 16384, &mut data_rng).unwrap();
            if mse > worst { worst = mse; }
            if mse >= 1e-3 { above += 1; }
        }
        println!("lr={lr}: worst={worst:.3e}, seeds above 1e-3: {above}/40");
    }
}
