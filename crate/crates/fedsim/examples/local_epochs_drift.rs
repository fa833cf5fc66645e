//! Client drift in action: on a clustered (non-IID) population, raising
//! the number of local epochs per round makes client models drift apart
//! and the averaged model's training loss degrade.

use fedsim::dataset::split_train_val_test;
use fedsim::fedalgo::{fedavg_round, FedConfig, FedState};
use fedsim::model::{init_params, Init, ModelSpec};
use fedsim::synthgen::{generate_synthetic, SynthConfig};

fn main() -> fedsim::Result<()> {
    // three equally likely clusters pull client updates in different
    // directions
    let probs = vec![1.0 / 3.0; 3];
    let ds = generate_synthetic(&SynthConfig::new(90, probs, 5, 30, 4, 17))?;
    let split = split_train_val_test(&ds, (0.6, 0.2, 0.2), 17)?;
    let spec = ModelSpec::linear(30, 4);

    println!("epochs | final train loss | mean client dispersion");
    for local_epochs in [1usize, 4, 16, 64] {
        let cfg = FedConfig {
            rounds: 20,
            clients_per_round: 10,
            local_epochs,
            batch_size: 5,
            client_lr: 0.1,
            seed: 17,
            ..FedConfig::default()
        };
        let mut state = FedState::new(init_params(&spec, Init::Zeros));
        let mut last_loss = f64::NAN;
        let mut dispersion = Vec::new();
        for round in 0..cfg.rounds {
            let log = fedavg_round(&mut state, &spec, &split.train, &cfg, round)?;
            last_loss = log.train_loss;
            dispersion.extend(log.client_dispersion);
        }
        let mean_disp = dispersion.iter().sum::<f64>() / dispersion.len() as f64;
        println!("  E={local_epochs:<3} | {last_loss:16.4} | {mean_disp:.3}");
    }
    Ok(())
}
