//! Systems-cost accounting: how much compute and communication a
//! federated run spends before first reaching a target accuracy.

use fedsim::dataset::split_train_val_test;
use fedsim::fedalgo::{
    evaluate_on, fedavg_round, select_eval_devices, FedConfig, FedState,
};
use fedsim::metrics::systems_budget;
use fedsim::model::{init_params, Init, ModelSpec};
use fedsim::synthgen::{generate_synthetic, SynthConfig};

fn main() -> fedsim::Result<()> {
    let ds = generate_synthetic(&SynthConfig::new(150, vec![1.0], 2, 30, 4, 5))?;
    let split = split_train_val_test(&ds, (0.6, 0.2, 0.2), 5)?;
    let spec = ModelSpec::linear(30, 4);
    let cfg = FedConfig {
        rounds: 80,
        clients_per_round: 10,
        batch_size: 5,
        client_lr: 0.1,
        seed: 5,
        ..FedConfig::default()
    };

    // log an evaluation every round so the budget scan has full
    // resolution
    let eval_ids = select_eval_devices(&split.test, 1.0, cfg.seed)?;
    let mut state = FedState::new(init_params(&spec, Init::Zeros));
    let mut logs = Vec::new();
    for round in 0..cfg.rounds {
        let mut log = fedavg_round(&mut state, &spec, &split.train, &cfg, round)?;
        log.eval = Some(evaluate_on(&spec, &state.params, &split.test, &eval_ids)?);
        logs.push(log);
    }

    println!("threshold | round | Mflop | kB up");
    for threshold in [0.5, 0.6, 0.7, 0.8, 0.9] {
        let b = systems_budget(&logs, threshold, fedsim::Weighting::PerSample)?;
        match b.round_reached {
            Some(round) => println!(
                "   {threshold:.2}   | {round:5} | {:5.1} | {:5}",
                b.total_flops as f64 / 1e6,
                b.total_bytes_up / 1000
            ),
            None => println!("   {threshold:.2}   | never reached within the budget"),
        }
    }
    Ok(())
}
