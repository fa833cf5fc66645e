//! A FedAvg training loop driven directly through the round engine,
//! with periodic evaluation and running cost counters.

use fedsim::dataset::split_train_val_test;
use fedsim::fedalgo::{evaluate_on, fedavg_round, select_eval_devices, FedConfig, FedState};
use fedsim::metrics::{summarize_accuracy, Weighting};
use fedsim::model::{init_params, Init, ModelSpec};
use fedsim::synthgen::{generate_synthetic, SynthConfig};

fn main() -> fedsim::Result<()> {
    let ds = generate_synthetic(&SynthConfig::new(150, vec![1.0], 2, 30, 4, 3))?;
    let split = split_train_val_test(&ds, (0.6, 0.2, 0.2), 3)?;
    let spec = ModelSpec::linear(30, 4);

    let cfg = FedConfig {
        rounds: 60,
        clients_per_round: 10,
        local_epochs: 1,
        batch_size: 5,
        client_lr: 0.1,
        seed: 3,
        ..FedConfig::default()
    };

    // evaluate on a fixed 30% subset of test devices while training
    let eval_ids = select_eval_devices(&split.test, 0.3, cfg.seed)?;
    let mut state = FedState::new(init_params(&spec, Init::Zeros));
    for round in 0..cfg.rounds {
        let log = fedavg_round(&mut state, &spec, &split.train, &cfg, round)?;
        if (round + 1) % 10 == 0 {
            let eval = evaluate_on(&spec, &state.params, &split.test, &eval_ids)?;
            let acc = summarize_accuracy(&eval, Weighting::PerSample)?.mean;
            println!(
                "round {:3}: train loss {:.4}, eval acc {:.1}%, {:.1} Mflop, {} kB up",
                round,
                log.train_loss,
                100.0 * acc,
                state.cumulative_flops as f64 / 1e6,
                state.cumulative_bytes_up / 1000
            );
        }
    }

    // final evaluation over every test device
    let all: Vec<String> = split.test.device_ids().map(str::to_string).collect();
    let eval = evaluate_on(&spec, &state.params, &split.test, &all)?;
    let summary = summarize_accuracy(&eval, Weighting::PerSample)?;
    println!(
        "final: mean {:.1}%, p10 {:.1}%, median {:.1}%, p90 {:.1}%",
        100.0 * summary.mean,
        100.0 * summary.p10,
        100.0 * summary.p50,
        100.0 * summary.p90
    );
    Ok(())
}
