//! The two non-federated reference points: purely local models (one per
//! device, learning rate picked on validation data) and a single global
//! model trained on pooled IID data.

use fedsim::dataset::split_train_val_test;
use fedsim::fedalgo::{evaluate_on, train_global_iid, train_local};
use fedsim::metrics::{summarize_accuracy, DeviceAccuracy, Weighting};
use fedsim::model::{accuracy_top1, init_params, Init, ModelSpec};
use fedsim::synthgen::{generate_synthetic, SynthConfig};

fn main() -> fedsim::Result<()> {
    let ds = generate_synthetic(&SynthConfig::new(120, vec![1.0], 4, 30, 4, 9))?;
    let split = split_train_val_test(&ds, (0.6, 0.2, 0.2), 9)?;
    let spec = ModelSpec::linear(30, 4);
    let init = init_params(&spec, Init::Zeros);

    // one model per device, searching a wide learning-rate grid
    let grid = [1e-3, 1e-2, 1e-1, 1.0, 10.0];
    let local = train_local(&split, &spec, &init, &grid, 10, 5, 9)?;
    let mut local_accs = Vec::new();
    for (id, m) in &local {
        let test = split.test.samples(id).expect("device has test data");
        local_accs.push(DeviceAccuracy {
            device_id: id.clone(),
            accuracy: accuracy_top1(&spec, &m.params, test)?,
            sample_count: test.len(),
        });
    }
    let rates: Vec<f64> = local.values().map(|m| m.lr).collect();
    println!(
        "local: {:.1}% mean accuracy (chosen lrs span {:.0e}..{:.0e})",
        100.0 * summarize_accuracy(&local_accs, Weighting::PerSample)?.mean,
        rates.iter().cloned().fold(f64::INFINITY, f64::min),
        rates.iter().cloned().fold(0.0, f64::max),
    );

    // one global model over the pooled, shuffled training data
    let params = train_global_iid(&split.train, &spec, &init, 3, 0.1, 10, 9)?;
    let all: Vec<String> = split.test.device_ids().map(str::to_string).collect();
    let global_accs = evaluate_on(&spec, &params, &split.test, &all)?;
    println!(
        "global IID: {:.1}% mean accuracy",
        100.0 * summarize_accuracy(&global_accs, Weighting::PerSample)?.mean
    );
    Ok(())
}
