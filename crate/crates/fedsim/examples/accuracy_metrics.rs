//! How the accuracy aggregator weighs devices: per-device vs per-sample
//! weighting, percentile summaries, and stratification by device group.

use std::collections::BTreeMap;

use fedsim::metrics::{
    expanded_quantile, stratified_accuracy, summarize_accuracy, DeviceAccuracy, Weighting,
};

fn main() -> fedsim::Result<()> {
    // a small fleet where one giant device performs much better than
    // the many small ones
    let mut entries = vec![DeviceAccuracy {
        device_id: "giant".into(),
        accuracy: 0.95,
        sample_count: 900,
    }];
    for i in 0..9 {
        entries.push(DeviceAccuracy {
            device_id: format!("small_{i}"),
            accuracy: 0.55 + 0.01 * i as f64,
            sample_count: 10,
        });
    }

    for weighting in [Weighting::PerDevice, Weighting::PerSample] {
        let s = summarize_accuracy(&entries, weighting)?;
        println!(
            "{weighting}: mean {:.3}, p10 {:.3}, median {:.3}, p90 {:.3}",
            s.mean, s.p10, s.p50, s.p90
        );
    }
    // the per-sample mean sits near the giant; per-device near the pack

    // group structure (e.g. which latent cluster generated a device)
    let mut groups = BTreeMap::new();
    groups.insert("giant".to_string(), "cluster_1".to_string());
    for i in 0..9 {
        groups.insert(format!("small_{i}"), "cluster_0".to_string());
    }
    println!("\nby group (per-device):");
    for (group, s) in stratified_accuracy(&entries, &groups, Weighting::PerDevice)? {
        println!("  {group}: n={} mean {:.3}", s.n_devices, s.mean);
    }

    // integer-weighted percentile, equivalent to repeating each value
    // sample_count times
    let values: Vec<f64> = entries.iter().map(|e| e.accuracy).collect();
    let weights: Vec<usize> = entries.iter().map(|e| e.sample_count).collect();
    println!(
        "\nsample-weighted median accuracy: {:.3}",
        expanded_quantile(&values, &weights, 0.5)?
    );
    Ok(())
}
