//! The standard preprocessing pipeline: filter out tiny devices,
//! subsample the population, split per-device into train/val/test, and
//! (for IID baselines) destroy the device partition entirely.

use fedsim::dataset::{
    dataset_stats, filter_min_samples, mix_iid, split_train_val_test, subsample_devices,
    Subsample,
};
use fedsim::synthgen::{generate_synthetic, SynthConfig};

fn main() -> fedsim::Result<()> {
    let ds = generate_synthetic(&SynthConfig::new(300, vec![1.0], 4, 15, 3, 7))?;
    println!("raw:        {} devices, {} samples", ds.num_devices(), ds.total_samples());

    // devices below a minimum size carry almost no evaluation signal
    let ds = filter_min_samples(&ds, 10);
    println!("filter 10:  {} devices, {} samples", ds.num_devices(), ds.total_samples());

    let ds = subsample_devices(&ds, Subsample::Fraction(0.5), 1)?;
    println!("half kept:  {} devices, {} samples", ds.num_devices(), ds.total_samples());

    let split = split_train_val_test(&ds, (0.6, 0.2, 0.2), 1)?;
    println!(
        "split:      train {} / val {} / test {} samples",
        split.train.total_samples(),
        split.val.total_samples(),
        split.test.total_samples()
    );

    // per-device splits keep every device present in each part
    assert_eq!(split.train.num_devices(), ds.num_devices());
    assert_eq!(split.test.num_devices(), ds.num_devices());

    // the IID baseline pools everything into one shuffled pseudo-device
    let pooled = mix_iid(&ds, 1)?;
    let stats = dataset_stats(&pooled)?;
    println!(
        "mixed IID:  {} device ({} samples)",
        stats.num_devices, stats.total_samples
    );
    Ok(())
}
