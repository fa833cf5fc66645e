//! Property tests for invariants that must hold on arbitrary inputs,
//! not just the fixtures the unit tests pick.

use proptest::prelude::*;
use rand::Rng;

use fedsim::dataset::{split_train_val_test, subsample_devices, FederatedDataset, Subsample};
use fedsim::metrics::{quantile, summarize_accuracy, weighted_quantile, DeviceAccuracy, Weighting};
use fedsim::rng::derive_rng;

fn dataset_from_counts(counts: &[usize], seed: u64) -> FederatedDataset {
    let mut ds = FederatedDataset::empty(3, 4);
    let mut rng = derive_rng(seed, &[0x51]);
    for (i, &n) in counts.iter().enumerate() {
        let samples = (0..n)
            .map(|_| fedsim::Sample {
                features: (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect(),
                label: rng.gen_range(0..4),
            })
            .collect();
        ds.insert_device(format!("p{i:02}"), samples);
    }
    ds
}

/// Order-independent fingerprint of a device's samples.
fn multiset_key(ds: &FederatedDataset, id: &str) -> Vec<(Vec<u64>, usize)> {
    let mut keys: Vec<(Vec<u64>, usize)> = ds
        .samples(id)
        .unwrap_or(&[])
        .iter()
        .map(|s| (s.features.iter().map(|f| f.to_bits()).collect(), s.label))
        .collect();
    keys.sort();
    keys
}

proptest! {
    #[test]
    fn quantile_is_monotone_and_bounded(
        values in prop::collection::vec(-1e3..1e3f64, 1..40),
        qa in 0.0..=1.0f64,
        qb in 0.0..=1.0f64,
    ) {
        let (lo, hi) = if qa <= qb { (qa, qb) } else { (qb, qa) };
        let a = quantile(&values, lo).unwrap();
        let b = quantile(&values, hi).unwrap();
        prop_assert!(a <= b);
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min <= a && b <= max);
    }

    #[test]
    fn equal_weights_reduce_to_unweighted(
        values in prop::collection::vec(-1e3..1e3f64, 1..30),
        w in 0.1..50.0f64,
        q in 0.0..=1.0f64,
    ) {
        let weights = vec![w; values.len()];
        let weighted = weighted_quantile(&values, &weights, q).unwrap();
        let plain = quantile(&values, q).unwrap();
        prop_assert!((weighted - plain).abs() <= 1e-9 * (1.0 + plain.abs()));
    }

    #[test]
    fn summary_percentiles_are_ordered(
        accs in prop::collection::vec(0.0..=1.0f64, 1..50),
    ) {
        let entries: Vec<DeviceAccuracy> = accs
            .iter()
            .enumerate()
            .map(|(i, &a)| DeviceAccuracy {
                device_id: format!("d{i}"),
                accuracy: a,
                sample_count: i + 1,
            })
            .collect();
        for weighting in [Weighting::PerDevice, Weighting::PerSample] {
            let s = summarize_accuracy(&entries, weighting).unwrap();
            prop_assert!(s.p10 <= s.p25 && s.p25 <= s.p50 && s.p50 <= s.p75 && s.p75 <= s.p90);
            prop_assert!((0.0..=1.0).contains(&s.mean));
        }
    }

    #[test]
    fn split_partitions_every_device(
        counts in prop::collection::vec(3usize..15, 1..6),
        seed in 0u64..1000,
    ) {
        let ds = dataset_from_counts(&counts, seed);
        let split = split_train_val_test(&ds, (0.6, 0.2, 0.2), seed).unwrap();
        for id in ds.device_ids() {
            let mut recombined: Vec<(Vec<u64>, usize)> = Vec::new();
            for part in [&split.train, &split.val, &split.test] {
                recombined.extend(multiset_key(part, id));
            }
            recombined.sort();
            prop_assert_eq!(recombined, multiset_key(&ds, id));
            // test and train splits are never empty on devices this size
            prop_assert!(!split.test.samples(id).unwrap_or(&[]).is_empty());
            prop_assert!(!split.train.samples(id).unwrap_or(&[]).is_empty());
        }
    }

    #[test]
    fn subsample_returns_exactly_k_existing_devices(
        counts in prop::collection::vec(3usize..10, 1..8),
        k in 1usize..8,
        seed in 0u64..1000,
    ) {
        let ds = dataset_from_counts(&counts, seed);
        prop_assume!(k <= ds.num_devices());
        let sub = subsample_devices(&ds, Subsample::Count(k), seed).unwrap();
        prop_assert_eq!(sub.num_devices(), k);
        for (id, samples) in sub.iter() {
            prop_assert_eq!(Some(samples), ds.samples(id));
        }
    }
}
