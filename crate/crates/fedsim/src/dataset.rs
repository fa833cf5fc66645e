//! Keyed federated dataset store.
//!
//! A [`FederatedDataset`] maps device ids to labeled samples. Devices are
//! kept in a stable insertion order (the order of the `users` array in the
//! file) which every downstream operation treats as the canonical device
//! order. All operations are pure: they return new datasets and never
//! mutate their input.
//!
//! # File format
//!
//! Datasets are stored as a single UTF-8 JSON object:
//!
//! ```json
//! {
//!   "users": ["f_00000", "f_00001"],
//!   "num_samples": [3, 2],
//!   "feature_dim": 4,
//!   "num_classes": 2,
//!   "hierarchy": {"f_00000": "cluster_0", "f_00001": "cluster_1"},
//!   "user_data": {
//!     "f_00000": {"x": [[..4 floats..], ...], "y": [0, 1, 0]},
//!     "f_00001": {"x": [...], "y": [1, 1]}
//!   }
//! }
//! ```
//!
//! `hierarchy` is optional and assigns each device to a group (used for
//! stratified metrics). `num_samples` must match the per-user `y` lengths;
//! loading validates sample counts, label ranges and feature widths and
//! names the offending device on failure.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_rng, hash_id, stream};
use rand::seq::SliceRandom;

/// One labeled observation: a dense feature vector and a class index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

/// Keyed map from device id to that device's samples.
#[derive(Debug, Clone, PartialEq)]
pub struct FederatedDataset {
    devices: IndexMap<String, Vec<Sample>>,
    hierarchy: Option<IndexMap<String, String>>,
    pub feature_dim: usize,
    pub num_classes: usize,
}

/// Per-device sample-count statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub num_devices: usize,
    pub total_samples: usize,
    pub mean_samples_per_device: f64,
    /// Population (not sample) standard deviation of per-device counts.
    pub stdev_samples_per_device: f64,
}

/// Result of a per-device train/validation/test split.
#[derive(Debug, Clone)]
pub struct SplitDataset {
    pub train: FederatedDataset,
    pub val: FederatedDataset,
    pub test: FederatedDataset,
}

/// Device subsampling request: an absolute count or a fraction of the
/// device population (rounded to the nearest count).
#[derive(Debug, Clone, Copy)]
pub enum Subsample {
    Count(usize),
    Fraction(f64),
}

impl FederatedDataset {
    /// Create an empty dataset with the given dimensions.
    pub fn empty(feature_dim: usize, num_classes: usize) -> Self {
        FederatedDataset {
            devices: IndexMap::new(),
            hierarchy: None,
            feature_dim,
            num_classes,
        }
    }

    /// Insert a device. Empty sample lists are dropped with a warning so
    /// the no-empty-device invariant holds by construction.
    pub fn insert_device(&mut self, id: impl Into<String>, samples: Vec<Sample>) {
        let id = id.into();
        if samples.is_empty() {
            log::warn!("dropping device {id:?}: no samples");
            return;
        }
        self.devices.insert(id, samples);
    }

    pub fn set_group(&mut self, id: &str, group: impl Into<String>) {
        self.hierarchy
            .get_or_insert_with(IndexMap::new)
            .insert(id.to_string(), group.into());
    }

    pub fn group_of(&self, id: &str) -> Option<&str> {
        self.hierarchy.as_ref()?.get(id).map(String::as_str)
    }

    pub fn hierarchy(&self) -> Option<&IndexMap<String, String>> {
        self.hierarchy.as_ref()
    }

    pub fn num_devices(&self) -> usize {
        self.devices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.devices.is_empty()
    }

    pub fn total_samples(&self) -> usize {
        self.devices.values().map(Vec::len).sum()
    }

    /// Device ids in canonical order.
    pub fn device_ids(&self) -> impl Iterator<Item = &str> {
        self.devices.keys().map(String::as_str)
    }

    pub fn samples(&self, id: &str) -> Option<&[Sample]> {
        self.devices.get(id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[Sample])> {
        self.devices.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// All samples in canonical order (device order, then sample order).
    pub fn all_samples(&self) -> impl Iterator<Item = &Sample> {
        self.devices.values().flatten()
    }

    /// Validate labels, feature widths and the no-empty-device invariant.
    pub fn validate(&self) -> Result<()> {
        for (id, samples) in &self.devices {
            if samples.is_empty() {
                return Err(Error::Format(format!("device {id:?} has no samples")));
            }
            for (i, s) in samples.iter().enumerate() {
                if s.features.len() != self.feature_dim {
                    return Err(Error::Format(format!(
                        "device {id:?} sample {i}: feature length {} != feature_dim {}",
                        s.features.len(),
                        self.feature_dim
                    )));
                }
                if s.label >= self.num_classes {
                    return Err(Error::Format(format!(
                        "device {id:?} sample {i}: label {} >= num_classes {}",
                        s.label, self.num_classes
                    )));
                }
                if s.features.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Format(format!(
                        "device {id:?} sample {i}: non-finite feature value"
                    )));
                }
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// File format

#[derive(Serialize, Deserialize)]
struct UserData {
    x: Vec<Vec<f64>>,
    y: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    users: Vec<String>,
    num_samples: Vec<usize>,
    feature_dim: usize,
    num_classes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    hierarchy: Option<IndexMap<String, String>>,
    user_data: IndexMap<String, UserData>,
}

/// Write `ds` to `path` in the JSON format above. Output bytes are a pure
/// function of the dataset contents.
pub fn save_dataset(ds: &FederatedDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut user_data = IndexMap::new();
    let mut users = Vec::with_capacity(ds.num_devices());
    let mut num_samples = Vec::with_capacity(ds.num_devices());
    for (id, samples) in ds.iter() {
        users.push(id.to_string());
        num_samples.push(samples.len());
        user_data.insert(
            id.to_string(),
            UserData {
                x: samples.iter().map(|s| s.features.clone()).collect(),
                y: samples.iter().map(|s| s.label).collect(),
            },
        );
    }
    let file = DatasetFile {
        users,
        num_samples,
        feature_dim: ds.feature_dim,
        num_classes: ds.num_classes,
        hierarchy: ds.hierarchy.clone(),
        user_data,
    };
    let bytes = serde_json::to_vec(&file)?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Load a dataset file, validating declared counts, label ranges and
/// feature widths. Errors name the offending device.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<FederatedDataset> {
    let path = path.as_ref();
    let bytes = fs::read(path)
        .map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
    let file: DatasetFile = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;

    if file.users.len() != file.num_samples.len() {
        return Err(Error::Format(format!(
            "users ({}) and num_samples ({}) lengths differ",
            file.users.len(),
            file.num_samples.len()
        )));
    }

    let mut ds = FederatedDataset::empty(file.feature_dim, file.num_classes);
    for (user, &declared) in file.users.iter().zip(&file.num_samples) {
        let data = file
            .user_data
            .get(user)
            .ok_or_else(|| Error::Format(format!("device {user:?} missing from user_data")))?;
        if data.x.len() != data.y.len() {
            return Err(Error::Format(format!(
                "device {user:?}: {} feature rows but {} labels",
                data.x.len(),
                data.y.len()
            )));
        }
        if data.y.len() != declared {
            return Err(Error::Format(format!(
                "device {user:?}: declares {declared} samples but contains {}",
                data.y.len()
            )));
        }
        let samples: Vec<Sample> = data
            .x
            .iter()
            .zip(&data.y)
            .map(|(x, &y)| Sample {
                features: x.clone(),
                label: y,
            })
            .collect();
        ds.insert_device(user.clone(), samples);
    }
    if let Some(h) = file.hierarchy {
        // keep only groups for devices that exist
        for (id, group) in h {
            if ds.devices.contains_key(&id) {
                ds.set_group(&id, group);
            }
        }
    }
    ds.validate()?;
    Ok(ds)
}

// ---------------------------------------------------------------------------
// Operations

/// Keep only devices with at least `min_samples` samples.
pub fn filter_min_samples(ds: &FederatedDataset, min_samples: usize) -> FederatedDataset {
    let mut out = FederatedDataset::empty(ds.feature_dim, ds.num_classes);
    for (id, samples) in ds.iter() {
        if samples.len() >= min_samples {
            out.insert_device(id, samples.to_vec());
            if let Some(g) = ds.group_of(id) {
                out.set_group(id, g);
            }
        }
    }
    if out.is_empty() {
        log::warn!("filter_min_samples(k={min_samples}) removed every device");
    }
    out
}

/// Split every device's samples into train/val/test.
///
/// Samples are shuffled per device by a stream keyed on
/// `(seed, device_id)`, then the first `floor(f_train * n)` go to train,
/// the next `floor(f_val * n)` to val and the remainder to test. Devices
/// that end up with zero samples in some split are simply absent from that
/// split's dataset.
pub fn split_train_val_test(
    ds: &FederatedDataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<SplitDataset> {
    let (f_train, f_val, f_test) = fractions;
    if f_train <= 0.0 || f_val <= 0.0 || f_test <= 0.0 {
        return Err(Error::Argument(format!(
            "split fractions must be positive, got {fractions:?}"
        )));
    }
    if (f_train + f_val + f_test - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!(
            "split fractions must sum to 1, got {fractions:?}"
        )));
    }
    for (id, samples) in ds.iter() {
        if samples.len() < 3 {
            return Err(Error::Argument(format!(
                "device {id:?} has {} samples, need >= 3 to split (filter first)",
                samples.len()
            )));
        }
    }

    let mut train = FederatedDataset::empty(ds.feature_dim, ds.num_classes);
    let mut val = FederatedDataset::empty(ds.feature_dim, ds.num_classes);
    let mut test = FederatedDataset::empty(ds.feature_dim, ds.num_classes);
    for (id, samples) in ds.iter() {
        let mut rng = derive_rng(seed, &[stream::SPLIT, hash_id(id)]);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);

        let n = samples.len();
        let n_train = (f_train * n as f64).floor() as usize;
        let n_val = (f_val * n as f64).floor() as usize;
        let take = |idx: &[usize]| -> Vec<Sample> {
            idx.iter().map(|&i| samples[i].clone()).collect()
        };
        train.insert_device(id, take(&order[..n_train]));
        val.insert_device(id, take(&order[n_train..n_train + n_val]));
        test.insert_device(id, take(&order[n_train + n_val..]));
        for out in [&mut train, &mut val, &mut test] {
            if let Some(g) = ds.group_of(id) {
                if out.devices.contains_key(id) {
                    out.set_group(id, g);
                }
            }
        }
    }
    Ok(SplitDataset { train, val, test })
}

/// Uniformly subsample devices without replacement; retained devices keep
/// their canonical order.
pub fn subsample_devices(
    ds: &FederatedDataset,
    how: Subsample,
    seed: u64,
) -> Result<FederatedDataset> {
    let n = ds.num_devices();
    let count = match how {
        Subsample::Count(c) => c,
        Subsample::Fraction(f) => {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Argument(format!(
                    "subsample fraction must be in [0, 1], got {f}"
                )));
            }
            (f * n as f64).round() as usize
        }
    };
    if count > n {
        return Err(Error::Argument(format!(
            "cannot subsample {count} of {n} devices"
        )));
    }
    let mut rng = derive_rng(seed, &[stream::SUBSAMPLE]);
    let mut picked = rand::seq::index::sample(&mut rng, n, count).into_vec();
    picked.sort_unstable();

    let mut out = FederatedDataset::empty(ds.feature_dim, ds.num_classes);
    for idx in picked {
        let (id, samples) = ds.devices.get_index(idx).expect("index in range");
        out.insert_device(id.clone(), samples.clone());
        if let Some(g) = ds.group_of(id) {
            out.set_group(id, g);
        }
    }
    Ok(out)
}

/// Collapse the device partition: one device `"iid_all"` holding every
/// sample, shuffled by `seed`.
pub fn mix_iid(ds: &FederatedDataset, seed: u64) -> Result<FederatedDataset> {
    if ds.is_empty() {
        return Err(Error::Argument("mix_iid: empty dataset".into()));
    }
    let mut all: Vec<Sample> = ds.all_samples().cloned().collect();
    let mut rng = derive_rng(seed, &[stream::MIX]);
    all.shuffle(&mut rng);
    let mut out = FederatedDataset::empty(ds.feature_dim, ds.num_classes);
    out.insert_device("iid_all", all);
    Ok(out)
}

/// Mean and population standard deviation of per-device sample counts.
pub fn dataset_stats(ds: &FederatedDataset) -> Result<DatasetStats> {
    if ds.is_empty() {
        return Err(Error::Argument("dataset_stats: empty dataset".into()));
    }
    let counts: Vec<f64> = ds.devices.values().map(|s| s.len() as f64).collect();
    let n = counts.len() as f64;
    let total: f64 = counts.iter().sum();
    let mean = total / n;
    let var = counts.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / n;
    Ok(DatasetStats {
        num_devices: ds.num_devices(),
        total_samples: total as usize,
        mean_samples_per_device: mean,
        stdev_samples_per_device: var.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn sample(features: Vec<f64>, label: usize) -> Sample {
        Sample { features, label }
    }

    /// Dataset with the given per-device sample counts; 2 features, 2 classes.
    fn counts_dataset(counts: &[usize]) -> FederatedDataset {
        let mut ds = FederatedDataset::empty(2, 2);
        for (d, &n) in counts.iter().enumerate() {
            let samples = (0..n)
                .map(|i| sample(vec![d as f64, i as f64], i % 2))
                .collect();
            ds.insert_device(format!("dev_{d:03}"), samples);
        }
        ds
    }

    #[test]
    fn filter_retains_by_count() {
        let ds = counts_dataset(&[2, 3, 10]);
        let out = filter_min_samples(&ds, 3);
        assert_eq!(out.num_devices(), 2);
        let ids: Vec<_> = out.device_ids().collect();
        assert_eq!(ids, ["dev_001", "dev_002"]);
    }

    #[test]
    fn filter_k1_is_identity() {
        let ds = counts_dataset(&[2, 3, 10]);
        assert_eq!(filter_min_samples(&ds, 1), ds);
    }

    #[test]
    fn filter_above_max_empties() {
        let ds = counts_dataset(&[2, 3, 10]);
        let out = filter_min_samples(&ds, 11);
        assert!(out.is_empty());
    }

    #[test]
    fn filter_is_idempotent() {
        let ds = counts_dataset(&[1, 2, 3, 4, 5, 6]);
        let once = filter_min_samples(&ds, 4);
        let twice = filter_min_samples(&once, 4);
        assert_eq!(once, twice);
    }

    #[test]
    fn split_counts_follow_floor_rule() {
        // 10 samples -> 6/2/2, 5 -> 3/1/1 per the floor-floor-remainder rule
        for (n, want) in [(10usize, (6, 2, 2)), (5, (3, 1, 1))] {
            let ds = counts_dataset(&[n]);
            let s = split_train_val_test(&ds, (0.6, 0.2, 0.2), 1).unwrap();
            assert_eq!(s.train.samples("dev_000").unwrap().len(), want.0);
            assert_eq!(s.val.samples("dev_000").unwrap().len(), want.1);
            assert_eq!(s.test.samples("dev_000").unwrap().len(), want.2);
        }
    }

    #[test]
    fn split_rounding_rule_enumerated() {
        // Independent statement of the rounding rule over n = 3..12:
        // train = floor(0.6 n), val = floor(0.2 n), test = the rest.
        for n in 3usize..=12 {
            let ds = counts_dataset(&[n]);
            let s = split_train_val_test(&ds, (0.6, 0.2, 0.2), 7).unwrap();
            let expect_train = (3 * n) / 5; // floor(0.6 n) exactly for these fractions
            let expect_val = n / 5;
            let got_train = s.train.samples("dev_000").unwrap().len();
            let got_val = s.val.samples("dev_000").map_or(0, |v| v.len());
            let got_test = s.test.samples("dev_000").unwrap().len();
            assert_eq!(got_train, expect_train, "n={n}");
            assert_eq!(got_val, expect_val, "n={n}");
            assert_eq!(got_train + got_val + got_test, n, "n={n}");
        }
        // n=4 -> 2/0/2 is legal; the device is simply absent from val
        let ds = counts_dataset(&[4]);
        let s = split_train_val_test(&ds, (0.6, 0.2, 0.2), 7).unwrap();
        assert!(s.val.samples("dev_000").is_none());
        assert_eq!(s.test.samples("dev_000").unwrap().len(), 2);
    }

    #[test]
    fn split_union_is_original_multiset() {
        let ds = counts_dataset(&[3, 7, 11, 4]);
        let s = split_train_val_test(&ds, (0.6, 0.2, 0.2), 3).unwrap();
        for (id, samples) in ds.iter() {
            let mut expect: BTreeMap<String, usize> = BTreeMap::new();
            for smp in samples {
                *expect.entry(format!("{smp:?}")).or_default() += 1;
            }
            let mut got: BTreeMap<String, usize> = BTreeMap::new();
            for part in [&s.train, &s.val, &s.test] {
                for smp in part.samples(id).unwrap_or(&[]) {
                    *got.entry(format!("{smp:?}")).or_default() += 1;
                }
            }
            assert_eq!(expect, got, "device {id}");
        }
    }

    #[test]
    fn split_rejects_tiny_devices() {
        let ds = counts_dataset(&[5, 2]);
        let err = split_train_val_test(&ds, (0.6, 0.2, 0.2), 1).unwrap_err();
        assert!(err.to_string().contains("dev_001"), "{err}");
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let ds = counts_dataset(&[5]);
        assert!(split_train_val_test(&ds, (0.6, 0.2, 0.3), 1).is_err());
        assert!(split_train_val_test(&ds, (1.2, -0.1, -0.1), 1).is_err());
    }

    #[test]
    fn subsample_count_and_determinism() {
        let ds = counts_dataset(&[3; 50]);
        let a = subsample_devices(&ds, Subsample::Count(18), 9).unwrap();
        let b = subsample_devices(&ds, Subsample::Count(18), 9).unwrap();
        assert_eq!(a.num_devices(), 18);
        assert_eq!(a, b);
        // order preserved from the source
        let ids: Vec<_> = a.device_ids().map(str::to_string).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
    }

    #[test]
    fn subsample_full_fraction_is_identity() {
        let ds = counts_dataset(&[3, 4, 5]);
        let out = subsample_devices(&ds, Subsample::Fraction(1.0), 2).unwrap();
        assert_eq!(out, ds);
    }

    #[test]
    fn subsample_too_many_errors() {
        let ds = counts_dataset(&[3, 4]);
        assert!(subsample_devices(&ds, Subsample::Count(3), 0).is_err());
    }

    #[test]
    fn mix_iid_conserves_samples_and_labels() {
        let ds = counts_dataset(&[10; 5]);
        let out = mix_iid(&ds, 4).unwrap();
        assert_eq!(out.num_devices(), 1);
        assert_eq!(out.samples("iid_all").unwrap().len(), 50);
        let mut before: Vec<usize> = ds.all_samples().map(|s| s.label).collect();
        let mut after: Vec<usize> = out.all_samples().map(|s| s.label).collect();
        before.sort_unstable();
        after.sort_unstable();
        assert_eq!(before, after);
        // determinism
        assert_eq!(out, mix_iid(&ds, 4).unwrap());
    }

    #[test]
    fn stats_small_cases() {
        let s = dataset_stats(&counts_dataset(&[2, 4])).unwrap();
        assert_eq!(s.mean_samples_per_device, 3.0);
        assert_eq!(s.stdev_samples_per_device, 1.0);
        let s1 = dataset_stats(&counts_dataset(&[7])).unwrap();
        assert_eq!(s1.stdev_samples_per_device, 0.0);
        assert!(dataset_stats(&FederatedDataset::empty(1, 2)).is_err());
    }

    #[test]
    fn stats_match_published_shape() {
        // 3550 devices totalling 805263 samples -> mean 226.83 regardless
        // of how the counts are distributed.
        let n = 3550usize;
        let total = 805_263usize;
        let base = total / n;
        let rem = total % n;
        let counts: Vec<usize> = (0..n).map(|i| base + usize::from(i < rem)).collect();
        let ds = counts_dataset(&counts);
        let s = dataset_stats(&ds).unwrap();
        assert_eq!(s.total_samples, total);
        assert!((s.mean_samples_per_device - 226.83).abs() <= 0.01);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.json");
        let mut ds = counts_dataset(&[3, 4]);
        ds.set_group("dev_000", "a");
        ds.set_group("dev_001", "b");
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn load_rejects_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(
            &path,
            r#"{"users":["u"],"num_samples":[3],"feature_dim":1,"num_classes":2,
                "user_data":{"u":{"x":[[0.0],[1.0]],"y":[0,1]}}}"#,
        )
        .unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("\"u\""), "{err}");
        assert!(err.to_string().contains("declares 3"), "{err}");
    }

    #[test]
    fn load_rejects_label_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(
            &path,
            r#"{"users":["u"],"num_samples":[1],"feature_dim":1,"num_classes":2,
                "user_data":{"u":{"x":[[0.0]],"y":[2]}}}"#,
        )
        .unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("label 2"), "{err}");
    }

    #[test]
    fn load_empty_users_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.json");
        std::fs::write(
            &path,
            r#"{"users":[],"num_samples":[],"feature_dim":3,"num_classes":2,"user_data":{}}"#,
        )
        .unwrap();
        let ds = load_dataset(&path).unwrap();
        assert_eq!(ds.num_devices(), 0);
        assert_eq!(ds.feature_dim, 3);
    }
}
