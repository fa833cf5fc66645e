//! Statistical and systems metrics over per-device accuracies and round
//! logs.
//!
//! # Quantile rules (frozen)
//!
//! Percentiles must be reproducible bit-for-bit, so the interpolation
//! rules are fixed here:
//!
//! - **Unweighted** (`per_device`): sort the `n` values; the `p`-th
//!   percentile sits at rank `r = p/100 * (n - 1)` and is linearly
//!   interpolated between the neighboring order statistics.
//! - **Weighted** (`per_sample`, weights `w_i = n_i`): place sorted item
//!   `i` at the normalized cumulative-weight midpoint
//!   `c_i = (sum_{j<=i} w_j - w_i/2) / W`, rescale the positions so the
//!   first item sits at 0 and the last at 1, and interpolate linearly
//!   between neighbors. With equal weights this collapses exactly to the
//!   unweighted rule.
//! - **Expansion rule** ([`expanded_quantile`]): for integer weights,
//!   exactly the unweighted rule applied to the virtual multiset in which
//!   item `i` appears `w_i` times. This is the variant to use when results
//!   must match an explicit expansion; it intentionally differs from the
//!   midpoint rule, which treats each device as one point mass.
//!
//! Systems budgets scan the evaluated rounds of a run in order and report
//! the cumulative FLOPs and transferred bytes at the first round whose
//! weighted accuracy reaches a threshold.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fedalgo::RoundLog;

/// How device accuracies are aggregated: every device equally important,
/// or every sample equally important.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    PerDevice,
    PerSample,
}

impl std::fmt::Display for Weighting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Weighting::PerDevice => write!(f, "per_device"),
            Weighting::PerSample => write!(f, "per_sample"),
        }
    }
}

/// One device's evaluation result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceAccuracy {
    pub device_id: String,
    pub accuracy: f64,
    pub sample_count: usize,
}

/// Percentile summary of device accuracies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub weighting: Weighting,
    pub n_devices: usize,
    pub mean: f64,
    pub p10: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub p90: f64,
}

/// Cumulative cost to first reach an accuracy threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemsBudget {
    pub threshold: f64,
    pub reached: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub round_reached: Option<usize>,
    pub total_flops: u64,
    pub total_bytes_up: u64,
    pub total_bytes_down: u64,
}

/// Unweighted percentile (the frozen `r = q * (n-1)` rule). `q` in [0, 1];
/// `values` need not be sorted.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Argument("quantile of empty input".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    Ok(sorted_quantile(&sorted, q))
}

fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let r = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = r.floor() as usize;
    let hi = r.ceil() as usize;
    let frac = r - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Weighted percentile under the normalized cumulative-midpoint rule.
pub fn weighted_quantile(values: &[f64], weights: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Argument("quantile of empty input".into()));
    }
    if values.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} values vs {} weights",
            values.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|&w| w <= 0.0 || !w.is_finite()) {
        return Err(Error::Argument("weights must be positive and finite".into()));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let n = order.len();
    if n == 1 {
        return Ok(values[order[0]]);
    }
    // midpoint positions, then rescaled so position_0 = 0, position_{n-1} = 1
    let mut positions = Vec::with_capacity(n);
    let mut cum = 0.0;
    for &i in &order {
        let w = weights[i];
        positions.push(cum + w / 2.0);
        cum += w;
    }
    let first = positions[0];
    let last = positions[n - 1];
    let span = last - first;
    let q = q.clamp(0.0, 1.0);
    let target = first + q * span;
    // positions are nondecreasing; find the bracketing pair
    let mut idx = 0;
    while idx + 1 < n && positions[idx + 1] < target {
        idx += 1;
    }
    let (p0, p1) = (positions[idx], positions[idx + 1]);
    let (v0, v1) = (values[order[idx]], values[order[idx + 1]]);
    if p1 == p0 {
        return Ok(v1);
    }
    let frac = ((target - p0) / (p1 - p0)).clamp(0.0, 1.0);
    Ok(v0 * (1.0 - frac) + v1 * frac)
}

/// Expansion-consistent weighted percentile: for positive integer weights
/// this equals [`quantile`] on the multiset where item `i` is repeated
/// `w_i` times, without materializing the expansion.
pub fn expanded_quantile(values: &[f64], weights: &[usize], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Argument("quantile of empty input".into()));
    }
    if values.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} values vs {} weights",
            values.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|&w| w == 0) {
        return Err(Error::Argument("weights must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite values"));
    let total: usize = weights.iter().sum();
    if total == 1 {
        return Ok(values[order[0]]);
    }
    let r = q.clamp(0.0, 1.0) * (total - 1) as f64;
    let lo = r.floor() as usize;
    let hi = r.ceil() as usize;
    let frac = r - lo as f64;
    let value_at = |expanded_idx: usize| -> f64 {
        let mut cum = 0usize;
        for &i in &order {
            cum += weights[i];
            if expanded_idx < cum {
                return values[i];
            }
        }
        values[*order.last().expect("nonempty")]
    };
    Ok(value_at(lo) * (1.0 - frac) + value_at(hi) * frac)
}

/// Summarize device accuracies under the requested weighting.
pub fn summarize_accuracy(entries: &[DeviceAccuracy], weighting: Weighting) -> Result<AccuracySummary> {
    if entries.is_empty() {
        return Err(Error::Argument("summarize_accuracy: no entries".into()));
    }
    for e in entries {
        if !(0.0..=1.0).contains(&e.accuracy) {
            return Err(Error::Argument(format!(
                "device {:?}: accuracy {} outside [0, 1]",
                e.device_id, e.accuracy
            )));
        }
        if e.sample_count == 0 {
            return Err(Error::Argument(format!(
                "device {:?}: sample_count must be >= 1",
                e.device_id
            )));
        }
    }
    let values: Vec<f64> = entries.iter().map(|e| e.accuracy).collect();
    let (mean, pct): (f64, Vec<f64>) = match weighting {
        Weighting::PerDevice => {
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            let pct = [0.10, 0.25, 0.50, 0.75, 0.90]
                .iter()
                .map(|&q| quantile(&values, q))
                .collect::<Result<_>>()?;
            (mean, pct)
        }
        Weighting::PerSample => {
            let weights: Vec<f64> = entries.iter().map(|e| e.sample_count as f64).collect();
            let total: f64 = weights.iter().sum();
            let mean = values
                .iter()
                .zip(&weights)
                .map(|(v, w)| v * w)
                .sum::<f64>()
                / total;
            let pct = [0.10, 0.25, 0.50, 0.75, 0.90]
                .iter()
                .map(|&q| weighted_quantile(&values, &weights, q))
                .collect::<Result<_>>()?;
            (mean, pct)
        }
    };
    Ok(AccuracySummary {
        weighting,
        n_devices: entries.len(),
        mean,
        p10: pct[0],
        p25: pct[1],
        p50: pct[2],
        p75: pct[3],
        p90: pct[4],
    })
}

/// One summary per hierarchy group; devices without a group fall into
/// `"ungrouped"`.
pub fn stratified_accuracy(
    entries: &[DeviceAccuracy],
    hierarchy: &BTreeMap<String, String>,
    weighting: Weighting,
) -> Result<BTreeMap<String, AccuracySummary>> {
    let mut by_group: BTreeMap<String, Vec<DeviceAccuracy>> = BTreeMap::new();
    for e in entries {
        let group = hierarchy
            .get(&e.device_id)
            .cloned()
            .unwrap_or_else(|| "ungrouped".to_string());
        by_group.entry(group).or_default().push(e.clone());
    }
    by_group
        .into_iter()
        .map(|(g, es)| Ok((g, summarize_accuracy(&es, weighting)?)))
        .collect()
}

/// Weighted mean accuracy of one evaluation (the scalar the budget
/// threshold is compared against).
pub fn weighted_mean_accuracy(entries: &[DeviceAccuracy], weighting: Weighting) -> Result<f64> {
    Ok(summarize_accuracy(entries, weighting)?.mean)
}

/// Scan `logs` in round order for the first evaluated round whose weighted
/// accuracy reaches `threshold`; report the cumulative systems counters at
/// that point (or the end-of-run totals when never reached).
pub fn systems_budget(
    logs: &[RoundLog],
    threshold: f64,
    weighting: Weighting,
) -> Result<SystemsBudget> {
    let mut saw_eval = false;
    let mut last: Option<&RoundLog> = None;
    for log in logs {
        if let Some(entries) = &log.eval {
            saw_eval = true;
            let acc = weighted_mean_accuracy(entries, weighting)?;
            if acc >= threshold {
                return Ok(SystemsBudget {
                    threshold,
                    reached: true,
                    round_reached: Some(log.round),
                    total_flops: log.cumulative_flops,
                    total_bytes_up: log.cumulative_bytes_up,
                    total_bytes_down: log.cumulative_bytes_down,
                });
            }
        }
        last = Some(log);
    }
    if !saw_eval {
        return Err(Error::Argument(
            "systems_budget: no evaluated rounds in the log".into(),
        ));
    }
    let last = last.expect("nonempty because an eval was seen");
    Ok(SystemsBudget {
        threshold,
        reached: false,
        round_reached: None,
        total_flops: last.cumulative_flops,
        total_bytes_up: last.cumulative_bytes_up,
        total_bytes_down: last.cumulative_bytes_down,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entries(pairs: &[(f64, usize)]) -> Vec<DeviceAccuracy> {
        pairs
            .iter()
            .enumerate()
            .map(|(i, &(accuracy, sample_count))| DeviceAccuracy {
                device_id: format!("d{i}"),
                accuracy,
                sample_count,
            })
            .collect()
    }

    #[test]
    fn per_device_median_of_ten() {
        let es: Vec<DeviceAccuracy> =
            entries(&(1..=10).map(|i| (i as f64 / 10.0, 1)).collect::<Vec<_>>());
        let s = summarize_accuracy(&es, Weighting::PerDevice).unwrap();
        assert!((s.p50 - 0.55).abs() < 1e-12);
        assert!((s.mean - 0.55).abs() < 1e-12);
    }

    #[test]
    fn single_device_degenerate() {
        let es = entries(&[(0.73, 9)]);
        for w in [Weighting::PerDevice, Weighting::PerSample] {
            let s = summarize_accuracy(&es, w).unwrap();
            for v in [s.p10, s.p25, s.p50, s.p75, s.p90, s.mean] {
                assert_eq!(v, 0.73);
            }
        }
    }

    #[test]
    fn equal_counts_collapse_to_per_device() {
        let es = entries(&[(0.2, 7), (0.9, 7), (0.5, 7), (0.1, 7), (0.6, 7)]);
        let a = summarize_accuracy(&es, Weighting::PerDevice).unwrap();
        let b = summarize_accuracy(&es, Weighting::PerSample).unwrap();
        for (x, y) in [
            (a.p10, b.p10),
            (a.p25, b.p25),
            (a.p50, b.p50),
            (a.p75, b.p75),
            (a.p90, b.p90),
            (a.mean, b.mean),
        ] {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn summary_orders_percentiles() {
        let es = entries(&[(0.9, 3), (0.1, 50), (0.4, 2), (0.7, 9), (0.3, 30)]);
        for w in [Weighting::PerDevice, Weighting::PerSample] {
            let s = summarize_accuracy(&es, w).unwrap();
            assert!(s.p10 <= s.p25 && s.p25 <= s.p50 && s.p50 <= s.p75 && s.p75 <= s.p90);
            assert!(s.p10 >= 0.0 && s.p90 <= 1.0);
        }
    }

    #[test]
    fn rejects_bad_entries() {
        assert!(summarize_accuracy(&[], Weighting::PerDevice).is_err());
        assert!(summarize_accuracy(&entries(&[(1.2, 1)]), Weighting::PerDevice).is_err());
        assert!(summarize_accuracy(&entries(&[(0.5, 0)]), Weighting::PerSample).is_err());
    }

    #[test]
    fn monotone_under_uniform_shift() {
        let base = entries(&[(0.2, 4), (0.35, 2), (0.5, 9), (0.8, 1)]);
        let delta = 0.1;
        let shifted: Vec<DeviceAccuracy> = base
            .iter()
            .map(|e| DeviceAccuracy {
                device_id: e.device_id.clone(),
                accuracy: (e.accuracy + delta).min(1.0),
                sample_count: e.sample_count,
            })
            .collect();
        for w in [Weighting::PerDevice, Weighting::PerSample] {
            let a = summarize_accuracy(&base, w).unwrap();
            let b = summarize_accuracy(&shifted, w).unwrap();
            for (x, y) in [
                (a.mean, b.mean),
                (a.p10, b.p10),
                (a.p25, b.p25),
                (a.p50, b.p50),
                (a.p75, b.p75),
                (a.p90, b.p90),
            ] {
                assert!(y - x >= -1e-15 && y - x <= delta + 1e-15, "{x} -> {y}");
            }
        }
    }

    #[test]
    fn expansion_rule_matches_explicit_expansion() {
        let values = [0.3, 0.9, 0.1, 0.6];
        let weights = [2usize, 5, 1, 3];
        let mut expanded = Vec::new();
        for (v, &w) in values.iter().zip(&weights) {
            expanded.extend(std::iter::repeat(*v).take(w));
        }
        for q in [0.0, 0.1, 0.25, 0.33, 0.5, 0.75, 0.9, 1.0] {
            let a = expanded_quantile(&values, &weights, q).unwrap();
            let b = quantile(&expanded, q).unwrap();
            assert!((a - b).abs() < 1e-12, "q={q}: {a} vs {b}");
        }
    }

    #[test]
    fn stratified_partitions_devices() {
        let es = entries(&[(0.1, 1), (0.2, 1), (0.8, 1), (0.9, 1)]);
        let mut hierarchy = BTreeMap::new();
        hierarchy.insert("d0".into(), "low".into());
        hierarchy.insert("d1".into(), "low".into());
        hierarchy.insert("d2".into(), "high".into());
        hierarchy.insert("d3".into(), "high".into());
        let by = stratified_accuracy(&es, &hierarchy, Weighting::PerDevice).unwrap();
        assert_eq!(by.len(), 2);
        assert!(by["low"].mean < by["high"].mean);
        let total: usize = by.values().map(|s| s.n_devices).sum();
        assert_eq!(total, es.len());

        // no hierarchy info -> one "ungrouped" summary equal to the global one
        let solo = stratified_accuracy(&es, &BTreeMap::new(), Weighting::PerDevice).unwrap();
        assert_eq!(solo.len(), 1);
        assert_eq!(solo["ungrouped"], summarize_accuracy(&es, Weighting::PerDevice).unwrap());
    }

    fn round_with_eval(round: usize, acc: f64, flops: u64) -> RoundLog {
        RoundLog {
            round,
            participants: vec!["d0".into()],
            train_loss: 1.0,
            client_dispersion: None,
            eval: Some(entries(&[(acc, 10)])),
            cumulative_flops: flops,
            cumulative_bytes_up: flops * 2,
            cumulative_bytes_down: flops * 3,
        }
    }

    #[test]
    fn budget_first_crossing() {
        let logs = vec![
            round_with_eval(0, 0.5, 100),
            round_with_eval(1, 0.7, 200),
            round_with_eval(2, 0.8, 300),
        ];
        let b = systems_budget(&logs, 0.75, Weighting::PerSample).unwrap();
        assert!(b.reached);
        assert_eq!(b.round_reached, Some(2));
        assert_eq!(b.total_flops, 300);
        assert_eq!(b.total_bytes_up, 600);

        let b0 = systems_budget(&logs, 0.0, Weighting::PerSample).unwrap();
        assert_eq!(b0.round_reached, Some(0));

        let never = systems_budget(&logs, 1.1, Weighting::PerSample).unwrap();
        assert!(!never.reached);
        assert_eq!(never.round_reached, None);
        assert_eq!(never.total_flops, 300);
    }

    #[test]
    fn budget_requires_evaluations() {
        let mut log = round_with_eval(0, 0.5, 1);
        log.eval = None;
        assert!(systems_budget(&[log], 0.5, Weighting::PerSample).is_err());
    }

    #[test]
    fn budget_round_monotone_in_threshold() {
        let logs: Vec<RoundLog> = (0..10)
            .map(|r| round_with_eval(r, r as f64 / 10.0, (r as u64 + 1) * 10))
            .collect();
        let mut prev_round = usize::MAX;
        for threshold in [0.85, 0.6, 0.35, 0.1] {
            let b = systems_budget(&logs, threshold, Weighting::PerSample).unwrap();
            let round = b.round_reached.unwrap();
            assert!(round <= prev_round);
            prev_round = round;
        }
    }
}
