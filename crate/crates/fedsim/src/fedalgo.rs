//! Round-based federated training engines: FedAvg, federated minibatch
//! SGD, and Reptile, plus the local-only and global-IID baseline pipelines
//! and personalized (fine-tuned) evaluation.
//!
//! All engines share one structure per round: select clients, run their
//! updates in parallel against an immutable snapshot of the global
//! parameters, then apply a deterministic ordered reduction (aggregation
//! in ascending device-id order). Client randomness comes from streams
//! keyed by `(seed, round, device_id)`, so results are byte-identical no
//! matter how many worker threads execute the clients. Across rounds
//! execution is strictly sequential.
//!
//! Accounting: `cumulative_flops` counts training compute only (gradient
//! evaluations and parameter updates; evaluation passes are free), and
//! each participating client costs one model download and one upload of
//! `param_len * bytes_per_param` bytes per round.
//!
//! The per-round `train_loss` is the sample-weighted mean loss of the
//! *incoming* global parameters on the participants' train data. When a
//! run diverges hard enough that this loss overflows, the round logs
//! `f64::INFINITY` (serialized as JSON `null`) instead of failing.

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{FederatedDataset, Sample, SplitDataset};
use crate::error::{Error, Result};
use crate::metrics::DeviceAccuracy;
use crate::model::{self, ModelSpec, ParamBlock};
use crate::rng::{derive_rng, hash_id, stream};

/// How client contributions are weighted during aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientWeighting {
    /// Weight by device sample count `n_k` (the usual FedAvg convention).
    BySamples,
    /// Every participating device counts equally.
    Equal,
}

/// Hyperparameters shared by the round-based engines.
///
/// The `seed` is injected by the caller (it is the experiment master
/// seed, not part of the serialized config).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedConfig {
    pub rounds: usize,
    pub clients_per_round: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub client_lr: f64,
    /// Server step size for minibatch SGD; defaults to `client_lr`.
    pub server_lr: Option<f64>,
    /// Fraction of each client's data used per minibatch-SGD gradient.
    pub data_fraction: f64,
    pub meta_lr_start: f64,
    pub meta_lr_end: f64,
    pub inner_steps: usize,
    pub inner_batch: usize,
    /// Personalized-evaluation schedule (0 steps = no fine-tuning).
    pub finetune_steps: usize,
    pub finetune_batch: usize,
    /// Fine-tuning step size; defaults to `client_lr`.
    pub finetune_lr: Option<f64>,
    pub weighting: ClientWeighting,
    /// Evaluate every this many rounds (the final round is always
    /// evaluated); 0 disables periodic evaluation.
    pub eval_every: usize,
    /// Fraction of test devices evaluated (chosen once per run).
    pub eval_device_fraction: f64,
    pub bytes_per_param: u64,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for FedConfig {
    fn default() -> Self {
        FedConfig {
            rounds: 100,
            clients_per_round: 10,
            local_epochs: 1,
            batch_size: 10,
            client_lr: 0.1,
            server_lr: None,
            data_fraction: 1.0,
            meta_lr_start: 2.0,
            meta_lr_end: 0.0,
            inner_steps: 10,
            inner_batch: 5,
            finetune_steps: 50,
            finetune_batch: 5,
            finetune_lr: None,
            weighting: ClientWeighting::BySamples,
            eval_every: 1,
            eval_device_fraction: 1.0,
            bytes_per_param: 4,
            seed: 0,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds < 1 {
            return Err(Error::Config("rounds must be >= 1".into()));
        }
        if self.clients_per_round < 1 {
            return Err(Error::Config("clients_per_round must be >= 1".into()));
        }
        if self.local_epochs < 1 {
            return Err(Error::Config("local_epochs must be >= 1".into()));
        }
        if self.batch_size < 1 || self.inner_batch < 1 {
            return Err(Error::Config("batch sizes must be >= 1".into()));
        }
        if self.inner_steps < 1 {
            return Err(Error::Config("inner_steps must be >= 1".into()));
        }
        if !(self.client_lr > 0.0) || !(self.effective_server_lr() > 0.0) {
            return Err(Error::Config("learning rates must be > 0".into()));
        }
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return Err(Error::Config("data_fraction must be in (0, 1]".into()));
        }
        if !(self.eval_device_fraction > 0.0 && self.eval_device_fraction <= 1.0) {
            return Err(Error::Config("eval_device_fraction must be in (0, 1]".into()));
        }
        if !self.meta_lr_start.is_finite() || !self.meta_lr_end.is_finite() {
            return Err(Error::Config("meta learning rates must be finite".into()));
        }
        if self.finetune_batch < 1 {
            return Err(Error::Config("finetune_batch must be >= 1".into()));
        }
        if let Some(lr) = self.finetune_lr {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(Error::Config("finetune_lr must be finite and >= 0".into()));
            }
        }
        if self.bytes_per_param < 1 {
            return Err(Error::Config("bytes_per_param must be >= 1".into()));
        }
        Ok(())
    }

    pub fn effective_server_lr(&self) -> f64 {
        self.server_lr.unwrap_or(self.client_lr)
    }

    pub fn effective_finetune_lr(&self) -> f64 {
        self.finetune_lr.unwrap_or(self.client_lr)
    }
}

/// Mutable training state carried from round to round.
#[derive(Debug, Clone, PartialEq)]
pub struct FedState {
    pub params: ParamBlock,
    pub cumulative_flops: u64,
    pub cumulative_bytes_up: u64,
    pub cumulative_bytes_down: u64,
}

impl FedState {
    pub fn new(params: ParamBlock) -> Self {
        FedState {
            params,
            cumulative_flops: 0,
            cumulative_bytes_up: 0,
            cumulative_bytes_down: 0,
        }
    }
}

/// What happened in one training round. `round` is 0-based. `eval` is
/// filled in by the caller on evaluation rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub participants: Vec<String>,
    pub train_loss: f64,
    /// Mean pairwise L2 distance among the clients' resulting parameter
    /// vectors (absent with fewer than two participants).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub client_dispersion: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<Vec<DeviceAccuracy>>,
    pub cumulative_flops: u64,
    pub cumulative_bytes_up: u64,
    pub cumulative_bytes_down: u64,
}

/// A locally trained model and the learning rate that won the grid
/// search for its device.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalModel {
    pub params: ParamBlock,
    pub lr: f64,
}

// ---------------------------------------------------------------------------
// Client selection

/// Sample `c` devices uniformly without replacement from a stream keyed
/// by `(seed, round)`, returned in the dataset's canonical device order.
pub fn select_clients(
    ds: &FederatedDataset,
    c: usize,
    round: usize,
    seed: u64,
) -> Result<Vec<String>> {
    let n = ds.num_devices();
    if c < 1 {
        return Err(Error::Config("clients_per_round must be >= 1".into()));
    }
    if c > n {
        return Err(Error::Config(format!(
            "clients_per_round {c} exceeds device count {n}"
        )));
    }
    let mut rng = derive_rng(seed, &[stream::SELECT, round as u64]);
    let mut picked = rand::seq::index::sample(&mut rng, n, c).into_vec();
    picked.sort_unstable();
    let ids: Vec<&str> = ds.device_ids().collect();
    Ok(picked.into_iter().map(|i| ids[i].to_string()).collect())
}

/// Choose the evaluation subset once per run: `ceil(fraction * n)`
/// devices in canonical order from the `(seed, eval)` stream.
pub fn select_eval_devices(
    ds: &FederatedDataset,
    fraction: f64,
    seed: u64,
) -> Result<Vec<String>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config("eval_device_fraction must be in (0, 1]".into()));
    }
    let n = ds.num_devices();
    if n == 0 {
        return Err(Error::Argument("no devices to evaluate".into()));
    }
    let m = ((fraction * n as f64).ceil() as usize).clamp(1, n);
    if m == n {
        return Ok(ds.device_ids().map(str::to_string).collect());
    }
    let mut rng = derive_rng(seed, &[stream::EVAL]);
    let mut picked = rand::seq::index::sample(&mut rng, n, m).into_vec();
    picked.sort_unstable();
    let ids: Vec<&str> = ds.device_ids().collect();
    Ok(picked.into_iter().map(|i| ids[i].to_string()).collect())
}

// ---------------------------------------------------------------------------
// Local training primitives

/// `epochs` passes of minibatch SGD from `global`; each pass reshuffles
/// from `rng` and the final partial batch is included. Returns the
/// updated parameters, the device sample count and the flops spent.
pub fn local_update(
    spec: &ModelSpec,
    global: &ParamBlock,
    train: &[Sample],
    epochs: usize,
    batch_size: usize,
    lr: f64,
    rng: &mut ChaCha12Rng,
) -> Result<(ParamBlock, usize, u64)> {
    if train.is_empty() {
        return Err(Error::Argument("local_update: device has no training data".into()));
    }
    if batch_size < 1 {
        return Err(Error::Argument("local_update: batch_size must be >= 1".into()));
    }
    let mut params = global.clone();
    let mut flops = 0u64;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut members = Vec::with_capacity(batch_size.min(train.len()));
    let mut batch: Vec<Sample> = Vec::with_capacity(batch_size.min(train.len()));
    for _ in 0..epochs {
        order.shuffle(rng);
        for chunk in order.chunks(batch_size) {
            // shuffling decides batch membership only; accumulating each
            // batch in canonical order keeps full-batch passes bit-equal
            // to plain gradient descent
            members.clear();
            members.extend_from_slice(chunk);
            members.sort_unstable();
            batch.clear();
            batch.extend(members.iter().map(|&i| train[i].clone()));
            let g = model::gradient(spec, &params, &batch)?;
            params = model::sgd_step(&params, &g.grad, lr)?;
            flops += g.flops + model::update_flops(spec);
        }
    }
    Ok((params, train.len(), flops))
}

/// `steps` minibatches of SGD, cycling through reshuffled passes over
/// `data` (batches truncate at pass boundaries). Used by the Reptile
/// inner loop and by fine-tuning.
pub fn sgd_steps(
    spec: &ModelSpec,
    start: &ParamBlock,
    data: &[Sample],
    steps: usize,
    batch_size: usize,
    lr: f64,
    rng: &mut ChaCha12Rng,
) -> Result<(ParamBlock, u64)> {
    if data.is_empty() {
        return Err(Error::Argument("sgd_steps: no training data".into()));
    }
    let n = data.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut pos = n; // forces a shuffle before the first batch
    let mut params = start.clone();
    let mut flops = 0u64;
    let mut members = Vec::with_capacity(batch_size.min(n));
    let mut batch: Vec<Sample> = Vec::with_capacity(batch_size.min(n));
    for _ in 0..steps {
        if pos >= n {
            order.shuffle(rng);
            pos = 0;
        }
        let end = (pos + batch_size).min(n);
        members.clear();
        members.extend_from_slice(&order[pos..end]);
        members.sort_unstable();
        batch.clear();
        batch.extend(members.iter().map(|&i| data[i].clone()));
        pos = end;
        let g = model::gradient(spec, &params, &batch)?;
        params = model::sgd_step(&params, &g.grad, lr)?;
        flops += g.flops + model::update_flops(spec);
    }
    Ok((params, flops))
}

/// Loss of `params` on a device's data, with numeric overflow reported
/// as infinity rather than as an error (this is logging, not training).
fn device_loss(spec: &ModelSpec, params: &ParamBlock, data: &[Sample]) -> Result<f64> {
    match model::forward_loss(spec, params, data) {
        Ok(r) => Ok(r.mean_loss),
        Err(Error::Numeric(_)) => {
            log::warn!("train loss overflowed; logging inf");
            Ok(f64::INFINITY)
        }
        Err(e) => Err(e),
    }
}

// ---------------------------------------------------------------------------
// Rounds

struct ClientResult {
    id: String,
    /// Updated parameters (FedAvg/Reptile) or a gradient (minibatch SGD).
    vector: ParamBlock,
    n: usize,
    /// Samples that actually contributed (differs from `n` for
    /// minibatch SGD with `data_fraction < 1`).
    used: usize,
    flops: u64,
    loss: f64,
}

/// Resolve the selected ids to nonempty devices, warning about (and
/// dropping) any without training data.
fn active_clients<'a>(
    train: &'a FederatedDataset,
    selected: &'a [String],
) -> Result<Vec<(&'a String, &'a [Sample])>> {
    let mut active = Vec::with_capacity(selected.len());
    for id in selected {
        match train.samples(id) {
            Some(samples) if !samples.is_empty() => active.push((id, samples)),
            _ => log::warn!("device {id:?} has no training data; skipping this round"),
        }
    }
    if active.is_empty() {
        return Err(Error::Round(
            "all selected clients lack training data".into(),
        ));
    }
    Ok(active)
}

/// `sum(w_i * v_i) / sum(w_i)`, accumulated in the order given. Weights
/// are normalized up front so a single vector passes through untouched.
pub(crate) fn weighted_mean_vectors(weights: &[f64], vectors: &[&[f64]]) -> Vec<f64> {
    let dim = vectors[0].len();
    let total: f64 = weights.iter().sum();
    let mut out = vec![0.0; dim];
    for (&w, v) in weights.iter().zip(vectors) {
        let w = w / total;
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += w * x;
        }
    }
    out
}

/// Mean pairwise L2 distance; `None` for fewer than two vectors.
fn mean_pairwise_l2(vectors: &[&[f64]]) -> Option<f64> {
    let k = vectors.len();
    if k < 2 {
        return None;
    }
    let mut sum = 0.0;
    for a in 0..k {
        for b in (a + 1)..k {
            let d2: f64 = vectors[a]
                .iter()
                .zip(vectors[b])
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            sum += d2.sqrt();
        }
    }
    Some(sum / (k * (k - 1) / 2) as f64)
}

/// Shared bookkeeping once client results are in: weighted train loss,
/// dispersion, transfer/flop counters and the round log.
fn finish_round(
    state: &mut FedState,
    spec: &ModelSpec,
    cfg: &FedConfig,
    round: usize,
    mut results: Vec<ClientResult>,
) -> (Vec<ClientResult>, RoundLog) {
    // aggregation and all other reductions run in ascending device-id order
    results.sort_by(|a, b| a.id.cmp(&b.id));

    let total_n: usize = results.iter().map(|r| r.n).sum();
    let train_loss = results
        .iter()
        .map(|r| r.loss * r.n as f64)
        .sum::<f64>()
        / total_n as f64;
    let vectors: Vec<&[f64]> = results.iter().map(|r| r.vector.as_slice()).collect();
    let client_dispersion = mean_pairwise_l2(&vectors);

    let transfer =
        results.len() as u64 * spec.param_len() as u64 * cfg.bytes_per_param;
    state.cumulative_bytes_down += transfer;
    state.cumulative_bytes_up += transfer;
    state.cumulative_flops += results.iter().map(|r| r.flops).sum::<u64>();

    let log = RoundLog {
        round,
        participants: results.iter().map(|r| r.id.clone()).collect(),
        train_loss,
        client_dispersion,
        eval: None,
        cumulative_flops: state.cumulative_flops,
        cumulative_bytes_up: state.cumulative_bytes_up,
        cumulative_bytes_down: state.cumulative_bytes_down,
    };
    (results, log)
}

fn aggregation_weights(cfg: &FedConfig, results: &[ClientResult]) -> Vec<f64> {
    match cfg.weighting {
        ClientWeighting::BySamples => results.iter().map(|r| r.used as f64).collect(),
        ClientWeighting::Equal => vec![1.0; results.len()],
    }
}

/// One FedAvg round: selected clients run [`local_update`] concurrently
/// and the server replaces the global parameters with the weighted mean
/// of the client results.
pub fn fedavg_round(
    state: &mut FedState,
    spec: &ModelSpec,
    train: &FederatedDataset,
    cfg: &FedConfig,
    round: usize,
) -> Result<RoundLog> {
    let selected = select_clients(train, cfg.clients_per_round, round, cfg.seed)?;
    let active = active_clients(train, &selected)?;
    let global = &state.params;
    let results: Vec<ClientResult> = active
        .par_iter()
        .map(|&(id, data)| {
            let mut rng =
                derive_rng(cfg.seed, &[stream::CLIENT, round as u64, hash_id(id)]);
            let (params, n, flops) = local_update(
                spec,
                global,
                data,
                cfg.local_epochs,
                cfg.batch_size,
                cfg.client_lr,
                &mut rng,
            )?;
            Ok(ClientResult {
                id: id.clone(),
                vector: params,
                n,
                used: n,
                flops,
                loss: device_loss(spec, global, data)?,
            })
        })
        .collect::<Result<_>>()?;

    let (results, log) = finish_round(state, spec, cfg, round, results);
    let weights = aggregation_weights(cfg, &results);
    let vectors: Vec<&[f64]> = results.iter().map(|r| r.vector.as_slice()).collect();
    state.params = weighted_mean_vectors(&weights, &vectors);
    Ok(log)
}

/// One federated minibatch-SGD round: each client reports a single
/// gradient on `ceil(data_fraction * n_k)` uniformly chosen samples (at
/// least one); the server averages gradients weighted by samples used
/// and applies one step of `server_lr`.
pub fn minibatch_sgd_round(
    state: &mut FedState,
    spec: &ModelSpec,
    train: &FederatedDataset,
    cfg: &FedConfig,
    round: usize,
) -> Result<RoundLog> {
    let selected = select_clients(train, cfg.clients_per_round, round, cfg.seed)?;
    let active = active_clients(train, &selected)?;
    let global = &state.params;
    let results: Vec<ClientResult> = active
        .par_iter()
        .map(|&(id, data)| {
            let mut rng =
                derive_rng(cfg.seed, &[stream::CLIENT, round as u64, hash_id(id)]);
            let n = data.len();
            let m = ((cfg.data_fraction * n as f64).ceil() as usize).clamp(1, n);
            let batch: Vec<Sample> = if m == n {
                data.to_vec()
            } else {
                let mut picked = rand::seq::index::sample(&mut rng, n, m).into_vec();
                picked.sort_unstable();
                picked.into_iter().map(|i| data[i].clone()).collect()
            };
            let g = model::gradient(spec, global, &batch)?;
            Ok(ClientResult {
                id: id.clone(),
                vector: g.grad,
                n,
                used: m,
                flops: g.flops,
                loss: device_loss(spec, global, data)?,
            })
        })
        .collect::<Result<_>>()?;

    let (results, mut log) = finish_round(state, spec, cfg, round, results);
    let weights = aggregation_weights(cfg, &results);
    let vectors: Vec<&[f64]> = results.iter().map(|r| r.vector.as_slice()).collect();
    let grad = weighted_mean_vectors(&weights, &vectors);
    state.params = model::sgd_step(&state.params, &grad, cfg.effective_server_lr())?;
    state.cumulative_flops += model::update_flops(spec);
    log.cumulative_flops = state.cumulative_flops;
    Ok(log)
}

/// Meta learning rate for `round`: linear from `meta_lr_start` at round
/// 0 to `meta_lr_end` at the final round (degenerate single-round
/// schedules stay at the start value).
pub fn reptile_meta_lr(cfg: &FedConfig, round: usize) -> f64 {
    if cfg.rounds <= 1 {
        return cfg.meta_lr_start;
    }
    let t = round as f64 / (cfg.rounds - 1) as f64;
    cfg.meta_lr_start + (cfg.meta_lr_end - cfg.meta_lr_start) * t
}

/// One Reptile round: clients run `inner_steps` minibatches from the
/// global parameters; the server moves toward the unweighted mean of
/// the client results by the scheduled meta learning rate.
pub fn reptile_round(
    state: &mut FedState,
    spec: &ModelSpec,
    train: &FederatedDataset,
    cfg: &FedConfig,
    round: usize,
) -> Result<RoundLog> {
    let selected = select_clients(train, cfg.clients_per_round, round, cfg.seed)?;
    let active = active_clients(train, &selected)?;
    let global = &state.params;
    let results: Vec<ClientResult> = active
        .par_iter()
        .map(|&(id, data)| {
            let mut rng =
                derive_rng(cfg.seed, &[stream::CLIENT, round as u64, hash_id(id)]);
            let (params, flops) = sgd_steps(
                spec,
                global,
                data,
                cfg.inner_steps,
                cfg.inner_batch,
                cfg.client_lr,
                &mut rng,
            )?;
            Ok(ClientResult {
                id: id.clone(),
                vector: params,
                n: data.len(),
                used: data.len(),
                flops,
                loss: device_loss(spec, global, data)?,
            })
        })
        .collect::<Result<_>>()?;

    let (results, log) = finish_round(state, spec, cfg, round, results);
    let alpha = reptile_meta_lr(cfg, round);
    let k = results.len() as f64;
    let mut delta = vec![0.0; state.params.len()];
    for r in &results {
        for (d, (new, old)) in delta.iter_mut().zip(r.vector.iter().zip(&state.params)) {
            *d += (new - old) / k;
        }
    }
    for (p, d) in state.params.iter_mut().zip(&delta) {
        *p += alpha * d;
    }
    Ok(log)
}

// ---------------------------------------------------------------------------
// Baseline pipelines

/// Train one model per device over a learning-rate grid, keeping the
/// grid value with the best validation accuracy (ties prefer the
/// smaller rate). Devices without validation data fall back to train
/// accuracy with a warning.
pub fn train_local(
    split: &SplitDataset,
    spec: &ModelSpec,
    init: &ParamBlock,
    lr_grid: &[f64],
    epochs: usize,
    batch_size: usize,
    seed: u64,
) -> Result<IndexMap<String, LocalModel>> {
    if lr_grid.is_empty() {
        return Err(Error::Argument("train_local: empty learning-rate grid".into()));
    }
    if lr_grid.iter().any(|lr| !(lr.is_finite() && *lr > 0.0)) {
        return Err(Error::Argument(
            "train_local: learning rates must be finite and > 0".into(),
        ));
    }
    let mut grid = lr_grid.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite rates"));
    grid.dedup();

    let devices: Vec<(&str, &[Sample])> = split.train.iter().collect();
    let trained: Vec<(String, LocalModel)> = devices
        .par_iter()
        .map(|&(id, data)| {
            let mut best: Option<(f64, LocalModel)> = None;
            for (li, &lr) in grid.iter().enumerate() {
                let mut rng =
                    derive_rng(seed, &[stream::LOCAL, hash_id(id), li as u64]);
                let params = match local_update(
                    spec, init, data, epochs, batch_size, lr, &mut rng,
                ) {
                    Ok((params, _, _)) => params,
                    Err(Error::Numeric(_)) => {
                        log::warn!("device {id:?}: lr {lr} diverged; dropped from grid");
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let score = match split.val.samples(id) {
                    Some(val) if !val.is_empty() => {
                        model::accuracy_top1(spec, &params, val)?
                    }
                    _ => {
                        log::warn!(
                            "device {id:?}: no validation data; selecting lr by train accuracy"
                        );
                        model::accuracy_top1(spec, &params, data)?
                    }
                };
                // strict improvement only, so ties keep the smaller lr
                if best.as_ref().map_or(true, |(s, _)| score > *s) {
                    best = Some((score, LocalModel { params, lr }));
                }
            }
            match best {
                Some((_, model)) => Ok((id.to_string(), model)),
                None => Err(Error::Numeric(format!(
                    "device {id:?}: every learning rate in the grid diverged"
                ))),
            }
        })
        .collect::<Result<_>>()?;
    Ok(trained.into_iter().collect())
}

/// Pool every device's data into one IID shard and run plain minibatch
/// SGD over it for `epochs` passes.
pub fn train_global_iid(
    ds: &FederatedDataset,
    spec: &ModelSpec,
    init: &ParamBlock,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    seed: u64,
) -> Result<ParamBlock> {
    if ds.is_empty() {
        return Err(Error::Argument("train_global_iid: empty dataset".into()));
    }
    if epochs == 0 {
        return Ok(init.clone());
    }
    let mixed = crate::dataset::mix_iid(ds, seed)?;
    let (_, data) = mixed.iter().next().expect("mix_iid yields one device");
    let mut rng = derive_rng(seed, &[stream::GLOBAL_IID]);
    let (params, _, _) = local_update(spec, init, data, epochs, batch_size, lr, &mut rng)?;
    Ok(params)
}

// ---------------------------------------------------------------------------
// Evaluation

/// Per-device top-1 accuracy of `params` over `ids` (devices with no
/// samples are skipped with a warning).
pub fn evaluate_on(
    spec: &ModelSpec,
    params: &ParamBlock,
    ds: &FederatedDataset,
    ids: &[String],
) -> Result<Vec<DeviceAccuracy>> {
    let entries: Vec<Option<DeviceAccuracy>> = ids
        .par_iter()
        .map(|id| {
            let samples = match ds.samples(id) {
                Some(s) if !s.is_empty() => s,
                _ => {
                    log::warn!("device {id:?} has no evaluation data; skipping");
                    return Ok(None);
                }
            };
            let accuracy = model::accuracy_top1(spec, params, samples)?;
            Ok(Some(DeviceAccuracy {
                device_id: id.clone(),
                accuracy,
                sample_count: samples.len(),
            }))
        })
        .collect::<Result<_>>()?;
    Ok(entries.into_iter().flatten().collect())
}

/// Fine-tune a copy of `params` on each test device's train split for
/// `finetune_steps` minibatches, then report test accuracy.
/// `finetune_steps = 0` evaluates the shared parameters as-is.
pub fn evaluate_personalized(
    spec: &ModelSpec,
    params: &ParamBlock,
    split: &SplitDataset,
    finetune_steps: usize,
    finetune_batch: usize,
    lr: f64,
    seed: u64,
) -> Result<Vec<DeviceAccuracy>> {
    if finetune_steps > 0 && finetune_batch < 1 {
        return Err(Error::Argument("finetune_batch must be >= 1".into()));
    }
    let devices: Vec<(&str, &[Sample])> = split.test.iter().collect();
    let entries: Vec<Option<DeviceAccuracy>> = devices
        .par_iter()
        .map(|&(id, test)| {
            if test.is_empty() {
                log::warn!("device {id:?} has no test data; skipping");
                return Ok(None);
            }
            let tuned = match split.train.samples(id) {
                Some(train) if !train.is_empty() && finetune_steps > 0 => {
                    let mut rng = derive_rng(seed, &[stream::FINETUNE, hash_id(id)]);
                    sgd_steps(spec, params, train, finetune_steps, finetune_batch, lr, &mut rng)?.0
                }
                _ => params.clone(),
            };
            let accuracy = model::accuracy_top1(spec, &tuned, test)?;
            Ok(Some(DeviceAccuracy {
                device_id: id.to_string(),
                accuracy,
                sample_count: test.len(),
            }))
        })
        .collect::<Result<_>>()?;
    Ok(entries.into_iter().flatten().collect())
}
