//! Native classifiers: multinomial logistic regression and a one-hidden-
//! layer sigmoid network, with softmax cross-entropy loss, exact analytic
//! gradients, SGD and top-1 accuracy.
//!
//! # Parameter layout
//!
//! Parameters live in one flat `Vec<f64>` ([`ParamBlock`]):
//!
//! - `linear`: a `c x (d+1)` matrix in row-major order; column `d` of each
//!   row is the bias (inputs are implicitly extended with a trailing 1).
//! - `one_hidden`: the `h x (d+1)` input layer followed by the
//!   `c x (h+1)` output layer, both row-major with the bias as the last
//!   column. Hidden units use the logistic sigmoid; the output is a
//!   softmax.
//!
//! # FLOP counting model
//!
//! The simulator's systems budgets are integers derived from this fixed
//! counting model (batch size `m`, total parameter count `P`):
//!
//! - dense layer, fan-in `a` (bias input included), fan-out `b`:
//!   `2*a*b*m` flops forward;
//! - sigmoid activations over `h` hidden units: `4*h*m`;
//! - softmax plus loss (or argmax) over `c` classes: `5*c*m`;
//! - backward pass: twice the total forward matmul cost (activation
//!   derivatives folded in);
//! - parameter update (one SGD step): `2*P`.
//!
//! [`forward_flops`], [`gradient_flops`] and [`update_flops`] are the
//! single source of these numbers; training engines never count on their
//! own.

use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::rng::{derive_rng, stream};
use rand::Rng;
use rand_distr::StandardNormal;

/// Flat parameter storage; layout documented at the module level.
pub type ParamBlock = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ModelKind {
    Linear,
    OneHidden { hidden_dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(flatten)]
    pub kind: ModelKind,
    pub feature_dim: usize,
    pub num_classes: usize,
}

/// Parameter initialization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Zeros,
    Gaussian { std: f64, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct ForwardResult {
    pub mean_loss: f64,
    pub predictions: Vec<usize>,
    pub flops: u64,
}

#[derive(Debug, Clone)]
pub struct GradResult {
    pub grad: ParamBlock,
    pub mean_loss: f64,
    pub flops: u64,
}

impl ModelSpec {
    pub fn linear(feature_dim: usize, num_classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Linear,
            feature_dim,
            num_classes,
        }
    }

    pub fn one_hidden(feature_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::OneHidden { hidden_dim },
            feature_dim,
            num_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.num_classes == 0 {
            return Err(Error::Config(format!(
                "model dims must be positive: d={}, c={}",
                self.feature_dim, self.num_classes
            )));
        }
        if let ModelKind::OneHidden { hidden_dim } = self.kind {
            if hidden_dim == 0 {
                return Err(Error::Config("hidden_dim must be positive".into()));
            }
        }
        Ok(())
    }

    /// Total parameter count P.
    pub fn param_len(&self) -> usize {
        let d = self.feature_dim;
        let c = self.num_classes;
        match self.kind {
            ModelKind::Linear => c * (d + 1),
            ModelKind::OneHidden { hidden_dim: h } => h * (d + 1) + c * (h + 1),
        }
    }
}

/// Allocate and initialize a parameter block for `spec`.
pub fn init_params(spec: &ModelSpec, init: Init) -> ParamBlock {
    let len = spec.param_len();
    match init {
        Init::Zeros => vec![0.0; len],
        Init::Gaussian { std, seed } => {
            let mut rng = derive_rng(seed, &[stream::INIT]);
            (0..len)
                .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                .collect()
        }
    }
}

// ---------------------------------------------------------------------------
// Flop accounting

/// Forward-pass flops for a batch of `m` samples.
pub fn forward_flops(spec: &ModelSpec, m: usize) -> u64 {
    let (m, d, c) = (m as u64, spec.feature_dim as u64, spec.num_classes as u64);
    match spec.kind {
        ModelKind::Linear => m * (2 * (d + 1) * c + 5 * c),
        ModelKind::OneHidden { hidden_dim } => {
            let h = hidden_dim as u64;
            m * (2 * (d + 1) * h + 4 * h + 2 * (h + 1) * c + 5 * c)
        }
    }
}

/// Forward plus backward flops for one gradient evaluation on `m` samples.
pub fn gradient_flops(spec: &ModelSpec, m: usize) -> u64 {
    let forward = forward_flops(spec, m);
    let (m, d, c) = (m as u64, spec.feature_dim as u64, spec.num_classes as u64);
    let backward = match spec.kind {
        ModelKind::Linear => m * 4 * (d + 1) * c,
        ModelKind::OneHidden { hidden_dim } => {
            let h = hidden_dim as u64;
            m * (4 * (d + 1) * h + 4 * (h + 1) * c)
        }
    };
    forward + backward
}

/// Flops for one parameter update.
pub fn update_flops(spec: &ModelSpec) -> u64 {
    2 * spec.param_len() as u64
}

// ---------------------------------------------------------------------------
// Forward / backward

fn check_batch(spec: &ModelSpec, params: &[f64], batch: &[Sample]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    if params.len() != spec.param_len() {
        return Err(Error::Shape(format!(
            "param block has {} entries, spec requires {}",
            params.len(),
            spec.param_len()
        )));
    }
    for s in batch {
        if s.features.len() != spec.feature_dim {
            return Err(Error::Shape(format!(
                "sample has {} features, spec requires {}",
                s.features.len(),
                spec.feature_dim
            )));
        }
        if s.label >= spec.num_classes {
            return Err(Error::Shape(format!(
                "label {} out of range for {} classes",
                s.label, spec.num_classes
            )));
        }
    }
    Ok(())
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Argmax with ties broken toward the lowest index.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Dense layer logits for one sample: `out[j] = W[j,:] . [x, 1]`.
/// `w` is `rows x (x_len + 1)` row-major with the bias in the last column.
fn dense(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len() + 1;
    for (j, o) in out.iter_mut().enumerate() {
        let row = &w[j * cols..(j + 1) * cols];
        let mut acc = row[x.len()]; // bias
        for (wi, xi) in row[..x.len()].iter().zip(x) {
            acc += wi * xi;
        }
        *o = acc;
    }
}

/// Stabilized softmax probabilities in place; returns log-sum-exp minus max.
fn softmax_in_place(logits: &mut [f64]) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        sum += *l;
    }
    for l in logits.iter_mut() {
        *l /= sum;
    }
    sum.ln()
}

struct Activations {
    hidden: Vec<f64>,
    probs: Vec<f64>,
    predicted: usize,
    loss: f64,
}

/// Forward pass for one sample; `probs` holds softmax outputs afterwards.
fn forward_one(spec: &ModelSpec, params: &[f64], sample: &Sample) -> Activations {
    let d = spec.feature_dim;
    let c = spec.num_classes;
    let mut probs = vec![0.0; c];
    let mut hidden = Vec::new();
    match spec.kind {
        ModelKind::Linear => {
            dense(&params[..c * (d + 1)], &sample.features, &mut probs);
        }
        ModelKind::OneHidden { hidden_dim: h } => {
            let w1 = &params[..h * (d + 1)];
            let w2 = &params[h * (d + 1)..];
            hidden = vec![0.0; h];
            dense(w1, &sample.features, &mut hidden);
            for a in hidden.iter_mut() {
                *a = sigmoid(*a);
            }
            dense(w2, &hidden, &mut probs);
        }
    }
    let predicted = argmax(&probs);
    let max = probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let logit_y = probs[sample.label];
    let lse = softmax_in_place(&mut probs);
    // -log p_y = -(l_y - max) + log sum exp(l - max)
    let loss = -(logit_y - max) + lse;
    Activations {
        hidden,
        probs,
        predicted,
        loss,
    }
}

/// Mean softmax cross-entropy (natural log), per-sample predictions and
/// the forward flop count.
pub fn forward_loss(spec: &ModelSpec, params: &[f64], batch: &[Sample]) -> Result<ForwardResult> {
    check_batch(spec, params, batch)?;
    let mut loss_sum = 0.0;
    let mut predictions = Vec::with_capacity(batch.len());
    for s in batch {
        let act = forward_one(spec, params, s);
        loss_sum += act.loss;
        predictions.push(act.predicted);
    }
    let mean_loss = loss_sum / batch.len() as f64;
    if !mean_loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {mean_loss}")));
    }
    Ok(ForwardResult {
        mean_loss,
        predictions,
        flops: forward_flops(spec, batch.len()),
    })
}

/// Exact analytic gradient of the mean cross-entropy over `batch`.
pub fn gradient(spec: &ModelSpec, params: &[f64], batch: &[Sample]) -> Result<GradResult> {
    check_batch(spec, params, batch)?;
    let d = spec.feature_dim;
    let m = batch.len() as f64;
    let mut grad = vec![0.0; params.len()];
    let mut loss_sum = 0.0;

    for s in batch {
        let act = forward_one(spec, params, s);
        loss_sum += act.loss;
        // dL/dlogit_j = p_j - [j == y]  (before the 1/m scaling)
        let mut dlogit = act.probs;
        dlogit[s.label] -= 1.0;
        match spec.kind {
            ModelKind::Linear => {
                accumulate_dense(&mut grad, &dlogit, &s.features);
            }
            ModelKind::OneHidden { hidden_dim: h } => {
                let (g1, g2) = grad.split_at_mut(h * (d + 1));
                accumulate_dense(g2, &dlogit, &act.hidden);
                let w2 = &params[h * (d + 1)..];
                let mut dhidden = vec![0.0; h];
                for (j, &dl) in dlogit.iter().enumerate() {
                    let row = &w2[j * (h + 1)..j * (h + 1) + h];
                    for (dh, w) in dhidden.iter_mut().zip(row) {
                        *dh += dl * w;
                    }
                }
                for (dh, &a) in dhidden.iter_mut().zip(&act.hidden) {
                    *dh *= a * (1.0 - a);
                }
                accumulate_dense(g1, &dhidden, &s.features);
            }
        }
    }
    for g in grad.iter_mut() {
        *g /= m;
    }
    let mean_loss = loss_sum / m;
    if !mean_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    Ok(GradResult {
        grad,
        mean_loss,
        flops: gradient_flops(spec, batch.len()),
    })
}

/// `grad[j, :] += delta[j] * [x, 1]` for a row-major `rows x (x_len+1)` block.
fn accumulate_dense(grad: &mut [f64], delta: &[f64], x: &[f64]) {
    let cols = x.len() + 1;
    for (j, &dj) in delta.iter().enumerate() {
        let row = &mut grad[j * cols..(j + 1) * cols];
        for (g, xi) in row[..x.len()].iter_mut().zip(x) {
            *g += dj * xi;
        }
        row[x.len()] += dj;
    }
}

/// One SGD step `theta' = theta - lr * g`. `lr = 0` is allowed (no-op
/// update); positivity is enforced at the configuration level.
pub fn sgd_step(params: &[f64], grad: &[f64], lr: f64) -> Result<ParamBlock> {
    if params.len() != grad.len() {
        return Err(Error::Shape(format!(
            "sgd_step: params {} vs grad {}",
            params.len(),
            grad.len()
        )));
    }
    Ok(params
        .iter()
        .zip(grad)
        .map(|(p, g)| p - lr * g)
        .collect())
}

/// Fraction of samples whose argmax prediction equals the label.
pub fn accuracy_top1(spec: &ModelSpec, params: &[f64], samples: &[Sample]) -> Result<f64> {
    check_batch(spec, params, samples)?;
    let correct = samples
        .iter()
        .filter(|s| forward_one(spec, params, s).predicted == s.label)
        .count();
    Ok(correct as f64 / samples.len() as f64)
}
