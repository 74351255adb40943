//! Synthetic federated workload: Gaussian-mixture data, a one-hidden-layer
//! ReLU/softmax classifier, seeded mini-batch SGD and test accuracy.
//!
//! Parameters are laid out as `W1 (hidden × input) | b1 | W2 (classes × hidden) | b2`,
//! matrices row-major.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, stream};
use crate::ParamVector;

/// Labelled samples, features stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    input_dim: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<usize>, input_dim: usize, classes: usize) -> Result<Self> {
        if labels.is_empty() || input_dim == 0 {
            return Err(Error::InfeasibleData("dataset needs at least one sample and one feature".into()));
        }
        if features.len() != labels.len() * input_dim {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * input_dim,
                actual: features.len(),
            });
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::InvalidParameter(format!("label {y} outside 0..{classes}")));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            features,
            labels,
            input_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.features[i * self.input_dim..(i + 1) * self.input_dim]
    }

    /// Same features, new labels.
    pub fn with_labels(&self, labels: Vec<usize>) -> Self {
        assert_eq!(labels.len(), self.labels.len());
        Self {
            features: self.features.clone(),
            labels,
            input_dim: self.input_dim,
        }
    }

    /// Every sample in order.
    pub fn full_batch(&self) -> Batch<'_> {
        Batch {
            data: self,
            indices: None,
        }
    }

    /// One `feature_0,...,feature_{f-1},label` row per sample, with a header.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.input_dim).map(|j| format!("x{j}")).collect();
        header.push("label".into());
        out.write_record(&header)?;
        for i in 0..self.len() {
            let mut row: Vec<String> = self.sample(i).iter().map(|v| v.to_string()).collect();
            row.push(self.labels[i].to_string());
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// A view of some samples of a dataset.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    data: &'a Dataset,
    indices: Option<&'a [usize]>,
}

impl<'a> Batch<'a> {
    pub fn of(data: &'a Dataset, indices: &'a [usize]) -> Self {
        Self {
            data,
            indices: Some(indices),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.map_or(self.data.len(), |ix| ix.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn iter(&self) -> impl Iterator<Item = (&'a [f64], usize)> + '_ {
        let data = self.data;
        let n = self.len();
        (0..n).map(move |k| {
            let i = self.indices.map_or(k, |ix| ix[k]);
            (data.sample(i), data.labels[i])
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub classes: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            input_dim: 20,
            hidden_dim: 32,
            classes: 4,
            learning_rate: 0.1,
            batch_size: 10,
            local_epochs: 1,
        }
    }
}

impl ModelSpec {
    /// Parameter count `f·h + h + h·K + K`.
    pub fn param_count(&self) -> usize {
        self.input_dim * self.hidden_dim + self.hidden_dim + self.hidden_dim * self.classes + self.classes
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.classes == 0 || self.batch_size == 0 || self.local_epochs == 0 {
            return Err(Error::InvalidParameter("model dimensions, batch size and epochs must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let w1 = self.input_dim * self.hidden_dim;
        let b1 = w1 + self.hidden_dim;
        let w2 = b1 + self.hidden_dim * self.classes;
        (w1, b1, w2)
    }
}

/// Loss value and its gradient with respect to the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GradEval {
    pub loss: f64,
    pub grad: ParamVector,
}

/// Something with a differentiable scalar loss over a flat parameter vector.
pub trait Objective {
    fn dim(&self) -> usize;
    fn loss_and_grad(&self, theta: &[f64]) -> GradEval;
}

/// Mean cross-entropy of the classifier on one batch.
#[derive(Debug, Clone, Copy)]
pub struct BatchLoss<'a> {
    pub spec: &'a ModelSpec,
    pub batch: Batch<'a>,
}

impl Objective for BatchLoss<'_> {
    fn dim(&self) -> usize {
        self.spec.param_count()
    }

    fn loss_and_grad(&self, theta: &[f64]) -> GradEval {
        mlp_loss_and_grad(theta, self.batch, self.spec)
    }
}

/// Forward pass of one sample: hidden pre-activations and class logits.
fn forward(theta: &[f64], x: &[f64], spec: &ModelSpec, z: &mut [f64], logits: &mut [f64]) {
    let (f, h, k) = (spec.input_dim, spec.hidden_dim, spec.classes);
    let (o_w1, o_b1, o_w2) = spec.offsets();
    for r in 0..h {
        let row = &theta[r * f..(r + 1) * f];
        let mut s = theta[o_w1 + r];
        for (w, xv) in row.iter().zip(x) {
            s += w * xv;
        }
        z[r] = s;
    }
    for c in 0..k {
        let row = &theta[o_b1 + c * h..o_b1 + (c + 1) * h];
        let mut s = theta[o_w2 + c];
        for (w, zv) in row.iter().zip(z.iter()) {
            s += w * zv.max(0.0);
        }
        logits[c] = s;
    }
}

fn softmax_in_place(logits: &mut [f64]) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in logits.iter_mut() {
        *v /= s;
    }
    m + s.ln()
}

fn mlp_loss_and_grad(theta: &[f64], batch: Batch<'_>, spec: &ModelSpec) -> GradEval {
    let (f, h, k) = (spec.input_dim, spec.hidden_dim, spec.classes);
    let (o_w1, o_b1, o_w2) = spec.offsets();
    assert_eq!(theta.len(), spec.param_count(), "parameter dimension");
    let mut grad = vec![0.0; theta.len()];
    let mut z = vec![0.0; h];
    let mut logits = vec![0.0; k];
    let mut dz = vec![0.0; h];
    let inv = 1.0 / batch.len() as f64;
    let mut loss = 0.0;

    for (x, y) in batch.iter() {
        forward(theta, x, spec, &mut z, &mut logits);
        let log_norm = {
            let raw_y = logits[y];
            let lse = softmax_in_place(&mut logits);
            lse - raw_y
        };
        loss += log_norm;
        // logits now hold probabilities
        logits[y] -= 1.0;
        dz.iter_mut().for_each(|v| *v = 0.0);
        for c in 0..k {
            let d = logits[c] * inv;
            grad[o_w2 + c] += d;
            let row = o_b1 + c * h;
            for r in 0..h {
                let a = z[r].max(0.0);
                grad[row + r] += d * a;
                dz[r] += d * theta[row + r];
            }
        }
        for r in 0..h {
            if z[r] <= 0.0 {
                continue;
            }
            let d = dz[r];
            grad[o_w1 + r] += d;
            let row = &mut grad[r * f..(r + 1) * f];
            for (g, xv) in row.iter_mut().zip(x) {
                *g += d * xv;
            }
        }
    }
    GradEval {
        loss: loss * inv,
        grad: ParamVector::from_vec_unchecked(grad),
    }
}

/// Mean cross-entropy and its exact gradient over `batch`.
pub fn loss_and_grad(theta: &ParamVector, batch: &Dataset, spec: &ModelSpec) -> GradEval {
    mlp_loss_and_grad(theta, batch.full_batch(), spec)
}

/// Predicted class of one sample; ties go to the lowest class id.
pub fn predict(theta: &[f64], x: &[f64], spec: &ModelSpec) -> usize {
    let mut z = vec![0.0; spec.hidden_dim];
    let mut logits = vec![0.0; spec.classes];
    forward(theta, x, spec, &mut z, &mut logits);
    let mut best = 0;
    for c in 1..spec.classes {
        if logits[c] > logits[best] {
            best = c;
        }
    }
    best
}

/// Fraction of `test` samples whose argmax prediction matches the label.
pub fn evaluate(theta: &ParamVector, test: &Dataset, spec: &ModelSpec) -> f64 {
    let mut z = vec![0.0; spec.hidden_dim];
    let mut logits = vec![0.0; spec.classes];
    let mut correct = 0usize;
    for (x, y) in test.full_batch().iter() {
        forward(theta, x, spec, &mut z, &mut logits);
        let mut best = 0;
        for c in 1..spec.classes {
            if logits[c] > logits[best] {
                best = c;
            }
        }
        if best == y {
            correct += 1;
        }
    }
    correct as f64 / test.len() as f64
}

/// Seeded He-style initialisation; biases start at zero.
pub fn init_params(spec: &ModelSpec, seed: u64) -> ParamVector {
    let mut rng = rng_for(seed, &[stream::INIT]);
    let (o_w1, o_b1, o_w2) = spec.offsets();
    let mut theta = vec![0.0; spec.param_count()];
    let s1 = (2.0 / spec.input_dim as f64).sqrt();
    let s2 = (1.0 / spec.hidden_dim as f64).sqrt();
    for v in &mut theta[..o_w1] {
        let n: f64 = StandardNormal.sample(&mut rng);
        *v = n * s1;
    }
    for v in &mut theta[o_b1..o_w2] {
        let n: f64 = StandardNormal.sample(&mut rng);
        *v = n * s2;
    }
    ParamVector::from_vec_unchecked(theta)
}

/// How one mini-batch moves the parameters.
pub trait LocalStep {
    fn step(&mut self, theta: &mut [f64], batch: Batch<'_>, spec: &ModelSpec);
}

/// Plain SGD: `θ ← θ − η·∇L`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SgdStep;

impl LocalStep for SgdStep {
    fn step(&mut self, theta: &mut [f64], batch: Batch<'_>, spec: &ModelSpec) {
        let g = mlp_loss_and_grad(theta, batch, spec);
        for (t, gi) in theta.iter_mut().zip(g.grad.iter()) {
            *t -= spec.learning_rate * gi;
        }
    }
}

/// `local_epochs` passes of shuffled mini-batches driven by `step`.
pub fn train_with<S: LocalStep + ?Sized>(
    theta0: &ParamVector,
    data: &Dataset,
    spec: &ModelSpec,
    seed: u64,
    step: &mut S,
) -> ParamVector {
    let mut rng = rng_for(seed, &[stream::CLIENT_TRAIN]);
    let mut theta = theta0.as_slice().to_vec();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..spec.local_epochs {
        if spec.batch_size < data.len() {
            order.shuffle(&mut rng);
        }
        for chunk in order.chunks(spec.batch_size) {
            step.step(&mut theta, Batch::of(data, chunk), spec);
        }
    }
    ParamVector::from_vec_unchecked(theta)
}

/// Honest local training from `theta0`.
pub fn local_train(theta0: &ParamVector, data: &Dataset, spec: &ModelSpec, seed: u64) -> ParamVector {
    train_with(theta0, data, spec, seed, &mut SgdStep)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub clients: usize,
    pub samples_per_client: usize,
    pub test_size: usize,
    pub input_dim: usize,
    pub classes: usize,
    /// Standard deviation of the class means around the origin; samples have
    /// unit noise around their class mean.
    pub class_separation: f64,
    /// Prior of class 0. Zero means uniform priors; otherwise the remaining
    /// mass is split evenly over the other classes.
    pub imbalance: f64,
    /// Samples drawn before partitioning. Zero means exactly
    /// `clients·samples_per_client + test_size`.
    pub pool_size: usize,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            clients: 100,
            samples_per_client: 50,
            test_size: 1000,
            input_dim: 20,
            classes: 4,
            class_separation: 0.6,
            imbalance: 0.0,
            pool_size: 0,
        }
    }
}

impl DataSpec {
    pub fn class_priors(&self) -> Vec<f64> {
        let k = self.classes;
        if self.imbalance == 0.0 || k == 1 {
            return vec![1.0 / k as f64; k];
        }
        let rest = (1.0 - self.imbalance) / (k - 1) as f64;
        let mut p = vec![rest; k];
        p[0] = self.imbalance;
        p
    }

    fn resolved_pool(&self) -> usize {
        if self.pool_size == 0 {
            self.clients * self.samples_per_client + self.test_size
        } else {
            self.pool_size
        }
    }
}

#[derive(Debug, Clone)]
pub struct FederatedData {
    pub shards: Vec<Dataset>,
    pub test: Dataset,
}

/// Draws a Gaussian-mixture pool, shuffles it and cuts disjoint client
/// shards followed by a test set.
pub fn make_federated_data(seed: u64, spec: &DataSpec) -> Result<FederatedData> {
    let need = spec.clients * spec.samples_per_client + spec.test_size;
    let pool = spec.resolved_pool();
    if spec.clients == 0 || spec.samples_per_client == 0 || spec.test_size == 0 {
        return Err(Error::InfeasibleData("clients, shard size and test size must be positive".into()));
    }
    if need > pool {
        return Err(Error::InfeasibleData(format!(
            "{} clients x {} samples + {} test exceed a pool of {pool}",
            spec.clients, spec.samples_per_client, spec.test_size
        )));
    }
    if spec.classes == 0 || spec.input_dim == 0 {
        return Err(Error::InfeasibleData("need at least one class and one feature".into()));
    }
    if !(0.0..1.0).contains(&spec.imbalance) {
        return Err(Error::InvalidParameter(format!("imbalance must lie in [0, 1), got {}", spec.imbalance)));
    }
    if !(spec.class_separation.is_finite() && spec.class_separation >= 0.0) {
        return Err(Error::InvalidParameter("class separation must be non-negative".into()));
    }

    let mut rng = rng_for(seed, &[stream::DATA]);
    let f = spec.input_dim;
    let spread = Normal::new(0.0, spec.class_separation).expect("validated");
    let means: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| (0..f).map(|_| spread.sample(&mut rng)).collect())
        .collect();
    let priors = spec.class_priors();

    let mut samples: Vec<(Vec<f64>, usize)> = (0..pool)
        .map(|_| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut y = spec.classes - 1;
            for (c, p) in priors.iter().enumerate() {
                acc += p;
                if u < acc {
                    y = c;
                    break;
                }
            }
            let x: Vec<f64> = means[y]
                .iter()
                .map(|m| {
                    let n: f64 = StandardNormal.sample(&mut rng);
                    m + n
                })
                .collect();
            (x, y)
        })
        .collect();
    samples.shuffle(&mut rng);

    let build = |part: &[(Vec<f64>, usize)]| {
        let features = part.iter().flat_map(|(x, _)| x.iter().copied()).collect();
        let labels = part.iter().map(|(_, y)| *y).collect();
        Dataset::new(features, labels, f, spec.classes)
    };
    let m = spec.samples_per_client;
    let shards = (0..spec.clients)
        .map(|i| build(&samples[i * m..(i + 1) * m]))
        .collect::<Result<Vec<_>>>()?;
    let test_start = spec.clients * m;
    let test = build(&samples[test_start..test_start + spec.test_size])?;
    Ok(FederatedData { shards, test })
}
