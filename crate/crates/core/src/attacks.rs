//! Poisoning attacks, applied by Byzantine clients before upload or by a
//! malicious aggregator in place of the robust aggregate.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::{train_with, Batch, BatchLoss, Dataset, GradEval, LocalStep, ModelSpec, Objective, SgdStep};
use crate::ledger::NodeId;
use crate::param_math::check_dims;
use crate::rng::{rng_for, stream};
use crate::ParamVector;

/// Finite-difference step for the penalty gradient of the objective attack.
pub const TOM_FD_STEP: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    None,
    LabelFlip,
    SignFlip,
    #[serde(rename = "gm")]
    GradManip,
    Tom,
}

impl AttackKind {
    /// Token used on the command line and in CSV output.
    pub fn token(self) -> &'static str {
        match self {
            AttackKind::None => "none",
            AttackKind::LabelFlip => "labelflip",
            AttackKind::SignFlip => "signflip",
            AttackKind::GradManip => "gm",
            AttackKind::Tom => "tom",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "none" => AttackKind::None,
            "labelflip" | "label_flip" => AttackKind::LabelFlip,
            "signflip" | "sign_flip" => AttackKind::SignFlip,
            "gm" | "grad_manip" | "gradmanip" => AttackKind::GradManip,
            "tom" => AttackKind::Tom,
            other => return Err(Error::Config(format!("unknown attack `{other}`"))),
        })
    }
}

/// Where Byzantine nodes act.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Surface {
    ClientSide,
    AggregatorSide,
    Both,
}

impl Surface {
    pub fn client(self) -> bool {
        matches!(self, Surface::ClientSide | Surface::Both)
    }

    pub fn aggregator(self) -> bool {
        matches!(self, Surface::AggregatorSide | Surface::Both)
    }
}

/// The local step a sign-flipping node takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SignFlipRule {
    /// `θ + η·sign(∇L)`: signed steps up the loss.
    #[default]
    Ascent,
    /// `θ − η·sign(∇L)`, see [`sign_flip_update`]. This still descends.
    Descent,
    /// `θ + η·∇L`.
    Negation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// Label-flip probability.
    pub gamma: f64,
    pub noise_mean: f64,
    pub noise_std: f64,
    /// Objective-penalty scale.
    pub zeta: f64,
    pub byzantine_ratio: f64,
    pub surface: Surface,
    pub sign_flip_rule: SignFlipRule,
    /// Shorthand for `SignFlipRule::Negation`; wins over `sign_flip_rule`.
    pub literal_negation: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            kind: AttackKind::None,
            gamma: 1.0,
            noise_mean: 0.1,
            noise_std: 0.1,
            zeta: 0.1,
            byzantine_ratio: 0.0,
            surface: Surface::Both,
            sign_flip_rule: SignFlipRule::Ascent,
            literal_negation: false,
        }
    }
}

impl AttackConfig {
    pub fn effective_sign_flip_rule(&self) -> SignFlipRule {
        if self.literal_negation {
            SignFlipRule::Negation
        } else {
            self.sign_flip_rule
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Err(Error::InvalidParameter(format!("{what} out of range: {v}")));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma", self.gamma);
        }
        if !(0.0..=1.0).contains(&self.byzantine_ratio) {
            return bad("byzantine_ratio", self.byzantine_ratio);
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return bad("noise_std", self.noise_std);
        }
        if !self.noise_mean.is_finite() {
            return bad("noise_mean", self.noise_mean);
        }
        if !(self.zeta.is_finite() && self.zeta >= 0.0) {
            return bad("zeta", self.zeta);
        }
        Ok(())
    }
}

/// Replaces each label, with probability `gamma`, by a uniformly chosen
/// different class. Features are untouched.
pub fn flip_labels(data: &Dataset, gamma: f64, classes: usize, seed: u64) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::InvalidParameter("label flipping needs at least two classes".into()));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidParameter(format!("gamma must lie in [0, 1], got {gamma}")));
    }
    let mut rng = rng_for(seed, &[stream::LABEL_FLIP]);
    let labels = data
        .labels()
        .iter()
        .map(|&y| {
            if rng.random::<f64>() < gamma {
                let r = rng.random_range(0..classes - 1);
                if r >= y {
                    r + 1
                } else {
                    r
                }
            } else {
                y
            }
        })
        .collect();
    Ok(data.with_labels(labels))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `θ − η·sign(∇L)`, with `sign(0) = 0`.
pub fn sign_flip_update(theta: &ParamVector, grad: &ParamVector, eta: f64) -> Result<ParamVector> {
    check_dims(theta.dim(), grad.dim())?;
    Ok(ParamVector::from_vec_unchecked(
        theta.iter().zip(grad.iter()).map(|(t, g)| t - eta * sign(*g)).collect(),
    ))
}

/// `θ̄ + Δθ` with `Δθ` i.i.d. Gaussian(`mean`, `std`).
pub fn gradient_manipulation(theta_bar: &ParamVector, mean: f64, std: f64, seed: u64) -> Result<ParamVector> {
    if !(std.is_finite() && std >= 0.0) {
        return Err(Error::InvalidParameter(format!("noise std must be non-negative, got {std}")));
    }
    let noise = Normal::new(mean, std).map_err(|e| Error::InvalidParameter(format!("noise: {e}")))?;
    let mut rng = rng_for(seed, &[stream::NOISE]);
    Ok(ParamVector::from_vec_unchecked(
        theta_bar.iter().map(|t| t + noise.sample(&mut rng)).collect(),
    ))
}

/// Penalised objective `L + ζ·‖2∇L‖²`. The penalty gradient
/// `∇‖∇L‖²` is taken by central differences per coordinate.
pub fn tom_objective_eval<O: Objective + ?Sized>(obj: &O, theta: &[f64], zeta: f64) -> GradEval {
    let base = obj.loss_and_grad(theta);
    if zeta == 0.0 {
        return base;
    }
    let sq = |g: &GradEval| g.grad.iter().map(|v| v * v).sum::<f64>();
    let penalty = 4.0 * sq(&base);
    let mut probe = theta.to_vec();
    let mut grad = base.grad.into_vec();
    for i in 0..theta.len() {
        let orig = probe[i];
        probe[i] = orig + TOM_FD_STEP;
        let up = sq(&obj.loss_and_grad(&probe));
        probe[i] = orig - TOM_FD_STEP;
        let down = sq(&obj.loss_and_grad(&probe));
        probe[i] = orig;
        grad[i] += 4.0 * zeta * (up - down) / (2.0 * TOM_FD_STEP);
    }
    GradEval {
        loss: base.loss + zeta * penalty,
        grad: ParamVector::from_vec_unchecked(grad),
    }
}

/// The penalised objective on the classifier's mean cross-entropy over `batch`.
pub fn tom_loss_and_grad(theta: &ParamVector, batch: &Dataset, spec: &ModelSpec, zeta: f64) -> GradEval {
    let obj = BatchLoss {
        spec,
        batch: batch.full_batch(),
    };
    tom_objective_eval(&obj, theta, zeta)
}

/// Seeded uniform choice of `⌊ratio·n⌋` distinct node ids.
pub fn assign_byzantine(n: usize, ratio: f64, seed: u64) -> BTreeSet<NodeId> {
    let count = ((ratio * n as f64).floor() as usize).min(n);
    let mut rng = rng_for(seed, &[stream::BYZANTINE]);
    index::sample(&mut rng, n, count)
        .into_iter()
        .map(|i| NodeId(i as u32))
        .collect()
}

/// Per-step sign flipping.
#[derive(Debug, Clone, Copy)]
pub struct SignFlipStep {
    pub rule: SignFlipRule,
}

impl LocalStep for SignFlipStep {
    fn step(&mut self, theta: &mut [f64], batch: Batch<'_>, spec: &ModelSpec) {
        let g = BatchLoss { spec, batch }.loss_and_grad(theta);
        for (t, gi) in theta.iter_mut().zip(g.grad.iter()) {
            *t += spec.learning_rate
                * match self.rule {
                    SignFlipRule::Ascent => sign(*gi),
                    SignFlipRule::Descent => -sign(*gi),
                    SignFlipRule::Negation => *gi,
                };
        }
    }
}

/// SGD on the penalised objective.
#[derive(Debug, Clone, Copy)]
pub struct TomStep {
    pub zeta: f64,
}

impl LocalStep for TomStep {
    fn step(&mut self, theta: &mut [f64], batch: Batch<'_>, spec: &ModelSpec) {
        let g = tom_objective_eval(&BatchLoss { spec, batch }, theta, self.zeta);
        for (t, gi) in theta.iter_mut().zip(g.grad.iter()) {
            *t -= spec.learning_rate * gi;
        }
    }
}

/// A poisoned model produced from `start` on `shard`.
///
/// Label flipping, sign flipping and the objective attack run local training
/// from `start` with their corrupted data or step; gradient manipulation adds
/// noise to `start` directly when `train_first` is false, or to the honestly
/// trained model otherwise. `AttackKind::None` is ordinary training.
pub fn poisoned_model(
    cfg: &AttackConfig,
    start: &ParamVector,
    shard: &Dataset,
    spec: &ModelSpec,
    seed: u64,
    train_first: bool,
) -> Result<ParamVector> {
    match cfg.kind {
        AttackKind::None => Ok(train_with(start, shard, spec, seed, &mut SgdStep)),
        AttackKind::LabelFlip => {
            let flipped = flip_labels(shard, cfg.gamma, spec.classes, seed)?;
            Ok(train_with(start, &flipped, spec, seed, &mut SgdStep))
        }
        AttackKind::SignFlip => Ok(train_with(
            start,
            shard,
            spec,
            seed,
            &mut SignFlipStep {
                rule: cfg.effective_sign_flip_rule(),
            },
        )),
        AttackKind::Tom => Ok(train_with(start, shard, spec, seed, &mut TomStep { zeta: cfg.zeta })),
        AttackKind::GradManip => {
            let base = if train_first {
                train_with(start, shard, spec, seed, &mut SgdStep)
            } else {
                start.clone()
            };
            gradient_manipulation(&base, cfg.noise_mean, cfg.noise_std, seed)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::{init_params, loss_and_grad, make_federated_data, DataSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels_only(labels: Vec<usize>, k: usize) -> Dataset {
        let n = labels.len();
        Dataset::new(vec![0.0; n], labels, 1, k).unwrap()
    }

    #[test]
    fn flip_gamma_zero_is_identity() {
        let d = labels_only(vec![0, 1, 2, 3, 1], 4);
        assert_eq!(flip_labels(&d, 0.0, 4, 1).unwrap(), d);
    }

    #[test]
    fn flip_gamma_one_binary_inverts() {
        let d = labels_only(vec![0, 1, 1, 0, 1], 2);
        let f = flip_labels(&d, 1.0, 2, 1).unwrap();
        assert_eq!(f.labels(), &[1, 0, 0, 1, 0]);
    }

    #[test]
    fn flip_gamma_one_changes_every_label() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let d = labels_only((0..2000).map(|_| rng.random_range(0..4)).collect(), 4);
        let f = flip_labels(&d, 1.0, 4, 3).unwrap();
        assert!(d.labels().iter().zip(f.labels()).all(|(a, b)| a != b));
        // targets spread over the other classes
        let to_zero = d.labels().iter().zip(f.labels()).filter(|(a, b)| **a == 1 && **b == 0).count();
        let from_one = d.labels().iter().filter(|&&a| a == 1).count();
        let frac = to_zero as f64 / from_one as f64;
        assert!((frac - 1.0 / 3.0).abs() < 0.08, "{frac}");
    }

    #[test]
    fn flip_fraction_matches_gamma() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = labels_only((0..10_000).map(|_| rng.random_range(0..4)).collect(), 4);
        let f = flip_labels(&d, 0.5, 4, 9).unwrap();
        let flipped = d.labels().iter().zip(f.labels()).filter(|(a, b)| a != b).count();
        let frac = flipped as f64 / 10_000.0;
        assert!((frac - 0.5).abs() <= 0.02, "{frac}");
    }

    #[test]
    fn flip_single_class_errors() {
        let d = labels_only(vec![0, 0], 1);
        assert!(flip_labels(&d, 0.5, 1, 0).is_err());
    }

    #[test]
    fn sign_flip_examples() {
        let out = sign_flip_update(&ParamVector::new(vec![0.5]).unwrap(), &ParamVector::new(vec![-2.0]).unwrap(), 0.1).unwrap();
        assert!((out[0] - 0.6).abs() < 1e-15);
        let theta = ParamVector::new(vec![1.0, -2.0, 3.0]).unwrap();
        assert_eq!(sign_flip_update(&theta, &ParamVector::zeros(3), 0.7).unwrap(), theta);
        assert!(sign_flip_update(&theta, &ParamVector::zeros(2), 0.7).is_err());
    }

    #[test]
    fn sign_flip_matches_elementwise_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
        let out = sign_flip_update(&ParamVector::new(t.clone()).unwrap(), &ParamVector::new(g.clone()).unwrap(), 0.05).unwrap();
        for i in 0..50 {
            let s = if g[i] > 0.0 { 1.0 } else { -1.0 };
            assert_eq!(out[i], t[i] - 0.05 * s);
        }
    }

    #[test]
    fn noise_examples() {
        let theta = ParamVector::new(vec![1.0, 1.0]).unwrap();
        assert_eq!(gradient_manipulation(&theta, 0.0, 0.0, 3).unwrap(), theta);
        let shifted = gradient_manipulation(&theta, 0.1, 0.0, 3).unwrap();
        assert!(shifted.iter().all(|v| (v - 1.1).abs() < 1e-15));
        assert!(gradient_manipulation(&theta, 0.0, -1.0, 3).is_err());
    }

    #[test]
    fn noise_sample_mean() {
        let theta = ParamVector::zeros(10_000);
        let out = gradient_manipulation(&theta, 0.1, 0.1, 11).unwrap();
        let mean = out.iter().sum::<f64>() / 10_000.0;
        let var = out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 10_000.0;
        assert!((mean - 0.1).abs() <= 0.005, "{mean}");
        assert!((var.sqrt() - 0.1).abs() <= 0.005);
    }

    struct HalfSquare;

    impl Objective for HalfSquare {
        fn dim(&self) -> usize {
            3
        }

        fn loss_and_grad(&self, theta: &[f64]) -> GradEval {
            GradEval {
                loss: 0.5 * theta.iter().map(|v| v * v).sum::<f64>(),
                grad: ParamVector::from_vec_unchecked(theta.to_vec()),
            }
        }
    }

    #[test]
    fn objective_attack_on_quadratic_stub() {
        let theta = [0.3, -1.2, 2.0];
        for zeta in [0.0, 0.1, 0.5] {
            let g = tom_objective_eval(&HalfSquare, &theta, zeta);
            for i in 0..3 {
                assert!((g.grad[i] - (1.0 + 8.0 * zeta) * theta[i]).abs() < 1e-9);
            }
            let norm2: f64 = theta.iter().map(|v| v * v).sum();
            assert!((g.loss - (0.5 * norm2 + 4.0 * zeta * norm2)).abs() < 1e-12);
        }
    }

    #[test]
    fn penalty_arithmetic() {
        // ∇L = [1, 2] at θ = [1, 2] on the stub: P = 4·5 = 20, ζ·P = 2
        struct Two;
        impl Objective for Two {
            fn dim(&self) -> usize {
                2
            }
            fn loss_and_grad(&self, theta: &[f64]) -> GradEval {
                HalfSquare.loss_and_grad(theta)
            }
        }
        let g = tom_objective_eval(&Two, &[1.0, 2.0], 0.1);
        assert!((g.loss - (2.5 + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_zeta_is_plain_gradient() {
        let ds = DataSpec {
            clients: 1,
            samples_per_client: 8,
            test_size: 1,
            ..DataSpec::default()
        };
        let data = make_federated_data(2, &ds).unwrap();
        let spec = ModelSpec::default();
        let theta = init_params(&spec, 4);
        assert_eq!(
            tom_loss_and_grad(&theta, &data.shards[0], &spec, 0.0),
            loss_and_grad(&theta, &data.shards[0], &spec)
        );
    }

    #[test]
    fn penalty_gradient_matches_finite_difference_of_penalised_loss() {
        let ds = DataSpec {
            clients: 1,
            samples_per_client: 5,
            test_size: 1,
            input_dim: 3,
            classes: 3,
            ..DataSpec::default()
        };
        let data = make_federated_data(6, &ds).unwrap();
        let spec = ModelSpec {
            input_dim: 3,
            hidden_dim: 4,
            classes: 3,
            ..ModelSpec::default()
        };
        let theta = init_params(&spec, 1);
        let g = tom_loss_and_grad(&theta, &data.shards[0], &spec, 0.1);
        let h = 1e-5;
        for i in 0..theta.dim() {
            let mut p = theta.clone();
            p.as_mut_slice()[i] += h;
            let mut m = theta.clone();
            m.as_mut_slice()[i] -= h;
            let fd = (tom_loss_and_grad(&p, &data.shards[0], &spec, 0.1).loss
                - tom_loss_and_grad(&m, &data.shards[0], &spec, 0.1).loss)
                / (2.0 * h);
            assert!((fd - g.grad[i]).abs() < 1e-4, "coord {i}: {fd} vs {}", g.grad[i]);
        }
    }

    #[test]
    fn byzantine_assignment() {
        assert!(assign_byzantine(100, 0.0, 1).is_empty());
        let s = assign_byzantine(100, 0.2, 1);
        assert_eq!(s.len(), 20);
        assert!(s.iter().all(|id| id.0 < 100));
        assert_eq!(s, assign_byzantine(100, 0.2, 1));
        assert_eq!(assign_byzantine(10, 0.15, 0).len(), 1);
        assert_eq!(assign_byzantine(10, 1.0, 0).len(), 10);
    }

    #[test]
    fn tokens_round_trip() {
        for k in [AttackKind::None, AttackKind::LabelFlip, AttackKind::SignFlip, AttackKind::GradManip, AttackKind::Tom] {
            assert_eq!(k.token().parse::<AttackKind>().unwrap(), k);
        }
        assert!("bogus".parse::<AttackKind>().is_err());
    }

    #[test]
    fn sign_flip_training_takes_signed_steps() {
        let ds = DataSpec {
            clients: 1,
            samples_per_client: 10,
            test_size: 1,
            ..DataSpec::default()
        };
        let data = make_federated_data(3, &ds).unwrap();
        let spec = ModelSpec {
            batch_size: 10,
            ..ModelSpec::default()
        };
        let theta = init_params(&spec, 2);
        let g = loss_and_grad(&theta, &data.shards[0], &spec);
        let cfg = AttackConfig {
            kind: AttackKind::SignFlip,
            sign_flip_rule: SignFlipRule::Descent,
            ..AttackConfig::default()
        };
        let out = poisoned_model(&cfg, &theta, &data.shards[0], &spec, 0, false).unwrap();
        assert_eq!(out, sign_flip_update(&theta, &g.grad, spec.learning_rate).unwrap());

        let ascent = AttackConfig {
            sign_flip_rule: SignFlipRule::Ascent,
            ..cfg
        };
        let up = poisoned_model(&ascent, &theta, &data.shards[0], &spec, 0, false).unwrap();
        for i in 0..theta.dim() {
            assert!((up[i] - theta[i] - (theta[i] - out[i])).abs() < 1e-12);
        }
        assert!(loss_and_grad(&up, &data.shards[0], &spec).loss > g.loss);

        let literal = AttackConfig {
            literal_negation: true,
            ..cfg
        };
        let out = poisoned_model(&literal, &theta, &data.shards[0], &spec, 0, false).unwrap();
        for i in 0..theta.dim() {
            assert!((out[i] - (theta[i] + spec.learning_rate * g.grad[i])).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn flip_never_keeps_label_at_gamma_one(labels in prop::collection::vec(0usize..5, 1..200), seed in any::<u64>()) {
            let d = labels_only(labels, 5);
            let f = flip_labels(&d, 1.0, 5, seed).unwrap();
            prop_assert!(d.labels().iter().zip(f.labels()).all(|(a, b)| a != b && *b < 5));
        }
    }
}
