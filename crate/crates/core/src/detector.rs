//! Per-round property detectors `M_r = h_r ∘ g_r`.
//!
//! The server builds labelled updates from its auxiliary data against the
//! round's model snapshot, fits a logistic regression on them, and keeps the
//! bias-free linear part `g_r(x) = αᵀx` as the feature extractor. The bias is
//! folded into the link `h_r(u) = sigmoid(u + β)`, so feature aggregation
//! stays exactly linear. Class-conditional feature distributions are fitted
//! as Gaussians on the held-out split.

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fedsim::{
    self, ClientDataset, GlobalModel, LocalTraining, Sample, SimError, UpdateVector,
};
use crate::gaussian::{overlap_coefficient, Gaussian};
use crate::seeding::{self, stream};

pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DetectorError {
    #[error("auxiliary data has {have} usable samples, batches need {need}")]
    InsufficientAuxData { have: usize, need: usize },
    #[error("training set size must be even and >= 4, got {0}")]
    BadCount(usize),
    #[error("labels are not balanced: {positives} positives, {negatives} negatives")]
    Unbalanced { positives: usize, negatives: usize },
    #[error("class {0} has fewer than 2 evaluation samples")]
    MissingClass(&'static str),
    #[error("dimension mismatch: detector expects {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("detector training diverged at epoch {0}")]
    Divergence(usize),
    #[error("invalid distribution parameters")]
    InvalidDistribution,
    #[error("local pass failed: {0}")]
    Sim(#[from] SimError),
}

/// The property a detector is trained to recognise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    Membership { target: Sample },
    Inversion,
    Ascent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledUpdate {
    pub update: UpdateVector,
    pub positive: bool,
    pub split: Split,
    /// Indices into the auxiliary data used for the batch.
    pub batch: Vec<usize>,
    /// The batch also contained the membership target.
    pub includes_target: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledUpdateSet {
    pub examples: Vec<LabeledUpdate>,
}

impl LabeledUpdateSet {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &LabeledUpdate> {
        self.examples.iter().filter(move |e| e.split == split)
    }

    pub fn dim(&self) -> usize {
        self.examples.first().map_or(0, |e| e.update.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingSetParams {
    /// Total number of labelled updates, half of them positive.
    pub count: usize,
    /// Samples per batch, matching a client's dataset size.
    pub batch_len: usize,
    pub local: LocalTraining,
    pub train_fraction: f64,
}

/// Generates `count` labelled updates of `snapshot` from auxiliary batches.
///
/// Positives and negatives come from disjoint batch draws. Within each class
/// the first `train_fraction` of examples is tagged for training.
pub fn build_training_set(
    aux: &[Sample],
    snapshot: &GlobalModel,
    property: &Property,
    params: &TrainingSetParams,
    seed: u64,
) -> Result<LabeledUpdateSet, DetectorError> {
    if params.count < 4 || !params.count.is_multiple_of(2) {
        return Err(DetectorError::BadCount(params.count));
    }
    let target = match property {
        Property::Membership { target } => Some(target),
        _ => None,
    };
    // The target must never leak into a negative batch.
    let usable: Vec<usize> = (0..aux.len())
        .filter(|&k| target.is_none_or(|t| &aux[k] != t))
        .collect();
    if usable.len() < params.batch_len || params.batch_len == 0 {
        return Err(DetectorError::InsufficientAuxData {
            have: usable.len(),
            need: params.batch_len.max(1),
        });
    }
    let per_class = params.count / 2;
    let train_per_class = ((per_class as f64) * params.train_fraction).round() as usize;

    let examples = (0..params.count)
        .into_par_iter()
        .map(|k| {
            let positive = k % 2 == 0;
            let idx_in_class = k / 2;
            let mut rng = seeding::rng_for(seed, &[stream::DETECTOR_SET, k as u64]);
            let take = if positive && target.is_some() {
                params.batch_len - 1
            } else {
                params.batch_len
            };
            let batch: Vec<usize> = index::sample(&mut rng, usable.len(), take)
                .into_iter()
                .map(|j| usable[j])
                .collect();
            let mut samples: Vec<Sample> = batch.iter().map(|&j| aux[j].clone()).collect();
            let includes_target = positive && target.is_some();
            if let (true, Some(t)) = (includes_target, target) {
                samples.push(t.clone());
                samples.shuffle(&mut rng);
            }
            let data = ClientDataset {
                client_id: usize::MAX,
                samples,
            };
            let pass_seed = seeding::derive_seed(seed, &[stream::DETECTOR_SET, k as u64, 1]);
            let update = match (property, positive) {
                (Property::Ascent, true) => {
                    fedsim::ascent_update(snapshot, &data, &params.local, pass_seed)?
                }
                (Property::Inversion, true) => {
                    fedsim::local_update(snapshot, &data, &params.local, pass_seed)?.negated()
                }
                _ => fedsim::local_update(snapshot, &data, &params.local, pass_seed)?,
            };
            Ok(LabeledUpdate {
                update,
                positive,
                split: if idx_in_class < train_per_class {
                    Split::Train
                } else {
                    Split::Eval
                },
                batch,
                includes_target,
            })
        })
        .collect::<Result<Vec<_>, DetectorError>>()?;
    Ok(LabeledUpdateSet { examples })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorTraining {
    pub eta: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

/// A trained per-round detector with `t` linear features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub round: usize,
    /// `t` rows of length `z`.
    pub alpha: Vec<Vec<f64>>,
    pub beta: f64,
    /// Mean logistic loss on the training split after each completed epoch.
    pub loss_trace: Vec<f64>,
}

fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

pub fn logistic(u: f64) -> f64 {
    sigmoid(u)
}

impl DetectorModel {
    pub fn feature_count(&self) -> usize {
        self.alpha.len()
    }

    pub fn dim(&self) -> usize {
        self.alpha.first().map_or(0, Vec::len)
    }

    /// `h_r(u) = sigmoid(sum_k u_k + β)`; for `t = 1` this is the logistic link.
    pub fn link(&self, features: &[f64]) -> f64 {
        sigmoid(features.iter().sum::<f64>() + self.beta)
    }

    /// Full detector confidence `M_r(x)`.
    pub fn confidence(&self, x: &[f64]) -> Result<f64, DetectorError> {
        Ok(self.link(&extract_feature(self, x)?))
    }
}

/// `g_r(x) = αᵀx`, no bias.
pub fn extract_feature(detector: &DetectorModel, x: &[f64]) -> Result<Vec<f64>, DetectorError> {
    if x.len() != detector.dim() {
        return Err(DetectorError::DimensionMismatch {
            expected: detector.dim(),
            got: x.len(),
        });
    }
    Ok(detector
        .alpha
        .iter()
        .map(|a| a.iter().zip(x).map(|(p, q)| p * q).sum())
        .collect())
}

fn mean_logistic_loss(w: &[f64], b: f64, xs: &[Vec<f64>], ys: &[f64]) -> f64 {
    xs.iter()
        .zip(ys)
        .map(|(x, &y)| {
            let u: f64 = w.iter().zip(x).map(|(p, q)| p * q).sum::<f64>() + b;
            // log(1 + e^u) - y u, stable in both tails
            let softplus = if u > 0.0 {
                u + (-u).exp().ln_1p()
            } else {
                u.exp().ln_1p()
            };
            softplus - y * u
        })
        .sum::<f64>()
        / xs.len() as f64
}

/// Logistic regression by mini-batch SGD on the training split.
///
/// Inputs are divided by their root-mean-square norm before training (a linear
/// rescaling folded back into α), so one learning rate works across rounds
/// whose update magnitudes differ by orders of magnitude. Training stops
/// early, keeping the previous epoch's weights, as soon as the epoch loss
/// rises by more than `1e-6`.
pub fn train_detector(
    round: usize,
    set: &LabeledUpdateSet,
    params: &DetectorTraining,
    seed: u64,
) -> Result<DetectorModel, DetectorError> {
    let train: Vec<&LabeledUpdate> = set.split(Split::Train).collect();
    let positives = train.iter().filter(|e| e.positive).count();
    let negatives = train.len() - positives;
    if positives != negatives || positives == 0 {
        return Err(DetectorError::Unbalanced {
            positives,
            negatives,
        });
    }
    let z = set.dim();
    let rms = (train
        .iter()
        .map(|e| e.update.0.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        / train.len() as f64)
        .sqrt();
    let scale = if rms > 0.0 { 1.0 / rms } else { 1.0 };
    let xs: Vec<Vec<f64>> = train
        .iter()
        .map(|e| e.update.0.iter().map(|v| v * scale).collect())
        .collect();
    let ys: Vec<f64> = train
        .iter()
        .map(|e| if e.positive { 1.0 } else { 0.0 })
        .collect();

    let mut rng = seeding::rng_for(seed, &[stream::DETECTOR_TRAIN, round as u64]);
    let mut w = vec![0.0; z];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut prev = mean_logistic_loss(&w, b, &xs, &ys);
    let mut trace = Vec::with_capacity(params.epochs);
    let batch_size = params.batch_size.max(1);

    for epoch in 0..params.epochs {
        let (w_prev, b_prev) = (w.clone(), b);
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            let mut gw = vec![0.0; z];
            let mut gb = 0.0;
            for &k in chunk {
                let u: f64 = w.iter().zip(&xs[k]).map(|(p, q)| p * q).sum::<f64>() + b;
                let err = sigmoid(u) - ys[k];
                gb += err;
                gw.iter_mut().zip(&xs[k]).for_each(|(g, x)| *g += err * x);
            }
            let step = params.eta / chunk.len() as f64;
            w.iter_mut().zip(&gw).for_each(|(p, g)| *p -= step * g);
            b -= step * gb;
        }
        let loss = mean_logistic_loss(&w, b, &xs, &ys);
        if !loss.is_finite() {
            return Err(DetectorError::Divergence(epoch));
        }
        if loss > prev + 1e-6 {
            w = w_prev;
            b = b_prev;
            break;
        }
        trace.push(loss);
        prev = loss;
    }

    Ok(DetectorModel {
        round,
        alpha: vec![w.iter().map(|p| p * scale).collect()],
        beta: b,
        loss_trace: trace,
    })
}

/// Class-conditional Gaussian fit of one linear feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPair {
    pub mu_plus: f64,
    pub sigma_plus: f64,
    pub mu_minus: f64,
    pub sigma_minus: f64,
    pub ovl: f64,
}

impl GaussianPair {
    pub fn plus(&self) -> Gaussian {
        Gaussian::new(self.mu_plus, self.sigma_plus)
    }

    pub fn minus(&self) -> Gaussian {
        Gaussian::new(self.mu_minus, self.sigma_minus)
    }
}

/// `f⁺_r`, `f⁻_r` for every feature of one round and the round weight
/// `v_r = 1 - OVL_r` (mean OVL over features when `t > 1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDistributions {
    pub round: usize,
    pub features: Vec<GaussianPair>,
    pub weight: f64,
}

impl FeatureDistributions {
    pub fn from_pairs(round: usize, features: Vec<GaussianPair>) -> Self {
        let mean_ovl = features.iter().map(|f| f.ovl).sum::<f64>() / features.len().max(1) as f64;
        FeatureDistributions {
            round,
            features,
            weight: (1.0 - mean_ovl).clamp(0.0, 1.0),
        }
    }

    pub fn ovl(&self) -> f64 {
        1.0 - self.weight
    }
}

pub fn compute_ovl(mu1: f64, sigma1: f64, mu2: f64, sigma2: f64) -> Result<f64, DetectorError> {
    overlap_coefficient(Gaussian::new(mu1, sigma1), Gaussian::new(mu2, sigma2))
        .ok_or(DetectorError::InvalidDistribution)
}

fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt().max(SIGMA_FLOOR))
}

/// Fits `f⁺_r`, `f⁻_r` on the evaluation split.
pub fn fit_distributions(
    detector: &DetectorModel,
    set: &LabeledUpdateSet,
) -> Result<FeatureDistributions, DetectorError> {
    let t = detector.feature_count();
    let mut pos: Vec<Vec<f64>> = vec![Vec::new(); t];
    let mut neg: Vec<Vec<f64>> = vec![Vec::new(); t];
    for e in set.split(Split::Eval) {
        let f = extract_feature(detector, &e.update.0)?;
        let bucket = if e.positive { &mut pos } else { &mut neg };
        bucket.iter_mut().zip(f).for_each(|(b, v)| b.push(v));
    }
    if pos[0].len() < 2 {
        return Err(DetectorError::MissingClass("positive"));
    }
    if neg[0].len() < 2 {
        return Err(DetectorError::MissingClass("negative"));
    }
    let pairs = (0..t)
        .map(|k| {
            let (mu_plus, sigma_plus) = mean_and_sample_std(&pos[k]);
            let (mu_minus, sigma_minus) = mean_and_sample_std(&neg[k]);
            Ok(GaussianPair {
                mu_plus,
                sigma_plus,
                mu_minus,
                sigma_minus,
                ovl: compute_ovl(mu_plus, sigma_plus, mu_minus, sigma_minus)?,
            })
        })
        .collect::<Result<Vec<_>, DetectorError>>()?;
    Ok(FeatureDistributions::from_pairs(detector.round, pairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fedsim::{MlpShape, SyntheticTask};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn fixture(seed: u64) -> (GlobalModel, Vec<Sample>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let task = SyntheticTask {
            dim: 4,
            separation: 3.0,
            noise_std: 1.0,
        };
        let aux = task.generate(120, &mut rng);
        let shape = MlpShape {
            input_dim: 4,
            hidden_dim: 6,
            classes: 2,
        };
        (GlobalModel::init(shape, &mut rng), aux)
    }

    fn set_params(count: usize) -> TrainingSetParams {
        TrainingSetParams {
            count,
            batch_len: 8,
            local: LocalTraining {
                eta: 0.1,
                epochs: 1,
                batch_size: 4,
            },
            train_fraction: 0.8,
        }
    }

    fn training() -> DetectorTraining {
        DetectorTraining {
            eta: 0.5,
            epochs: 100,
            batch_size: 10,
        }
    }

    fn synthetic_set(
        n_per_class: usize,
        z: usize,
        seed: u64,
        shuffle_labels: bool,
    ) -> LabeledUpdateSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let train_per_class = n_per_class * 4 / 5;
        let mut examples = Vec::new();
        for k in 0..2 * n_per_class {
            let positive = k % 2 == 0;
            let mut v: Vec<f64> = (0..z)
                .map(|_| 0.05 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            v[0] += if positive { 1.0 } else { -1.0 };
            examples.push(LabeledUpdate {
                update: UpdateVector(v),
                positive,
                split: if k / 2 < train_per_class {
                    Split::Train
                } else {
                    Split::Eval
                },
                batch: Vec::new(),
                includes_target: false,
            });
        }
        if shuffle_labels {
            for split in [Split::Train, Split::Eval] {
                let idx: Vec<usize> = (0..examples.len())
                    .filter(|&i| examples[i].split == split)
                    .collect();
                let mut labels: Vec<bool> = idx.iter().map(|&i| examples[i].positive).collect();
                labels.shuffle(&mut rng);
                for (i, l) in idx.into_iter().zip(labels) {
                    examples[i].positive = l;
                }
            }
        }
        LabeledUpdateSet { examples }
    }

    fn accuracy(d: &DetectorModel, set: &LabeledUpdateSet, split: Split) -> f64 {
        let items: Vec<_> = set.split(split).collect();
        let hits = items
            .iter()
            .filter(|e| (d.confidence(&e.update.0).unwrap() > 0.5) == e.positive)
            .count();
        hits as f64 / items.len() as f64
    }

    #[test]
    fn inversion_positive_is_negated_honest_update() {
        let (model, aux) = fixture(1);
        let params = set_params(10);
        let set = build_training_set(&aux, &model, &Property::Inversion, &params, 3).unwrap();
        for (k, e) in set.examples.iter().enumerate().filter(|(_, e)| e.positive) {
            let data = ClientDataset {
                client_id: usize::MAX,
                samples: e.batch.iter().map(|&j| aux[j].clone()).collect(),
            };
            let pass_seed = seeding::derive_seed(3, &[stream::DETECTOR_SET, k as u64, 1]);
            let honest = fedsim::local_update(&model, &data, &params.local, pass_seed).unwrap();
            assert_eq!(e.update, honest.negated());
        }
    }

    #[test]
    fn count_100_gives_balanced_80_20_split() {
        let (model, aux) = fixture(2);
        let set = build_training_set(&aux, &model, &Property::Ascent, &set_params(100), 1).unwrap();
        let pos = set.examples.iter().filter(|e| e.positive).count();
        assert_eq!((pos, set.examples.len() - pos), (50, 50));
        assert_eq!(set.split(Split::Train).count(), 80);
        assert_eq!(set.split(Split::Eval).count(), 20);
        assert_eq!(set.split(Split::Eval).filter(|e| e.positive).count(), 10);
    }

    #[test]
    fn membership_positives_contain_target_and_negatives_do_not() {
        let (model, mut aux) = fixture(3);
        let target = aux[0].clone();
        let property = Property::Membership {
            target: target.clone(),
        };
        aux.push(target.clone());
        let set = build_training_set(&aux, &model, &property, &set_params(40), 2).unwrap();
        for e in &set.examples {
            assert_eq!(e.includes_target, e.positive);
            assert!(e.batch.iter().all(|&j| aux[j] != target));
            assert_eq!(e.batch.len(), if e.positive { 7 } else { 8 });
        }
    }

    #[test]
    fn rejects_small_aux_and_odd_counts() {
        let (model, aux) = fixture(4);
        assert!(matches!(
            build_training_set(&aux[..5], &model, &Property::Inversion, &set_params(10), 0),
            Err(DetectorError::InsufficientAuxData { have: 5, need: 8 })
        ));
        assert!(matches!(
            build_training_set(&aux, &model, &Property::Inversion, &set_params(11), 0),
            Err(DetectorError::BadCount(11))
        ));
    }

    #[test]
    fn separable_set_is_learned_perfectly_with_monotone_loss() {
        let set = synthetic_set(50, 20, 5, false);
        let d = train_detector(0, &set, &training(), 1).unwrap();
        assert_eq!(accuracy(&d, &set, Split::Train), 1.0);
        assert!(d.loss_trace.windows(2).all(|w| w[1] <= w[0] + 1e-6));
    }

    #[test]
    fn shuffled_labels_stay_near_chance() {
        let mut accs = Vec::new();
        for seed in 0..3 {
            let set = synthetic_set(100, 20, 10 + seed, true);
            let d = train_detector(0, &set, &training(), seed).unwrap();
            accs.push(accuracy(&d, &set, Split::Eval));
        }
        for a in accs {
            assert!((a - 0.5).abs() <= 0.15, "eval accuracy {a}");
        }
    }

    #[test]
    fn training_is_deterministic() {
        let set = synthetic_set(30, 10, 6, false);
        let a = train_detector(3, &set, &training(), 7).unwrap();
        let b = train_detector(3, &set, &training(), 7).unwrap();
        assert_eq!(a.alpha, b.alpha);
        assert_eq!(a.beta.to_bits(), b.beta.to_bits());
    }

    #[test]
    fn feature_is_linear_and_bias_free() {
        let d = DetectorModel {
            round: 0,
            alpha: vec![vec![0.5, -2.0, 1.0]],
            beta: 3.0,
            loss_trace: Vec::new(),
        };
        assert_eq!(extract_feature(&d, &[0.0; 3]).unwrap(), vec![0.0]);
        let x = [1.0, 2.0, 3.0];
        let f = extract_feature(&d, &x).unwrap()[0];
        assert!((d.confidence(&x).unwrap() - logistic(f + 3.0)).abs() < 1e-15);
        assert!(matches!(
            extract_feature(&d, &[1.0]),
            Err(DetectorError::DimensionMismatch {
                expected: 3,
                got: 1
            })
        ));
    }

    proptest! {
        #[test]
        fn feature_linearity(
            alpha in proptest::collection::vec(-10.0f64..10.0, 8),
            x in proptest::collection::vec(-5.0f64..5.0, 8),
            y in proptest::collection::vec(-5.0f64..5.0, 8),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let d = DetectorModel { round: 0, alpha: vec![alpha], beta: 0.0, loss_trace: Vec::new() };
            let combo: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let lhs = extract_feature(&d, &combo).unwrap()[0];
            let rhs = a * extract_feature(&d, &x).unwrap()[0] + b * extract_feature(&d, &y).unwrap()[0];
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }

        #[test]
        fn weight_stays_in_unit_interval(m1 in -5.0f64..5.0, s1 in 0.01f64..3.0, m2 in -5.0f64..5.0, s2 in 0.01f64..3.0) {
            let ovl = compute_ovl(m1, s1, m2, s2).unwrap();
            let fd = FeatureDistributions::from_pairs(0, vec![GaussianPair { mu_plus: m1, sigma_plus: s1, mu_minus: m2, sigma_minus: s2, ovl }]);
            prop_assert!((0.0..=1.0).contains(&fd.weight));
        }
    }

    fn set_from_features(pos: &[f64], neg: &[f64]) -> (DetectorModel, LabeledUpdateSet) {
        let d = DetectorModel {
            round: 2,
            alpha: vec![vec![1.0]],
            beta: 0.0,
            loss_trace: Vec::new(),
        };
        let mk = |v: f64, positive: bool| LabeledUpdate {
            update: UpdateVector(vec![v]),
            positive,
            split: Split::Eval,
            batch: Vec::new(),
            includes_target: false,
        };
        let examples = pos
            .iter()
            .map(|&v| mk(v, true))
            .chain(neg.iter().map(|&v| mk(v, false)))
            .collect();
        (d, LabeledUpdateSet { examples })
    }

    #[test]
    fn fit_distributions_arithmetic() {
        let (d, set) = set_from_features(&[0.0, 2.0], &[10.0, 12.0]);
        let fd = fit_distributions(&d, &set).unwrap();
        let p = fd.features[0];
        assert_eq!(fd.round, 2);
        assert!((p.mu_plus - 1.0).abs() < 1e-15 && (p.mu_minus - 11.0).abs() < 1e-15);
        assert!((p.sigma_plus - 2f64.sqrt()).abs() < 1e-15);
        assert!((p.sigma_minus - 2f64.sqrt()).abs() < 1e-15);
        assert!(p.ovl < 1e-3);
    }

    #[test]
    fn degenerate_samples_hit_the_floor() {
        let (d, set) = set_from_features(&[1.0, 1.0], &[3.0, 3.0]);
        let p = fit_distributions(&d, &set).unwrap().features[0];
        assert_eq!(p.sigma_plus, SIGMA_FLOOR);
        assert_eq!(p.sigma_minus, SIGMA_FLOOR);
    }

    #[test]
    fn missing_class_is_an_error() {
        let (d, set) = set_from_features(&[1.0, 2.0], &[3.0]);
        assert_eq!(
            fit_distributions(&d, &set),
            Err(DetectorError::MissingClass("negative"))
        );
    }

    #[test]
    fn ovl_limits() {
        assert!((compute_ovl(0.0, 1.0, 0.0, 1.0).unwrap() - 1.0).abs() < 1e-9);
        assert!(compute_ovl(0.0, 1.0, 100.0, 1.0).unwrap() < 1e-12);
        assert!(compute_ovl(0.0, -1.0, 0.0, 1.0).is_err());
        let fd = FeatureDistributions::from_pairs(
            0,
            vec![GaussianPair {
                mu_plus: 0.0,
                sigma_plus: 1.0,
                mu_minus: 0.0,
                sigma_minus: 1.0,
                ovl: 1.0,
            }],
        );
        assert_eq!(fd.weight, 0.0);
    }
}
