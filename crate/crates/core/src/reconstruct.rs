//! Regression-based reconstructions from the attacker view.
//!
//! BASELINE disaggregates full update vectors and averages per-round detector
//! confidences. OLS and REG disaggregate the scalar feature aggregates
//! `G_r = g_r(b_r)` and apply a single logistic link to each client's
//! expected feature.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{logistic, DetectorModel, FeatureDistributions};
use crate::fedsim::{AttackerView, ParticipationMatrix};
use crate::linalg::{self, LinalgError, Matrix};
use crate::seeding;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReconstructError {
    #[error("no detector or distribution for round {0}")]
    MissingRound(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("nothing observed yet")]
    Empty,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Baseline,
    Ols,
    Reg,
    Prolin,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Baseline, Method::Ols, Method::Reg, Method::Prolin];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Ols => "ols",
            Method::Reg => "reg",
            Method::Prolin => "prolin",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown method {s:?} (expected baseline, ols, reg or prolin)"))
    }
}

/// How relaxed `tau` is turned into binary labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionRule {
    Threshold(f64),
    /// The `k` largest `tau` are positive; ties go to the lower client id.
    TopK(usize),
}

impl Default for DecisionRule {
    fn default() -> Self {
        DecisionRule::Threshold(0.5)
    }
}

impl DecisionRule {
    pub fn apply(&self, tau: &[f64]) -> Vec<bool> {
        match *self {
            DecisionRule::Threshold(t) => tau.iter().map(|&v| v > t).collect(),
            DecisionRule::TopK(k) => {
                let mut order: Vec<usize> = (0..tau.len()).collect();
                order.sort_by(|&a, &b| tau[b].total_cmp(&tau[a]).then(a.cmp(&b)));
                let mut labels = vec![false; tau.len()];
                order.into_iter().take(k).for_each(|i| labels[i] = true);
                labels
            }
        }
    }
}

/// `G` (`n x t`) and the round weights `v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureAggregates {
    pub g: Matrix,
    pub weights: Vec<f64>,
}

impl FeatureAggregates {
    pub fn rounds(&self) -> usize {
        self.g.rows()
    }

    pub fn features(&self) -> usize {
        self.g.cols()
    }

    pub fn prefix(&self, rounds: usize) -> FeatureAggregates {
        FeatureAggregates {
            g: self.g.top_rows(rounds),
            weights: self.weights[..rounds.min(self.weights.len())].to_vec(),
        }
    }
}

/// Per-client expected gradient `W̃` (`N x z`) or expected features `G̃` (`N x t`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructedProfile {
    pub method: Method,
    pub expected: Matrix,
    pub rank_deficient: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub method: Method,
    /// Number of observed rounds the decision is based on.
    pub rounds: usize,
    pub tau: Vec<f64>,
    pub labels: Vec<bool>,
    pub rank_deficient: bool,
}

impl Decision {
    pub fn new(
        method: Method,
        rounds: usize,
        tau: Vec<f64>,
        rule: DecisionRule,
        rank_deficient: bool,
    ) -> Self {
        let labels = rule.apply(&tau);
        Decision {
            method,
            rounds,
            tau,
            labels,
            rank_deficient,
        }
    }
}

fn check_rounds(rounds: usize, detectors: &[DetectorModel]) -> Result<(), ReconstructError> {
    if rounds == 0 {
        return Err(ReconstructError::Empty);
    }
    if detectors.len() < rounds {
        return Err(ReconstructError::MissingRound(detectors.len()));
    }
    Ok(())
}

/// `G_r = g_r(b_r)` for every observed round; `v_r` comes from the matching
/// distributions.
pub fn feature_aggregates(
    view: &AttackerView,
    detectors: &[DetectorModel],
    distributions: &[FeatureDistributions],
) -> Result<FeatureAggregates, ReconstructError> {
    let n = view.round_count();
    check_rounds(n, detectors)?;
    if distributions.len() < n {
        return Err(ReconstructError::MissingRound(distributions.len()));
    }
    let t = detectors[0].feature_count();
    let mut data = Vec::with_capacity(n * t);
    for r in 0..n {
        let d = &detectors[r];
        if d.feature_count() != t {
            return Err(ReconstructError::DimensionMismatch(format!(
                "round {r} has {} features, round 0 has {t}",
                d.feature_count()
            )));
        }
        let features = crate::detector::extract_feature(d, view.aggregate(r))
            .map_err(|e| ReconstructError::DimensionMismatch(format!("round {r}: {e}")))?;
        data.extend(features);
    }
    Ok(FeatureAggregates {
        g: Matrix::new(n, t, data)?,
        weights: distributions[..n].iter().map(|d| d.weight).collect(),
    })
}

/// Mean of `β_r` over the first `rounds` detectors.
pub fn mean_beta(detectors: &[DetectorModel], rounds: usize) -> f64 {
    let used = &detectors[..rounds.min(detectors.len())];
    used.iter().map(|d| d.beta).sum::<f64>() / used.len().max(1) as f64
}

/// Gradient disaggregation followed by averaged per-round decisions.
pub fn baseline_reconstruct(
    view: &AttackerView,
    detectors: &[DetectorModel],
    rule: DecisionRule,
) -> Result<(ReconstructedProfile, Decision), ReconstructError> {
    let n = view.round_count();
    check_rounds(n, detectors)?;
    let a = view.participation().to_matrix();
    let report = linalg::ols_solve(&a, &view.aggregate_matrix())?;
    let w = &report.solution;
    let clients = w.rows();
    if w.cols() != detectors[0].dim() {
        return Err(ReconstructError::DimensionMismatch(format!(
            "updates have {} coordinates, detectors expect {}",
            w.cols(),
            detectors[0].dim()
        )));
    }
    let tau: Vec<f64> = (0..clients)
        .into_par_iter()
        .map(|i| {
            let x = w.row(i);
            detectors[..n]
                .iter()
                .map(|d| d.confidence(x).expect("dimension checked"))
                .sum::<f64>()
                / n as f64
        })
        .collect();
    let decision = Decision::new(Method::Baseline, n, tau, rule, report.rank_deficient);
    Ok((
        ReconstructedProfile {
            method: Method::Baseline,
            expected: report.solution,
            rank_deficient: report.rank_deficient,
        },
        decision,
    ))
}

fn feature_decision(
    method: Method,
    report: linalg::SolveReport,
    rounds: usize,
    beta_bar: f64,
    rule: DecisionRule,
) -> (ReconstructedProfile, Decision) {
    let g = &report.solution;
    let tau = (0..g.rows())
        .map(|i| logistic(g.row(i).iter().sum::<f64>() + beta_bar))
        .collect();
    let decision = Decision::new(method, rounds, tau, rule, report.rank_deficient);
    (
        ReconstructedProfile {
            method,
            expected: report.solution,
            rank_deficient: report.rank_deficient,
        },
        decision,
    )
}

fn check_aggregates(
    agg: &FeatureAggregates,
    a: &ParticipationMatrix,
) -> Result<usize, ReconstructError> {
    let n = agg.rounds();
    if n == 0 {
        return Err(ReconstructError::Empty);
    }
    if a.rounds() != n {
        return Err(ReconstructError::DimensionMismatch(format!(
            "{} participation rows for {n} feature aggregates",
            a.rounds()
        )));
    }
    Ok(n)
}

/// `G̃ = argmin ‖G - A x‖²`, equal round weights, no regularisation.
pub fn ols_feature_reconstruct(
    agg: &FeatureAggregates,
    a: &ParticipationMatrix,
    detectors: &[DetectorModel],
    rule: DecisionRule,
) -> Result<(ReconstructedProfile, Decision), ReconstructError> {
    let n = check_aggregates(agg, a)?;
    check_rounds(n, detectors)?;
    let report = linalg::ols_solve(&a.to_matrix(), &agg.g)?;
    Ok(feature_decision(
        Method::Ols,
        report,
        n,
        mean_beta(detectors, n),
        rule,
    ))
}

/// `G̃ = argmin Σ_r v_r ‖G_r - A_r x‖² + λ ‖x‖²`.
pub fn reg_feature_reconstruct(
    agg: &FeatureAggregates,
    a: &ParticipationMatrix,
    detectors: &[DetectorModel],
    lambda: f64,
    rule: DecisionRule,
) -> Result<(ReconstructedProfile, Decision), ReconstructError> {
    let n = check_aggregates(agg, a)?;
    check_rounds(n, detectors)?;
    let report = linalg::ridge_solve(&a.to_matrix(), &agg.g, &agg.weights, lambda)?;
    Ok(feature_decision(
        Method::Reg,
        report,
        n,
        mean_beta(detectors, n),
        rule,
    ))
}

/// Shape of the per-client signal fed into the error-ratio experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaShape {
    /// Random direction on the sphere, scaled to the requested norm.
    Dense,
    /// All weight on a single coordinate.
    OneHot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioSetup {
    pub rounds: usize,
    pub clients: usize,
    pub fraction: f64,
    pub dim: usize,
    pub features: usize,
    pub noise_sigma: f64,
    pub trials: usize,
}

impl Default for RatioSetup {
    fn default() -> Self {
        RatioSetup {
            rounds: 60,
            clients: 10,
            fraction: 0.3,
            dim: 40,
            features: 1,
            noise_sigma: 1.0,
            trials: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioPoint {
    pub alpha_norm: f64,
    pub shape: AlphaShape,
    /// `E‖g(Ŵ) - g(W̃)‖₁ / E‖Ĝ - G̃‖₁`.
    pub ratio: f64,
    /// `‖α‖₂ / t`.
    pub reference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub setup: RatioSetup,
    pub points: Vec<RatioPoint>,
}

fn gaussian_matrix<R: Rng>(rows: usize, cols: usize, sigma: f64, rng: &mut R) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::new(rows, cols, data).expect("finite noise")
}

/// Monte-Carlo comparison of OLS error in gradient space (projected through a
/// fixed linear map `α`) against OLS error directly in feature space, under
/// i.i.d. Gaussian aggregate noise of equal scale.
///
/// The planted signal cancels out of both errors, so only the noise is
/// simulated: `g(Ŵ) - g(W̃) = -α·(A⁺Ω)` and `Ĝ - G̃ = -A⁺Θ`.
pub fn appendix_b_ratio_experiment(
    alpha_norms: &[f64],
    shape: AlphaShape,
    setup: &RatioSetup,
    seed: u64,
) -> Result<RatioReport, ReconstructError> {
    let participation =
        ParticipationMatrix::sample(setup.rounds, setup.clients, setup.fraction, seed)
            .map_err(|e| ReconstructError::DimensionMismatch(e.to_string()))?;
    let pinv = linalg::pseudo_inverse(&participation.to_matrix())?;
    let t = setup.features.max(1);

    let mut rng = seeding::rng_for(seed, &[0xB]);
    let direction: Vec<Vec<f64>> = (0..t)
        .map(|k| match shape {
            AlphaShape::Dense => {
                let v: Vec<f64> = (0..setup.dim).map(|_| rng.sample(StandardNormal)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / norm).collect()
            }
            AlphaShape::OneHot => {
                let mut v = vec![0.0; setup.dim];
                v[k % setup.dim] = 1.0;
                v
            }
        })
        .collect();

    let points = alpha_norms
        .iter()
        .enumerate()
        .map(|(p, &norm)| {
            let alpha = Matrix::new(
                setup.dim,
                t,
                (0..setup.dim)
                    .flat_map(|j| direction.iter().map(move |d| norm * d[j]))
                    .collect(),
            )?;
            let (mut grad_err, mut feat_err) = (0.0, 0.0);
            for trial in 0..setup.trials {
                let mut rng = seeding::rng_for(seed, &[0xB, p as u64, trial as u64]);
                let omega = gaussian_matrix(setup.rounds, setup.dim, setup.noise_sigma, &mut rng);
                let theta = gaussian_matrix(setup.rounds, t, setup.noise_sigma, &mut rng);
                let g_err = pinv.matmul(&omega)?.matmul(&alpha)?;
                let f_err = pinv.matmul(&theta)?;
                grad_err += g_err.as_slice().iter().map(|v| v.abs()).sum::<f64>();
                feat_err += f_err.as_slice().iter().map(|v| v.abs()).sum::<f64>();
            }
            Ok(RatioPoint {
                alpha_norm: norm,
                shape,
                ratio: grad_err / feat_err,
                reference: norm / t as f64,
            })
        })
        .collect::<Result<Vec<_>, ReconstructError>>()?;
    Ok(RatioReport {
        setup: setup.clone(),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fedsim::{GlobalModel, MlpShape, ObservedRound};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn detectors(n: usize, alpha: Vec<f64>, beta: f64) -> Vec<DetectorModel> {
        (0..n)
            .map(|round| DetectorModel {
                round,
                alpha: vec![alpha.clone()],
                beta,
                loss_trace: Vec::new(),
            })
            .collect()
    }

    fn planted(
        n: usize,
        clients: usize,
        fraction: f64,
        seed: u64,
    ) -> (ParticipationMatrix, Vec<f64>, FeatureAggregates) {
        let a = ParticipationMatrix::sample(n, clients, fraction, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth: Vec<f64> = (0..clients).map(|_| rng.random_range(-3.0..3.0)).collect();
        let g: Vec<f64> = (0..n)
            .map(|r| a.participants(r).iter().map(|&i| truth[i]).sum())
            .collect();
        let agg = FeatureAggregates {
            g: Matrix::new(n, 1, g).unwrap(),
            weights: vec![1.0; n],
        };
        (a, truth, agg)
    }

    fn full_rank(a: &ParticipationMatrix) -> bool {
        linalg::numerical_rank(&a.to_matrix()).unwrap() == a.clients()
    }

    #[test]
    fn planted_features_are_recovered_exactly() {
        let (a, truth, agg) = planted(30, 6, 0.5, 2);
        assert!(full_rank(&a));
        let ds = detectors(30, vec![1.0], 0.0);
        let (profile, decision) =
            ols_feature_reconstruct(&agg, &a, &ds, DecisionRule::default()).unwrap();
        for (i, t) in truth.iter().enumerate() {
            assert!((profile.expected.get(i, 0) - t).abs() < 1e-8);
            assert_eq!(decision.labels[i], *t > 0.0);
        }
        assert!(!decision.rank_deficient);
    }

    #[test]
    fn identity_participation_returns_rows() {
        let a =
            ParticipationMatrix::from_rows(&[vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]).unwrap();
        let agg = FeatureAggregates {
            g: Matrix::column_vector(&[0.5, -1.0, 2.0]).unwrap(),
            weights: vec![1.0; 3],
        };
        let (p, _) = ols_feature_reconstruct(
            &agg,
            &a,
            &detectors(3, vec![1.0], 0.0),
            DecisionRule::default(),
        )
        .unwrap();
        assert_eq!(p.expected.column(0), vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn rank_deficiency_is_surfaced() {
        let (a, _, agg) = planted(2, 6, 0.5, 3);
        let (_, d) = ols_feature_reconstruct(
            &agg,
            &a,
            &detectors(2, vec![1.0], 0.0),
            DecisionRule::default(),
        )
        .unwrap();
        assert!(d.rank_deficient);
    }

    #[test]
    fn reg_reduces_to_ols_and_shrinks_in_the_limit() {
        let (a, _, mut agg) = planted(25, 5, 0.4, 4);
        let ds = detectors(25, vec![1.0], 0.7);
        let (ols, _) = ols_feature_reconstruct(&agg, &a, &ds, DecisionRule::default()).unwrap();
        let (reg, _) =
            reg_feature_reconstruct(&agg, &a, &ds, 0.0, DecisionRule::default()).unwrap();
        assert!(ols.expected.max_abs_diff(&reg.expected) < 1e-10);

        agg.weights = vec![0.8; 25];
        let (_, d) = reg_feature_reconstruct(&agg, &a, &ds, 1e12, DecisionRule::default()).unwrap();
        for tau in d.tau {
            assert!((tau - logistic(0.7)).abs() < 1e-9);
        }
    }

    #[test]
    fn nested_prefixes_never_increase_error() {
        let (a, truth, agg) = planted(40, 6, 0.5, 5);
        let ds = detectors(40, vec![1.0], 0.0);
        let mut prev = f64::INFINITY;
        for n in 1..=40 {
            let pa = a.prefix(n);
            let (p, _) =
                ols_feature_reconstruct(&agg.prefix(n), &pa, &ds, DecisionRule::default()).unwrap();
            if full_rank(&pa) {
                let err = (0..6)
                    .map(|i| (p.expected.get(i, 0) - truth[i]).abs())
                    .fold(0.0, f64::max);
                assert!(err <= prev + 1e-12);
                prev = err;
            }
        }
        assert!(prev < 1e-8);
    }

    #[test]
    fn permuting_clients_permutes_decisions() {
        let (a, _, agg) = planted(30, 5, 0.4, 6);
        let ds = detectors(30, vec![1.0], 0.1);
        let perm = [3, 0, 4, 1, 2];
        let pa = a.permute_clients(&perm);
        let (_, d) = reg_feature_reconstruct(&agg, &a, &ds, 5.0, DecisionRule::default()).unwrap();
        let (_, dp) =
            reg_feature_reconstruct(&agg, &pa, &ds, 5.0, DecisionRule::default()).unwrap();
        for (old, &new) in perm.iter().enumerate() {
            assert!((d.tau[old] - dp.tau[new]).abs() < 1e-10);
        }
    }

    fn view_from(a: &ParticipationMatrix, updates: &[Vec<f64>]) -> AttackerView {
        let shape = MlpShape {
            input_dim: 1,
            hidden_dim: 1,
            classes: 2,
        };
        let snapshot = GlobalModel::unflatten(shape, vec![0.0; shape.param_count()]).unwrap();
        let z = updates[0].len();
        let rounds = (0..a.rounds())
            .map(|r| {
                let mut agg = vec![0.0; z];
                for i in a.participants(r) {
                    agg.iter_mut().zip(&updates[i]).for_each(|(s, u)| *s += u);
                }
                ObservedRound {
                    round: r,
                    participants: a.participants(r),
                    aggregate: agg,
                    snapshot: snapshot.clone(),
                }
            })
            .collect();
        AttackerView::new(a.clone(), rounds).unwrap()
    }

    #[test]
    fn baseline_recovers_constant_updates() {
        let a = ParticipationMatrix::sample(40, 5, 0.4, 7).unwrap();
        assert!(full_rank(&a));
        let updates: Vec<Vec<f64>> = (0..5)
            .map(|i| vec![i as f64 - 2.0, 0.5 * i as f64, 1.0])
            .collect();
        let view = view_from(&a, &updates);
        let ds = detectors(40, vec![1.0, -0.5, 0.2], -0.1);
        let (p, d) = baseline_reconstruct(&view, &ds, DecisionRule::default()).unwrap();
        for (i, u) in updates.iter().enumerate() {
            for (j, v) in u.iter().enumerate() {
                assert!((p.expected.get(i, j) - v).abs() < 1e-6);
            }
            assert!((d.tau[i] - ds[0].confidence(u).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn baseline_single_client_is_mean_aggregate() {
        let a = ParticipationMatrix::from_rows(&[vec![1], vec![1], vec![1]]).unwrap();
        let shape = MlpShape {
            input_dim: 1,
            hidden_dim: 1,
            classes: 2,
        };
        let snap = GlobalModel::unflatten(shape, vec![0.0; shape.param_count()]).unwrap();
        let rounds = [1.0, 2.0, 6.0]
            .iter()
            .enumerate()
            .map(|(r, &v)| ObservedRound {
                round: r,
                participants: vec![0],
                aggregate: vec![v],
                snapshot: snap.clone(),
            })
            .collect();
        let view = AttackerView::new(a, rounds).unwrap();
        let ds: Vec<DetectorModel> = (0..3)
            .map(|r| DetectorModel {
                round: r,
                alpha: vec![vec![r as f64]],
                beta: 0.0,
                loss_trace: Vec::new(),
            })
            .collect();
        let (p, d) = baseline_reconstruct(&view, &ds, DecisionRule::default()).unwrap();
        assert!((p.expected.get(0, 0) - 3.0).abs() < 1e-12);
        let expected = (logistic(0.0) + logistic(3.0) + logistic(6.0)) / 3.0;
        assert!((d.tau[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn feature_aggregates_are_linear() {
        let a = ParticipationMatrix::sample(4, 3, 0.67, 1).unwrap();
        let updates = vec![vec![1.0, 2.0], vec![-1.0, 0.5], vec![0.0, 3.0]];
        let view = view_from(&a, &updates);
        let ds = detectors(4, vec![2.0, -1.0], 0.0);
        let dist: Vec<FeatureDistributions> = (0..4)
            .map(|r| FeatureDistributions::from_pairs(r, Vec::new()))
            .collect();
        let agg = feature_aggregates(&view, &ds, &dist).unwrap();
        for r in 0..4 {
            let direct: f64 = a
                .participants(r)
                .iter()
                .map(|&i| 2.0 * updates[i][0] - updates[i][1])
                .sum();
            assert!((agg.g.get(r, 0) - direct).abs() < 1e-12);
        }
        assert!(matches!(
            feature_aggregates(&view, &ds[..2], &dist),
            Err(ReconstructError::MissingRound(2))
        ));
    }

    #[test]
    fn top_k_rule_breaks_ties_by_client_id() {
        let labels = DecisionRule::TopK(2).apply(&[0.3, 0.9, 0.3, 0.1]);
        assert_eq!(labels, vec![true, true, false, false]);
        assert_eq!(
            DecisionRule::Threshold(0.5).apply(&[0.5, 0.51]),
            vec![false, true]
        );
    }

    #[test]
    fn ratio_experiment_tracks_alpha_norm() {
        let setup = RatioSetup {
            trials: 30,
            ..RatioSetup::default()
        };
        let dense =
            appendix_b_ratio_experiment(&[1.0, 10.0], AlphaShape::Dense, &setup, 3).unwrap();
        for p in &dense.points {
            assert!(
                p.ratio / p.reference > 0.5 && p.ratio / p.reference < 2.0,
                "{p:?}"
            );
        }
        let sparse = appendix_b_ratio_experiment(&[1.0], AlphaShape::OneHot, &setup, 3).unwrap();
        assert!((sparse.points[0].ratio - 1.0).abs() < 0.5);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("lasso".parse::<Method>().is_err());
    }
}
