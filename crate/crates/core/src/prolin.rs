//! PROLIN: joint recovery of per-round client features `X` and the relaxed
//! property vector `τ`.
//!
//! The objective is `γ₁ L_ml + γ₂ L_reg + γ₃ L_lstsq` with
//!
//! * `L_ml = -Σ_i log(τ_i Π_r f⁺_r(X_ri) + (1 - τ_i) Π_r f⁻_r(X_ri))`, evaluated
//!   in the log domain as a two-term log-sum-exp of per-round log-pdf sums,
//! * `L_reg = Σ_i ‖mean_{r ∈ R(i)} X_ri - G̃_i‖²`,
//! * `L_lstsq = Σ_r v_r ‖G_r - Σ_i A_ri X_ri‖²`.
//!
//! Only entries `X_ri` with `A_ri = 1` are variables; the others carry no
//! information and stay at zero. The solver is projected gradient descent:
//! `τ` is clamped to `[0, 1]` after every step and `X` is unconstrained.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{logistic, FeatureDistributions};
use crate::fedsim::ParticipationMatrix;
use crate::linalg::Matrix;
use crate::reconstruct::FeatureAggregates;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProlinError {
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("invalid optimizer parameters: {0}")]
    Params(String),
    #[error("objective term {term} is not finite at iteration {iteration}")]
    NonFinite {
        term: &'static str,
        iteration: usize,
    },
    #[error("objective increased for {patience} consecutive iterations (stopped at iteration {iteration})")]
    Divergence {
        iteration: usize,
        patience: usize,
        trace: Vec<f64>,
    },
}

/// Dense `n x N x t` feature tensor. Entries for non-participating
/// `(round, client)` pairs are kept at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTensor {
    rounds: usize,
    clients: usize,
    features: usize,
    data: Vec<f64>,
}

impl FeatureTensor {
    pub fn zeros(rounds: usize, clients: usize, features: usize) -> Self {
        FeatureTensor {
            rounds,
            clients,
            features,
            data: vec![0.0; rounds * clients * features],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.rounds, self.clients, self.features)
    }

    fn at(&self, r: usize, i: usize) -> usize {
        (r * self.clients + i) * self.features
    }

    pub fn get(&self, r: usize, i: usize, k: usize) -> f64 {
        self.data[self.at(r, i) + k]
    }

    pub fn set(&mut self, r: usize, i: usize, k: usize, value: f64) {
        let at = self.at(r, i) + k;
        self.data[at] = value;
    }

    pub fn entry(&self, r: usize, i: usize) -> &[f64] {
        let at = self.at(r, i);
        &self.data[at..at + self.features]
    }

    fn entry_mut(&mut self, r: usize, i: usize) -> &mut [f64] {
        let at = self.at(r, i);
        &mut self.data[at..at + self.features]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Inputs of one PROLIN solve, all derived from the attacker view.
#[derive(Debug, Clone, PartialEq)]
pub struct ProlinProblem {
    participation: ParticipationMatrix,
    aggregates: FeatureAggregates,
    expected: Matrix,
    distributions: Vec<FeatureDistributions>,
    beta_bar: f64,
    participants: Vec<Vec<usize>>,
    rounds_of: Vec<Vec<usize>>,
}

impl ProlinProblem {
    /// `expected` is `G̃` (`N x t`), typically from the REG reconstruction;
    /// `beta_bar` is the round-averaged detector bias used by warm starts.
    pub fn new(
        participation: ParticipationMatrix,
        aggregates: FeatureAggregates,
        expected: Matrix,
        distributions: Vec<FeatureDistributions>,
        beta_bar: f64,
    ) -> Result<Self, ProlinError> {
        let (n, clients, t) = (
            participation.rounds(),
            participation.clients(),
            aggregates.features(),
        );
        if n == 0 || clients == 0 || t == 0 {
            return Err(ProlinError::Invalid("empty problem".into()));
        }
        if aggregates.rounds() != n || aggregates.weights.len() != n {
            return Err(ProlinError::Invalid(format!(
                "{} aggregates / {} weights for {n} rounds",
                aggregates.rounds(),
                aggregates.weights.len()
            )));
        }
        if expected.shape() != (clients, t) {
            return Err(ProlinError::Invalid(format!(
                "expected features are {:?}, need ({clients}, {t})",
                expected.shape()
            )));
        }
        if distributions.len() < n {
            return Err(ProlinError::Invalid(format!(
                "{} feature distributions for {n} rounds",
                distributions.len()
            )));
        }
        if let Some(d) = distributions[..n].iter().find(|d| d.features.len() != t) {
            return Err(ProlinError::Invalid(format!(
                "round {} has {} fitted features, need {t}",
                d.round,
                d.features.len()
            )));
        }
        if !beta_bar.is_finite() {
            return Err(ProlinError::Invalid("non-finite bias".into()));
        }
        let participants = (0..n).map(|r| participation.participants(r)).collect();
        let rounds_of = (0..clients).map(|i| participation.rounds_of(i)).collect();
        Ok(ProlinProblem {
            participation,
            aggregates,
            expected,
            distributions: distributions[..n].to_vec(),
            beta_bar,
            participants,
            rounds_of,
        })
    }

    pub fn rounds(&self) -> usize {
        self.participation.rounds()
    }

    pub fn clients(&self) -> usize {
        self.participation.clients()
    }

    pub fn features(&self) -> usize {
        self.aggregates.features()
    }

    pub fn participation(&self) -> &ParticipationMatrix {
        &self.participation
    }

    pub fn aggregates(&self) -> &FeatureAggregates {
        &self.aggregates
    }

    pub fn expected(&self) -> &Matrix {
        &self.expected
    }

    pub fn distributions(&self) -> &[FeatureDistributions] {
        &self.distributions
    }

    pub fn beta_bar(&self) -> f64 {
        self.beta_bar
    }

    /// `R(i)`, the rounds client `i` took part in.
    pub fn rounds_of(&self, client: usize) -> &[usize] {
        &self.rounds_of[client]
    }

    pub fn participants(&self, round: usize) -> &[usize] {
        &self.participants[round]
    }

    /// Same problem with client columns relabelled: old client `i` becomes `perm[i]`.
    pub fn permute_clients(&self, perm: &[usize]) -> Result<ProlinProblem, ProlinError> {
        let t = self.features();
        let mut expected = Matrix::zeros(self.clients(), t);
        for (old, &new) in perm.iter().enumerate() {
            for k in 0..t {
                expected.set(new, k, self.expected.get(old, k));
            }
        }
        ProlinProblem::new(
            self.participation.permute_clients(perm),
            self.aggregates.clone(),
            expected,
            self.distributions.clone(),
            self.beta_bar,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaWeights {
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
}

impl Default for GammaWeights {
    fn default() -> Self {
        GammaWeights {
            gamma1: 1.0,
            gamma2: 1.0,
            gamma3: 1.0,
        }
    }
}

impl GammaWeights {
    pub fn new(gamma1: f64, gamma2: f64, gamma3: f64) -> Result<Self, ProlinError> {
        let g = GammaWeights {
            gamma1,
            gamma2,
            gamma3,
        };
        if g.as_array().iter().all(|v| *v > 0.0 && v.is_finite()) {
            Ok(g)
        } else {
            Err(ProlinError::Params(format!(
                "gamma weights must be positive, got {g:?}"
            )))
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.gamma1, self.gamma2, self.gamma3]
    }

    /// `γ_k ∝ 1 / (norm_k + 1e-12)`, scaled so the weights sum to 3.
    ///
    /// A term whose gradient vanishes (below `1e-12` of the largest norm) is
    /// already at its optimum and would otherwise absorb the whole budget; it
    /// keeps weight 1 and the remaining budget is balanced over the others.
    pub fn balanced(norms: [f64; 3]) -> Self {
        let largest = norms.iter().cloned().fold(0.0, f64::max);
        let active = norms.map(|n| n > 1e-12 * largest && largest > 0.0);
        let count = active.iter().filter(|a| **a).count() as f64;
        let inv: [f64; 3] = std::array::from_fn(|k| {
            if active[k] {
                1.0 / (norms[k] + 1e-12)
            } else {
                0.0
            }
        });
        let total: f64 = inv.iter().sum();
        let g: [f64; 3] = std::array::from_fn(|k| {
            if active[k] {
                count * inv[k] / total
            } else {
                1.0
            }
        });
        GammaWeights {
            gamma1: g[0],
            gamma2: g[1],
            gamma3: g[2],
        }
    }
}

/// `(a_i, b_i)`: sums over `R(i)` of `log f⁺_r(X_ri)` and `log f⁻_r(X_ri)`.
pub fn log_likelihood_terms(
    x: &FeatureTensor,
    problem: &ProlinProblem,
    client: usize,
) -> (f64, f64) {
    let mut a = 0.0;
    let mut b = 0.0;
    for &r in problem.rounds_of(client) {
        for (k, pair) in problem.distributions[r].features.iter().enumerate() {
            let v = x.get(r, client, k);
            a += pair.plus().log_pdf(v);
            b += pair.minus().log_pdf(v);
        }
    }
    (a, b)
}

fn log_sum_exp(x: f64, y: f64) -> f64 {
    let m = x.max(y);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((x - m).exp() + (y - m).exp()).ln()
}

/// `log(τ e^a + (1 - τ) e^b)` with `log 0 = -∞`.
fn client_log_likelihood(tau: f64, a: f64, b: f64) -> f64 {
    log_sum_exp(tau.ln() + a, (1.0 - tau).ln() + b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveTerms {
    pub ml: f64,
    pub reg: f64,
    pub lstsq: f64,
}

impl ObjectiveTerms {
    pub fn total(&self, gammas: &GammaWeights) -> f64 {
        gammas.gamma1 * self.ml + gammas.gamma2 * self.reg + gammas.gamma3 * self.lstsq
    }

    fn check(&self, iteration: usize) -> Result<(), ProlinError> {
        for (term, v) in [
            ("L_ml", self.ml),
            ("L_reg", self.reg),
            ("L_lstsq", self.lstsq),
        ] {
            if !v.is_finite() {
                return Err(ProlinError::NonFinite { term, iteration });
            }
        }
        Ok(())
    }
}

fn check_inputs(
    tau: &[f64],
    x: &FeatureTensor,
    problem: &ProlinProblem,
) -> Result<(), ProlinError> {
    if tau.len() != problem.clients() {
        return Err(ProlinError::Invalid(format!(
            "tau has {} entries for {} clients",
            tau.len(),
            problem.clients()
        )));
    }
    if let Some(v) = tau.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(ProlinError::Invalid(format!(
            "tau entry {v} outside [0, 1]"
        )));
    }
    if x.shape() != (problem.rounds(), problem.clients(), problem.features()) {
        return Err(ProlinError::Invalid(format!("X has shape {:?}", x.shape())));
    }
    Ok(())
}

fn client_mean(x: &FeatureTensor, problem: &ProlinProblem, client: usize) -> Vec<f64> {
    let rounds = problem.rounds_of(client);
    let mut mean = vec![0.0; problem.features()];
    for &r in rounds {
        mean.iter_mut()
            .zip(x.entry(r, client))
            .for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= rounds.len() as f64);
    mean
}

fn round_residual(x: &FeatureTensor, problem: &ProlinProblem, round: usize) -> Vec<f64> {
    let mut res = problem.aggregates.g.row(round).to_vec();
    for &i in problem.participants(round) {
        res.iter_mut()
            .zip(x.entry(round, i))
            .for_each(|(s, v)| *s -= v);
    }
    res
}

fn terms_unchecked(tau: &[f64], x: &FeatureTensor, problem: &ProlinProblem) -> ObjectiveTerms {
    let per_client: Vec<(f64, f64)> = (0..problem.clients())
        .into_par_iter()
        .map(|i| {
            if problem.rounds_of(i).is_empty() {
                return (0.0, 0.0);
            }
            let (a, b) = log_likelihood_terms(x, problem, i);
            let ml = -client_log_likelihood(tau[i], a, b);
            let reg = client_mean(x, problem, i)
                .iter()
                .zip(problem.expected.row(i))
                .map(|(m, g)| (m - g).powi(2))
                .sum();
            (ml, reg)
        })
        .collect();
    let lstsq = (0..problem.rounds())
        .map(|r| {
            problem.aggregates.weights[r]
                * round_residual(x, problem, r)
                    .iter()
                    .map(|e| e * e)
                    .sum::<f64>()
        })
        .sum();
    ObjectiveTerms {
        ml: per_client.iter().map(|p| p.0).sum(),
        reg: per_client.iter().map(|p| p.1).sum(),
        lstsq,
    }
}

/// The three loss terms at `(τ, X)`.
pub fn objective_terms(
    tau: &[f64],
    x: &FeatureTensor,
    problem: &ProlinProblem,
) -> Result<ObjectiveTerms, ProlinError> {
    check_inputs(tau, x, problem)?;
    let terms = terms_unchecked(tau, x, problem);
    terms.check(0)?;
    Ok(terms)
}

pub fn objective(
    tau: &[f64],
    x: &FeatureTensor,
    problem: &ProlinProblem,
    gammas: &GammaWeights,
) -> Result<f64, ProlinError> {
    Ok(objective_terms(tau, x, problem)?.total(gammas))
}

/// Gradient of one term, or of a weighted sum of terms.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub tau: Vec<f64>,
    pub x: FeatureTensor,
}

impl Gradient {
    fn zeros(problem: &ProlinProblem) -> Self {
        Gradient {
            tau: vec![0.0; problem.clients()],
            x: FeatureTensor::zeros(problem.rounds(), problem.clients(), problem.features()),
        }
    }

    pub fn norm(&self) -> f64 {
        self.tau
            .iter()
            .chain(&self.x.data)
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    fn combine(parts: &[Gradient; 3], gammas: &GammaWeights) -> Gradient {
        let g = gammas.as_array();
        let mix = |vals: [&[f64]; 3]| -> Vec<f64> {
            (0..vals[0].len())
                .map(|j| g[0] * vals[0][j] + g[1] * vals[1][j] + g[2] * vals[2][j])
                .collect()
        };
        let x0 = &parts[0].x;
        Gradient {
            tau: mix([&parts[0].tau, &parts[1].tau, &parts[2].tau]),
            x: FeatureTensor {
                data: mix([&parts[0].x.data, &parts[1].x.data, &parts[2].x.data]),
                ..x0.clone()
            },
        }
    }
}

/// Keeps the `τ` derivative finite where `τ` sits on a face and the other
/// hypothesis dominates by more than `e^700`.
const TAU_GRAD_CAP: f64 = 1e6;

/// Closed-form gradients `[∇L_ml, ∇L_reg, ∇L_lstsq]`.
pub fn gradient_terms(
    tau: &[f64],
    x: &FeatureTensor,
    problem: &ProlinProblem,
) -> Result<[Gradient; 3], ProlinError> {
    check_inputs(tau, x, problem)?;
    Ok(gradient_terms_unchecked(tau, x, problem))
}

fn gradient_terms_unchecked(
    tau: &[f64],
    x: &FeatureTensor,
    problem: &ProlinProblem,
) -> [Gradient; 3] {
    let t = problem.features();
    let mut ml = Gradient::zeros(problem);
    let mut reg = Gradient::zeros(problem);
    let mut lstsq = Gradient::zeros(problem);

    // Per-client work is independent; results are scattered in client order.
    let per_client: Vec<(f64, Vec<f64>, Vec<f64>)> = (0..problem.clients())
        .into_par_iter()
        .map(|i| {
            let rounds = problem.rounds_of(i);
            if rounds.is_empty() {
                return (0.0, Vec::new(), Vec::new());
            }
            let (a, b) = log_likelihood_terms(x, problem, i);
            let lse = client_log_likelihood(tau[i], a, b);
            let (ea, eb) = ((a - lse).min(700.0).exp(), (b - lse).min(700.0).exp());
            let d_tau = (-(ea - eb)).clamp(-TAU_GRAD_CAP, TAU_GRAD_CAP);
            // Posterior responsibilities of the two hypotheses.
            let w_plus = (tau[i].ln() + a - lse).exp();
            let w_minus = ((1.0 - tau[i]).ln() + b - lse).exp();
            let mut d_ml = Vec::with_capacity(rounds.len() * t);
            for &r in rounds {
                for (k, pair) in problem.distributions[r].features.iter().enumerate() {
                    let v = x.get(r, i, k);
                    d_ml.push(
                        -(w_plus * pair.plus().d_log_pdf(v) + w_minus * pair.minus().d_log_pdf(v)),
                    );
                }
            }
            let scale = 2.0 / rounds.len() as f64;
            let d_reg = client_mean(x, problem, i)
                .iter()
                .zip(problem.expected.row(i))
                .map(|(m, g)| scale * (m - g))
                .collect();
            (d_tau, d_ml, d_reg)
        })
        .collect();

    for (i, (d_tau, d_ml, d_reg)) in per_client.into_iter().enumerate() {
        ml.tau[i] = d_tau;
        for (slot, &r) in problem.rounds_of(i).iter().enumerate() {
            ml.x.entry_mut(r, i)
                .copy_from_slice(&d_ml[slot * t..(slot + 1) * t]);
            reg.x.entry_mut(r, i).copy_from_slice(&d_reg);
        }
    }
    for r in 0..problem.rounds() {
        let v = problem.aggregates.weights[r];
        let res = round_residual(x, problem, r);
        for &i in problem.participants(r) {
            lstsq
                .x
                .entry_mut(r, i)
                .iter_mut()
                .zip(&res)
                .for_each(|(g, e)| *g = -2.0 * v * e);
        }
    }
    [ml, reg, lstsq]
}

pub fn gradient(
    tau: &[f64],
    x: &FeatureTensor,
    problem: &ProlinProblem,
    gammas: &GammaWeights,
) -> Result<Gradient, ProlinError> {
    Ok(Gradient::combine(&gradient_terms(tau, x, problem)?, gammas))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// `τ⁰_i = sigmoid(G̃_i + β̄)`, `X⁰` is `G̃_i` broadcast over `R(i)` and then
    /// shifted equally within each round to match `G_r` exactly.
    Warm,
    /// `τ⁰ = 0.5`, `X⁰` is the per-round least-norm split of `G_r`.
    Uniform,
}

/// Starting point; both strategies satisfy `Σ_i A_ri X_ri = G_r` exactly.
pub fn initialize(problem: &ProlinProblem, strategy: InitStrategy) -> (Vec<f64>, FeatureTensor) {
    let (n, clients, t) = (problem.rounds(), problem.clients(), problem.features());
    let mut x = FeatureTensor::zeros(n, clients, t);
    let tau = match strategy {
        InitStrategy::Warm => (0..clients)
            .map(|i| logistic(problem.expected.row(i).iter().sum::<f64>() + problem.beta_bar))
            .collect(),
        InitStrategy::Uniform => vec![0.5; clients],
    };
    for r in 0..n {
        let members = problem.participants(r);
        if members.is_empty() {
            continue;
        }
        let base: Vec<Vec<f64>> = members
            .iter()
            .map(|&i| match strategy {
                InitStrategy::Warm => problem.expected.row(i).to_vec(),
                InitStrategy::Uniform => vec![0.0; t],
            })
            .collect();
        for k in 0..t {
            let sum: f64 = base.iter().map(|b| b[k]).sum();
            let shift = (problem.aggregates.g.get(r, k) - sum) / members.len() as f64;
            for (b, &i) in base.iter().zip(members) {
                x.set(r, i, k, b[k] + shift);
            }
        }
    }
    (tau, x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMode {
    Fixed(GammaWeights),
    /// Re-balance by gradient magnitudes at the start of every window.
    Balanced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProlinParams {
    /// Step on `X`. With `precondition` the step is taken in Jacobi-scaled
    /// coordinates and is dimensionless.
    pub learning_rate: f64,
    pub tau_learning_rate: f64,
    /// Heavy-ball coefficient; `0` is plain projected gradient descent.
    pub momentum: f64,
    pub max_iters: usize,
    /// Stop when the relative objective change over one window falls below this.
    pub tolerance: f64,
    /// Window length for the stopping rule and for gamma re-balancing.
    pub window: usize,
    pub divergence_patience: usize,
    pub gamma: GammaMode,
    pub init: InitStrategy,
    /// Scale each `X` step by an upper bound on that coordinate's curvature.
    pub precondition: bool,
    /// Keep `τ` at its initial value (diagnostics and tests).
    pub freeze_tau: bool,
}

impl Default for ProlinParams {
    fn default() -> Self {
        ProlinParams {
            learning_rate: 0.2,
            tau_learning_rate: 0.01,
            momentum: 0.0,
            max_iters: 5000,
            tolerance: 1e-8,
            window: 50,
            divergence_patience: 200,
            gamma: GammaMode::Balanced,
            init: InitStrategy::Warm,
            precondition: true,
            freeze_tau: false,
        }
    }
}

impl ProlinParams {
    fn validate(&self) -> Result<(), ProlinError> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.learning_rate)
            || !(self.tau_learning_rate >= 0.0 && self.tau_learning_rate.is_finite())
        {
            return Err(ProlinError::Params("learning rates must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(ProlinError::Params(format!(
                "momentum {} outside [0, 1)",
                self.momentum
            )));
        }
        if self.max_iters == 0 || self.window == 0 || self.divergence_patience == 0 {
            return Err(ProlinError::Params(
                "max_iters, window and patience must be >= 1".into(),
            ));
        }
        if let GammaMode::Fixed(g) = self.gamma {
            GammaWeights::new(g.gamma1, g.gamma2, g.gamma3)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub objective: f64,
    pub terms: ObjectiveTerms,
    pub gammas: GammaWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProlinSolution {
    pub tau: Vec<f64>,
    pub x: FeatureTensor,
    /// One entry per evaluated iterate, starting with the initialisation.
    pub trace: Vec<TraceEntry>,
    pub iterations: usize,
    pub converged: bool,
}

impl ProlinSolution {
    pub fn loss_trace(&self) -> Vec<f64> {
        self.trace.iter().map(|e| e.objective).collect()
    }

    pub fn final_gammas(&self) -> GammaWeights {
        self.trace.last().map(|e| e.gammas).unwrap_or_default()
    }
}

/// Diagonal curvature bound for each `X` variable under the current weights.
fn jacobi_diagonal(problem: &ProlinProblem, gammas: &GammaWeights) -> FeatureTensor {
    let mut d = FeatureTensor::zeros(problem.rounds(), problem.clients(), problem.features());
    for r in 0..problem.rounds() {
        let members = problem.participants(r);
        let lstsq = 2.0 * problem.aggregates.weights[r] * members.len() as f64;
        for &i in members {
            let reg = 2.0 / problem.rounds_of(i).len() as f64;
            for (k, pair) in problem.distributions[r].features.iter().enumerate() {
                let ml = (1.0 / pair.sigma_plus.powi(2)).max(1.0 / pair.sigma_minus.powi(2));
                d.set(
                    r,
                    i,
                    k,
                    gammas.gamma1 * ml + gammas.gamma2 * reg + gammas.gamma3 * lstsq + 1e-12,
                );
            }
        }
    }
    d
}

/// Projected gradient descent on `(τ, X)`.
pub fn solve(
    problem: &ProlinProblem,
    params: &ProlinParams,
) -> Result<ProlinSolution, ProlinError> {
    params.validate()?;
    let (tau, x) = initialize(problem, params.init);
    solve_from(problem, params, tau, x)
}

/// As [`solve`], starting from a caller-provided iterate.
pub fn solve_from(
    problem: &ProlinProblem,
    params: &ProlinParams,
    mut tau: Vec<f64>,
    mut x: FeatureTensor,
) -> Result<ProlinSolution, ProlinError> {
    params.validate()?;
    check_inputs(&tau, &x, problem)?;

    let mut gammas = match params.gamma {
        GammaMode::Fixed(g) => g,
        GammaMode::Balanced => GammaWeights::default(),
    };
    let mut diag = jacobi_diagonal(problem, &gammas);
    let mut vel_tau = vec![0.0; tau.len()];
    let mut vel_x = vec![0.0; x.data.len()];

    let mut terms = terms_unchecked(&tau, &x, problem);
    terms.check(0)?;
    let mut value = terms.total(&gammas);
    let mut trace = vec![TraceEntry {
        iteration: 0,
        objective: value,
        terms,
        gammas,
    }];
    let mut window_start = value;
    let mut increases = 0usize;
    let mut converged = false;
    let mut iterations = 0;

    for iter in 0..params.max_iters {
        let parts = gradient_terms_unchecked(&tau, &x, problem);
        if iter % params.window == 0 {
            if iter > 0 {
                let change = (window_start - value).abs() / window_start.abs().max(1.0);
                if change < params.tolerance {
                    converged = true;
                    break;
                }
            }
            if params.gamma == GammaMode::Balanced {
                gammas =
                    GammaWeights::balanced([parts[0].norm(), parts[1].norm(), parts[2].norm()]);
                diag = jacobi_diagonal(problem, &gammas);
                vel_tau.iter_mut().for_each(|v| *v = 0.0);
                vel_x.iter_mut().for_each(|v| *v = 0.0);
                value = terms.total(&gammas);
            }
            window_start = value;
        }
        let grad = Gradient::combine(&parts, &gammas);

        if !params.freeze_tau {
            for i in 0..tau.len() {
                vel_tau[i] = params.momentum * vel_tau[i] - params.tau_learning_rate * grad.tau[i];
                let next = (tau[i] + vel_tau[i]).clamp(0.0, 1.0);
                if next != tau[i] + vel_tau[i] {
                    vel_tau[i] = 0.0;
                }
                tau[i] = next;
            }
        }
        for j in 0..x.data.len() {
            let step = if params.precondition && diag.data[j] > 0.0 {
                grad.x.data[j] / diag.data[j]
            } else {
                grad.x.data[j]
            };
            vel_x[j] = params.momentum * vel_x[j] - params.learning_rate * step;
            x.data[j] += vel_x[j];
        }

        iterations = iter + 1;
        terms = terms_unchecked(&tau, &x, problem);
        terms.check(iterations)?;
        let next = terms.total(&gammas);
        increases = if next > value { increases + 1 } else { 0 };
        value = next;
        trace.push(TraceEntry {
            iteration: iterations,
            objective: value,
            terms,
            gammas,
        });
        if increases >= params.divergence_patience {
            return Err(ProlinError::Divergence {
                iteration: iterations,
                patience: params.divergence_patience,
                trace: trace.iter().map(|e| e.objective).collect(),
            });
        }
    }

    Ok(ProlinSolution {
        tau,
        x,
        trace,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::GaussianPair;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair(mu_plus: f64, sigma_plus: f64, mu_minus: f64, sigma_minus: f64) -> GaussianPair {
        let ovl = crate::detector::compute_ovl(mu_plus, sigma_plus, mu_minus, sigma_minus).unwrap();
        GaussianPair {
            mu_plus,
            sigma_plus,
            mu_minus,
            sigma_minus,
            ovl,
        }
    }

    fn single(g: f64) -> ProlinProblem {
        ProlinProblem::new(
            ParticipationMatrix::from_rows(&[vec![1]]).unwrap(),
            FeatureAggregates {
                g: Matrix::column_vector(&[g]).unwrap(),
                weights: vec![1.0],
            },
            Matrix::column_vector(&[g]).unwrap(),
            vec![FeatureDistributions::from_pairs(
                0,
                vec![pair(1.0, 0.1, -1.0, 0.1)],
            )],
            0.0,
        )
        .unwrap()
    }

    fn random_problem(seed: u64, n: usize, clients: usize, fraction: f64) -> ProlinProblem {
        let a = ParticipationMatrix::sample(n, clients, fraction, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let expected: Vec<f64> = (0..clients).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dists = (0..n)
            .map(|r| {
                let p = pair(
                    rng.random_range(0.2..1.5),
                    rng.random_range(0.3..1.0),
                    rng.random_range(-1.5..-0.2),
                    rng.random_range(0.3..1.0),
                );
                FeatureDistributions::from_pairs(r, vec![p])
            })
            .collect();
        ProlinProblem::new(
            a,
            FeatureAggregates {
                g: Matrix::column_vector(&g).unwrap(),
                weights: (0..n).map(|_| rng.random_range(0.1..1.0)).collect(),
            },
            Matrix::column_vector(&expected).unwrap(),
            dists,
            0.1,
        )
        .unwrap()
    }

    fn random_point(problem: &ProlinProblem, seed: u64) -> (Vec<f64>, FeatureTensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tau = (0..problem.clients())
            .map(|_| rng.random_range(0.1..0.9))
            .collect();
        let mut x = FeatureTensor::zeros(problem.rounds(), problem.clients(), 1);
        for r in 0..problem.rounds() {
            for &i in problem.participants(r) {
                x.set(r, i, 0, rng.random_range(-2.0..2.0));
            }
        }
        (tau, x)
    }

    #[test]
    fn single_client_follows_the_likelihood() {
        let params = ProlinParams::default();
        let up = solve(&single(1.0), &params).unwrap();
        assert!(up.tau[0] > 0.99, "{:?}", up.tau);
        let down = solve(&single(-1.0), &params).unwrap();
        assert!(down.tau[0] < 0.01, "{:?}", down.tau);
    }

    #[test]
    fn pdf_at_mean_and_symmetric_midpoint() {
        let p = single(1.0);
        let mut x = FeatureTensor::zeros(1, 1, 1);
        x.set(0, 0, 0, 1.0);
        let (a, _) = log_likelihood_terms(&x, &p, 0);
        assert!((a - -(0.1 * (2.0 * std::f64::consts::PI).sqrt()).ln()).abs() < 1e-12);
        x.set(0, 0, 0, 0.0);
        let (a, b) = log_likelihood_terms(&x, &p, 0);
        assert_eq!(a, b);
    }

    #[test]
    fn objective_limits() {
        let p = single(1.0);
        let mut x = FeatureTensor::zeros(1, 1, 1);
        x.set(0, 0, 0, 1.0);
        let terms = objective_terms(&[1.0], &x, &p).unwrap();
        assert_eq!(terms.lstsq, 0.0);
        assert_eq!(terms.reg, 0.0);
        let (a, _) = log_likelihood_terms(&x, &p, 0);
        assert!((terms.ml + a).abs() < 1e-12);
        assert!(objective_terms(&[1.5], &x, &p).is_err());
    }

    #[test]
    fn gradients_match_central_differences() {
        let p = random_problem(3, 8, 5, 0.4);
        let (tau, x) = random_point(&p, 4);
        let gammas = GammaWeights::new(0.7, 1.3, 2.0).unwrap();
        let grad = gradient(&tau, &x, &p, &gammas).unwrap();
        let h = 1e-6;
        for i in 0..tau.len() {
            let (mut up, mut dn) = (tau.clone(), tau.clone());
            up[i] += h;
            dn[i] -= h;
            let fd = (objective(&up, &x, &p, &gammas).unwrap()
                - objective(&dn, &x, &p, &gammas).unwrap())
                / (2.0 * h);
            assert!(
                (fd - grad.tau[i]).abs() <= 1e-5 * (1.0 + fd.abs()),
                "tau {i}: {fd} vs {}",
                grad.tau[i]
            );
        }
        for r in 0..p.rounds() {
            for &i in p.participants(r) {
                let (mut up, mut dn) = (x.clone(), x.clone());
                up.set(r, i, 0, x.get(r, i, 0) + h);
                dn.set(r, i, 0, x.get(r, i, 0) - h);
                let fd = (objective(&tau, &up, &p, &gammas).unwrap()
                    - objective(&tau, &dn, &p, &gammas).unwrap())
                    / (2.0 * h);
                let an = grad.x.get(r, i, 0);
                assert!(
                    (fd - an).abs() <= 1e-5 * (1.0 + fd.abs()),
                    "x[{r},{i}]: {fd} vs {an}"
                );
            }
        }
    }

    #[test]
    fn uniform_init_satisfies_aggregates() {
        let p = random_problem(5, 10, 6, 0.5);
        for strategy in [InitStrategy::Uniform, InitStrategy::Warm] {
            let (tau, x) = initialize(&p, strategy);
            assert!(tau.iter().all(|t| (0.0..=1.0).contains(t)));
            let terms = objective_terms(&tau, &x, &p).unwrap();
            assert!(terms.lstsq < 1e-18, "{strategy:?}: {}", terms.lstsq);
        }
    }

    #[test]
    fn frozen_tau_trace_is_monotone() {
        let p = random_problem(6, 12, 6, 0.5);
        let params = ProlinParams {
            freeze_tau: true,
            gamma: GammaMode::Fixed(GammaWeights::default()),
            learning_rate: 0.05,
            max_iters: 400,
            ..ProlinParams::default()
        };
        let sol = solve(&p, &params).unwrap();
        let trace = sol.loss_trace();
        assert!(trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(trace.last().unwrap() < &trace[0]);
    }

    #[test]
    fn identical_distributions_leave_tau_alone() {
        let mut p = random_problem(7, 10, 5, 0.4);
        let same: Vec<FeatureDistributions> = (0..10)
            .map(|r| FeatureDistributions::from_pairs(r, vec![pair(0.3, 0.8, 0.3, 0.8)]))
            .collect();
        p = ProlinProblem::new(
            p.participation.clone(),
            p.aggregates.clone(),
            p.expected.clone(),
            same,
            0.4,
        )
        .unwrap();
        let sol = solve(&p, &ProlinParams::default()).unwrap();
        let (tau0, _) = initialize(&p, InitStrategy::Warm);
        for (a, b) in sol.tau.iter().zip(&tau0) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn stiff_gamma3_enforces_aggregates() {
        let p = random_problem(8, 10, 5, 0.4);
        let params = ProlinParams {
            gamma: GammaMode::Fixed(GammaWeights::new(1.0, 1.0, 1e6).unwrap()),
            init: InitStrategy::Uniform,
            ..ProlinParams::default()
        };
        let sol = solve(&p, &params).unwrap();
        for r in 0..p.rounds() {
            let res = round_residual(&sol.x, &p, r);
            assert!(res[0].abs() < 1e-3, "round {r}: {}", res[0]);
        }
    }

    #[test]
    fn tau_stays_in_box_and_trace_is_finite() {
        let p = random_problem(9, 15, 6, 0.5);
        let params = ProlinParams {
            tau_learning_rate: 0.5,
            momentum: 0.9,
            max_iters: 300,
            ..ProlinParams::default()
        };
        let sol = solve(&p, &params).unwrap();
        assert!(sol.tau.iter().all(|t| (0.0..=1.0).contains(t)));
        assert!(sol.loss_trace().iter().all(|v| v.is_finite()));
        assert!(sol.x.is_finite());
    }

    #[test]
    fn permuting_clients_permutes_tau() {
        let p = random_problem(10, 12, 5, 0.4);
        let perm = [2, 4, 0, 1, 3];
        let q = p.permute_clients(&perm).unwrap();
        let params = ProlinParams::default();
        let a = solve(&p, &params).unwrap();
        let b = solve(&q, &params).unwrap();
        for (old, &new) in perm.iter().enumerate() {
            assert!((a.tau[old] - b.tau[new]).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let p = single(1.0);
        let bad = ProlinParams {
            learning_rate: 0.0,
            ..ProlinParams::default()
        };
        assert!(matches!(solve(&p, &bad), Err(ProlinError::Params(_))));
        assert!(GammaWeights::new(1.0, 0.0, 1.0).is_err());
        let g = GammaWeights::balanced([1.0, 2.0, 4.0]);
        assert!((g.gamma1 + g.gamma2 + g.gamma3 - 3.0).abs() < 1e-12);
        assert!((g.gamma1 / g.gamma3 - 4.0).abs() < 1e-9);
        let g = GammaWeights::balanced([2.0, 0.0, 0.0]);
        assert_eq!(g.as_array(), [1.0, 1.0, 1.0]);
        let g = GammaWeights::balanced([1.0, 3.0, 0.0]);
        assert!(
            (g.gamma1 - 1.5).abs() < 1e-12 && (g.gamma2 - 0.5).abs() < 1e-12 && g.gamma3 == 1.0
        );
    }

    #[test]
    fn large_steps_are_reported_as_divergence() {
        let p = random_problem(11, 10, 5, 0.4);
        let params = ProlinParams {
            precondition: false,
            learning_rate: 50.0,
            gamma: GammaMode::Fixed(GammaWeights::default()),
            divergence_patience: 20,
            ..ProlinParams::default()
        };
        match solve(&p, &params) {
            Err(ProlinError::Divergence { trace, .. }) => assert!(trace.len() > 20),
            Err(ProlinError::NonFinite { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
