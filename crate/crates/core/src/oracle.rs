//! Independent reference computations used to check the solvers.
//!
//! Nothing here calls into the optimised code paths it is meant to verify:
//! the brute-force PROLIN oracle re-implements the objective for binary `τ`
//! and minimises over `X` by derivative-free coordinate search.
//! [`brute_force_suite`] is the only function that runs PROLIN, to compare
//! its output against the oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{compute_ovl, FeatureDistributions, GaussianPair};
use crate::fedsim::ParticipationMatrix;
use crate::linalg::{self, Matrix};
use crate::prolin::{self, GammaMode, GammaWeights, ProlinError, ProlinParams, ProlinProblem};
use crate::reconstruct::FeatureAggregates;

/// Central difference `(f(x + h e_j) - f(x - h e_j)) / 2h` for each listed coordinate.
pub fn central_difference(
    f: impl Fn(&[f64]) -> f64,
    x: &[f64],
    coords: &[usize],
    h: f64,
) -> Vec<f64> {
    let mut probe = x.to_vec();
    coords
        .iter()
        .map(|&j| {
            probe[j] = x[j] + h;
            let up = f(&probe);
            probe[j] = x[j] - h;
            let down = f(&probe);
            probe[j] = x[j];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn log_normal_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let u = (x - mean) / std;
    -0.5 * u * u - std.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Variables of the inner problem: one `(round, client)` pair per participation.
fn variables(problem: &ProlinProblem) -> Vec<(usize, usize)> {
    (0..problem.rounds())
        .flat_map(|r| problem.participants(r).iter().map(move |&i| (r, i)))
        .collect()
}

/// The PROLIN objective for binary `τ` and `t = 1`, written from the
/// definitions: `-Σ log f^{τ_i}` plus the regression and aggregate terms.
pub fn binary_objective(
    problem: &ProlinProblem,
    tau: &[bool],
    vars: &[(usize, usize)],
    values: &[f64],
    gammas: &GammaWeights,
) -> f64 {
    let clients = problem.clients();
    let mut ml = 0.0;
    let mut sums = vec![0.0; clients];
    let mut counts = vec![0usize; clients];
    let mut round_sums = vec![0.0; problem.rounds()];
    for (&(r, i), &x) in vars.iter().zip(values) {
        let p = problem.distributions()[r].features[0];
        ml -= if tau[i] {
            log_normal_pdf(x, p.mu_plus, p.sigma_plus)
        } else {
            log_normal_pdf(x, p.mu_minus, p.sigma_minus)
        };
        sums[i] += x;
        counts[i] += 1;
        round_sums[r] += x;
    }
    let reg: f64 = (0..clients)
        .filter(|&i| counts[i] > 0)
        .map(|i| (sums[i] / counts[i] as f64 - problem.expected().get(i, 0)).powi(2))
        .sum();
    let lstsq: f64 = (0..problem.rounds())
        .map(|r| {
            problem.aggregates().weights[r]
                * (problem.aggregates().g.get(r, 0) - round_sums[r]).powi(2)
        })
        .sum();
    gammas.gamma1 * ml + gammas.gamma2 * reg + gammas.gamma3 * lstsq
}

const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// Minimises a 1-D function: grid scan over `[centre - span, centre + span]`
/// followed by golden-section refinement around the best grid point.
fn minimise_1d(mut f: impl FnMut(f64) -> f64, centre: f64, span: f64, points: usize) -> f64 {
    let step = 2.0 * span / (points - 1) as f64;
    let (mut best, mut best_val) = (centre, f(centre));
    for k in 0..points {
        let x = centre - span + k as f64 * step;
        let v = f(x);
        if v < best_val {
            best = x;
            best_val = v;
        }
    }
    let (mut lo, mut hi) = (best - step, best + step);
    let mut c = hi - GOLDEN * (hi - lo);
    let mut d = lo + GOLDEN * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > 1e-12 * (1.0 + best.abs()) {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - GOLDEN * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + GOLDEN * (hi - lo);
            fd = f(d);
        }
    }
    let mid = 0.5 * (lo + hi);
    if f(mid) < best_val {
        mid
    } else {
        best
    }
}

/// `min_X` of [`binary_objective`] by cyclic coordinate search.
pub fn minimise_inner(
    problem: &ProlinProblem,
    tau: &[bool],
    gammas: &GammaWeights,
) -> (f64, Vec<f64>) {
    let vars = variables(problem);
    // Start from the equal split of each round's aggregate.
    let mut values: Vec<f64> = vars
        .iter()
        .map(|&(r, _)| problem.aggregates().g.get(r, 0) / problem.participants(r).len() as f64)
        .collect();
    let mut current = binary_objective(problem, tau, &vars, &values, gammas);
    let mut span = 8.0;
    for _sweep in 0..5000 {
        let mut moved: f64 = 0.0;
        for j in 0..vars.len() {
            let old = values[j];
            let mut probe = values.clone();
            let best = minimise_1d(
                |v| {
                    probe[j] = v;
                    binary_objective(problem, tau, &vars, &probe, gammas)
                },
                old,
                span,
                81,
            );
            values[j] = best;
            moved = moved.max((best - old).abs());
        }
        let next = binary_objective(problem, tau, &vars, &values, gammas);
        let done = current - next <= 1e-13 * (1.0 + next.abs()) && moved < 1e-9;
        current = next.min(current);
        span = (4.0 * moved).clamp(1e-3, 8.0);
        if done {
            break;
        }
    }
    (current, values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BruteForceResult {
    /// Every `τ ∈ {0,1}^N` with its inner optimum, in enumeration order.
    pub candidates: Vec<(Vec<bool>, f64)>,
    pub best: Vec<bool>,
    pub best_objective: f64,
}

/// Exhaustive minimisation over binary `τ`. Intended for `N ≤ 10`.
pub fn brute_force_tau(problem: &ProlinProblem, gammas: &GammaWeights) -> BruteForceResult {
    let clients = problem.clients();
    assert!(clients <= 16, "brute force over 2^{clients} assignments");
    assert_eq!(problem.features(), 1, "the oracle handles a single feature");
    let candidates: Vec<(Vec<bool>, f64)> = (0..1u32 << clients)
        .map(|mask| {
            let tau: Vec<bool> = (0..clients).map(|i| mask >> i & 1 == 1).collect();
            let (value, _) = minimise_inner(problem, &tau, gammas);
            (tau, value)
        })
        .collect();
    let (best, best_objective) = candidates
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(t, v)| (t.clone(), *v))
        .expect("at least one candidate");
    BruteForceResult {
        candidates,
        best,
        best_objective,
    }
}

/// A synthetic PROLIN problem with known client labels.
#[derive(Debug, Clone)]
pub struct PlantedInstance {
    pub problem: ProlinProblem,
    pub truth: Vec<bool>,
    /// The per-round client features the aggregates were built from.
    pub features: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub rounds: usize,
    pub clients: usize,
    pub fraction: f64,
    /// Class means are `±separation / 2`, jittered per round.
    pub separation: f64,
    pub sigma: f64,
    pub lambda: f64,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        PlantedSpec {
            rounds: 6,
            clients: 3,
            fraction: 2.0 / 3.0,
            separation: 4.0,
            sigma: 0.5,
            lambda: 5.0,
        }
    }
}

/// Draws labels, per-round Gaussian feature models, client features and the
/// resulting aggregates; `G̃` is the weighted ridge estimate.
pub fn planted_instance(spec: &PlantedSpec, seed: u64) -> PlantedInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = ParticipationMatrix::sample(spec.rounds, spec.clients, spec.fraction, rng.random())
        .expect("valid planted participation");
    let truth: Vec<bool> = (0..spec.clients).map(|_| rng.random_bool(0.5)).collect();
    let pairs: Vec<GaussianPair> = (0..spec.rounds)
        .map(|_| {
            let half = 0.5 * spec.separation;
            let (mu_plus, mu_minus) = (
                half + rng.random_range(-0.2..0.2),
                -half + rng.random_range(-0.2..0.2),
            );
            let (sigma_plus, sigma_minus) = (
                spec.sigma * rng.random_range(0.8..1.2),
                spec.sigma * rng.random_range(0.8..1.2),
            );
            GaussianPair {
                mu_plus,
                sigma_plus,
                mu_minus,
                sigma_minus,
                ovl: compute_ovl(mu_plus, sigma_plus, mu_minus, sigma_minus)
                    .expect("valid parameters"),
            }
        })
        .collect();
    let features: Vec<Vec<f64>> = (0..spec.rounds)
        .map(|r| {
            let p = pairs[r];
            (0..spec.clients)
                .map(|i| {
                    let (mu, sd) = if truth[i] {
                        (p.mu_plus, p.sigma_plus)
                    } else {
                        (p.mu_minus, p.sigma_minus)
                    };
                    Normal::new(mu, sd).expect("valid normal").sample(&mut rng)
                })
                .collect()
        })
        .collect();
    let g: Vec<f64> = (0..spec.rounds)
        .map(|r| a.participants(r).iter().map(|&i| features[r][i]).sum())
        .collect();
    let distributions: Vec<FeatureDistributions> = pairs
        .iter()
        .enumerate()
        .map(|(r, p)| FeatureDistributions::from_pairs(r, vec![*p]))
        .collect();
    let aggregates = FeatureAggregates {
        g: Matrix::column_vector(&g).expect("finite aggregates"),
        weights: distributions.iter().map(|d| d.weight).collect(),
    };
    let expected = linalg::ridge_solve(
        &a.to_matrix(),
        &aggregates.g,
        &aggregates.weights,
        spec.lambda,
    )
    .expect("ridge on planted data")
    .solution;
    let problem = ProlinProblem::new(a, aggregates, expected, distributions, 0.0)
        .expect("consistent planted problem");
    PlantedInstance {
        problem,
        truth,
        features,
    }
}

/// One planted instance solved both by PROLIN and exhaustively.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BruteForceCase {
    pub seed: u64,
    pub truth: Vec<bool>,
    pub oracle: Vec<bool>,
    pub prolin: Vec<bool>,
    pub prolin_tau: Vec<f64>,
}

impl BruteForceCase {
    pub fn agrees(&self) -> bool {
        self.oracle == self.prolin
    }
}

/// PROLIN settings matching the oracle's objective: unit `γ`, since the
/// balanced schedule changes the objective being minimised.
pub fn brute_force_params() -> ProlinParams {
    ProlinParams {
        gamma: GammaMode::Fixed(GammaWeights::default()),
        ..ProlinParams::default()
    }
}

/// Compares thresholded PROLIN output with the exhaustive minimiser on
/// `N = 3`, `n = 6`, `t = 1` planted instances.
pub fn brute_force_suite(seeds: &[u64]) -> Result<Vec<BruteForceCase>, ProlinError> {
    let params = brute_force_params();
    seeds
        .par_iter()
        .map(|&seed| {
            let inst = planted_instance(&PlantedSpec::default(), seed);
            let oracle = brute_force_tau(&inst.problem, &GammaWeights::default()).best;
            let solution = prolin::solve(&inst.problem, &params)?;
            Ok(BruteForceCase {
                seed,
                truth: inst.truth,
                oracle,
                prolin: solution.tau.iter().map(|t| *t > 0.5).collect(),
                prolin_tau: solution.tau,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prolin::{self, FeatureTensor};

    #[test]
    fn central_difference_of_a_cubic() {
        let d = central_difference(|x| x[0].powi(3) + 2.0 * x[1], &[2.0, 5.0], &[0, 1], 1e-5);
        assert!((d[0] - 12.0).abs() < 1e-6);
        assert!((d[1] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let x = minimise_1d(|x| (x - 1.234_567).powi(2), 0.0, 4.0, 41);
        assert!((x - 1.234_567).abs() < 1e-9);
        // An offset limits resolution to about sqrt(machine epsilon).
        let x = minimise_1d(|x| (x - 1.234_567).powi(2) + 3.0, 0.0, 4.0, 41);
        assert!((x - 1.234_567).abs() < 1e-7);
    }

    #[test]
    fn binary_objective_agrees_with_relaxed_objective_at_vertices() {
        let inst = planted_instance(&PlantedSpec::default(), 1);
        let p = &inst.problem;
        let vars = variables(p);
        let values: Vec<f64> = vars
            .iter()
            .map(|&(r, i)| inst.features[r][i] + 0.1)
            .collect();
        let mut x = FeatureTensor::zeros(p.rounds(), p.clients(), 1);
        for (&(r, i), &v) in vars.iter().zip(&values) {
            x.set(r, i, 0, v);
        }
        let gammas = GammaWeights::new(0.5, 2.0, 1.5).unwrap();
        let tau = vec![true, false, true];
        let tau_f: Vec<f64> = tau.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect();
        let direct = binary_objective(p, &tau, &vars, &values, &gammas);
        let relaxed = prolin::objective(&tau_f, &x, p, &gammas).unwrap();
        assert!((direct - relaxed).abs() < 1e-9 * (1.0 + direct.abs()));
    }

    #[test]
    fn inner_minimum_has_zero_gradient() {
        let inst = planted_instance(&PlantedSpec::default(), 2);
        let p = &inst.problem;
        let gammas = GammaWeights::default();
        let tau = inst.truth.clone();
        let (_, values) = minimise_inner(p, &tau, &gammas);
        let vars = variables(p);
        let coords: Vec<usize> = (0..vars.len()).collect();
        let grad = central_difference(
            |v| binary_objective(p, &tau, &vars, v, &gammas),
            &values,
            &coords,
            1e-5,
        );
        assert!(grad.iter().all(|g| g.abs() < 1e-4), "{grad:?}");
    }

    #[test]
    fn brute_force_prefers_truth_on_well_separated_data() {
        let inst = planted_instance(&PlantedSpec::default(), 3);
        let result = brute_force_tau(&inst.problem, &GammaWeights::default());
        assert_eq!(result.candidates.len(), 8);
        assert_eq!(result.best, inst.truth);
    }
}
