//! End-to-end experiments: simulate a federation, train per-round detectors
//! on the server's auxiliary data, run the reconstructions on growing prefixes
//! of the observations, and score the decisions.

mod archive;
mod config;
mod export;

pub use archive::{
    expected_files, read_archive, read_mean_metrics, read_metrics, seed_dir, write_archive,
    write_manifest, write_outcomes, write_simulation, ArchivedSeed, Manifest, SeedManifest,
};
pub use config::{DatasetSpec, DetectorConfig, ExperimentConfig, PropertyKind};
pub use export::{export_plot_data, Selector};

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detector::{
    self, DetectorError, DetectorModel, DetectorTraining, FeatureDistributions, Property,
    TrainingSetParams,
};
use crate::fedsim::{
    self, AttackerView, ClientRole, FederationConfig, GlobalModel, GroundTruth, MlpShape, Sample,
    SimError,
};
use crate::prolin::{self, ProlinError, ProlinProblem, TraceEntry};
use crate::reconstruct::{self, Decision, Method, ReconstructError};
use crate::seeding::{self, stream};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("simulate (seed {seed}): {source}")]
    Simulation { seed: u64, source: SimError },
    #[error("detector (seed {seed}, round {round}): {source}")]
    Detector {
        seed: u64,
        round: usize,
        source: DetectorError,
    },
    #[error("reconstruct {method} (seed {seed}, {round} rounds): {source}")]
    Reconstruct {
        seed: u64,
        round: usize,
        method: Method,
        source: ReconstructError,
    },
    #[error("prolin (seed {seed}, {round} rounds): {source}")]
    Prolin {
        seed: u64,
        round: usize,
        source: ProlinError,
    },
    #[error("metrics: {0}")]
    Metrics(String),
    #[error("archive {path}: {message}")]
    Archive { path: PathBuf, message: String },
    #[error("export: {0}")]
    Export(String),
}

impl HarnessError {
    /// Short name of the pipeline stage that failed.
    pub fn stage(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "config",
            HarnessError::Data(_) => "data",
            HarnessError::Simulation { .. } => "simulate",
            HarnessError::Detector { .. } => "detector",
            HarnessError::Reconstruct { .. } => "reconstruct",
            HarnessError::Prolin { .. } => "prolin",
            HarnessError::Metrics(_) => "metrics",
            HarnessError::Archive { .. } => "archive",
            HarnessError::Export(_) => "export",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and their harmonic mean over client labels; `0/0 := 0`.
pub fn f1_score(predicted: &[bool], truth: &[bool]) -> Result<Scores, HarnessError> {
    if predicted.len() != truth.len() {
        return Err(HarnessError::Metrics(format!(
            "{} predictions for {} clients",
            predicted.len(),
            truth.len()
        )));
    }
    let tp = predicted
        .iter()
        .zip(truth)
        .filter(|(p, t)| **p && **t)
        .count() as f64;
    let predicted_pos = predicted.iter().filter(|p| **p).count() as f64;
    let actual_pos = truth.iter().filter(|t| **t).count() as f64;
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    let precision = ratio(tp, predicted_pos);
    let recall = ratio(tp, actual_pos);
    let f1 = ratio(2.0 * precision * recall, precision + recall);
    Ok(Scores {
        precision,
        recall,
        f1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub method: Method,
    pub round: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanMetricRow {
    pub method: Method,
    pub round: usize,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_f1: f64,
    /// Sample standard deviation across seeds (0 for a single seed).
    pub std_f1: f64,
    pub seeds: usize,
}

/// Averages the rows of several seeds per `(method, round)`.
pub fn average_metrics(rows: &[MetricRow]) -> Vec<MeanMetricRow> {
    let mut keys: Vec<(Method, usize)> = rows.iter().map(|r| (r.method, r.round)).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(method, round)| {
            let group: Vec<&MetricRow> = rows
                .iter()
                .filter(|r| r.method == method && r.round == round)
                .collect();
            let k = group.len() as f64;
            let mean = |f: fn(&MetricRow) -> f64| group.iter().map(|r| f(r)).sum::<f64>() / k;
            let mean_f1 = mean(|r| r.f1);
            let std_f1 = if group.len() > 1 {
                (group.iter().map(|r| (r.f1 - mean_f1).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
            } else {
                0.0
            };
            MeanMetricRow {
                method,
                round,
                mean_precision: mean(|r| r.precision),
                mean_recall: mean(|r| r.recall),
                mean_f1,
                std_f1,
                seeds: group.len(),
            }
        })
        .collect()
}

/// What the server holds besides the attacker view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerKnowledge {
    pub aux: Vec<Sample>,
    /// Membership target, if the property is membership.
    pub target: Option<Sample>,
}

/// Output of the federation stage for one seed.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub seed: u64,
    pub view: AttackerView,
    pub truth: GroundTruth,
    pub server: ServerKnowledge,
}

fn load_pool(
    config: &ExperimentConfig,
    needed: usize,
    seed: u64,
) -> Result<(Vec<Sample>, usize, usize), HarnessError> {
    let mut rng = seeding::rng_for(seed, &[stream::DATA]);
    match &config.dataset {
        DatasetSpec::Synthetic(task) => {
            if task.dim == 0 {
                return Err(HarnessError::Config("synthetic dim must be >= 1".into()));
            }
            Ok((task.generate(needed, &mut rng), task.dim, task.classes()))
        }
        DatasetSpec::Idx {
            images,
            labels,
            limit,
        } => {
            let mut samples =
                crate::idx::load(images, labels).map_err(|e| HarnessError::Data(e.to_string()))?;
            if let Some(limit) = limit {
                samples.truncate(*limit);
            }
            if samples.len() < needed {
                return Err(HarnessError::Data(format!(
                    "IDX data has {} samples, the configuration needs {needed}",
                    samples.len()
                )));
            }
            samples.shuffle(&mut rng);
            samples.truncate(needed);
            let dim = samples[0].features.len();
            let classes = samples.iter().map(|s| s.label).max().unwrap_or(0) + 1;
            Ok((samples, dim, classes.max(2)))
        }
    }
}

/// Builds client data, roles and the server's auxiliary data, then runs FedAvg.
pub fn simulate(config: &ExperimentConfig, seed: u64) -> Result<Simulation, HarnessError> {
    config.validate()?;
    let n_clients = config.clients;
    let membership = config.property == PropertyKind::Membership;
    let needed = n_clients * config.samples_per_client + config.aux_size + usize::from(membership);
    let (pool, dim, classes) = load_pool(config, needed, seed)?;

    let mut rng = seeding::rng_for(seed, &[stream::DATA, 1]);
    let (mut datasets, rest) =
        fedsim::partition(pool, n_clients, config.samples_per_client, &mut rng)
            .ok_or_else(|| HarnessError::Data("not enough samples to partition".into()))?;
    let mut rest = rest.into_iter();
    let target = if membership { rest.next() } else { None };
    let aux: Vec<Sample> = rest.take(config.aux_size).collect();

    let mut order: Vec<usize> = (0..n_clients).collect();
    order.shuffle(&mut seeding::rng_for(seed, &[stream::ROLES]));
    let positive_role = match config.property {
        PropertyKind::Membership => ClientRole::MemberPositive,
        PropertyKind::Inversion => ClientRole::InversionAttacker,
        PropertyKind::Ascent => ClientRole::AscentAttacker,
    };
    let mut roles = vec![ClientRole::HonestNegative; n_clients];
    for &i in &order[..config.positives()] {
        roles[i] = positive_role;
        // The target replaces one sample so dataset sizes stay equal.
        if let Some(t) = &target {
            datasets[i].samples[0] = t.clone();
        }
    }

    let shape = MlpShape {
        input_dim: dim,
        hidden_dim: config.hidden_dim,
        classes,
    };
    let initial = GlobalModel::init(shape, &mut seeding::rng_for(seed, &[stream::MODEL_INIT]));
    let fed = FederationConfig {
        rounds: config.rounds,
        clients: n_clients,
        fraction: config.fraction,
        local: config.local,
        secure_aggregation: config.secure_aggregation,
        scale_bits: config.scale_bits,
    };
    let (view, truth) = fedsim::run_federation(
        &fed,
        initial,
        &datasets,
        &roles,
        seeding::derive_seed(seed, &[stream::PARTICIPATION]),
    )
    .map_err(|source| HarnessError::Simulation { seed, source })?;
    Ok(Simulation {
        seed,
        view,
        truth,
        server: ServerKnowledge { aux, target },
    })
}

/// Per-round detectors and feature distributions.
pub fn train_detectors(
    config: &ExperimentConfig,
    view: &AttackerView,
    server: &ServerKnowledge,
    seed: u64,
) -> Result<(Vec<DetectorModel>, Vec<FeatureDistributions>), HarnessError> {
    let property = match (config.property, &server.target) {
        (PropertyKind::Membership, Some(t)) => Property::Membership { target: t.clone() },
        (PropertyKind::Membership, None) => {
            return Err(HarnessError::Data(
                "membership property without a target sample".into(),
            ))
        }
        (PropertyKind::Inversion, _) => Property::Inversion,
        (PropertyKind::Ascent, _) => Property::Ascent,
    };
    let set_params = TrainingSetParams {
        count: config.detector.set_size,
        batch_len: config.samples_per_client,
        local: config.local,
        train_fraction: config.detector.train_fraction,
    };
    let training = DetectorTraining {
        eta: config.detector.eta,
        epochs: config.detector.epochs,
        batch_size: config.detector.batch_size,
    };
    let per_round: Vec<(DetectorModel, FeatureDistributions)> = (0..view.round_count())
        .into_par_iter()
        .map(|r| {
            let wrap = |source| HarnessError::Detector {
                seed,
                round: r,
                source,
            };
            let round_seed = seeding::derive_seed(seed, &[stream::DETECTOR_SET, r as u64]);
            let set = detector::build_training_set(
                &server.aux,
                view.snapshot(r),
                &property,
                &set_params,
                round_seed,
            )
            .map_err(wrap)?;
            let train_seed = seeding::derive_seed(seed, &[stream::DETECTOR_TRAIN, r as u64]);
            let model = detector::train_detector(r, &set, &training, train_seed).map_err(wrap)?;
            let dist = detector::fit_distributions(&model, &set).map_err(wrap)?;
            Ok((model, dist))
        })
        .collect::<Result<_, HarnessError>>()?;
    Ok(per_round.into_iter().unzip())
}

/// Decisions of every requested method on the first `rounds` observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub round: usize,
    pub decisions: Vec<Decision>,
    pub prolin_trace: Vec<TraceEntry>,
}

pub fn evaluate_prefix(
    config: &ExperimentConfig,
    view: &AttackerView,
    detectors: &[DetectorModel],
    distributions: &[FeatureDistributions],
    rounds: usize,
    seed: u64,
) -> Result<Evaluation, HarnessError> {
    let prefix = view.prefix(rounds);
    let a = prefix.participation();
    let rec_err = |method| {
        move |source| HarnessError::Reconstruct {
            seed,
            round: rounds,
            method,
            source,
        }
    };
    let mut decisions = Vec::new();
    let mut prolin_trace = Vec::new();

    let agg = reconstruct::feature_aggregates(&prefix, detectors, distributions)
        .map_err(rec_err(Method::Reg))?;
    let wants = |m| config.methods.contains(&m);
    let reg = if wants(Method::Reg) || wants(Method::Prolin) {
        Some(
            reconstruct::reg_feature_reconstruct(
                &agg,
                a,
                detectors,
                config.lambda,
                config.decision,
            )
            .map_err(rec_err(Method::Reg))?,
        )
    } else {
        None
    };
    for &method in &Method::ALL {
        if !wants(method) {
            continue;
        }
        let decision = match method {
            Method::Baseline => {
                reconstruct::baseline_reconstruct(&prefix, detectors, config.decision)
                    .map_err(rec_err(method))?
                    .1
            }
            Method::Ols => {
                reconstruct::ols_feature_reconstruct(&agg, a, detectors, config.decision)
                    .map_err(rec_err(method))?
                    .1
            }
            Method::Reg => reg.as_ref().expect("computed above").1.clone(),
            Method::Prolin => {
                let (profile, reg_decision) = reg.as_ref().expect("computed above");
                let prolin_err = |source| HarnessError::Prolin {
                    seed,
                    round: rounds,
                    source,
                };
                let problem = ProlinProblem::new(
                    a.clone(),
                    agg.clone(),
                    profile.expected.clone(),
                    distributions[..rounds].to_vec(),
                    reconstruct::mean_beta(detectors, rounds),
                )
                .map_err(prolin_err)?;
                let solution = prolin::solve(&problem, &config.prolin).map_err(prolin_err)?;
                prolin_trace = solution.trace.clone();
                Decision::new(
                    Method::Prolin,
                    rounds,
                    solution.tau,
                    config.decision,
                    reg_decision.rank_deficient,
                )
            }
        };
        decisions.push(decision);
    }
    Ok(Evaluation {
        round: rounds,
        decisions,
        prolin_trace,
    })
}

/// Everything the attack stage produces for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub seed: u64,
    pub detectors: Vec<DetectorModel>,
    pub distributions: Vec<FeatureDistributions>,
    pub evaluations: Vec<Evaluation>,
    pub metrics: Vec<MetricRow>,
}

/// Trains detectors and evaluates every method at every evaluation round.
///
/// `labels` are used for scoring only; reconstruction sees the attacker view
/// and the server's auxiliary knowledge.
pub fn attack(
    config: &ExperimentConfig,
    view: &AttackerView,
    server: &ServerKnowledge,
    labels: &[bool],
    seed: u64,
) -> Result<AttackOutcome, HarnessError> {
    config.validate()?;
    if view.round_count() != config.rounds {
        return Err(HarnessError::Config(format!(
            "view has {} rounds, config expects {}",
            view.round_count(),
            config.rounds
        )));
    }
    let (detectors, distributions) = train_detectors(config, view, server, seed)?;
    let evaluations: Vec<Evaluation> = config
        .evaluation_rounds()
        .into_par_iter()
        .map(|rounds| evaluate_prefix(config, view, &detectors, &distributions, rounds, seed))
        .collect::<Result<_, _>>()?;
    let mut metrics = Vec::new();
    for eval in &evaluations {
        for d in &eval.decisions {
            let s = f1_score(&d.labels, labels)?;
            metrics.push(MetricRow {
                method: d.method,
                round: eval.round,
                precision: s.precision,
                recall: s.recall,
                f1: s.f1,
                seed,
            });
        }
    }
    Ok(AttackOutcome {
        seed,
        detectors,
        distributions,
        evaluations,
        metrics,
    })
}

/// One seed of a full run.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub simulation: Simulation,
    pub outcome: AttackOutcome,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedRun>,
}

impl RunResult {
    pub fn metrics(&self) -> Vec<MetricRow> {
        self.seeds
            .iter()
            .flat_map(|s| s.outcome.metrics.iter().cloned())
            .collect()
    }

    pub fn mean_metrics(&self) -> Vec<MeanMetricRow> {
        average_metrics(&self.metrics())
    }
}

/// Simulation and attack for every configured seed, seeds in parallel.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunResult, HarnessError> {
    config.validate()?;
    let seeds = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let simulation = simulate(config, seed)?;
            let outcome = attack(
                config,
                &simulation.view,
                &simulation.server,
                &simulation.truth.labels(),
                seed,
            )?;
            Ok(SeedRun {
                simulation,
                outcome,
            })
        })
        .collect::<Result<_, HarnessError>>()?;
    Ok(RunResult {
        config: config.clone(),
        seeds,
    })
}
