//! On-disk layout of a run.
//!
//! ```text
//! <dir>/manifest.json          config, per-seed roles and positive ids
//! <dir>/metrics.csv            one row per (seed, method, round)
//! <dir>/metrics_mean.csv       mean and sample std across seeds
//! <dir>/seed-<s>/attacker_view.json
//! <dir>/seed-<s>/ground_truth.json
//! <dir>/seed-<s>/server.json
//! <dir>/seed-<s>/detectors.csv       α, β per round and feature
//! <dir>/seed-<s>/distributions.csv   f⁺, f⁻, OVL and v per round and feature
//! <dir>/seed-<s>/decisions.csv       τ and labels per method, round, client
//! <dir>/seed-<s>/prolin_trace.csv    PROLIN objective per iteration
//! ```
//!
//! Nothing time-dependent is written, so equal configs give identical bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::fedsim::{AttackerView, ClientRole, GroundTruth};

use super::{
    AttackOutcome, ExperimentConfig, HarnessError, MeanMetricRow, MetricRow, RunResult,
    ServerKnowledge, Simulation,
};

pub(crate) fn archive_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Archive {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedManifest {
    pub seed: u64,
    pub roles: Vec<ClientRole>,
    pub positives: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedManifest>,
}

impl Manifest {
    pub fn labels(&self, seed: u64) -> Option<Vec<bool>> {
        self.seeds
            .iter()
            .find(|s| s.seed == seed)
            .map(|s| s.roles.iter().map(|r| r.is_positive()).collect())
    }
}

/// The simulation outputs of one seed as read back from disk.
#[derive(Debug, Clone)]
pub struct ArchivedSeed {
    pub seed: u64,
    pub view: AttackerView,
    pub server: ServerKnowledge,
}

pub fn seed_dir(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed-{seed}"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string(value).map_err(|e| archive_err(path, e))?;
    fs::write(path, text).map_err(|e| archive_err(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| archive_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| archive_err(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>, HarnessError> {
    csv::Writer::from_path(path).map_err(|e| archive_err(path, e))
}

/// Round-trip float formatting (17 significant digits).
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_rows(
    path: &Path,
    header: &[String],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<(), HarnessError> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| archive_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| archive_err(path, e))?;
    }
    w.flush().map_err(|e| archive_err(path, e))
}

fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// Overwrites `manifest.json`, e.g. after re-attacking with other settings.
pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<(), HarnessError> {
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(manifest).map_err(|e| archive_err(&path, e))?;
    fs::write(&path, text).map_err(|e| archive_err(&path, e))
}

/// Writes the manifest and the per-seed simulation files.
pub fn write_simulation(
    dir: &Path,
    config: &ExperimentConfig,
    sims: &[&Simulation],
) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| archive_err(dir, e))?;
    let manifest = Manifest {
        config: config.clone(),
        seeds: sims
            .iter()
            .map(|s| SeedManifest {
                seed: s.seed,
                roles: s.truth.roles.clone(),
                positives: (0..s.truth.roles.len())
                    .filter(|&i| s.truth.roles[i].is_positive())
                    .collect(),
            })
            .collect(),
    };
    write_manifest(dir, &manifest)?;
    for sim in sims {
        let sd = seed_dir(dir, sim.seed);
        fs::create_dir_all(&sd).map_err(|e| archive_err(&sd, e))?;
        write_json(&sd.join("attacker_view.json"), &sim.view)?;
        write_json::<GroundTruth>(&sd.join("ground_truth.json"), &sim.truth)?;
        write_json(&sd.join("server.json"), &sim.server)?;
    }
    Ok(())
}

/// Writes metrics and the per-seed attack outputs.
pub fn write_outcomes(dir: &Path, outcomes: &[&AttackOutcome]) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| archive_err(dir, e))?;
    let rows: Vec<MetricRow> = outcomes
        .iter()
        .flat_map(|o| o.metrics.iter().cloned())
        .collect();
    write_serde_csv(&dir.join("metrics.csv"), &rows)?;
    write_serde_csv(
        &dir.join("metrics_mean.csv"),
        &super::average_metrics(&rows),
    )?;

    for o in outcomes {
        let sd = seed_dir(dir, o.seed);
        fs::create_dir_all(&sd).map_err(|e| archive_err(&sd, e))?;

        let z = o.detectors.first().map_or(0, |d| d.dim());
        let mut head = header(&["round", "feature", "beta", "epochs", "final_loss"]);
        head.extend((0..z).map(|j| format!("alpha_{j}")));
        let detector_rows = o.detectors.iter().flat_map(|d| {
            d.alpha.iter().enumerate().map(move |(k, alpha)| {
                let mut row = vec![
                    d.round.to_string(),
                    k.to_string(),
                    num(d.beta),
                    d.loss_trace.len().to_string(),
                    d.loss_trace.last().map_or(String::new(), |l| num(*l)),
                ];
                row.extend(alpha.iter().map(|a| num(*a)));
                row
            })
        });
        write_rows(&sd.join("detectors.csv"), &head, detector_rows)?;

        let dist_rows = o.distributions.iter().flat_map(|d| {
            d.features.iter().enumerate().map(move |(k, p)| {
                vec![
                    d.round.to_string(),
                    k.to_string(),
                    num(p.mu_plus),
                    num(p.sigma_plus),
                    num(p.mu_minus),
                    num(p.sigma_minus),
                    num(p.ovl),
                    num(d.weight),
                ]
            })
        });
        write_rows(
            &sd.join("distributions.csv"),
            &header(&[
                "round",
                "feature",
                "mu_plus",
                "sigma_plus",
                "mu_minus",
                "sigma_minus",
                "ovl",
                "weight",
            ]),
            dist_rows,
        )?;

        let decision_rows = o.evaluations.iter().flat_map(|e| {
            e.decisions.iter().flat_map(move |d| {
                d.tau
                    .iter()
                    .zip(&d.labels)
                    .enumerate()
                    .map(move |(i, (tau, label))| {
                        vec![
                            e.round.to_string(),
                            d.method.to_string(),
                            i.to_string(),
                            num(*tau),
                            u8::from(*label).to_string(),
                            d.rank_deficient.to_string(),
                        ]
                    })
            })
        });
        write_rows(
            &sd.join("decisions.csv"),
            &header(&[
                "round",
                "method",
                "client",
                "tau",
                "label",
                "rank_deficient",
            ]),
            decision_rows,
        )?;

        let trace_rows = o.evaluations.iter().flat_map(|e| {
            e.prolin_trace.iter().map(move |t| {
                vec![
                    e.round.to_string(),
                    t.iteration.to_string(),
                    num(t.objective),
                    num(t.terms.ml),
                    num(t.terms.reg),
                    num(t.terms.lstsq),
                    num(t.gammas.gamma1),
                    num(t.gammas.gamma2),
                    num(t.gammas.gamma3),
                ]
            })
        });
        write_rows(
            &sd.join("prolin_trace.csv"),
            &header(&[
                "round",
                "iteration",
                "objective",
                "ml",
                "reg",
                "lstsq",
                "gamma1",
                "gamma2",
                "gamma3",
            ]),
            trace_rows,
        )?;
    }
    Ok(())
}

fn write_serde_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv_writer(path)?;
    for row in rows {
        w.serialize(row).map_err(|e| archive_err(path, e))?;
    }
    w.flush().map_err(|e| archive_err(path, e))
}

pub(crate) fn read_serde_csv<T: for<'de> Deserialize<'de>>(
    path: &Path,
) -> Result<Vec<T>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| archive_err(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| archive_err(path, e)))
        .collect()
}

/// Writes every artifact of a completed run.
pub fn write_archive(dir: &Path, result: &RunResult) -> Result<(), HarnessError> {
    let sims: Vec<&Simulation> = result.seeds.iter().map(|s| &s.simulation).collect();
    let outcomes: Vec<&AttackOutcome> = result.seeds.iter().map(|s| &s.outcome).collect();
    write_simulation(dir, &result.config, &sims)?;
    write_outcomes(dir, &outcomes)
}

/// Reads the manifest and the attacker-side inputs of every seed.
///
/// Ground truth stays on disk; scoring uses the roles in the manifest.
pub fn read_archive(dir: &Path) -> Result<(Manifest, Vec<ArchivedSeed>), HarnessError> {
    let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
    manifest.config.validate()?;
    let seeds = manifest
        .seeds
        .iter()
        .map(|s| {
            let sd = seed_dir(dir, s.seed);
            Ok(ArchivedSeed {
                seed: s.seed,
                view: read_json(&sd.join("attacker_view.json"))?,
                server: read_json(&sd.join("server.json"))?,
            })
        })
        .collect::<Result<_, HarnessError>>()?;
    Ok((manifest, seeds))
}

pub fn read_metrics(dir: &Path) -> Result<Vec<MetricRow>, HarnessError> {
    read_serde_csv(&dir.join("metrics.csv"))
}

pub fn read_mean_metrics(dir: &Path) -> Result<Vec<MeanMetricRow>, HarnessError> {
    read_serde_csv(&dir.join("metrics_mean.csv"))
}

/// Files every completed run directory must contain.
pub fn expected_files(dir: &Path, seeds: &[u64]) -> Vec<PathBuf> {
    let mut files = vec![
        dir.join("manifest.json"),
        dir.join("metrics.csv"),
        dir.join("metrics_mean.csv"),
    ];
    for &seed in seeds {
        let sd = seed_dir(dir, seed);
        for name in [
            "attacker_view.json",
            "ground_truth.json",
            "server.json",
            "detectors.csv",
            "distributions.csv",
            "decisions.csv",
            "prolin_trace.csv",
        ] {
            files.push(sd.join(name));
        }
    }
    files
}
