//! Plot-ready CSVs derived from a run directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::gaussian::Gaussian;

use super::archive::{read_mean_metrics, read_serde_csv, seed_dir};
use super::{HarnessError, Manifest};

/// Points per density curve in `dist_density.csv`.
const DENSITY_POINTS: usize = 201;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Selector {
    /// `f1_<method>.csv`: mean and std F1 per evaluation round.
    F1,
    /// `ovl.csv`: detector overlap per round, averaged over seeds and features.
    Ovl,
    /// `dist.csv`: `f⁺`/`f⁻` parameters and OVL at the listed rounds
    /// (0-based), plus the sampled densities in `dist_density.csv`.
    Dist(Vec<usize>),
}

impl std::str::FromStr for Selector {
    type Err = String;

    /// `f1`, `ovl`, or `dist:<r1>,<r2>,...`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            None if s == "f1" => Ok(Selector::F1),
            None if s == "ovl" => Ok(Selector::Ovl),
            Some(("dist", list)) => list
                .split(',')
                .map(|r| {
                    r.trim()
                        .parse::<usize>()
                        .map_err(|e| format!("bad round {r:?}: {e}"))
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Selector::Dist),
            _ => Err(format!(
                "unknown selector {s:?} (expected f1, ovl or dist:<rounds>)"
            )),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
struct DistRow {
    round: usize,
    feature: usize,
    mu_plus: f64,
    sigma_plus: f64,
    mu_minus: f64,
    sigma_minus: f64,
    ovl: f64,
}

struct SeedDistRow {
    seed: u64,
    row: DistRow,
}

#[derive(Serialize)]
struct F1Row {
    round: usize,
    mean_f1: f64,
    std_f1: f64,
}

#[derive(Serialize)]
struct OvlRow {
    round: usize,
    ovl: f64,
}

#[derive(Serialize)]
struct DensityRow {
    seed: u64,
    round: usize,
    feature: usize,
    x: f64,
    pdf_plus: f64,
    pdf_minus: f64,
}

fn export_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Export(format!("{}: {e}", path.display()))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| export_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| export_err(path, e))?;
    }
    w.flush().map_err(|e| export_err(path, e))
}

fn read_manifest(run_dir: &Path) -> Result<Manifest, HarnessError> {
    let path = run_dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| export_err(&path, e))?;
    serde_json::from_str(&text).map_err(|e| export_err(&path, e))
}

fn read_distributions(run_dir: &Path, seed: u64) -> Result<Vec<DistRow>, HarnessError> {
    let path = seed_dir(run_dir, seed).join("distributions.csv");
    if !path.exists() {
        return Err(HarnessError::Export(format!(
            "missing series: {}",
            path.display()
        )));
    }
    read_serde_csv(&path)
}

/// Writes the selected series into `out_dir` and returns the files written.
///
/// Fails, naming every missing series, if the run does not contain what the
/// selector asks for.
pub fn export_plot_data(
    run_dir: &Path,
    out_dir: &Path,
    selector: &Selector,
) -> Result<Vec<PathBuf>, HarnessError> {
    let manifest = read_manifest(run_dir)?;
    fs::create_dir_all(out_dir).map_err(|e| export_err(out_dir, e))?;
    match selector {
        Selector::F1 => {
            let rows = read_mean_metrics(run_dir)
                .map_err(|e| HarnessError::Export(format!("missing series: {e}")))?;
            let missing: Vec<String> = manifest
                .config
                .methods
                .iter()
                .filter(|m| !rows.iter().any(|r| r.method == **m))
                .map(|m| m.to_string())
                .collect();
            if !missing.is_empty() {
                return Err(HarnessError::Export(format!(
                    "missing F1 series for {}",
                    missing.join(", ")
                )));
            }
            manifest
                .config
                .methods
                .iter()
                .map(|m| {
                    let series: Vec<F1Row> = rows
                        .iter()
                        .filter(|r| r.method == *m)
                        .map(|r| F1Row {
                            round: r.round,
                            mean_f1: r.mean_f1,
                            std_f1: r.std_f1,
                        })
                        .collect();
                    let path = out_dir.join(format!("f1_{m}.csv"));
                    write_csv(&path, &series)?;
                    Ok(path)
                })
                .collect()
        }
        Selector::Ovl => {
            let rounds = manifest.config.rounds;
            let mut sum = vec![0.0; rounds];
            let mut count = vec![0usize; rounds];
            for s in &manifest.seeds {
                for row in read_distributions(run_dir, s.seed)? {
                    if row.round < rounds {
                        sum[row.round] += row.ovl;
                        count[row.round] += 1;
                    }
                }
            }
            let missing: Vec<String> = (0..rounds)
                .filter(|&r| count[r] == 0)
                .map(|r| r.to_string())
                .collect();
            if !missing.is_empty() {
                return Err(HarnessError::Export(format!(
                    "missing OVL for rounds {}",
                    missing.join(", ")
                )));
            }
            let series: Vec<OvlRow> = (0..rounds)
                .map(|round| OvlRow {
                    round,
                    ovl: sum[round] / count[round] as f64,
                })
                .collect();
            let path = out_dir.join("ovl.csv");
            write_csv(&path, &series)?;
            Ok(vec![path])
        }
        Selector::Dist(wanted) => {
            if wanted.is_empty() {
                return Err(HarnessError::Export(
                    "dist selector needs at least one round".into(),
                ));
            }
            let mut params = Vec::new();
            let mut out = Vec::new();
            let mut missing = Vec::new();
            for s in &manifest.seeds {
                let rows = read_distributions(run_dir, s.seed)?;
                for &round in wanted {
                    let selected: Vec<&DistRow> =
                        rows.iter().filter(|r| r.round == round).collect();
                    if selected.is_empty() {
                        missing.push(format!("seed {} round {round}", s.seed));
                    }
                    for row in selected {
                        params.push(SeedDistRow {
                            seed: s.seed,
                            row: row.clone(),
                        });
                        let plus = Gaussian::new(row.mu_plus, row.sigma_plus);
                        let minus = Gaussian::new(row.mu_minus, row.sigma_minus);
                        let lo = (row.mu_plus - 4.0 * row.sigma_plus)
                            .min(row.mu_minus - 4.0 * row.sigma_minus);
                        let hi = (row.mu_plus + 4.0 * row.sigma_plus)
                            .max(row.mu_minus + 4.0 * row.sigma_minus);
                        for j in 0..DENSITY_POINTS {
                            let x = lo + (hi - lo) * j as f64 / (DENSITY_POINTS - 1) as f64;
                            out.push(DensityRow {
                                seed: s.seed,
                                round,
                                feature: row.feature,
                                x,
                                pdf_plus: plus.pdf(x),
                                pdf_minus: minus.pdf(x),
                            });
                        }
                    }
                }
            }
            if !missing.is_empty() {
                return Err(HarnessError::Export(format!(
                    "missing distributions for {}",
                    missing.join(", ")
                )));
            }
            let path = out_dir.join("dist.csv");
            let mut w = csv::Writer::from_path(&path).map_err(|e| export_err(&path, e))?;
            w.write_record([
                "seed",
                "round",
                "feature",
                "mu_plus",
                "sigma_plus",
                "mu_minus",
                "sigma_minus",
                "ovl",
            ])
            .map_err(|e| export_err(&path, e))?;
            for p in &params {
                let r = &p.row;
                w.write_record(&[
                    p.seed.to_string(),
                    r.round.to_string(),
                    r.feature.to_string(),
                    r.mu_plus.to_string(),
                    r.sigma_plus.to_string(),
                    r.mu_minus.to_string(),
                    r.sigma_minus.to_string(),
                    r.ovl.to_string(),
                ])
                .map_err(|e| export_err(&path, e))?;
            }
            w.flush().map_err(|e| export_err(&path, e))?;
            let density = out_dir.join("dist_density.csv");
            write_csv(&density, &out)?;
            Ok(vec![path, density])
        }
    }
}
