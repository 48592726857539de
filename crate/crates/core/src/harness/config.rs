//! Experiment configuration and presets.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::fedsim::{LocalTraining, SyntheticTask};
use crate::prolin::ProlinParams;
use crate::reconstruct::{DecisionRule, Method};
use crate::secagg::DEFAULT_SCALE_BITS;

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropertyKind {
    Membership,
    Inversion,
    Ascent,
}

impl std::str::FromStr for PropertyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "membership" | "mia" => Ok(PropertyKind::Membership),
            "inversion" | "gia" => Ok(PropertyKind::Inversion),
            "ascent" | "gaa" => Ok(PropertyKind::Ascent),
            other => Err(format!(
                "unknown property {other:?} (expected membership, inversion or ascent)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSpec {
    Synthetic(SyntheticTask),
    /// MNIST-layout IDX files; `limit` caps how many samples are read.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        limit: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Labelled updates generated per round (`|D'|`), half of them positive.
    pub set_size: usize,
    pub eta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub train_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `n`.
    pub rounds: usize,
    /// `N`.
    pub clients: usize,
    /// `C`.
    pub fraction: f64,
    /// Upper bound on the share of positive clients.
    pub phi: f64,
    /// Floor on the number of positive clients so F1 is meaningful.
    pub min_positives: usize,
    pub property: PropertyKind,
    pub dataset: DatasetSpec,
    pub samples_per_client: usize,
    /// `|D^aux|`.
    pub aux_size: usize,
    pub hidden_dim: usize,
    /// Local training of the global model (`eta` is the global learning rate).
    pub local: LocalTraining,
    pub detector: DetectorConfig,
    pub lambda: f64,
    pub decision: DecisionRule,
    pub methods: Vec<Method>,
    pub prolin: ProlinParams,
    /// Re-run the reconstructions every this many rounds.
    pub eval_every: usize,
    pub secure_aggregation: bool,
    pub scale_bits: u32,
    pub seeds: Vec<u64>,
}

impl ExperimentConfig {
    /// Small synthetic setting that runs in well under a minute per seed.
    ///
    /// Five samples per client keep a single target sample visible in the
    /// update; a larger global step lets the model fit the clients' own data,
    /// which pulls their real updates away from the aux-trained detectors.
    pub fn desk(property: PropertyKind) -> Self {
        ExperimentConfig {
            rounds: 120,
            clients: 20,
            fraction: 0.2,
            phi: 0.1,
            min_positives: 2,
            property,
            dataset: DatasetSpec::Synthetic(SyntheticTask::default()),
            samples_per_client: 5,
            aux_size: 400,
            hidden_dim: 24,
            local: LocalTraining {
                eta: 0.01,
                epochs: 1,
                batch_size: 5,
            },
            detector: DetectorConfig {
                set_size: 1000,
                eta: 0.05,
                epochs: 100,
                batch_size: 10,
                train_fraction: 0.8,
            },
            lambda: 5.0,
            decision: DecisionRule::Threshold(0.5),
            methods: Method::ALL.to_vec(),
            prolin: ProlinParams::default(),
            eval_every: 5,
            secure_aggregation: true,
            scale_bits: DEFAULT_SCALE_BITS,
            seeds: vec![1, 2, 3],
        }
    }

    /// Hyperparameters of the original MNIST setting on the synthetic task.
    /// Expect hours of runtime.
    pub fn paper(property: PropertyKind) -> Self {
        ExperimentConfig {
            rounds: 300,
            clients: 50,
            fraction: 0.2,
            phi: 0.1,
            min_positives: 1,
            property,
            dataset: DatasetSpec::Synthetic(SyntheticTask {
                dim: 20,
                ..SyntheticTask::default()
            }),
            samples_per_client: 50,
            aux_size: 6000,
            hidden_dim: 32,
            local: LocalTraining {
                eta: 0.01,
                epochs: 1,
                batch_size: 10,
            },
            detector: DetectorConfig {
                set_size: 12_000,
                eta: 0.001,
                epochs: 50,
                batch_size: 10,
                train_fraction: 0.8,
            },
            lambda: 5.0,
            decision: DecisionRule::Threshold(0.5),
            methods: Method::ALL.to_vec(),
            prolin: ProlinParams::default(),
            eval_every: 10,
            secure_aggregation: true,
            scale_bits: DEFAULT_SCALE_BITS,
            seeds: vec![1, 2, 3],
        }
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let config: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| HarnessError::Config(format!("cannot parse config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// `max(round(φ N), min_positives)`.
    pub fn positives(&self) -> usize {
        ((self.phi * self.clients as f64).round() as usize).max(self.min_positives)
    }

    /// Rounds (1-based prefix lengths) at which every method is evaluated.
    pub fn evaluation_rounds(&self) -> Vec<usize> {
        let mut rounds: Vec<usize> = (self.eval_every..=self.rounds)
            .step_by(self.eval_every.max(1))
            .collect();
        if rounds.last() != Some(&self.rounds) {
            rounds.push(self.rounds);
        }
        rounds
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |msg: String| Err(HarnessError::Config(msg));
        if self.rounds == 0 || self.clients == 0 {
            return fail("rounds and clients must be >= 1".into());
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return fail(format!("fraction C = {} must be in (0, 1]", self.fraction));
        }
        if (self.fraction * self.clients as f64).round() < 1.0 {
            return fail("round(C * N) must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.phi) {
            return fail(format!("phi = {} must be in [0, 1)", self.phi));
        }
        if self.positives() == 0 || self.positives() >= self.clients {
            return fail(format!(
                "{} positive clients out of {} leaves nothing to detect",
                self.positives(),
                self.clients
            ));
        }
        if self.samples_per_client == 0 {
            return fail("samples_per_client must be >= 1".into());
        }
        if self.aux_size < self.samples_per_client {
            return fail(format!(
                "aux_size {} is smaller than one client batch ({})",
                self.aux_size, self.samples_per_client
            ));
        }
        if self.hidden_dim == 0 {
            return fail("hidden_dim must be >= 1".into());
        }
        let d = &self.detector;
        if d.set_size < 4 || !d.set_size.is_multiple_of(2) {
            return fail(format!(
                "detector set_size {} must be even and >= 4",
                d.set_size
            ));
        }
        if !(d.eta > 0.0) || d.epochs == 0 || d.batch_size == 0 {
            return fail("detector eta, epochs and batch_size must be positive".into());
        }
        if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            return fail("detector train_fraction must be in (0, 1)".into());
        }
        let eval_per_class = ((d.set_size / 2) as f64 * (1.0 - d.train_fraction)).round() as usize;
        if eval_per_class < 2 {
            return fail("detector evaluation split needs >= 2 samples per class".into());
        }
        if !(self.lambda >= 0.0) {
            return fail(format!("lambda = {} must be >= 0", self.lambda));
        }
        if self.methods.is_empty() {
            return fail("no methods requested".into());
        }
        if self.seeds.is_empty() {
            return fail("no seeds requested".into());
        }
        if self.eval_every == 0 {
            return fail("eval_every must be >= 1".into());
        }
        if !(1..=30).contains(&self.scale_bits) {
            return fail(format!("scale_bits {} must be in 1..=30", self.scale_bits));
        }
        if self.local.eta <= 0.0 || self.local.epochs == 0 || self.local.batch_size == 0 {
            return fail("local eta, epochs and batch_size must be positive".into());
        }
        Ok(())
    }
}
