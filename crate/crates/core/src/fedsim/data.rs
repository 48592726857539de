//! Samples, client datasets, and the synthetic two-blob task.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientDataset {
    pub client_id: usize,
    pub samples: Vec<Sample>,
}

impl ClientDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn contains(&self, sample: &Sample) -> bool {
        self.samples.iter().any(|s| s == sample)
    }
}

/// Two isotropic Gaussian classes centred at `±(separation / 2) * u` where
/// `u` is the normalised all-ones direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub dim: usize,
    pub separation: f64,
    pub noise_std: f64,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        SyntheticTask {
            dim: 10,
            separation: 3.0,
            noise_std: 1.0,
        }
    }
}

impl SyntheticTask {
    pub fn classes(&self) -> usize {
        2
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Sample {
        let label = rng.random_range(0..2usize);
        let sign = if label == 1 { 1.0 } else { -1.0 };
        let offset = sign * self.separation / 2.0 / (self.dim as f64).sqrt();
        let features = (0..self.dim)
            .map(|_| {
                let e: f64 = StandardNormal.sample(rng);
                offset + self.noise_std * e
            })
            .collect();
        Sample { features, label }
    }

    pub fn generate<R: Rng>(&self, count: usize, rng: &mut R) -> Vec<Sample> {
        (0..count).map(|_| self.sample(rng)).collect()
    }
}

/// Shuffles `pool` and deals `per_client` samples to each of `clients`.
///
/// Returns the client datasets and whatever is left of the pool.
pub fn partition<R: Rng>(
    mut pool: Vec<Sample>,
    clients: usize,
    per_client: usize,
    rng: &mut R,
) -> Option<(Vec<ClientDataset>, Vec<Sample>)> {
    if pool.len() < clients * per_client || per_client == 0 {
        return None;
    }
    pool.shuffle(rng);
    let rest = pool.split_off(clients * per_client);
    let mut chunks = pool.into_iter();
    let datasets = (0..clients)
        .map(|client_id| ClientDataset {
            client_id,
            samples: chunks.by_ref().take(per_client).collect(),
        })
        .collect();
    Some((datasets, rest))
}
