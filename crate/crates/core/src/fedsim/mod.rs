//! Federated averaging simulator.
//!
//! A run produces two disjoint records: the [`AttackerView`] (participation
//! matrix, per-round aggregates, model snapshots, participant ids) that the
//! server legitimately observes under secure aggregation, and the
//! [`GroundTruth`] archive with every individual update, which only test
//! oracles and the metric computation may read.

mod data;
mod model;

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;
use crate::secagg::{self, SecAggError};
use crate::seeding::{self, stream};

pub use data::{partition, ClientDataset, Sample, SyntheticTask};
pub use model::{GlobalModel, MlpShape};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid participation parameters: {0}")]
    InvalidParticipation(String),
    #[error("invalid local training parameters: {0}")]
    InvalidTraining(String),
    #[error("empty dataset for client {0}")]
    EmptyDataset(usize),
    #[error("divergence in round {round}, client {client}: {reason}")]
    Divergence {
        round: usize,
        client: usize,
        reason: String,
    },
    #[error("configuration mismatch: {0}")]
    Mismatch(String),
    #[error("secure aggregation failed in round {round}: {source}")]
    SecAgg { round: usize, source: SecAggError },
}

/// A flattened model delta `w_after - w_before`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateVector(pub Vec<f64>);

impl UpdateVector {
    pub fn zeros(len: usize) -> Self {
        UpdateVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn negated(&self) -> Self {
        UpdateVector(self.0.iter().map(|x| -x).collect())
    }

    pub fn add_assign(&mut self, other: &UpdateVector) {
        self.0.iter_mut().zip(&other.0).for_each(|(a, b)| *a += b);
    }

    pub fn max_abs_diff(&self, other: &UpdateVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Binary rounds x clients schedule with a constant number of ones per row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipationMatrix {
    rounds: usize,
    clients: usize,
    per_round: usize,
    entries: Vec<u8>,
}

/// `round(C * N)` with the validity checks shared by sampling and config.
pub fn participants_per_round(clients: usize, fraction: f64) -> Result<usize, SimError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(SimError::InvalidParticipation(format!(
            "fraction {fraction} outside (0, 1]"
        )));
    }
    let k = (fraction * clients as f64).round() as usize;
    if k < 1 {
        return Err(SimError::InvalidParticipation(format!(
            "C*N = {} rounds to zero participants",
            fraction * clients as f64
        )));
    }
    Ok(k)
}

impl ParticipationMatrix {
    /// Each row is a uniformly random subset of size `round(C * N)`.
    pub fn sample(
        rounds: usize,
        clients: usize,
        fraction: f64,
        seed: u64,
    ) -> Result<Self, SimError> {
        let per_round = participants_per_round(clients, fraction)?;
        let mut rng = seeding::rng_for(seed, &[stream::PARTICIPATION]);
        let mut entries = vec![0u8; rounds * clients];
        for r in 0..rounds {
            for i in index::sample(&mut rng, clients, per_round) {
                entries[r * clients + i] = 1;
            }
        }
        Ok(ParticipationMatrix {
            rounds,
            clients,
            per_round,
            entries,
        })
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self, SimError> {
        let clients = rows.first().map_or(0, Vec::len);
        let per_round = rows
            .first()
            .map_or(0, |r| r.iter().map(|&x| x as usize).sum());
        for (r, row) in rows.iter().enumerate() {
            if row.len() != clients || row.iter().any(|&x| x > 1) {
                return Err(SimError::InvalidParticipation(format!(
                    "row {r} is not binary of width {clients}"
                )));
            }
            if row.iter().map(|&x| x as usize).sum::<usize>() != per_round {
                return Err(SimError::InvalidParticipation(format!(
                    "row {r} does not sum to {per_round}"
                )));
            }
        }
        if per_round == 0 && !rows.is_empty() {
            return Err(SimError::InvalidParticipation(
                "rows without participants".into(),
            ));
        }
        Ok(ParticipationMatrix {
            rounds: rows.len(),
            clients,
            per_round,
            entries: rows.concat(),
        })
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn clients(&self) -> usize {
        self.clients
    }

    pub fn per_round(&self) -> usize {
        self.per_round
    }

    pub fn get(&self, round: usize, client: usize) -> bool {
        self.entries[round * self.clients + client] == 1
    }

    pub fn row(&self, round: usize) -> &[u8] {
        &self.entries[round * self.clients..(round + 1) * self.clients]
    }

    /// Participant ids of `round`, ascending.
    pub fn participants(&self, round: usize) -> Vec<usize> {
        (0..self.clients).filter(|&i| self.get(round, i)).collect()
    }

    /// `R(i)`: rounds in which `client` participates, ascending.
    pub fn rounds_of(&self, client: usize) -> Vec<usize> {
        (0..self.rounds).filter(|&r| self.get(r, client)).collect()
    }

    pub fn prefix(&self, rounds: usize) -> ParticipationMatrix {
        let rounds = rounds.min(self.rounds);
        ParticipationMatrix {
            rounds,
            clients: self.clients,
            per_round: self.per_round,
            entries: self.entries[..rounds * self.clients].to_vec(),
        }
    }

    /// Column `perm[i]` of the result is column `i` of `self`.
    pub fn permute_clients(&self, perm: &[usize]) -> ParticipationMatrix {
        let mut out = self.clone();
        for r in 0..self.rounds {
            for i in 0..self.clients {
                out.entries[r * self.clients + perm[i]] = self.entries[r * self.clients + i];
            }
        }
        out
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::new(
            self.rounds,
            self.clients,
            self.entries.iter().map(|&x| x as f64).collect(),
        )
        .expect("binary entries are finite")
    }
}

/// Ground-truth property of a client.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientRole {
    HonestNegative,
    MemberPositive,
    AscentAttacker,
    InversionAttacker,
}

impl ClientRole {
    pub fn is_positive(self) -> bool {
        !matches!(self, ClientRole::HonestNegative)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalTraining {
    pub eta: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl LocalTraining {
    fn validate(&self) -> Result<(), SimError> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(SimError::InvalidTraining(format!(
                "eta {} must be > 0",
                self.eta
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(SimError::InvalidTraining(
                "epochs and batch size must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Mini-batch SGD with step `w <- w - signed_eta * grad`; returns the delta.
/// A negative `signed_eta` performs gradient ascent.
fn local_pass(
    model: &GlobalModel,
    samples: &[Sample],
    training: &LocalTraining,
    signed_eta: f64,
    seed: u64,
) -> Result<UpdateVector, String> {
    let shape = model.shape();
    let start = model.params();
    let mut params = start.to_vec();
    let mut rng = seeding::rng_for(seed, &[]);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for _ in 0..training.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(training.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&k| &samples[k]).collect();
            let (loss, grad) = model::batch_loss_and_grad(shape, &params, &batch, true);
            if !loss.is_finite() {
                return Err(format!("non-finite loss {loss}"));
            }
            params
                .iter_mut()
                .zip(&grad)
                .for_each(|(w, g)| *w -= signed_eta * g);
        }
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err("non-finite parameters".into());
    }
    Ok(UpdateVector(
        params.iter().zip(start).map(|(a, b)| a - b).collect(),
    ))
}

/// Honest local training: `Δw = w_after - w_before`. `model` is not modified.
pub fn local_update(
    model: &GlobalModel,
    data: &ClientDataset,
    training: &LocalTraining,
    seed: u64,
) -> Result<UpdateVector, SimError> {
    training.validate()?;
    if data.is_empty() {
        return Err(SimError::EmptyDataset(data.client_id));
    }
    local_pass(model, &data.samples, training, training.eta, seed).map_err(|reason| {
        SimError::Divergence {
            round: usize::MAX,
            client: data.client_id,
            reason,
        }
    })
}

/// Local training with sign-flipped steps `w <- w + eta * grad`.
pub fn ascent_update(
    model: &GlobalModel,
    data: &ClientDataset,
    training: &LocalTraining,
    seed: u64,
) -> Result<UpdateVector, SimError> {
    training.validate()?;
    if data.is_empty() {
        return Err(SimError::EmptyDataset(data.client_id));
    }
    local_pass(model, &data.samples, training, -training.eta, seed).map_err(|reason| {
        SimError::Divergence {
            round: usize::MAX,
            client: data.client_id,
            reason,
        }
    })
}

/// Turns an honest update into what a client with `role` actually submits.
pub fn apply_attack(
    update: UpdateVector,
    role: ClientRole,
    model: &GlobalModel,
    data: &ClientDataset,
    training: &LocalTraining,
    seed: u64,
) -> Result<UpdateVector, SimError> {
    match role {
        ClientRole::HonestNegative | ClientRole::MemberPositive => Ok(update),
        ClientRole::InversionAttacker => Ok(update.negated()),
        ClientRole::AscentAttacker => ascent_update(model, data, training, seed),
    }
}

/// The update a client with `role` submits for one round.
pub fn client_update(
    model: &GlobalModel,
    data: &ClientDataset,
    role: ClientRole,
    training: &LocalTraining,
    seed: u64,
) -> Result<UpdateVector, SimError> {
    match role {
        ClientRole::AscentAttacker => ascent_update(model, data, training, seed),
        _ => {
            let honest = local_update(model, data, training, seed)?;
            apply_attack(honest, role, model, data, training, seed)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub rounds: usize,
    pub clients: usize,
    pub fraction: f64,
    pub local: LocalTraining,
    /// Route every round through masked fixed-point aggregation.
    pub secure_aggregation: bool,
    pub scale_bits: u32,
}

/// What the server records for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedRound {
    pub round: usize,
    pub participants: Vec<usize>,
    /// `b_r = sum_i A_{r,i} Δw_r^i`.
    pub aggregate: Vec<f64>,
    /// Global model `T_{r-1}` broadcast at the start of the round.
    pub snapshot: GlobalModel,
}

/// Everything the attacker may use. There is deliberately no accessor for
/// individual client updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackerView {
    participation: ParticipationMatrix,
    rounds: Vec<ObservedRound>,
}

impl AttackerView {
    pub fn new(
        participation: ParticipationMatrix,
        rounds: Vec<ObservedRound>,
    ) -> Result<Self, SimError> {
        if participation.rounds() != rounds.len() {
            return Err(SimError::Mismatch(format!(
                "{} participation rows for {} rounds",
                participation.rounds(),
                rounds.len()
            )));
        }
        Ok(AttackerView {
            participation,
            rounds,
        })
    }

    pub fn participation(&self) -> &ParticipationMatrix {
        &self.participation
    }

    pub fn rounds(&self) -> &[ObservedRound] {
        &self.rounds
    }

    pub fn round_count(&self) -> usize {
        self.rounds.len()
    }

    pub fn aggregate(&self, round: usize) -> &[f64] {
        &self.rounds[round].aggregate
    }

    pub fn snapshot(&self, round: usize) -> &GlobalModel {
        &self.rounds[round].snapshot
    }

    /// `B`, the `n x z` matrix of aggregates.
    pub fn aggregate_matrix(&self) -> Matrix {
        let z = self.rounds.first().map_or(0, |r| r.aggregate.len());
        Matrix::new(
            self.rounds.len(),
            z,
            self.rounds
                .iter()
                .flat_map(|r| r.aggregate.iter().copied())
                .collect(),
        )
        .expect("aggregates are finite")
    }

    pub fn prefix(&self, rounds: usize) -> AttackerView {
        let rounds = rounds.min(self.rounds.len());
        AttackerView {
            participation: self.participation.prefix(rounds),
            rounds: self.rounds[..rounds].to_vec(),
        }
    }
}

/// Per-client updates and roles; never handed to reconstruction code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub roles: Vec<ClientRole>,
    /// `updates[r]` holds `(client, Δw_r^client)` for the round's participants.
    pub updates: Vec<Vec<(usize, UpdateVector)>>,
    pub final_model: GlobalModel,
}

impl GroundTruth {
    pub fn labels(&self) -> Vec<bool> {
        self.roles.iter().map(|r| r.is_positive()).collect()
    }

    pub fn update(&self, round: usize, client: usize) -> Option<&UpdateVector> {
        self.updates[round]
            .iter()
            .find(|(c, _)| *c == client)
            .map(|(_, u)| u)
    }
}

pub fn run_federation(
    config: &FederationConfig,
    initial: GlobalModel,
    datasets: &[ClientDataset],
    roles: &[ClientRole],
    seed: u64,
) -> Result<(AttackerView, GroundTruth), SimError> {
    let participation =
        ParticipationMatrix::sample(config.rounds, config.clients, config.fraction, seed)?;
    run_with_participation(config, participation, initial, datasets, roles, seed)
}

pub fn run_with_participation(
    config: &FederationConfig,
    participation: ParticipationMatrix,
    initial: GlobalModel,
    datasets: &[ClientDataset],
    roles: &[ClientRole],
    seed: u64,
) -> Result<(AttackerView, GroundTruth), SimError> {
    config.local.validate()?;
    if datasets.len() != config.clients || roles.len() != config.clients {
        return Err(SimError::Mismatch(format!(
            "{} clients configured, {} datasets, {} roles",
            config.clients,
            datasets.len(),
            roles.len()
        )));
    }
    if participation.clients() != config.clients || participation.rounds() != config.rounds {
        return Err(SimError::Mismatch("participation matrix shape".into()));
    }
    if let Some(d) = datasets.iter().find(|d| d.is_empty()) {
        return Err(SimError::EmptyDataset(d.client_id));
    }

    let mut model = initial;
    let mut observed = Vec::with_capacity(config.rounds);
    let mut archive = Vec::with_capacity(config.rounds);
    let norm = participation.per_round() as f64;

    for r in 0..config.rounds {
        let participants = participation.participants(r);
        let updates: Vec<(usize, UpdateVector)> = participants
            .par_iter()
            .map(|&i| {
                let pass_seed =
                    seeding::derive_seed(seed, &[stream::CLIENT_PASS, r as u64, i as u64]);
                client_update(&model, &datasets[i], roles[i], &config.local, pass_seed)
                    .map(|u| (i, u))
                    .map_err(|e| match e {
                        SimError::Divergence { reason, .. } => SimError::Divergence {
                            round: r,
                            client: i,
                            reason,
                        },
                        other => other,
                    })
            })
            .collect::<Result<_, _>>()?;

        let aggregate = if config.secure_aggregation {
            let refs: Vec<(usize, &[f64])> =
                updates.iter().map(|(i, u)| (*i, u.as_slice())).collect();
            secagg::secure_sum(
                r,
                &refs,
                config.scale_bits,
                seeding::derive_seed(seed, &[stream::MASKS]),
            )
            .map_err(|source| SimError::SecAgg { round: r, source })?
        } else {
            // Ascending client order keeps the float sum reproducible.
            let mut sum = UpdateVector::zeros(model.param_count());
            for (_, u) in &updates {
                sum.add_assign(u);
            }
            sum.0
        };

        observed.push(ObservedRound {
            round: r,
            participants,
            aggregate: aggregate.clone(),
            snapshot: model.clone(),
        });
        archive.push(updates);

        let step: Vec<f64> = aggregate.iter().map(|b| b / norm).collect();
        model.apply_step(&step);
        if !model.is_finite() {
            return Err(SimError::Divergence {
                round: r,
                client: usize::MAX,
                reason: "global model has non-finite parameters".into(),
            });
        }
    }

    let view = AttackerView::new(participation, observed)?;
    let truth = GroundTruth {
        roles: roles.to_vec(),
        updates: archive,
        final_model: model,
    };
    Ok((view, truth))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_shape() -> MlpShape {
        MlpShape {
            input_dim: 2,
            hidden_dim: 4,
            classes: 2,
        }
    }

    fn training() -> LocalTraining {
        LocalTraining {
            eta: 0.1,
            epochs: 1,
            batch_size: 4,
        }
    }

    fn setup(
        clients: usize,
        per_client: usize,
        seed: u64,
    ) -> (GlobalModel, Vec<ClientDataset>, Vec<Sample>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let task = SyntheticTask {
            dim: 2,
            separation: 3.0,
            noise_std: 1.0,
        };
        let pool = task.generate(clients * per_client + 200, &mut rng);
        let (datasets, rest) = partition(pool, clients, per_client, &mut rng).unwrap();
        (GlobalModel::init(small_shape(), &mut rng), datasets, rest)
    }

    #[test]
    fn participation_single_full_row() {
        let a = ParticipationMatrix::sample(1, 3, 1.0, 0).unwrap();
        assert_eq!(a.row(0), &[1, 1, 1]);
    }

    #[test]
    fn participation_row_sums_match_paper_defaults() {
        let a = ParticipationMatrix::sample(300, 50, 0.2, 9).unwrap();
        assert!((0..300).all(|r| a.participants(r).len() == 10));
    }

    #[test]
    fn participation_frequency_is_fair() {
        let a = ParticipationMatrix::sample(1000, 10, 0.5, 4).unwrap();
        for i in 0..10 {
            let f = a.rounds_of(i).len() as f64 / 1000.0;
            assert!((f - 0.5).abs() < 0.05, "client {i}: {f}");
        }
    }

    #[test]
    fn participation_rejects_empty_rounds() {
        assert!(ParticipationMatrix::sample(3, 3, 0.1, 0).is_err());
        assert!(ParticipationMatrix::sample(3, 3, 0.0, 0).is_err());
        assert!(ParticipationMatrix::sample(3, 3, 1.5, 0).is_err());
        assert!(ParticipationMatrix::from_rows(&[vec![1, 0], vec![1, 1]]).is_err());
    }

    #[test]
    fn participation_is_seed_deterministic() {
        let a = ParticipationMatrix::sample(20, 10, 0.3, 5).unwrap();
        let b = ParticipationMatrix::sample(20, 10, 0.3, 5).unwrap();
        let c = ParticipationMatrix::sample(20, 10, 0.3, 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_gradient_gives_zero_update() {
        // Saturated softmax on a perfectly separated point.
        let shape = MlpShape {
            input_dim: 1,
            hidden_dim: 1,
            classes: 2,
        };
        // W1 = 1, b1 = 0, W2 = [-40, 40], b2 = [0, 0]; x = 10 -> tanh ~ 1.
        let model = GlobalModel::unflatten(shape, vec![1.0, 0.0, -40.0, 40.0, 0.0, 0.0]).unwrap();
        let data = ClientDataset {
            client_id: 0,
            samples: vec![Sample {
                features: vec![10.0],
                label: 1,
            }],
        };
        let u = local_update(&model, &data, &training(), 1).unwrap();
        assert!(u.0.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn one_step_matches_finite_difference_gradient() {
        let (model, datasets, _) = setup(1, 1, 2);
        let cfg = LocalTraining {
            eta: 0.05,
            epochs: 1,
            batch_size: 1,
        };
        let u = local_update(&model, &datasets[0], &cfg, 3).unwrap();
        let batch: Vec<&Sample> = datasets[0].samples.iter().collect();
        let h = 1e-5;
        for k in 0..model.param_count() {
            let mut p = model.flatten();
            p[k] += h;
            let up = GlobalModel::unflatten(model.shape(), p.clone())
                .unwrap()
                .loss(&batch);
            p[k] -= 2.0 * h;
            let down = GlobalModel::unflatten(model.shape(), p)
                .unwrap()
                .loss(&batch);
            let expected = -cfg.eta * (up - down) / (2.0 * h);
            let denom = expected.abs().max(1e-8);
            assert!((u.0[k] - expected).abs() / denom < 1e-4 || (u.0[k] - expected).abs() < 1e-10);
        }
    }

    #[test]
    fn local_update_is_deterministic_and_pure() {
        let (model, datasets, _) = setup(2, 8, 5);
        let before = model.clone();
        let a = local_update(&model, &datasets[0], &training(), 11).unwrap();
        let b = local_update(&model, &datasets[0], &training(), 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(model, before);
    }

    #[test]
    fn local_update_rejects_bad_eta() {
        let (model, datasets, _) = setup(1, 4, 5);
        let cfg = LocalTraining {
            eta: 0.0,
            ..training()
        };
        assert!(matches!(
            local_update(&model, &datasets[0], &cfg, 0),
            Err(SimError::InvalidTraining(_))
        ));
    }

    #[test]
    fn inversion_is_an_involution() {
        let (model, datasets, _) = setup(1, 4, 7);
        let zero = UpdateVector::zeros(model.param_count());
        let inv = apply_attack(
            zero.clone(),
            ClientRole::InversionAttacker,
            &model,
            &datasets[0],
            &training(),
            0,
        )
        .unwrap();
        assert_eq!(inv.0.iter().map(|x| x.abs()).sum::<f64>(), 0.0);
        let u = local_update(&model, &datasets[0], &training(), 1).unwrap();
        let twice = apply_attack(
            apply_attack(
                u.clone(),
                ClientRole::InversionAttacker,
                &model,
                &datasets[0],
                &training(),
                0,
            )
            .unwrap(),
            ClientRole::InversionAttacker,
            &model,
            &datasets[0],
            &training(),
            0,
        )
        .unwrap();
        assert_eq!(twice, u);
        let honest = apply_attack(
            u.clone(),
            ClientRole::HonestNegative,
            &model,
            &datasets[0],
            &training(),
            0,
        )
        .unwrap();
        assert_eq!(honest, u);
    }

    #[test]
    fn ascent_one_step_is_negated_descent() {
        let (model, datasets, _) = setup(1, 1, 8);
        let cfg = LocalTraining {
            eta: 0.05,
            epochs: 1,
            batch_size: 1,
        };
        let descent = local_update(&model, &datasets[0], &cfg, 4).unwrap();
        let ascent = apply_attack(
            descent.clone(),
            ClientRole::AscentAttacker,
            &model,
            &datasets[0],
            &cfg,
            4,
        )
        .unwrap();
        let negated_eta = local_pass(&model, &datasets[0].samples, &cfg, -cfg.eta, 4).unwrap();
        assert_eq!(ascent, negated_eta);
        // Single step on one sample: ascent = -descent exactly.
        assert!(ascent.max_abs_diff(&descent.negated()) < 1e-15);
    }

    fn federation(rounds: usize, clients: usize, fraction: f64) -> FederationConfig {
        FederationConfig {
            rounds,
            clients,
            fraction,
            local: training(),
            secure_aggregation: false,
            scale_bits: 16,
        }
    }

    #[test]
    fn identical_data_full_participation_averages_to_single_update() {
        let (model, datasets, _) = setup(1, 8, 12);
        let copies: Vec<ClientDataset> = (0..3)
            .map(|i| ClientDataset {
                client_id: i,
                samples: datasets[0].samples.clone(),
            })
            .collect();
        let cfg = FederationConfig {
            local: LocalTraining {
                batch_size: 8,
                ..training()
            },
            ..federation(1, 3, 1.0)
        };
        let (view, truth) =
            run_federation(&cfg, model, &copies, &[ClientRole::HonestNegative; 3], 1).unwrap();
        // Full-batch steps make every client's pass identical.
        let mean: Vec<f64> = view.aggregate(0).iter().map(|b| b / 3.0).collect();
        let single = truth.update(0, 0).unwrap();
        assert!(mean
            .iter()
            .zip(&single.0)
            .all(|(a, b)| (a - b).abs() < 1e-10));
    }

    #[test]
    fn aggregate_equals_archived_sum_and_partitions() {
        let (model, datasets, _) = setup(10, 6, 13);
        let roles = vec![ClientRole::HonestNegative; 10];
        let (view, truth) =
            run_federation(&federation(15, 10, 0.4), model, &datasets, &roles, 2).unwrap();
        assert_eq!(view.round_count(), 15);
        for r in 0..15 {
            let mut sum = vec![0.0; view.aggregate(r).len()];
            let mut half = vec![0.0; sum.len()];
            for (k, (_, u)) in truth.updates[r].iter().enumerate() {
                for j in 0..sum.len() {
                    sum[j] += u.0[j];
                    if k % 2 == 0 {
                        half[j] += u.0[j];
                    }
                }
            }
            let rest: Vec<f64> = truth.updates[r]
                .iter()
                .enumerate()
                .filter(|(k, _)| k % 2 == 1)
                .fold(vec![0.0; sum.len()], |mut acc, (_, (_, u))| {
                    acc.iter_mut().zip(&u.0).for_each(|(a, b)| *a += b);
                    acc
                });
            for j in 0..sum.len() {
                assert!((sum[j] - view.aggregate(r)[j]).abs() < 1e-9);
                assert!((half[j] + rest[j] - view.aggregate(r)[j]).abs() < 1e-9);
            }
            assert_eq!(view.rounds()[r].participants.len(), 4);
        }
    }

    #[test]
    fn federation_is_deterministic() {
        let (model, datasets, _) = setup(6, 5, 14);
        let roles = vec![
            ClientRole::AscentAttacker,
            ClientRole::HonestNegative,
            ClientRole::InversionAttacker,
            ClientRole::HonestNegative,
            ClientRole::HonestNegative,
            ClientRole::HonestNegative,
        ];
        let cfg = federation(10, 6, 0.5);
        let (a, _) = run_federation(&cfg, model.clone(), &datasets, &roles, 3).unwrap();
        let (b, _) = run_federation(&cfg, model, &datasets, &roles, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn secure_aggregation_stays_within_fixed_point_error() {
        let (model, datasets, _) = setup(6, 5, 15);
        let roles = vec![ClientRole::HonestNegative; 6];
        let mut cfg = federation(5, 6, 0.5);
        cfg.secure_aggregation = true;
        let (view, truth) = run_federation(&cfg, model, &datasets, &roles, 3).unwrap();
        for r in 0..5 {
            for j in 0..view.aggregate(r).len() {
                let plain: f64 = truth.updates[r].iter().map(|(_, u)| u.0[j]).sum();
                assert!((plain - view.aggregate(r)[j]).abs() <= 3.0 / 65536.0);
            }
        }
    }

    #[test]
    fn attacker_view_serialization_has_no_client_updates() {
        let (model, datasets, _) = setup(4, 5, 16);
        let roles = vec![ClientRole::HonestNegative; 4];
        let (view, _) =
            run_federation(&federation(3, 4, 0.5), model, &datasets, &roles, 3).unwrap();
        let json = serde_json::to_value(&view).unwrap();
        let mut top: Vec<&str> = json
            .as_object()
            .unwrap()
            .keys()
            .map(String::as_str)
            .collect();
        top.sort_unstable();
        assert_eq!(top, ["participation", "rounds"]);
        let mut round_keys: Vec<&str> = json["rounds"][0]
            .as_object()
            .unwrap()
            .keys()
            .map(String::as_str)
            .collect();
        round_keys.sort_unstable();
        assert_eq!(
            round_keys,
            ["aggregate", "participants", "round", "snapshot"]
        );
    }

    #[test]
    fn honest_federation_learns_the_synthetic_task() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let task = SyntheticTask::default();
        let shape = MlpShape {
            input_dim: task.dim,
            hidden_dim: 24,
            classes: 2,
        };
        let pool = task.generate(20 * 10 + 500, &mut rng);
        let (datasets, test) = partition(pool, 20, 10, &mut rng).unwrap();
        let model = GlobalModel::init(shape, &mut rng);
        let cfg = FederationConfig {
            rounds: 120,
            clients: 20,
            fraction: 0.2,
            local: LocalTraining {
                eta: 0.05,
                epochs: 1,
                batch_size: 5,
            },
            secure_aggregation: false,
            scale_bits: 16,
        };
        let (_, truth) =
            run_federation(&cfg, model, &datasets, &[ClientRole::HonestNegative; 20], 1).unwrap();
        let train: Vec<Sample> = datasets.iter().flat_map(|d| d.samples.clone()).collect();
        let acc = truth.final_model.accuracy(&train);
        assert!(acc > 0.9, "train accuracy {acc}");
        assert!(truth.final_model.accuracy(&test) > 0.85);
    }
}
