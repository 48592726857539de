//! Additive-mask secure aggregation over `Z_p` with `p = 2^bits`.
//!
//! Each participant adds a key vector to its fixed-point encoded update. Keys
//! of one round sum to zero modulo `p`, so the server recovers the exact sum
//! of encodings and nothing about any single summand. Key agreement is
//! replaced by a trusted in-process dealer.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding;

pub const DEFAULT_SCALE_BITS: u32 = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SecAggError {
    #[error("modulus must be a power of two >= 2 and < 2^64, got {0}")]
    InvalidModulus(u64),
    #[error("no participants")]
    NoParticipants,
    #[error("fixed-point overflow: need p >= 2^{required_bits}, have 2^{have_bits}")]
    Overflow { required_bits: u32, have_bits: u32 },
    #[error("non-finite value at coordinate {0}")]
    NonFinite(usize),
    #[error("incomplete mask set: missing clients {missing:?}")]
    IncompleteMaskSet { missing: Vec<usize> },
    #[error("unexpected or duplicate client {0} in masked updates")]
    UnexpectedClient(usize),
    #[error("masked updates disagree on {0}")]
    Inconsistent(&'static str),
    #[error("malformed serialized masked update: {0}")]
    Malformed(&'static str),
}

/// Power-of-two modulus `p = 2^bits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Modulus {
    bits: u32,
}

impl Modulus {
    pub fn new(p: u64) -> Result<Self, SecAggError> {
        if p < 2 || !p.is_power_of_two() {
            return Err(SecAggError::InvalidModulus(p));
        }
        Ok(Modulus {
            bits: p.trailing_zeros(),
        })
    }

    pub fn from_bits(bits: u32) -> Result<Self, SecAggError> {
        if !(1..64).contains(&bits) {
            return Err(SecAggError::InvalidModulus(if bits >= 64 {
                0
            } else {
                1 << bits
            }));
        }
        Ok(Modulus { bits })
    }

    pub fn bits(self) -> u32 {
        self.bits
    }

    pub fn value(self) -> u64 {
        1u64 << self.bits
    }

    fn mask(self) -> u64 {
        self.value() - 1
    }

    fn reduce(self, x: u64) -> u64 {
        x & self.mask()
    }
}

/// Smallest modulus bit-width holding a signed sum of `summands` values of
/// magnitude at most `max_abs` at scale `2^scale_bits`.
///
/// `ceil(log2(max_abs * 2^f * summands))` plus one bit for the sign.
pub fn required_modulus_bits(max_abs: f64, scale_bits: u32, summands: usize) -> u32 {
    let bound = (max_abs * 2f64.powi(scale_bits as i32)).round().max(1.0) * summands.max(1) as f64;
    (bound.log2().ceil() as u32).max(1) + 1
}

/// `round(2^f * x) mod p`, negatives embedded two's-complement style.
///
/// `summands` is the number of encodings that will later be added together;
/// the modulus must leave room for their signed sum.
pub fn encode_fixed_point(
    update: &[f64],
    scale_bits: u32,
    modulus: Modulus,
    summands: usize,
) -> Result<Vec<u64>, SecAggError> {
    if let Some(i) = update.iter().position(|x| !x.is_finite()) {
        return Err(SecAggError::NonFinite(i));
    }
    let max_abs = update.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let required = required_modulus_bits(max_abs, scale_bits, summands);
    if required > modulus.bits() {
        return Err(SecAggError::Overflow {
            required_bits: required,
            have_bits: modulus.bits(),
        });
    }
    let scale = 2f64.powi(scale_bits as i32);
    Ok(update
        .iter()
        .map(|x| modulus.reduce((x * scale).round() as i64 as u64))
        .collect())
}

/// Inverse of [`encode_fixed_point`] for values in `(-p/2, p/2)`.
pub fn decode_fixed_point(encoded: &[u64], scale_bits: u32, modulus: Modulus) -> Vec<f64> {
    let half = modulus.value() / 2;
    let p = modulus.value() as i128;
    let scale = 2f64.powi(scale_bits as i32);
    encoded
        .iter()
        .map(|&v| {
            let signed = if v >= half { v as i128 - p } else { v as i128 };
            signed as f64 / scale
        })
        .collect()
}

/// Per-client keys of one round; they sum to zero modulo `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSet {
    pub round: usize,
    pub modulus: Modulus,
    pub keys: Vec<(usize, Vec<u64>)>,
}

impl MaskSet {
    pub fn key_for(&self, client: usize) -> Option<&[u64]> {
        self.keys
            .iter()
            .find(|(c, _)| *c == client)
            .map(|(_, k)| k.as_slice())
    }

    /// Encrypts `encoded` with the key of `client`.
    pub fn mask(&self, client: usize, encoded: &[u64]) -> Option<MaskedUpdate> {
        let key = self.key_for(client)?;
        if key.len() != encoded.len() {
            return None;
        }
        Some(MaskedUpdate {
            client_id: client,
            round: self.round,
            modulus: self.modulus,
            ciphertext: encoded
                .iter()
                .zip(key)
                .map(|(x, k)| self.modulus.reduce(x.wrapping_add(*k)))
                .collect(),
        })
    }
}

/// Uniform keys for every participant but the last; the last cancels the sum.
pub fn generate_masks(
    round: usize,
    participants: &[usize],
    z: usize,
    modulus: Modulus,
    seed: u64,
) -> Result<MaskSet, SecAggError> {
    let (&last, rest) = participants
        .split_last()
        .ok_or(SecAggError::NoParticipants)?;
    let mut rng = seeding::rng_for(seed, &[seeding::stream::MASKS, round as u64]);
    let mut total = vec![0u64; z];
    let mut keys = Vec::with_capacity(participants.len());
    for &client in rest {
        let key: Vec<u64> = (0..z)
            .map(|_| modulus.reduce(rng.random::<u64>()))
            .collect();
        for (t, k) in total.iter_mut().zip(&key) {
            *t = modulus.reduce(t.wrapping_add(*k));
        }
        keys.push((client, key));
    }
    let closing = total
        .iter()
        .map(|t| modulus.reduce(t.wrapping_neg()))
        .collect();
    keys.push((last, closing));
    Ok(MaskSet {
        round,
        modulus,
        keys,
    })
}

/// A ciphertext `Enc_K(x) = x + K mod p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedUpdate {
    pub client_id: usize,
    pub round: usize,
    pub modulus: Modulus,
    pub ciphertext: Vec<u64>,
}

impl MaskedUpdate {
    /// Little-endian: round, client, modulus bits (u32), length, entries.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(28 + 8 * self.ciphertext.len());
        out.extend_from_slice(&(self.round as u64).to_le_bytes());
        out.extend_from_slice(&(self.client_id as u64).to_le_bytes());
        out.extend_from_slice(&self.modulus.bits().to_le_bytes());
        out.extend_from_slice(&(self.ciphertext.len() as u64).to_le_bytes());
        for v in &self.ciphertext {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SecAggError> {
        fn take<const N: usize>(b: &[u8], at: &mut usize) -> Result<[u8; N], SecAggError> {
            let s = b
                .get(*at..*at + N)
                .ok_or(SecAggError::Malformed("truncated"))?;
            *at += N;
            Ok(s.try_into().expect("slice length checked"))
        }
        let mut at = 0;
        let round = u64::from_le_bytes(take::<8>(bytes, &mut at)?) as usize;
        let client_id = u64::from_le_bytes(take::<8>(bytes, &mut at)?) as usize;
        let bits = u32::from_le_bytes(take::<4>(bytes, &mut at)?);
        let len = u64::from_le_bytes(take::<8>(bytes, &mut at)?) as usize;
        let modulus = Modulus::from_bits(bits).map_err(|_| SecAggError::Malformed("modulus"))?;
        if bytes.len() != at + 8 * len {
            return Err(SecAggError::Malformed("length prefix"));
        }
        let ciphertext = (0..len)
            .map(|_| take::<8>(bytes, &mut at).map(u64::from_le_bytes))
            .collect::<Result<Vec<_>, _>>()?;
        if ciphertext.iter().any(|&v| v >= modulus.value()) {
            return Err(SecAggError::Malformed("entry outside [0, p)"));
        }
        Ok(MaskedUpdate {
            client_id,
            round,
            modulus,
            ciphertext,
        })
    }
}

/// Entrywise sum of ciphertexts modulo `p`.
///
/// `roster` is the set of clients selected for the round; every one of them
/// must be present exactly once or the keys would not cancel.
pub fn aggregate_masked(
    masked: &[MaskedUpdate],
    roster: &[usize],
) -> Result<Vec<u64>, SecAggError> {
    let first = masked.first().ok_or(SecAggError::NoParticipants)?;
    let expected: BTreeSet<usize> = roster.iter().copied().collect();
    let mut seen = BTreeSet::new();
    for m in masked {
        if m.round != first.round {
            return Err(SecAggError::Inconsistent("round"));
        }
        if m.modulus != first.modulus {
            return Err(SecAggError::Inconsistent("modulus"));
        }
        if m.ciphertext.len() != first.ciphertext.len() {
            return Err(SecAggError::Inconsistent("length"));
        }
        if !expected.contains(&m.client_id) || !seen.insert(m.client_id) {
            return Err(SecAggError::UnexpectedClient(m.client_id));
        }
    }
    let missing: Vec<usize> = expected.difference(&seen).copied().collect();
    if !missing.is_empty() {
        return Err(SecAggError::IncompleteMaskSet { missing });
    }
    let modulus = first.modulus;
    let mut sum = vec![0u64; first.ciphertext.len()];
    for m in masked {
        for (s, c) in sum.iter_mut().zip(&m.ciphertext) {
            *s = modulus.reduce(s.wrapping_add(*c));
        }
    }
    Ok(sum)
}

/// Encode, mask, aggregate, and decode one round's float updates.
///
/// Returns the decoded sum; its error against the float sum is at most
/// `participants / 2^(f+1)` per coordinate.
pub fn secure_sum(
    round: usize,
    updates: &[(usize, &[f64])],
    scale_bits: u32,
    seed: u64,
) -> Result<Vec<f64>, SecAggError> {
    let z = updates
        .first()
        .map(|(_, u)| u.len())
        .ok_or(SecAggError::NoParticipants)?;
    let max_abs = updates
        .iter()
        .flat_map(|(_, u)| u.iter())
        .fold(0.0f64, |m, x| m.max(x.abs()));
    let bits = required_modulus_bits(max_abs, scale_bits, updates.len()).max(2);
    let modulus = Modulus::from_bits(bits)?;
    let roster: Vec<usize> = updates.iter().map(|(c, _)| *c).collect();
    let masks = generate_masks(round, &roster, z, modulus, seed)?;
    let masked = updates
        .iter()
        .map(|(client, update)| {
            let encoded = encode_fixed_point(update, scale_bits, modulus, updates.len())?;
            masks
                .mask(*client, &encoded)
                .ok_or(SecAggError::Inconsistent("length"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let sum = aggregate_masked(&masked, &roster)?;
    Ok(decode_fixed_point(&sum, scale_bits, modulus))
}
