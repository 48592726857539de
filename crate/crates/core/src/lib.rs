//! Client-specific property inference against securely aggregated federated
//! learning.
//!
//! The crate simulates FedAvg with masked aggregation and then reconstructs
//! per-client properties (membership of a target sample, poisoning behaviour)
//! from what the server observes: per-round aggregates, the participation
//! matrix, and global model snapshots.

pub mod detector;
pub mod fedsim;
pub mod gaussian;
pub mod harness;
pub mod idx;
pub mod linalg;
pub mod oracle;
pub mod prolin;
pub mod reconstruct;
pub mod secagg;
pub mod seeding;
