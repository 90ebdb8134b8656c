//! Partial-label learning with adversary-aware candidate generation:
//! transition matrices, label generation, a small MLP with contrastive head,
//! prototype-based label disambiguation, losses and verification checks.

// `!(x > 0.0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod atm;
pub mod candidate;
pub mod data;
pub mod error;
pub mod harness;
pub mod labelgen;
pub mod linalg;
pub mod losses;
pub mod nn;
pub mod rng;
pub mod transition;
pub mod verify;

pub use candidate::{CandidateSet, CandidateSetIndex};
pub use error::{Error, Result};
pub use labelgen::{CleanDataset, GenerationMode, PllDataset};
pub use transition::{AdversaryAwareMatrix, FlipProfile, FlipRates, RivalMatrix};
pub use harness::{Checkpoint, ExperimentConfig, MetricsRow, Trainer};
pub use verify::{ConsistencyReport, VerifyLevel};
