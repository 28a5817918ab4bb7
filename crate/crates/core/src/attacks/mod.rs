//! Adversarial attacks that insert dead branches into a source function.
//!
//! - [`greedy_attack`]: ε-greedy search over every (slot, candidate) pair,
//!   with a fixed candidate set (random or the gray-box restriction).
//! - [`spatial_greedy_attack`]: the same search with a candidate set that is
//!   refreshed each iteration around the best instructions in embedding space.
//! - [`gcam_attack`]: gradient descent on a feature-space perturbation of the
//!   dead branches, rounded back to real instructions.

mod candidates;
mod gcam;
mod greedy;

use serde::{Deserialize, Serialize};

use crate::features::ModelFamily;
use crate::function::BinaryFunction;
use crate::models::ModelError;
use crate::perturbation::{Action, InsertionPlan, PerturbError};

pub use crate::models::Mode;
pub use candidates::{
    acfg_representatives, class_representatives, gray_box_candidates, instantiate, CandidateSet, SpatialPool, Universe,
};
pub use gcam::{count_actions, gcam_attack, round_perturbation_counts, round_perturbation_embeddings, GcamConfig};
pub use greedy::{greedy_attack, spatial_greedy_attack, SpatialConfig};

#[derive(Debug, thiserror::Error)]
pub enum AttackError {
    #[error("no gray-box candidate set exists for {0}")]
    UnsupportedFamily(ModelFamily),
    #[error("invalid attack configuration: {0}")]
    Config(String),
    #[error("the candidate set is empty")]
    EmptyCandidates,
    #[error(transparent)]
    Perturb(#[from] PerturbError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub mode: Mode,
    /// Success threshold: reach at least `tau` (targeted) or at most `tau`
    /// (untargeted).
    pub tau: f64,
    /// Number of dead branches.
    pub b: usize,
    /// Maximum inserted instructions, one per greedy iteration.
    pub max_insertions: usize,
    pub seed: u64,
    /// Keep per-iteration candidate lists in the outcome.
    #[serde(default)]
    pub trace: bool,
}

impl AttackConfig {
    pub fn validate(&self) -> Result<(), AttackError> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(AttackError::Config(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        if self.b == 0 {
            return Err(AttackError::Config("at least one dead branch is required".into()));
        }
        if self.max_insertions == 0 {
            return Err(AttackError::Config("the insertion budget must be at least 1".into()));
        }
        Ok(())
    }

    pub fn succeeded(&self, sim: f64) -> bool {
        succeeded(self.mode, self.tau, sim)
    }
}

pub fn succeeded(mode: Mode, tau: f64, sim: f64) -> bool {
    match mode {
        Mode::Targeted => sim >= tau,
        Mode::Untargeted => sim <= tau,
    }
}

/// Quantity an attack maximizes.
pub(crate) fn objective(mode: Mode, sim: f64) -> f64 {
    match mode {
        Mode::Targeted => sim,
        Mode::Untargeted => -sim,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackOutcome {
    pub success: bool,
    pub initial_sim: f64,
    pub final_sim: f64,
    pub inserted: usize,
    /// Similarity after every iteration.
    pub trajectory: Vec<f64>,
    pub iterations: usize,
    pub plan: InsertionPlan,
    /// Inserted instructions in order.
    pub actions: Vec<Action>,
    pub adversarial: BinaryFunction,
    /// Candidate list of every iteration, when tracing.
    pub candidates: Vec<CandidateSet>,
}
