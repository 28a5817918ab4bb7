//! Datasets, thresholds, metrics and the experiment grid.

mod dataset;
mod experiment;
mod metrics;
mod thresholds;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attacks::AttackError;
use crate::embedding::EmbeddingError;
use crate::function::CorpusError;
use crate::models::ModelError;

pub use dataset::{build_dataset, DatasetKind, DatasetSpec, Pair};
pub use experiment::{attack_one, load_fixtures, run_experiment, AttackKind, CellReport, Fixtures, PairRow, RunConfig};
pub use metrics::{
    compute_metrics, normalized_decrement, normalized_increment, threshold_sweep, MetricsReport, OutcomeSummary,
    SweepPoint,
};
pub use thresholds::{calibrate_thresholds, mean_std, Thresholds, DEFAULT_TAU_T, DEFAULT_TAU_U};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("corpus too small: {needed} pairs requested, {available} functions available")]
    InsufficientCorpus { needed: usize, available: usize },
    #[error("no outcomes to aggregate")]
    EmptyInput,
    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

impl EvalError {
    pub fn config(field: &str, message: impl Into<String>) -> Self {
        Self::Config { field: field.to_string(), message: message.into() }
    }
}

/// Perturbation budget levels: `(δ̄, B)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Setting {
    C1,
    C2,
    C3,
    C4,
}

impl Setting {
    pub const ALL: [Setting; 4] = [Setting::C1, Setting::C2, Setting::C3, Setting::C4];

    /// Maximum inserted instructions of the greedy attacks.
    pub fn delta_bar(self) -> usize {
        15 * (self as usize + 1)
    }

    /// Dead-branch count.
    pub fn b(self) -> usize {
        5 * (self as usize + 1)
    }

    pub fn as_str(self) -> &'static str {
        ["C1", "C2", "C3", "C4"][self as usize]
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Setting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|c| c.as_str().eq_ignore_ascii_case(s)).ok_or_else(|| format!("unknown setting `{s}`"))
    }
}
