//! Source/target pairs for the attack grid.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::function::synth::family_of;
use crate::function::BinaryFunction;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Random,
    Balanced,
    Untarg,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 3] = [DatasetKind::Random, DatasetKind::Balanced, DatasetKind::Untarg];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Random => "random",
            Self::Balanced => "balanced",
            Self::Untarg => "untarg",
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| format!("unknown dataset `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub pairs: usize,
    pub seed: u64,
    /// Maximum instruction-count difference of Balanced pairs.
    pub balance: usize,
}

impl DatasetSpec {
    pub fn new(kind: DatasetKind, pairs: usize, seed: u64) -> Self {
        Self { kind, pairs, seed, balance: 10 }
    }
}

/// Indices into the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub id: usize,
    pub source: usize,
    pub target: usize,
}

/// Two functions may form a targeted pair when they differ and do not share
/// a known source family.
fn unrelated(corpus: &[BinaryFunction], a: usize, b: usize) -> bool {
    a != b && {
        let (fa, fb) = (family_of(&corpus[a].name), family_of(&corpus[b].name));
        fa.is_none() || fa != fb
    }
}

/// Deterministic pairs for `spec`. Every function is a source at most once;
/// Random and Untarg draw the same sources for the same seed.
pub fn build_dataset(corpus: &[BinaryFunction], spec: &DatasetSpec) -> Result<Vec<Pair>, EvalError> {
    let insufficient = || EvalError::InsufficientCorpus { needed: spec.pairs, available: corpus.len() };
    if corpus.len() < spec.pairs || (spec.kind != DatasetKind::Untarg && corpus.len() < 2) {
        return Err(insufficient());
    }
    let mut r = rng::stream(spec.seed, 0x6461_7461);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut r);
    let sizes: Vec<usize> = corpus.iter().map(BinaryFunction::instruction_count).collect();
    let mut pairs = Vec::with_capacity(spec.pairs);
    for &source in &order {
        if pairs.len() == spec.pairs {
            break;
        }
        let target = match spec.kind {
            DatasetKind::Untarg => Some(source),
            DatasetKind::Random => {
                let options: Vec<usize> = (0..corpus.len()).filter(|t| unrelated(corpus, source, *t)).collect();
                options.choose(&mut r).copied()
            }
            DatasetKind::Balanced => {
                let options: Vec<usize> = (0..corpus.len())
                    .filter(|t| unrelated(corpus, source, *t) && sizes[source].abs_diff(sizes[*t]) <= spec.balance)
                    .collect();
                options.choose(&mut r).copied()
            }
        };
        if let Some(target) = target {
            pairs.push(Pair { id: pairs.len(), source, target });
        }
    }
    if pairs.len() < spec.pairs {
        return Err(insufficient());
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function::pair_stats;
    use crate::function::synth::{generate, SynthConfig};

    #[test]
    fn constraints_hold() {
        let fs = generate(&SynthConfig { families: 30, variants: 3, seed: 4, ..Default::default() });
        for kind in DatasetKind::ALL {
            let spec = DatasetSpec::new(kind, 50, 7);
            let pairs = build_dataset(&fs, &spec).unwrap();
            assert_eq!(pairs.len(), 50);
            assert_eq!(pairs, build_dataset(&fs, &spec).unwrap());
            let mut sources: Vec<usize> = pairs.iter().map(|p| p.source).collect();
            sources.sort();
            sources.dedup();
            assert_eq!(sources.len(), 50);
            for p in &pairs {
                match kind {
                    DatasetKind::Untarg => assert_eq!(p.source, p.target),
                    _ => assert!(unrelated(&fs, p.source, p.target)),
                }
                if kind == DatasetKind::Balanced {
                    assert!(pair_stats(&fs[p.source], &fs[p.target]).instr_diff <= 10);
                }
            }
        }
        let random = build_dataset(&fs, &DatasetSpec::new(DatasetKind::Random, 50, 7)).unwrap();
        let untarg = build_dataset(&fs, &DatasetSpec::new(DatasetKind::Untarg, 50, 7)).unwrap();
        assert!(random.iter().zip(&untarg).all(|(a, b)| a.source == b.source));
    }

    #[test]
    fn small_corpus_is_rejected() {
        let fs = generate(&SynthConfig { families: 2, variants: 2, ..Default::default() });
        assert!(matches!(
            build_dataset(&fs, &DatasetSpec::new(DatasetKind::Random, 10, 0)),
            Err(EvalError::InsufficientCorpus { .. })
        ));
    }
}
