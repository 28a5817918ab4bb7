//! Instruction embeddings: skip-gram training over normalized instruction
//! tokens, exact cosine nearest-neighbour queries and table persistence.

mod skipgram;
mod vocab;

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::asm::{normalize_for_sequence, NormalizedToken};
use crate::function::BinaryFunction;

pub use skipgram::train_skipgram;
pub use vocab::{Vocabulary, OOV_TOKEN};

const MAGIC: &str = "BSEMB";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("training corpus has no tokens")]
    EmptyCorpus,
    #[error("unknown token `{0}`")]
    UnknownToken(String),
    #[error("asked for {m} neighbours in a vocabulary of {len}")]
    TooManyNeighbors { m: usize, len: usize },
    #[error("embedding file: {0}")]
    Io(#[from] std::io::Error),
    #[error("embedding file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipGramParams {
    pub dim: usize,
    pub window: usize,
    /// Tokens seen fewer times are replaced by the out-of-vocabulary token.
    pub min_count: usize,
    pub lr: f32,
    pub epochs: usize,
    pub negative: usize,
    pub seed: u64,
}

impl Default for SkipGramParams {
    fn default() -> Self {
        Self { dim: 100, window: 8, min_count: 8, lr: 0.05, epochs: 5, negative: 5, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    vocab: Vocabulary,
    dim: usize,
    vectors: Vec<f32>,
    norms: Vec<f64>,
    params: SkipGramParams,
}

/// Cosine of two vectors; 0 when either is zero.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt()
}

impl EmbeddingTable {
    /// Panics when `vectors.len() != vocab.len() * dim`.
    pub fn new(vocab: Vocabulary, dim: usize, vectors: Vec<f32>, params: SkipGramParams) -> Self {
        assert_eq!(vectors.len(), vocab.len() * dim, "vector block does not match vocabulary");
        let norms = vectors.chunks(dim.max(1)).map(norm).collect();
        Self { vocab, dim, vectors, norms, params }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn params(&self) -> &SkipGramParams {
        &self.params
    }

    pub fn row(&self, id: u32) -> &[f32] {
        &self.vectors[id as usize * self.dim..(id as usize + 1) * self.dim]
    }

    /// The row of `token`, or with `fallback` the out-of-vocabulary row.
    pub fn embed(&self, token: &NormalizedToken, fallback: bool) -> Result<&[f32], EmbeddingError> {
        let id = self
            .vocab
            .lookup(token)
            .or(if fallback { self.vocab.oov() } else { None })
            .ok_or_else(|| EmbeddingError::UnknownToken(token.to_string()))?;
        Ok(self.row(id))
    }

    /// Ids ranked by decreasing cosine to `query`, ties broken by token text,
    /// keeping the first `m` ids accepted by `keep`.
    pub fn rank(&self, query: &[f32], m: usize, keep: impl Fn(u32) -> bool) -> Vec<(u32, f64)> {
        let qn = norm(query);
        let mut scored: Vec<(u32, f64)> = (0..self.len() as u32)
            .filter(|id| keep(*id))
            .map(|id| {
                let n = self.norms[id as usize];
                let cos = if qn == 0.0 || n == 0.0 {
                    0.0
                } else {
                    let dot: f64 = query.iter().zip(self.row(id)).map(|(a, b)| *a as f64 * *b as f64).sum();
                    dot / (qn * n)
                };
                (id, cos)
            })
            .collect();
        let by_rank = |a: &(u32, f64), b: &(u32, f64)| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(Ordering::Equal)
                .then_with(|| self.vocab.token(a.0).cmp(&self.vocab.token(b.0)))
        };
        if m < scored.len() {
            scored.select_nth_unstable_by(m, by_rank);
            scored.truncate(m);
        }
        scored.sort_by(by_rank);
        scored
    }

    /// The `m` tokens closest to `token` by cosine, excluding itself.
    pub fn nearest_neighbors(&self, token: &NormalizedToken, m: usize) -> Result<Vec<NormalizedToken>, EmbeddingError> {
        let id = self.vocab.lookup(token).ok_or_else(|| EmbeddingError::UnknownToken(token.to_string()))?;
        if m >= self.len() {
            return Err(EmbeddingError::TooManyNeighbors { m, len: self.len() });
        }
        Ok(self
            .rank(self.row(id), m, |other| other != id)
            .into_iter()
            .map(|(i, _)| self.vocab.token(i).expect("ranked id").clone())
            .collect())
    }

    pub fn write(&self, mut w: impl Write) -> Result<(), EmbeddingError> {
        writeln!(w, "{MAGIC} {FORMAT_VERSION} {} {}", self.len(), self.dim)?;
        serde_json::to_writer(&mut w, &self.params).map_err(|e| EmbeddingError::Format(e.to_string()))?;
        writeln!(w)?;
        for t in self.vocab.tokens() {
            writeln!(w, "{t}")?;
        }
        for x in &self.vectors {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read(r: impl Read) -> Result<Self, EmbeddingError> {
        let bad = |m: &str| EmbeddingError::Format(m.to_string());
        let mut r = BufReader::new(r);
        let mut line = String::new();
        r.read_line(&mut line)?;
        let head: Vec<&str> = line.split_whitespace().collect();
        if head.len() != 4 || head[0] != MAGIC {
            return Err(bad("missing header"));
        }
        if head[1] != FORMAT_VERSION.to_string() {
            return Err(bad(&format!("unsupported version {}", head[1])));
        }
        let len: usize = head[2].parse().map_err(|_| bad("bad vocabulary size"))?;
        let dim: usize = head[3].parse().map_err(|_| bad("bad dimension"))?;
        line.clear();
        r.read_line(&mut line)?;
        let params: SkipGramParams = serde_json::from_str(line.trim()).map_err(|e| bad(&e.to_string()))?;
        let mut tokens = Vec::with_capacity(len);
        for _ in 0..len {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(bad("truncated vocabulary"));
            }
            tokens.push(NormalizedToken::new(line.trim_end_matches('\n')));
        }
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != len * dim * 4 {
            return Err(bad("vector block has the wrong size"));
        }
        let vectors = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok(Self::new(Vocabulary::new(tokens), dim, vectors, params))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EmbeddingError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EmbeddingError> {
        Self::read(File::open(path)?)
    }
}

/// One token sentence per function, in layout order.
pub fn token_corpus(functions: &[BinaryFunction]) -> Vec<Vec<NormalizedToken>> {
    functions
        .iter()
        .map(|f| f.linearize().into_iter().map(normalize_for_sequence).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn random_table(len: usize, dim: usize, seed: u64) -> EmbeddingTable {
        let mut r = rng::stream(seed, 1);
        let tokens = (0..len).map(|i| NormalizedToken::new(format!("t{i:03}"))).collect();
        let vectors = (0..len * dim).map(|_| r.gen_range(-1.0f32..1.0)).collect();
        EmbeddingTable::new(Vocabulary::new(tokens), dim, vectors, SkipGramParams::default())
    }

    /// Exhaustive cosine ranking computed independently of `rank`.
    fn brute_force(t: &EmbeddingTable, q: u32, m: usize) -> Vec<NormalizedToken> {
        let qv = t.row(q);
        let mut all: Vec<(f64, &NormalizedToken)> = (0..t.len() as u32)
            .filter(|i| *i != q)
            .map(|i| {
                let v = t.row(i);
                let dot: f64 = qv.iter().zip(v).map(|(a, b)| *a as f64 * *b as f64).sum();
                let nq: f64 = qv.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
                let nv: f64 = v.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
                (dot / (nq * nv), t.vocab().token(i).unwrap())
            })
            .collect();
        all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(b.1)));
        all.into_iter().take(m).map(|(_, t)| t.clone()).collect()
    }

    #[test]
    fn neighbours_match_exhaustive_scan() {
        let t = random_table(300, 16, 3);
        for q in (0..300).step_by(7) {
            let tok = t.vocab().token(q).unwrap().clone();
            for m in [1, 5, 40] {
                assert_eq!(t.nearest_neighbors(&tok, m).unwrap(), brute_force(&t, q, m));
            }
        }
        let tok = t.vocab().token(0).unwrap().clone();
        assert!(t.nearest_neighbors(&tok, 0).unwrap().is_empty());
        assert!(matches!(
            t.nearest_neighbors(&NormalizedToken::new("nope"), 3),
            Err(EmbeddingError::UnknownToken(_))
        ));
    }

    #[test]
    fn duplicated_vector_ranks_first() {
        let mut t = random_table(50, 8, 4);
        let src = t.row(10).to_vec();
        t.vectors[33 * 8..34 * 8].copy_from_slice(&src);
        let t = EmbeddingTable::new(t.vocab.clone(), 8, t.vectors.clone(), t.params.clone());
        let q = t.vocab().token(10).unwrap().clone();
        assert_eq!(t.nearest_neighbors(&q, 3).unwrap()[0].as_str(), "t033");
        assert!((cosine(t.row(10), t.row(10)) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn embed_with_and_without_fallback() {
        let tokens = vec![NormalizedToken::new("nop"), NormalizedToken::new(OOV_TOKEN)];
        let t = EmbeddingTable::new(Vocabulary::new(tokens), 2, vec![1.0, 2.0, 3.0, 4.0], SkipGramParams::default());
        assert_eq!(t.embed(&NormalizedToken::new("nop"), false).unwrap(), [1.0, 2.0]);
        assert_eq!(t.embed(&NormalizedToken::new("ret"), true).unwrap(), [3.0, 4.0]);
        assert!(t.embed(&NormalizedToken::new("ret"), false).is_err());
    }

    #[test]
    fn file_round_trip() {
        let t = random_table(20, 5, 8);
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        assert_eq!(EmbeddingTable::read(buf.as_slice()).unwrap(), t);
        buf[0] = b'X';
        assert!(EmbeddingTable::read(buf.as_slice()).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(48))]
        #[test]
        fn neighbours_agree_with_the_scan(seed in 0u64..1000, q in 0u32..120, m in 0usize..30) {
            let t = random_table(120, 6, seed);
            let tok = t.vocab().token(q).unwrap().clone();
            proptest::prop_assert_eq!(t.nearest_neighbors(&tok, m).unwrap(), brute_force(&t, q, m));
        }
    }
}
