//! Differentiable surrogate similarity models.
//!
//! Three families share one interface: `acfg-gnn` (structure2vec over
//! attributed CFGs, cosine comparator), `graph-matcher` (cross-graph
//! attention over mnemonic bags, distance comparator) and `seq-embed`
//! (bidirectional RNN with self-attention over instruction embeddings,
//! cosine comparator). Every score lies in `[0, 1]`. Gradients are written
//! out by hand for each family.

pub mod acfg_gnn;
pub mod graph_matcher;
mod io;
pub mod linalg;
mod loss;
pub mod seq_embed;
mod train;

use std::sync::Arc;

use crate::embedding::EmbeddingTable;
use crate::features::{Extractor, FeatureView, ModelFamily, SeqItem};
use crate::function::BinaryFunction;
use linalg::{cosine, cosine_with_grad, Params};

pub use io::{read_manifest, WeightManifest, WEIGHTS_MAGIC, WEIGHTS_VERSION};
pub use loss::{loss_and_gradient, perturbed_sim, Delta, DeltaMap, LossSpec, Mode, Norm, PerturbedInput};
pub use train::{labeled_pairs, train_siamese, LabeledPair, TrainConfig, TrainReport};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("the seq-embed family needs an embedding table")]
    MissingEmbeddings,
    #[error("weights file: {0}")]
    Io(#[from] std::io::Error),
    #[error("weights file: {0}")]
    Format(String),
}

/// Node rows plus undirected adjacency (edge multiplicity kept).
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput {
    pub rows: Vec<Vec<f64>>,
    pub adj: Vec<Vec<usize>>,
}

impl GraphInput {
    pub fn new(rows: Vec<Vec<f64>>, edges: &[(u32, u32)]) -> Self {
        let mut adj = vec![Vec::new(); rows.len()];
        for &(a, b) in edges {
            adj[a as usize].push(b as usize);
            adj[b as usize].push(a as usize);
        }
        Self { rows, adj }
    }
}

/// Token ids and caller-supplied vectors, in sequence order.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqInput {
    pub items: Vec<SeqItem>,
    pub free: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelInput {
    Graph(GraphInput),
    Seq(SeqInput),
}

impl ModelInput {
    pub fn of(view: &FeatureView) -> Self {
        match view {
            FeatureView::Acfg(v) => Self::Graph(GraphInput::new(
                v.nodes.iter().map(|r| r.iter().map(|x| *x as f64).collect()).collect(),
                &v.layout.edges,
            )),
            FeatureView::Bag(v) => Self::Graph(GraphInput::new(
                v.bags.iter().map(|r| r.iter().map(|x| *x as f64).collect()).collect(),
                &v.layout.edges,
            )),
            FeatureView::Seq(v) => {
                Self::Seq(SeqInput { items: v.tokens().iter().map(|t| SeqItem::Token(*t)).collect(), free: Vec::new() })
            }
        }
    }

    fn graph(&self) -> &GraphInput {
        match self {
            Self::Graph(g) => g,
            Self::Seq(_) => panic!("graph model given a sequence input"),
        }
    }

    fn seq(&self) -> &SeqInput {
        match self {
            Self::Seq(s) => s,
            Self::Graph(_) => panic!("sequence model given a graph input"),
        }
    }
}

/// The fixed side of repeated comparisons: an embedding for cosine
/// families, the input itself for the graph matcher.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Embedding(Vec<f64>),
    Input(GraphInput),
}

#[derive(Debug, Clone)]
struct SeqParts {
    table: Arc<EmbeddingTable>,
    proj: Vec<[Vec<f64>; 2]>,
}

#[derive(Debug, Clone)]
pub struct SimilarityModel {
    family: ModelFamily,
    seed: u64,
    params: Params,
    seq: Option<SeqParts>,
}

/// Maps a cosine to `[0, 1]`.
fn cos_to_sim(c: f64) -> f64 {
    ((1.0 + c) / 2.0).clamp(0.0, 1.0)
}

impl SimilarityModel {
    /// A model with seeded random weights. `table` is required for
    /// `seq-embed` and ignored otherwise.
    pub fn new(family: ModelFamily, seed: u64, table: Option<Arc<EmbeddingTable>>) -> Result<Self, ModelError> {
        let specs = match family {
            ModelFamily::AcfgGnn => acfg_gnn::specs(),
            ModelFamily::GraphMatcher => graph_matcher::specs(),
            ModelFamily::SeqEmbed => seq_embed::specs(table.as_ref().ok_or(ModelError::MissingEmbeddings)?.dim()),
        };
        Self::with_params(family, seed, Params::init(specs, seed), table)
    }

    pub(crate) fn with_params(
        family: ModelFamily,
        seed: u64,
        params: Params,
        table: Option<Arc<EmbeddingTable>>,
    ) -> Result<Self, ModelError> {
        let seq = match family {
            ModelFamily::SeqEmbed => {
                let table = table.ok_or(ModelError::MissingEmbeddings)?;
                Some(SeqParts { proj: seq_embed::projection_cache(&params, &table), table })
            }
            _ => None,
        };
        Ok(Self { family, seed, params, seq })
    }

    pub fn family(&self) -> ModelFamily {
        self.family
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn table(&self) -> Option<&Arc<EmbeddingTable>> {
        self.seq.as_ref().map(|s| &s.table)
    }

    /// Replaces the weights, keeping the layout.
    pub fn set_params(&mut self, params: Params) {
        assert_eq!(params.specs(), self.params.specs(), "parameter layout changed");
        self.params = params;
        if let Some(s) = &mut self.seq {
            s.proj = seq_embed::projection_cache(&self.params, &s.table);
        }
    }

    pub fn extractor(&self) -> Extractor {
        match self.family {
            ModelFamily::AcfgGnn => Extractor::Acfg,
            ModelFamily::GraphMatcher => Extractor::Bag,
            ModelFamily::SeqEmbed => Extractor::Seq(Arc::new(self.seq.as_ref().expect("seq parts").table.vocab().clone())),
        }
    }

    /// Embedding of a cosine-family input.
    pub fn embed(&self, input: &ModelInput) -> Vec<f64> {
        match self.family {
            ModelFamily::AcfgGnn => acfg_gnn::forward(&self.params, input.graph()).0,
            ModelFamily::SeqEmbed => {
                let s = self.seq.as_ref().expect("seq parts");
                seq_embed::forward(&self.params, &s.table, &s.proj, input.seq()).0
            }
            ModelFamily::GraphMatcher => panic!("the graph matcher has no standalone embedding"),
        }
    }

    pub fn target(&self, input: &ModelInput) -> Target {
        match self.family {
            ModelFamily::GraphMatcher => Target::Input(input.graph().clone()),
            _ => Target::Embedding(self.embed(input)),
        }
    }

    pub fn sim_to(&self, input: &ModelInput, target: &Target) -> f64 {
        match target {
            Target::Embedding(e) => cos_to_sim(cosine(&self.embed(input), e)),
            Target::Input(g) => graph_matcher::forward(&self.params, input.graph(), g).0,
        }
    }

    pub fn sim_inputs(&self, a: &ModelInput, b: &ModelInput) -> f64 {
        self.sim_to(a, &self.target(b))
    }

    pub fn sim_views(&self, a: &FeatureView, b: &FeatureView) -> f64 {
        self.sim_inputs(&ModelInput::of(a), &ModelInput::of(b))
    }

    pub fn sim(&self, f1: &BinaryFunction, f2: &BinaryFunction) -> f64 {
        let ex = self.extractor();
        self.sim_views(&ex.extract(f1), &ex.extract(f2))
    }

    /// Similarity to `target` and its gradient with respect to `input`: per
    /// node row for graph inputs, per free vector for sequence inputs.
    pub fn sim_and_input_grad(&self, input: &ModelInput, target: &Target) -> (f64, Vec<Vec<f64>>) {
        let mut scratch = self.params.zeros_like();
        match (self.family, target) {
            (ModelFamily::GraphMatcher, Target::Input(g)) => {
                let a = input.graph();
                let (sim, cache) = graph_matcher::forward(&self.params, a, g);
                let [da, _] = graph_matcher::backward(&self.params, [a, g], &cache, 1.0, &mut scratch);
                (sim, da)
            }
            (ModelFamily::AcfgGnn, Target::Embedding(t)) => {
                let g = input.graph();
                let (e, cache) = acfg_gnn::forward(&self.params, g);
                let (c, dc, _) = cosine_with_grad(&e, t);
                let de: Vec<f64> = dc.iter().map(|x| 0.5 * x).collect();
                (cos_to_sim(c), acfg_gnn::backward(&self.params, g, &cache, &de, &mut scratch))
            }
            (ModelFamily::SeqEmbed, Target::Embedding(t)) => {
                let s = self.seq.as_ref().expect("seq parts");
                let (e, cache) = seq_embed::forward(&self.params, &s.table, &s.proj, input.seq());
                let (c, dc, _) = cosine_with_grad(&e, t);
                let de: Vec<f64> = dc.iter().map(|x| 0.5 * x).collect();
                let dfree = seq_embed::backward(&self.params, &s.table, input.seq(), &cache, &de, &mut scratch, false);
                (cos_to_sim(c), dfree)
            }
            _ => panic!("target does not match the model family"),
        }
    }

    /// Similarity of a pair and the parameter gradient of `dloss(sim)`.
    pub fn pair_param_grad(&self, a: &ModelInput, b: &ModelInput, dloss: impl Fn(f64) -> f64) -> (f64, Params) {
        let mut dp = self.params.zeros_like();
        let sim = match self.family {
            ModelFamily::GraphMatcher => {
                let (ga, gb) = (a.graph(), b.graph());
                let (sim, cache) = graph_matcher::forward(&self.params, ga, gb);
                graph_matcher::backward(&self.params, [ga, gb], &cache, dloss(sim), &mut dp);
                sim
            }
            ModelFamily::AcfgGnn => {
                let (ea, ca) = acfg_gnn::forward(&self.params, a.graph());
                let (eb, cb) = acfg_gnn::forward(&self.params, b.graph());
                let (c, da, db) = cosine_with_grad(&ea, &eb);
                let sim = cos_to_sim(c);
                let k = 0.5 * dloss(sim);
                let scale = |v: Vec<f64>| v.into_iter().map(|x| k * x).collect::<Vec<_>>();
                acfg_gnn::backward(&self.params, a.graph(), &ca, &scale(da), &mut dp);
                acfg_gnn::backward(&self.params, b.graph(), &cb, &scale(db), &mut dp);
                sim
            }
            ModelFamily::SeqEmbed => {
                let s = self.seq.as_ref().expect("seq parts");
                let (ea, ca) = seq_embed::forward(&self.params, &s.table, &s.proj, a.seq());
                let (eb, cb) = seq_embed::forward(&self.params, &s.table, &s.proj, b.seq());
                let (c, da, db) = cosine_with_grad(&ea, &eb);
                let sim = cos_to_sim(c);
                let k = 0.5 * dloss(sim);
                let scale = |v: Vec<f64>| v.into_iter().map(|x| k * x).collect::<Vec<_>>();
                seq_embed::backward(&self.params, &s.table, a.seq(), &ca, &scale(da), &mut dp, true);
                seq_embed::backward(&self.params, &s.table, b.seq(), &cb, &scale(db), &mut dp, true);
                sim
            }
        };
        (sim, dp)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::embedding::{token_corpus, train_skipgram, SkipGramParams};
    use crate::function::synth::{generate, SynthConfig};
    use crate::rng;
    use rand::Rng;

    pub(crate) fn small_table(fs: &[BinaryFunction]) -> Arc<EmbeddingTable> {
        let p = SkipGramParams { dim: 12, min_count: 2, epochs: 1, seed: 3, ..Default::default() };
        Arc::new(train_skipgram(&token_corpus(fs), &p).unwrap())
    }

    pub(crate) fn all_models(seed: u64, fs: &[BinaryFunction]) -> Vec<SimilarityModel> {
        let table = small_table(fs);
        ModelFamily::ALL.iter().map(|f| SimilarityModel::new(*f, seed, Some(table.clone())).unwrap()).collect()
    }

    #[test]
    fn identity_range_and_symmetry() {
        let fs = generate(&SynthConfig { families: 10, variants: 2, seed: 2, ..Default::default() });
        for m in all_models(11, &fs) {
            for w in fs.windows(2) {
                let s = m.sim(&w[0], &w[1]);
                assert!((0.0..=1.0).contains(&s), "{} {s}", m.family());
                assert_eq!(s, m.sim(&w[1], &w[0]), "{}", m.family());
            }
            for f in &fs {
                let s = m.sim(f, f);
                match m.family() {
                    ModelFamily::GraphMatcher => assert!(s >= 0.99),
                    _ => assert_eq!(s, 1.0),
                }
            }
        }
    }

    #[test]
    fn seq_projection_cache_matches_free_vectors() {
        let fs = generate(&SynthConfig { families: 4, variants: 2, seed: 5, ..Default::default() });
        let models = all_models(3, &fs);
        let m = &models[2];
        let table = m.table().unwrap().clone();
        let ModelInput::Seq(s) = ModelInput::of(&m.extractor().extract(&fs[0])) else { unreachable!() };
        let free: Vec<Vec<f64>> = s
            .items
            .iter()
            .map(|it| match it {
                SeqItem::Token(id) if (*id as usize) < table.len() => table.row(*id).iter().map(|x| *x as f64).collect(),
                _ => vec![0.0; table.dim()],
            })
            .collect();
        let as_free = SeqInput { items: (0..free.len()).map(SeqItem::Free).collect(), free };
        assert_eq!(m.embed(&ModelInput::Seq(s)), m.embed(&ModelInput::Seq(as_free)));
    }

    fn rel_err(a: f64, n: f64) -> f64 {
        (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let fs = generate(&SynthConfig { families: 6, variants: 2, seed: 8, ..Default::default() });
        let mut r = rng::stream(4, 4);
        for m in all_models(21, &fs) {
            let ex = m.extractor();
            let a = ModelInput::of(&ex.extract(&fs[0]));
            let b = ModelInput::of(&ex.extract(&fs[3]));
            let loss = |m: &SimilarityModel| (m.sim_inputs(&a, &b) - 0.3).powi(2);
            let (_, grad) = m.pair_param_grad(&a, &b, |s| 2.0 * (s - 0.3));
            let mut worst: f64 = 0.0;
            for _ in 0..40 {
                let i = r.gen_range(0..grad.len());
                let h = 1e-4;
                let mut plus = m.clone();
                let mut pp = m.params().clone();
                pp.data[i] += h;
                plus.set_params(pp);
                let mut minus = m.clone();
                let mut pm = m.params().clone();
                pm.data[i] -= h;
                minus.set_params(pm);
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
                worst = worst.max(rel_err(grad.data[i], numeric));
            }
            assert!(worst <= 1e-4, "{}: {worst}", m.family());
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn similarity_is_bounded_symmetric_and_reflexive(seed in 0u64..1000, i in 0usize..12, j in 0usize..12) {
            use std::sync::OnceLock;
            static FIXTURE: OnceLock<(Vec<BinaryFunction>, Arc<EmbeddingTable>)> = OnceLock::new();
            let (fs, table) = FIXTURE.get_or_init(|| {
                let fs = generate(&SynthConfig { families: 6, variants: 2, seed: 8, ..Default::default() });
                let table = small_table(&fs);
                (fs, table)
            });
            for family in ModelFamily::ALL {
                let m = SimilarityModel::new(family, seed, Some(table.clone())).unwrap();
                let s = m.sim(&fs[i], &fs[j]);
                proptest::prop_assert!((0.0..=1.0).contains(&s));
                proptest::prop_assert_eq!(s, m.sim(&fs[j], &fs[i]));
                if family != ModelFamily::GraphMatcher {
                    proptest::prop_assert_eq!(m.sim(&fs[i], &fs[i]), 1.0);
                }
            }
        }
    }
}
