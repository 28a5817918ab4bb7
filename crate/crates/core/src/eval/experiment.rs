//! The attack grid: one cell per (attack, setting), every pair of the
//! dataset attacked in parallel, results written under the output directory.
//!
//! Files: `pairs_<cell>.csv`, `sweep_<cell>.csv`, `aggregate.json`,
//! `aggregate.csv` and `manifest.json`. The manifest lists finished cells so
//! an interrupted run resumes where it stopped.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{build_dataset, DatasetKind, DatasetSpec, Pair};
use super::metrics::{compute_metrics, threshold_sweep, MetricsReport, OutcomeSummary};
use super::thresholds::{DEFAULT_TAU_T, DEFAULT_TAU_U};
use super::{EvalError, Setting};
use crate::attacks::{
    gcam_attack, gray_box_candidates, greedy_attack, spatial_greedy_attack, AttackConfig, AttackOutcome, CandidateSet,
    GcamConfig, Mode, SpatialConfig, Universe,
};
use crate::embedding::EmbeddingTable;
use crate::features::ModelFamily;
use crate::function::{load_corpus, BinaryFunction};
use crate::models::SimilarityModel;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    Greedy,
    GrayboxGreedy,
    Spatial,
    Gcam,
}

impl AttackKind {
    pub const ALL: [AttackKind; 4] = [AttackKind::Greedy, AttackKind::GrayboxGreedy, AttackKind::Spatial, AttackKind::Gcam];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Greedy => "greedy",
            Self::GrayboxGreedy => "graybox-greedy",
            Self::Spatial => "spatial",
            Self::Gcam => "gcam",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttackKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|k| k.as_str() == s).ok_or_else(|| format!("unknown attack `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub attacks: Vec<AttackKind>,
    pub mode: Mode,
    pub model: ModelFamily,
    pub dataset: DatasetKind,
    pub settings: Vec<Setting>,
    /// Success threshold; 0.8 (targeted) or 0.5 (untargeted) when absent.
    pub tau: Option<f64>,
    pub epsilon: f64,
    pub r: f64,
    pub c: usize,
    pub topk: usize,
    /// Candidate-set size of the greedy attacks.
    pub cand: usize,
    pub pairs: usize,
    pub seed: u64,
    /// GCAM iterations; the per-family default when absent.
    pub gcam_iters: Option<usize>,
    pub corpus: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn new(model: ModelFamily, mode: Mode, dataset: DatasetKind, out: impl Into<PathBuf>) -> Self {
        let s = SpatialConfig::default();
        Self {
            attacks: vec![AttackKind::Spatial],
            mode,
            model,
            dataset,
            settings: Setting::ALL.to_vec(),
            tau: None,
            epsilon: s.epsilon,
            r: s.r,
            c: s.c,
            topk: s.k,
            cand: s.n,
            pairs: 50,
            seed: 0,
            gcam_iters: None,
            corpus: None,
            embeddings: None,
            weights: None,
            out: out.into(),
        }
    }

    pub fn tau(&self) -> f64 {
        self.tau.unwrap_or(match self.mode {
            Mode::Targeted => DEFAULT_TAU_T,
            Mode::Untargeted => DEFAULT_TAU_U,
        })
    }

    fn spatial(&self) -> SpatialConfig {
        SpatialConfig { n: self.cand, r: self.r, c: self.c, k: self.topk, epsilon: self.epsilon }
    }

    pub fn validate(&self, fixtures: &Fixtures) -> Result<(), EvalError> {
        if self.attacks.is_empty() {
            return Err(EvalError::config("attacks", "at least one attack is required"));
        }
        if self.settings.is_empty() {
            return Err(EvalError::config("settings", "at least one setting is required"));
        }
        let tau = self.tau();
        if !(tau > 0.0 && tau < 1.0) {
            return Err(EvalError::config("tau", format!("must lie in (0, 1), got {tau}")));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(EvalError::config("epsilon", format!("must lie in [0, 1], got {}", self.epsilon)));
        }
        if (self.dataset == DatasetKind::Untarg) != (self.mode == Mode::Untargeted) {
            return Err(EvalError::config("dataset", "untargeted attacks run on the untarg dataset and only there"));
        }
        if self.pairs == 0 {
            return Err(EvalError::config("pairs", "must be positive"));
        }
        if self.cand == 0 {
            return Err(EvalError::config("cand", "must be positive"));
        }
        if fixtures.model.family() != self.model {
            return Err(EvalError::config("model", "the loaded weights belong to another family"));
        }
        for &a in &self.attacks {
            self.validate_attack(a, fixtures)?;
        }
        Ok(())
    }

    /// Checks what `attack` needs from the configuration and fixtures.
    pub fn validate_attack(&self, attack: AttackKind, fixtures: &Fixtures) -> Result<(), EvalError> {
        match attack {
            AttackKind::Spatial => {
                if fixtures.table.is_none() {
                    return Err(EvalError::config("embeddings", "spatial greedy needs an embedding table"));
                }
                self.spatial().validate().map_err(|e| EvalError::config("r", e.to_string()))?;
            }
            AttackKind::GrayboxGreedy => {
                gray_box_candidates(self.model).map_err(|e| EvalError::config("attacks", e.to_string()))?;
            }
            AttackKind::Greedy | AttackKind::Gcam => {}
        }
        Ok(())
    }

    fn cell_name(&self, attack: AttackKind, setting: Setting) -> String {
        format!("{attack}_{}_{}_{}_{setting}", self.model, self.dataset, self.mode)
    }
}

/// Corpus, model and optional embedding table of a run.
#[derive(Debug, Clone)]
pub struct Fixtures {
    pub corpus: Vec<BinaryFunction>,
    pub model: SimilarityModel,
    pub table: Option<Arc<EmbeddingTable>>,
}

/// Loads the files named in `cfg`. Without weights the model gets seeded
/// random weights.
pub fn load_fixtures(cfg: &RunConfig) -> Result<Fixtures, EvalError> {
    let path = cfg.corpus.as_ref().ok_or_else(|| EvalError::config("corpus", "a corpus file is required"))?;
    let corpus = load_corpus(path)?;
    let table = match &cfg.embeddings {
        Some(p) => Some(Arc::new(EmbeddingTable::load(p)?)),
        None => None,
    };
    if cfg.model == ModelFamily::SeqEmbed && table.is_none() {
        return Err(EvalError::config("embeddings", "the seq-embed model needs an embedding table"));
    }
    let model = match &cfg.weights {
        Some(p) => SimilarityModel::load(p, table.clone())?,
        None => SimilarityModel::new(cfg.model, cfg.seed, table.clone())?,
    };
    Ok(Fixtures { corpus, model, table })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub pair_id: usize,
    pub source: String,
    pub target: String,
    pub initial_sim: f64,
    pub final_sim: f64,
    pub inserted: usize,
    pub iterations: usize,
    pub success: bool,
}

impl PairRow {
    fn summary(&self) -> OutcomeSummary {
        OutcomeSummary { initial_sim: self.initial_sim, final_sim: self.final_sim, inserted: self.inserted }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellReport {
    pub cell: String,
    pub attack: AttackKind,
    pub model: ModelFamily,
    pub dataset: DatasetKind,
    pub setting: Setting,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    /// The run configuration without `out`, so a moved directory resumes and
    /// reports do not depend on where they were written.
    config: serde_json::Value,
    completed: Vec<String>,
}

fn fingerprint(cfg: &RunConfig) -> Result<serde_json::Value, EvalError> {
    let mut v = serde_json::to_value(cfg)?;
    if let Some(o) = v.as_object_mut() {
        o.remove("out");
    }
    Ok(v)
}

#[derive(Serialize)]
struct AggregateRow<'a> {
    cell: &'a str,
    attack: AttackKind,
    model: ModelFamily,
    dataset: DatasetKind,
    setting: Setting,
    mode: Mode,
    tau: f64,
    total: usize,
    successes: usize,
    a_rate: f64,
    m_size: f64,
    a_sim: f64,
    n_change: f64,
}

fn pair_seed(seed: u64, id: usize) -> u64 {
    seed ^ (id as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn universe(fx: &Fixtures) -> Universe {
    match &fx.table {
        Some(t) => Universe::from_vocab(t.vocab()),
        None => Universe::from_functions(&fx.corpus),
    }
}

fn attack_pair(
    cfg: &RunConfig,
    fx: &Fixtures,
    universe: &Universe,
    attack: AttackKind,
    setting: Setting,
    pair: &Pair,
) -> Result<AttackOutcome, EvalError> {
    let (f1, f2) = (&fx.corpus[pair.source], &fx.corpus[pair.target]);
    let seed = pair_seed(cfg.seed, pair.id);
    let acfg = AttackConfig {
        mode: cfg.mode,
        tau: cfg.tau(),
        b: setting.b(),
        max_insertions: setting.delta_bar(),
        seed,
        trace: false,
    };
    let m = &fx.model;
    Ok(match attack {
        AttackKind::Greedy => {
            let cand = CandidateSet::random(universe, cfg.cand, &mut rng::stream(seed, 0x6772_6364));
            greedy_attack(f1, f2, m, &cand, &acfg, cfg.epsilon)?
        }
        AttackKind::GrayboxGreedy => greedy_attack(f1, f2, m, &gray_box_candidates(cfg.model)?, &acfg, cfg.epsilon)?,
        AttackKind::Spatial => {
            let table = fx.table.as_ref().expect("validated");
            spatial_greedy_attack(f1, f2, m, table, &cfg.spatial(), &acfg)?
        }
        AttackKind::Gcam => {
            let mut g = GcamConfig::for_family(cfg.model);
            if let Some(iters) = cfg.gcam_iters {
                g.iters = iters;
            }
            gcam_attack(f1, f2, m, &g, &acfg)?
        }
    })
}

/// Attacks one corpus pair outside a grid, seeded as pair `id` of a run.
pub fn attack_one(
    cfg: &RunConfig,
    fx: &Fixtures,
    attack: AttackKind,
    setting: Setting,
    id: usize,
    source: usize,
    target: usize,
) -> Result<AttackOutcome, EvalError> {
    let n = fx.corpus.len();
    if source >= n || target >= n {
        return Err(EvalError::config("pair", format!("index out of range for a corpus of {n}")));
    }
    if fx.model.family() != cfg.model {
        return Err(EvalError::config("model", "the loaded weights belong to another family"));
    }
    cfg.validate_attack(attack, fx)?;
    attack_pair(cfg, fx, &universe(fx), attack, setting, &Pair { id, source, target })
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_rows(path: &Path) -> Result<Vec<PairRow>, EvalError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), EvalError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

/// Runs every cell of the grid and writes the reports. Cells recorded as
/// finished in an existing manifest for the same configuration are read back
/// instead of rerun.
pub fn run_experiment(cfg: &RunConfig, fx: &Fixtures) -> Result<Vec<CellReport>, EvalError> {
    cfg.validate(fx)?;
    fs::create_dir_all(&cfg.out)?;
    let manifest_path = cfg.out.join("manifest.json");
    let mut manifest = Manifest { config: fingerprint(cfg)?, completed: Vec::new() };
    if manifest_path.exists() {
        let old: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
        if old.config != manifest.config {
            return Err(EvalError::config("out", "the directory holds results of a different configuration"));
        }
        manifest = old;
    }
    let pairs = build_dataset(&fx.corpus, &DatasetSpec::new(cfg.dataset, cfg.pairs, cfg.seed))?;
    let universe = universe(fx);
    let mut reports = Vec::new();
    for &attack in &cfg.attacks {
        for &setting in &cfg.settings {
            let cell = cfg.cell_name(attack, setting);
            let pairs_path = cfg.out.join(format!("pairs_{cell}.csv"));
            let rows = if manifest.completed.contains(&cell) && pairs_path.exists() {
                log::info!("{cell}: already complete");
                read_rows(&pairs_path)?
            } else {
                log::info!("{cell}: attacking {} pairs", pairs.len());
                let outcomes: Vec<Result<AttackOutcome, EvalError>> =
                    pairs.par_iter().map(|p| attack_pair(cfg, fx, &universe, attack, setting, p)).collect();
                let mut rows = Vec::with_capacity(pairs.len());
                for (p, o) in pairs.iter().zip(outcomes) {
                    let o = o?;
                    rows.push(PairRow {
                        pair_id: p.id,
                        source: fx.corpus[p.source].name.clone(),
                        target: fx.corpus[p.target].name.clone(),
                        initial_sim: o.initial_sim,
                        final_sim: o.final_sim,
                        inserted: o.inserted,
                        iterations: o.iterations,
                        success: o.success,
                    });
                }
                write_csv(&pairs_path, &rows)?;
                manifest.completed.push(cell.clone());
                write_json(&manifest_path, &manifest)?;
                rows
            };
            let summaries: Vec<OutcomeSummary> = rows.iter().map(PairRow::summary).collect();
            write_csv(&cfg.out.join(format!("sweep_{cell}.csv")), threshold_sweep(&summaries, cfg.mode))?;
            let metrics = compute_metrics(&summaries, cfg.tau(), cfg.mode)?;
            log::info!("{cell}: A-rate {:.2}%", metrics.a_rate);
            reports.push(CellReport { cell, attack, model: cfg.model, dataset: cfg.dataset, setting, metrics });
        }
    }
    write_json(&cfg.out.join("aggregate.json"), &reports)?;
    write_csv(
        &cfg.out.join("aggregate.csv"),
        reports.iter().map(|r| AggregateRow {
            cell: &r.cell,
            attack: r.attack,
            model: r.model,
            dataset: r.dataset,
            setting: r.setting,
            mode: r.metrics.mode,
            tau: r.metrics.tau,
            total: r.metrics.total,
            successes: r.metrics.successes,
            a_rate: r.metrics.a_rate,
            m_size: r.metrics.m_size,
            a_sim: r.metrics.a_sim,
            n_change: r.metrics.n_change,
        }),
    )?;
    write_json(&manifest_path, &manifest)?;
    Ok(reports)
}
