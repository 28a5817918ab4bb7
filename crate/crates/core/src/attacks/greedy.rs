//! Greedy and Spatial Greedy.
//!
//! Each iteration scores every action `⟨slot, candidate⟩` by simulating it in
//! feature space, then commits the best one with probability `1 − ε` and a
//! uniformly random tested action otherwise. Ties go to the lowest slot, then
//! the lowest candidate index. Spatial Greedy then rebuilds the candidate
//! list from the neighbours of the top-k candidates, fresh random picks and
//! the best survivors.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::candidates::{CandidateSet, SpatialPool, Universe};
use super::{objective, AttackConfig, AttackError, AttackOutcome};
use crate::embedding::EmbeddingTable;
use crate::function::BinaryFunction;
use crate::models::{ModelInput, SimilarityModel};
use crate::perturbation::{apply_action_in_place, get_positions, Action};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpatialConfig {
    /// Candidate-set capacity.
    pub n: usize,
    /// Fraction of the set refilled with random instructions.
    pub r: f64,
    /// Neighbour budget, split evenly over the top-k candidates.
    pub c: usize,
    pub k: usize,
    pub epsilon: f64,
}

impl Default for SpatialConfig {
    fn default() -> Self {
        Self { n: 400, r: 0.75, c: 10, k: 5, epsilon: 0.1 }
    }
}

impl SpatialConfig {
    pub fn validate(&self) -> Result<(), AttackError> {
        let bad = |m: String| Err(AttackError::Config(m));
        if self.n == 0 || self.k == 0 {
            return bad("n and k must be positive".into());
        }
        if !(0.0..1.0).contains(&self.r) {
            return bad(format!("r must lie in [0, 1), got {}", self.r));
        }
        if (self.r * self.n as f64).floor() as usize + self.c > self.n {
            return bad(format!("r·n + c exceeds n ({} + {} > {})", self.r * self.n as f64, self.c, self.n));
        }
        check_epsilon(self.epsilon)
    }
}

fn check_epsilon(eps: f64) -> Result<(), AttackError> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(AttackError::Config(format!("epsilon must lie in [0, 1], got {eps}")));
    }
    Ok(())
}

enum Source<'a> {
    Fixed(CandidateSet),
    Spatial { pool: SpatialPool<'a>, current: Vec<usize>, cfg: SpatialConfig, rng: ChaCha8Rng },
}

impl Source<'_> {
    fn candidates(&self) -> CandidateSet {
        match self {
            Source::Fixed(c) => c.clone(),
            Source::Spatial { pool, current, .. } => {
                CandidateSet::new(current.iter().map(|u| pool.universe.instruction(*u).clone()).collect())
            }
        }
    }

    /// `best[j]`: best objective of candidate `j` over all slots.
    fn update(&mut self, best: &[f64]) {
        let Source::Spatial { pool, current, cfg, rng } = self else { return };
        let mut order: Vec<usize> = (0..best.len()).collect();
        order.sort_by(|a, b| best[*b].total_cmp(&best[*a]).then(a.cmp(b)));
        let top: Vec<usize> = order.iter().take(cfg.k).map(|j| current[*j]).collect();
        *current = pool.update(current, best, &top, cfg.r, cfg.c, cfg.n, rng);
    }
}

/// Greedy attack with a fixed candidate set.
pub fn greedy_attack(
    f1: &BinaryFunction,
    f2: &BinaryFunction,
    model: &SimilarityModel,
    cand: &CandidateSet,
    cfg: &AttackConfig,
    epsilon: f64,
) -> Result<AttackOutcome, AttackError> {
    check_epsilon(epsilon)?;
    run(f1, f2, model, cfg, epsilon, Source::Fixed(cand.clone()))
}

/// Spatial Greedy: candidates are drawn from the vocabulary of `table`.
pub fn spatial_greedy_attack(
    f1: &BinaryFunction,
    f2: &BinaryFunction,
    model: &SimilarityModel,
    table: &EmbeddingTable,
    scfg: &SpatialConfig,
    cfg: &AttackConfig,
) -> Result<AttackOutcome, AttackError> {
    scfg.validate()?;
    let universe = Universe::from_vocab(table.vocab());
    let pool = SpatialPool::new(&universe, table);
    let mut r = rng::stream(cfg.seed, 0x6361_6e64);
    let current = universe.sample(scfg.n, &mut r);
    run(f1, f2, model, cfg, scfg.epsilon, Source::Spatial { pool, current, cfg: *scfg, rng: r })
}

fn run(
    f1: &BinaryFunction,
    f2: &BinaryFunction,
    model: &SimilarityModel,
    cfg: &AttackConfig,
    epsilon: f64,
    mut source: Source<'_>,
) -> Result<AttackOutcome, AttackError> {
    cfg.validate()?;
    let ex = model.extractor();
    let plan = get_positions(f1, cfg.b, cfg.seed);
    let target = model.target(&ModelInput::of(&ex.extract(f2)));
    let mut view = ex.extract(f1);
    let mut adversarial = f1.clone();
    let initial_sim = model.sim_to(&ModelInput::of(&view), &target);
    let mut current = initial_sim;
    let mut r = rng::stream(cfg.seed, 0x6772_6479);
    let (mut trajectory, mut actions, mut traced) = (Vec::new(), Vec::new(), Vec::new());

    while !cfg.succeeded(current) && actions.len() < cfg.max_insertions {
        let cands = source.candidates();
        if cands.is_empty() {
            return Err(AttackError::EmptyCandidates);
        }
        let n = cands.len();
        let action = |i: usize| Action { position: i / n, instruction: cands.instructions[i % n].clone() };
        let sims: Vec<f64> = (0..cfg.b * n)
            .into_par_iter()
            .map(|i| model.sim_to(&ModelInput::of(&ex.simulate(&view, &plan, &action(i))), &target))
            .collect();
        let mut best = 0;
        for (i, s) in sims.iter().enumerate() {
            if objective(cfg.mode, *s) > objective(cfg.mode, sims[best]) {
                best = i;
            }
        }
        let chosen = if r.gen::<f64>() < 1.0 - epsilon { best } else { r.gen_range(0..sims.len()) };
        let a = action(chosen);
        apply_action_in_place(&mut adversarial, &plan, &a)?;
        ex.simulate_in_place(&mut view, &plan, &a);
        current = sims[chosen];
        trajectory.push(current);
        actions.push(a);
        if cfg.trace {
            traced.push(cands.clone());
        }
        if !cfg.succeeded(current) {
            let per_cand: Vec<f64> = (0..n)
                .map(|j| (0..cfg.b).map(|p| objective(cfg.mode, sims[p * n + j])).fold(f64::NEG_INFINITY, f64::max))
                .collect();
            source.update(&per_cand);
        }
    }
    Ok(AttackOutcome {
        success: cfg.succeeded(current),
        initial_sim,
        final_sim: current,
        inserted: actions.len(),
        iterations: trajectory.len(),
        trajectory,
        plan,
        actions,
        adversarial,
        candidates: traced,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::{gray_box_candidates, Mode};
    use crate::features::ModelFamily;
    use crate::function::synth::{generate, SynthConfig};
    use crate::models::tests::{all_models, small_table};
    use crate::perturbation::{apply_actions, verify_semantics_preserved};

    fn fixture() -> (Vec<BinaryFunction>, Vec<SimilarityModel>) {
        let fs = generate(&SynthConfig { families: 6, variants: 2, seed: 21, ..Default::default() });
        let models = all_models(2, &fs);
        (fs, models)
    }

    fn cfg(mode: Mode, tau: f64) -> AttackConfig {
        AttackConfig { mode, tau, b: 3, max_insertions: 4, seed: 5, trace: true }
    }

    /// Re-scores every action from scratch on the realized function.
    fn brute_force_argmax(
        m: &SimilarityModel,
        f: &BinaryFunction,
        f2: &BinaryFunction,
        out: &AttackOutcome,
        step: usize,
        mode: Mode,
        b: usize,
    ) -> Action {
        let prefix = apply_actions(f, &out.plan, &out.actions[..step]).unwrap();
        let mut best: Option<(f64, Action)> = None;
        for position in 0..b {
            for insn in &out.candidates[step].instructions {
                let a = Action { position, instruction: insn.clone() };
                let g = apply_actions(&prefix, &out.plan, [&a]).unwrap();
                let v = objective(mode, m.sim(&g, f2));
                if best.as_ref().is_none_or(|(bv, _)| v > *bv) {
                    best = Some((v, a));
                }
            }
        }
        best.unwrap().1
    }

    #[test]
    fn greedy_commits_the_exhaustive_argmax() {
        let (fs, models) = fixture();
        let universe = Universe::from_functions(&fs);
        for m in &models {
            let mut r = rng::stream(3, 3);
            let cand = CandidateSet::random(&universe, 8, &mut r);
            for (mode, f2) in [(Mode::Targeted, &fs[4]), (Mode::Untargeted, &fs[0])] {
                let c = AttackConfig { tau: if mode == Mode::Targeted { 0.999 } else { 0.001 }, ..cfg(mode, 0.5) };
                let out = greedy_attack(&fs[0], f2, m, &cand, &c, 0.0).unwrap();
                assert_eq!(out.iterations, c.max_insertions);
                for step in 0..out.iterations {
                    let expect = brute_force_argmax(m, &fs[0], f2, &out, step, mode, c.b);
                    assert_eq!(out.actions[step], expect, "{} step {step}", m.family());
                }
                for (t, s) in out.trajectory.iter().enumerate() {
                    let g = apply_actions(&fs[0], &out.plan, &out.actions[..=t]).unwrap();
                    assert_eq!(*s, m.sim(&g, f2));
                }
                assert!(verify_semantics_preserved(&fs[0], &out.adversarial));
            }
        }
    }

    #[test]
    fn satisfied_threshold_needs_no_insertions() {
        let (fs, models) = fixture();
        let cand = gray_box_candidates(ModelFamily::AcfgGnn).unwrap();
        let out = greedy_attack(&fs[1], &fs[1], &models[0], &cand, &cfg(Mode::Targeted, 0.8), 0.1).unwrap();
        assert!(out.success);
        assert_eq!((out.inserted, out.iterations), (0, 0));
        assert_eq!(out.adversarial, fs[1]);
    }

    #[test]
    fn spatial_keeps_capacity_and_is_thread_count_independent() {
        let (fs, _) = fixture();
        let table = small_table(&fs);
        let m = SimilarityModel::new(ModelFamily::SeqEmbed, 9, Some(table.clone())).unwrap();
        let scfg = SpatialConfig { n: 20, r: 0.5, c: 4, k: 2, epsilon: 0.3 };
        let c = AttackConfig { tau: 0.001, max_insertions: 6, ..cfg(Mode::Untargeted, 0.5) };
        let run_with = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| spatial_greedy_attack(&fs[2], &fs[2], &m, &table, &scfg, &c).unwrap())
        };
        let out = run_with(1);
        assert_eq!(out, run_with(3));
        assert_eq!(out.iterations, 6);
        let n = scfg.n.min(Universe::from_vocab(table.vocab()).len());
        assert!(out.candidates.iter().all(|cs| cs.len() == n));
        assert!(verify_semantics_preserved(&fs[2], &out.adversarial));
    }

    #[test]
    fn bad_configs_are_rejected() {
        let (fs, models) = fixture();
        let cand = gray_box_candidates(ModelFamily::AcfgGnn).unwrap();
        let bad = AttackConfig { b: 0, ..cfg(Mode::Targeted, 0.8) };
        assert!(matches!(greedy_attack(&fs[0], &fs[1], &models[0], &cand, &bad, 0.1), Err(AttackError::Config(_))));
        let bad = AttackConfig { tau: 1.0, ..cfg(Mode::Targeted, 0.8) };
        assert!(greedy_attack(&fs[0], &fs[1], &models[0], &cand, &bad, 0.1).is_err());
        assert!(greedy_attack(&fs[0], &fs[1], &models[0], &cand, &cfg(Mode::Targeted, 0.8), 1.5).is_err());
        assert!(SpatialConfig { n: 10, r: 0.75, c: 5, ..Default::default() }.validate().is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        #[test]
        fn greedy_respects_the_budget_and_preserves_semantics(
            seed in 0u64..1000,
            src in 0usize..12,
            dst in 0usize..12,
            family in 0usize..3,
            b in 1usize..5,
            budget in 1usize..6,
            epsilon in 0.0f64..=1.0,
            targeted in proptest::bool::ANY,
        ) {
            use std::sync::OnceLock;
            static FIXTURE: OnceLock<(Vec<BinaryFunction>, Vec<SimilarityModel>)> = OnceLock::new();
            let (fs, models) = FIXTURE.get_or_init(fixture);
            let m = &models[family];
            let mode = if targeted { Mode::Targeted } else { Mode::Untargeted };
            let c = AttackConfig { mode, tau: 0.5, b, max_insertions: budget, seed, trace: false };
            let cand = CandidateSet::random(&Universe::from_functions(fs), 6, &mut rng::stream(seed, 1));
            let out = greedy_attack(&fs[src], &fs[dst], m, &cand, &c, epsilon).unwrap();
            proptest::prop_assert!(out.inserted <= budget);
            proptest::prop_assert_eq!(out.iterations, out.inserted);
            proptest::prop_assert_eq!(out.trajectory.len(), out.iterations);
            proptest::prop_assert_eq!(crate::perturbation::inserted_count(&out.adversarial), out.inserted);
            proptest::prop_assert!(out.success || out.inserted == budget);
            proptest::prop_assert_eq!(out.success, c.succeeded(out.final_sim));
            proptest::prop_assert!(verify_semantics_preserved(&fs[src], &out.adversarial));
        }
    }
}
