//! Gradient-based attack: projected gradient descent on a feature-space
//! perturbation of empty dead branches, rounded back to instructions.

use std::sync::OnceLock;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::candidates::{acfg_representatives, class_representatives, SpatialPool, Universe};
use super::{objective, AttackConfig, AttackError, AttackOutcome};
use crate::asm::Instruction;
use crate::features::ModelFamily;
use crate::function::BinaryFunction;
use crate::models::{
    loss_and_gradient, Delta, DeltaMap, LossSpec, ModelInput, Norm, PerturbedInput, SimilarityModel, Target,
};
use crate::perturbation::{apply_actions, get_positions, Action, InsertionPlan};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GcamConfig {
    pub iters: usize,
    pub step: f64,
    /// Free instruction positions per dead branch (sequence family).
    pub per_slot: usize,
    /// Iterations between roundings checked against the model.
    pub eval_every: usize,
    pub eps_reg: f64,
    pub norm: Norm,
}

impl GcamConfig {
    /// Defaults: 2000 iterations for `acfg-gnn`, 500 otherwise.
    pub fn for_family(family: ModelFamily) -> Self {
        let iters = if family == ModelFamily::AcfgGnn { 2000 } else { 500 };
        Self { iters, step: 0.1, per_slot: 3, eval_every: 10, eps_reg: 0.01, norm: Norm::L2 }
    }

    fn validate(&self) -> Result<(), AttackError> {
        if !(self.step.is_finite() && self.step > 0.0) || !self.eps_reg.is_finite() || self.eps_reg < 0.0 {
            return Err(AttackError::Config("step must be positive and eps_reg non-negative".into()));
        }
        if self.per_slot == 0 || self.eval_every == 0 {
            return Err(AttackError::Config("per_slot and eval_every must be positive".into()));
        }
        Ok(())
    }
}

/// Component-wise round-half-up, clamped at zero.
pub fn round_perturbation_counts(delta: &Delta) -> Vec<Vec<u32>> {
    (0..delta.rows)
        .map(|k| delta.row(k).iter().map(|x| (x + 0.5).floor().max(0.0) as u32).collect())
        .collect()
}

/// Each row mapped to the universe member of the nearest vocabulary row by
/// cosine; when the nearest token is not insertable, the nearest insertable
/// one is used instead.
pub fn round_perturbation_embeddings(delta: &Delta, pool: &SpatialPool<'_>) -> Vec<usize> {
    (0..delta.rows)
        .map(|k| {
            let q: Vec<f32> = delta.row(k).iter().map(|x| *x as f32).collect();
            let nearest = pool.table.rank(&q, 1, |_| true);
            match nearest.first().and_then(|(id, _)| pool.member_of(*id)) {
                Some(u) => u,
                None => {
                    let safe = pool.table.rank(&q, 1, |id| pool.member_of(id).is_some());
                    pool.member_of(safe[0].0).expect("kept members")
                }
            }
        })
        .collect()
}

fn class_reps() -> &'static [Instruction] {
    static REPS: OnceLock<Vec<Instruction>> = OnceLock::new();
    REPS.get_or_init(class_representatives)
}

/// Realizes integer counts: `n` copies of the representative of every
/// column, slot by slot.
pub fn count_actions(map: &DeltaMap, counts: &[Vec<u32>], slots: &[usize]) -> Vec<Action> {
    let acfg = acfg_representatives();
    let reps: &[Instruction] = match map {
        DeltaMap::Acfg { .. } => &acfg,
        DeltaMap::Bag { .. } => class_reps(),
        DeltaMap::Free { .. } => unreachable!("count rounding on a sequence perturbation"),
    };
    let mut out = Vec::new();
    for (row, slot) in counts.iter().zip(slots) {
        for (n, insn) in row.iter().zip(reps) {
            out.extend((0..*n).map(|_| Action { position: *slot, instruction: insn.clone() }));
        }
    }
    out
}

struct Problem<'a> {
    model: &'a SimilarityModel,
    f1: &'a BinaryFunction,
    f2: &'a BinaryFunction,
    plan: InsertionPlan,
    slots: Vec<usize>,
    input: PerturbedInput,
    target: Target,
    spec: LossSpec,
    pool: Option<SpatialPool<'a>>,
    per_slot: usize,
}

impl Problem<'_> {
    fn realize(&self, delta: &Delta) -> Vec<Action> {
        match (&self.input.map, &self.pool) {
            (DeltaMap::Free { .. }, Some(pool)) => round_perturbation_embeddings(delta, pool)
                .into_iter()
                .enumerate()
                .map(|(k, u)| Action {
                    position: self.slots[k / self.per_slot],
                    instruction: pool.universe.instruction(u).clone(),
                })
                .collect(),
            (map, _) => count_actions(map, &round_perturbation_counts(delta), &self.slots),
        }
    }

    fn is_counts(&self) -> bool {
        !matches!(self.input.map, DeltaMap::Free { .. })
    }

    /// One projected descent step; returns the relaxed similarity before it.
    fn step(&self, delta: &mut Delta, lr: f64) -> Result<f64, AttackError> {
        let (_, sim, grad) = loss_and_gradient(self.model, &self.input, delta, &self.target, &self.spec)?;
        for (x, g) in delta.data.iter_mut().zip(&grad.data) {
            *x -= lr * g;
            if self.is_counts() {
                *x = x.max(0.0);
            }
        }
        Ok(sim)
    }

    fn evaluate(&self, actions: &[Action]) -> Result<(f64, BinaryFunction), AttackError> {
        let f_adv = apply_actions(self.f1, &self.plan, actions)?;
        Ok((self.model.sim(&f_adv, self.f2), f_adv))
    }
}

/// Runs the gradient attack. `cfg.max_insertions` is not used: the budget is
/// set by `cfg.b` (and `gcfg.per_slot` for sequences).
pub fn gcam_attack(
    f1: &BinaryFunction,
    f2: &BinaryFunction,
    model: &SimilarityModel,
    gcfg: &GcamConfig,
    cfg: &AttackConfig,
) -> Result<AttackOutcome, AttackError> {
    cfg.validate()?;
    gcfg.validate()?;
    let ex = model.extractor();
    let plan = get_positions(f1, cfg.b, cfg.seed);
    let slots: Vec<usize> = (0..cfg.b).collect();
    let universe = model.table().map(|t| Universe::from_vocab(t.vocab()));
    if universe.as_ref().is_some_and(Universe::is_empty) {
        return Err(AttackError::EmptyCandidates);
    }
    let problem = Problem {
        model,
        f1,
        f2,
        input: PerturbedInput::new(model, &ex.extract(f1), &plan, &slots, gcfg.per_slot),
        plan: plan.clone(),
        slots,
        target: model.target(&ModelInput::of(&ex.extract(f2))),
        spec: LossSpec { mode: cfg.mode, eps_reg: gcfg.eps_reg, norm: gcfg.norm },
        pool: universe.as_ref().zip(model.table()).map(|(u, t)| SpatialPool::new(u, t)),
        per_slot: gcfg.per_slot,
    };
    let initial_sim = model.sim(f1, f2);
    let mut best = (initial_sim, Vec::new(), f1.clone());
    let mut trajectory = Vec::new();
    if !cfg.succeeded(initial_sim) {
        let mut r = rng::stream(cfg.seed, 0x6763_616d);
        let mut delta = problem.input.zero_delta();
        match &problem.pool {
            Some(pool) => {
                for k in 0..delta.rows {
                    let u = r.gen_range(0..pool.universe.len());
                    let row = pool.table.row(pool.vocab_id(u)).iter().map(|x| *x as f64).collect::<Vec<_>>();
                    delta.row_mut(k).copy_from_slice(&row);
                }
            }
            None => delta.data.iter_mut().for_each(|x| *x = r.gen::<f64>()),
        }
        let mut first = true;
        for it in 0..gcfg.iters.max(1) {
            if gcfg.iters > 0 {
                trajectory.push(problem.step(&mut delta, gcfg.step)?);
            }
            if (it + 1) % gcfg.eval_every != 0 && it + 1 < gcfg.iters {
                continue;
            }
            let actions = problem.realize(&delta);
            let (sim, f_adv) = problem.evaluate(&actions)?;
            if first || objective(cfg.mode, sim) > objective(cfg.mode, best.0) {
                best = (sim, actions, f_adv);
                first = false;
            }
            if cfg.succeeded(best.0) {
                break;
            }
        }
    }
    let (final_sim, actions, adversarial) = best;
    Ok(AttackOutcome {
        success: cfg.succeeded(final_sim),
        initial_sim,
        final_sim,
        inserted: actions.len(),
        iterations: trajectory.len(),
        trajectory,
        plan,
        actions,
        adversarial,
        candidates: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::Mode;
    use crate::features::{Extractor, FeatureView};
    use crate::function::synth::{generate, SynthConfig};
    use crate::function::tests::chain;
    use crate::models::tests::all_models;
    use crate::perturbation::{inserted_count, verify_semantics_preserved};

    fn cfg(mode: Mode, tau: f64, b: usize) -> AttackConfig {
        AttackConfig { mode, tau, b, max_insertions: 1, seed: 4, trace: false }
    }

    #[test]
    fn count_rounding() {
        let d = Delta { rows: 1, cols: 3, data: vec![2.6, -0.4, 0.5] };
        assert_eq!(round_perturbation_counts(&d), vec![vec![3, 0, 1]]);
        assert!(round_perturbation_counts(&Delta::zeros(2, 5)).iter().flatten().all(|n| *n == 0));
    }

    #[test]
    fn realized_counts_match_the_rounded_perturbation() {
        let fs = generate(&SynthConfig { families: 4, variants: 2, seed: 9, ..Default::default() });
        let models = all_models(1, &fs);
        let mut r = rng::stream(2, 2);
        for m in &models[..2] {
            let ex = m.extractor();
            let plan = get_positions(&fs[0], 4, 0);
            let slots = [0, 1, 2, 3];
            let pin = PerturbedInput::new(m, &ex.extract(&fs[0]), &plan, &slots, 1);
            let mut delta = pin.zero_delta();
            delta.data.iter_mut().for_each(|x| *x = if r.gen_bool(0.1) { r.gen_range(-1.0..3.0) } else { 0.0 });
            let counts = round_perturbation_counts(&delta);
            let actions = count_actions(&pin.map, &counts, &slots);
            let total: u32 = counts.iter().flatten().sum();
            let f_adv = apply_actions(&fs[0], &plan, &actions).unwrap();
            assert_eq!(inserted_count(&f_adv), total as usize);
            assert!(verify_semantics_preserved(&fs[0], &f_adv));
            let rounded = Delta {
                rows: delta.rows,
                cols: delta.cols,
                data: counts.iter().flatten().map(|n| *n as f64).collect(),
            };
            let mut real_view = ex.extract(&f_adv);
            for s in slots {
                Extractor::materialize_empty(&mut real_view, &plan, s);
            }
            let (DeltaMap::Acfg { nodes } | DeltaMap::Bag { nodes }) = &pin.map else { unreachable!() };
            let (ModelInput::Graph(sim), ModelInput::Graph(real)) = (pin.apply(&rounded), ModelInput::of(&real_view))
            else {
                unreachable!()
            };
            let layout = match &real_view {
                FeatureView::Acfg(v) => &v.layout,
                FeatureView::Bag(v) => &v.layout,
                FeatureView::Seq(_) => unreachable!(),
            };
            let live = fs[0].blocks.len();
            assert_eq!(sim.rows[..live], real.rows[..live]);
            for (k, s) in slots.iter().enumerate() {
                assert_eq!(sim.rows[nodes[k]], real.rows[layout.node_of_slot(*s).unwrap()], "{}", m.family());
            }
        }
    }

    #[test]
    fn gcam_runs_on_every_family() {
        let fs = generate(&SynthConfig { families: 4, variants: 2, seed: 9, ..Default::default() });
        for m in all_models(6, &fs) {
            let g = GcamConfig { iters: 30, ..GcamConfig::for_family(m.family()) };
            for (mode, f2) in [(Mode::Targeted, &fs[6]), (Mode::Untargeted, &fs[0])] {
                let out = gcam_attack(&fs[0], f2, &m, &g, &cfg(mode, if mode == Mode::Targeted { 0.99 } else { 0.01 }, 3))
                    .unwrap();
                assert_eq!(out.trajectory.len(), out.iterations);
                assert!(out.iterations <= 30);
                assert!(verify_semantics_preserved(&fs[0], &out.adversarial));
                assert_eq!(out.final_sim, m.sim(&out.adversarial, f2));
                assert_eq!(out.inserted, inserted_count(&out.adversarial));
                if m.family() != ModelFamily::SeqEmbed {
                    assert!(out.adversarial.dead_blocks().all(|b| b.instructions.iter().all(|i| {
                        let reps = acfg_representatives();
                        reps.contains(i) || class_reps().contains(i)
                    })));
                }
            }
        }
    }

    #[test]
    fn zero_gradient_leaves_delta_unchanged() {
        // free positions past the truncation point never reach the model
        let long = chain("long", &[&vec!["add rax, 1"; 160]]);
        let fs = generate(&SynthConfig { families: 3, variants: 2, seed: 1, ..Default::default() });
        let mut corpus = fs.clone();
        corpus.push(long.clone());
        let models = all_models(3, &corpus);
        let m = &models[2];
        let ex = m.extractor();
        let plan = get_positions(&long, 2, 0);
        let pin = PerturbedInput::new(m, &ex.extract(&long), &plan, &[0, 1], 2);
        let problem = Problem {
            model: m,
            f1: &long,
            f2: &fs[0],
            plan: plan.clone(),
            slots: vec![0, 1],
            target: m.target(&ModelInput::of(&ex.extract(&fs[0]))),
            spec: LossSpec { eps_reg: 0.0, ..LossSpec::new(Mode::Targeted) },
            input: pin,
            pool: None,
            per_slot: 2,
        };
        let mut delta = problem.input.zero_delta();
        delta.data.iter_mut().enumerate().for_each(|(i, x)| *x = (i as f64).cos());
        let before = delta.clone();
        for _ in 0..5 {
            problem.step(&mut delta, 0.1).unwrap();
        }
        assert_eq!(delta, before);
    }

    proptest::proptest! {
        #[test]
        fn count_rounding_is_the_nearest_non_negative_integer(xs in proptest::collection::vec(-5.0f64..5.0, 1..40)) {
            let d = Delta { rows: 1, cols: xs.len(), data: xs.clone() };
            for (n, x) in round_perturbation_counts(&d)[0].iter().zip(&xs) {
                let n = *n as f64;
                proptest::prop_assert!(n >= 0.0);
                proptest::prop_assert!(n == 0.0 && *x < 0.5 || (n - x).abs() <= 0.5);
            }
        }
    }
}
