//! Continuous relaxation used by the white-box attack: a perturbation matrix
//! `δ` added to the features of dead-branch slots, and the regularized
//! objective over it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ModelInput, SeqInput, SimilarityModel, Target};
use crate::asm::GeminiCategory;
use crate::features::{acfg_unit, Extractor, FeatureView};
use crate::perturbation::InsertionPlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Targeted,
    Untargeted,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Targeted, Mode::Untargeted];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Targeted => "targeted",
            Mode::Untargeted => "untargeted",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| format!("unknown attack mode `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    L1,
    L2,
}

/// `1 − sim` (targeted) or `sim` (untargeted), plus `eps_reg · ‖δ‖_p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub mode: Mode,
    pub eps_reg: f64,
    pub norm: Norm,
}

impl LossSpec {
    pub fn new(mode: Mode) -> Self {
        Self { mode, eps_reg: 0.01, norm: Norm::L2 }
    }

    fn base(&self, sim: f64) -> f64 {
        match self.mode {
            Mode::Targeted => 1.0 - sim,
            Mode::Untargeted => sim,
        }
    }

    fn dbase(&self) -> f64 {
        match self.mode {
            Mode::Targeted => -1.0,
            Mode::Untargeted => 1.0,
        }
    }
}

/// Row-major `rows × cols` perturbation.
#[derive(Debug, Clone, PartialEq)]
pub struct Delta {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Delta {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn norm(&self, p: Norm) -> f64 {
        match p {
            Norm::L1 => self.data.iter().map(|x| x.abs()).sum(),
            Norm::L2 => self.data.iter().map(|x| x * x).sum::<f64>().sqrt(),
        }
    }

    /// Subgradient of the norm: `sign(δ)` for L1, `δ / ‖δ‖` for L2 (zero at
    /// the origin).
    fn norm_grad(&self, p: Norm) -> Vec<f64> {
        match p {
            Norm::L1 => self.data.iter().map(|x| if *x == 0.0 { 0.0 } else { x.signum() }).collect(),
            Norm::L2 => {
                let n = self.norm(Norm::L2);
                if n == 0.0 {
                    vec![0.0; self.data.len()]
                } else {
                    self.data.iter().map(|x| x / n).collect()
                }
            }
        }
    }
}

/// How `δ` enters the model input.
#[derive(Debug, Clone, PartialEq)]
pub enum DeltaMap {
    /// Row `k` holds one coefficient per [`GeminiCategory::ALL`] entry,
    /// added to node `nodes[k]` through the category's ACFG increments.
    Acfg { nodes: Vec<usize> },
    /// Row `k` is added to the mnemonic bag of node `nodes[k]`.
    Bag { nodes: Vec<usize> },
    /// Rows are the free vectors of the sequence input.
    Free { dim: usize },
}

/// A skeleton input with empty dead branches for every attacked slot, and
/// the map from `δ` onto it.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedInput {
    pub base: ModelInput,
    pub map: DeltaMap,
    rows: usize,
}

impl PerturbedInput {
    /// Builds the skeleton of `view` for `slots`. Sequence models get
    /// `per_slot` free positions at the end of each slot's body.
    pub fn new(model: &SimilarityModel, view: &FeatureView, plan: &InsertionPlan, slots: &[usize], per_slot: usize) -> Self {
        match view {
            FeatureView::Seq(v) => {
                let ex = model.extractor();
                let guard = ex.guard_ids(slots.first().copied().unwrap_or(0));
                let items = v.items_with_free(plan, slots, per_slot, &guard);
                let rows = slots.len() * per_slot;
                let dim = model.table().expect("seq model").dim();
                let base = ModelInput::Seq(SeqInput { items, free: vec![vec![0.0; dim]; rows] });
                Self { base, map: DeltaMap::Free { dim }, rows }
            }
            _ => {
                let mut skel = view.clone();
                let nodes: Vec<usize> = slots
                    .iter()
                    .map(|s| Extractor::materialize_empty(&mut skel, plan, *s).expect("graph view"))
                    .collect();
                let map = match view {
                    FeatureView::Acfg(_) => DeltaMap::Acfg { nodes },
                    _ => DeltaMap::Bag { nodes },
                };
                Self { base: ModelInput::of(&skel), map, rows: slots.len() }
            }
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        match &self.map {
            DeltaMap::Acfg { .. } => GeminiCategory::ALL.len(),
            DeltaMap::Bag { .. } => crate::asm::GMN_CLASSES,
            DeltaMap::Free { dim } => *dim,
        }
    }

    pub fn zero_delta(&self) -> Delta {
        Delta::zeros(self.rows(), self.cols())
    }

    fn check(&self, delta: &Delta) -> Result<(), super::ModelError> {
        if delta.rows != self.rows() || delta.cols != self.cols() {
            return Err(super::ModelError::ShapeMismatch(format!(
                "delta is {}x{}, expected {}x{}",
                delta.rows,
                delta.cols,
                self.rows(),
                self.cols()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, delta: &Delta) -> ModelInput {
        let mut input = self.base.clone();
        match (&self.map, &mut input) {
            (DeltaMap::Acfg { nodes }, ModelInput::Graph(g)) => {
                for (k, node) in nodes.iter().enumerate() {
                    for (c, cat) in GeminiCategory::ALL.iter().enumerate() {
                        let coef = delta.row(k)[c];
                        for (x, u) in g.rows[*node].iter_mut().zip(acfg_unit(*cat)) {
                            *x += coef * u as f64;
                        }
                    }
                }
            }
            (DeltaMap::Bag { nodes }, ModelInput::Graph(g)) => {
                for (k, node) in nodes.iter().enumerate() {
                    for (x, d) in g.rows[*node].iter_mut().zip(delta.row(k)) {
                        *x += d;
                    }
                }
            }
            (DeltaMap::Free { .. }, ModelInput::Seq(s)) => {
                for (k, v) in s.free.iter_mut().enumerate() {
                    v.copy_from_slice(delta.row(k));
                }
            }
            _ => unreachable!("map matches the input kind"),
        }
        input
    }

    fn pull_back(&self, dinput: &[Vec<f64>]) -> Delta {
        let mut g = self.zero_delta();
        match &self.map {
            DeltaMap::Acfg { nodes } => {
                for (k, node) in nodes.iter().enumerate() {
                    for (c, cat) in GeminiCategory::ALL.iter().enumerate() {
                        g.row_mut(k)[c] = acfg_unit(*cat).iter().zip(&dinput[*node]).map(|(u, d)| *u as f64 * d).sum();
                    }
                }
            }
            DeltaMap::Bag { nodes } => {
                for (k, node) in nodes.iter().enumerate() {
                    g.row_mut(k).copy_from_slice(&dinput[*node]);
                }
            }
            DeltaMap::Free { .. } => {
                for (k, d) in dinput.iter().enumerate() {
                    g.row_mut(k).copy_from_slice(d);
                }
            }
        }
        g
    }
}

/// Similarity of the relaxed input `base + δ` to `target`.
pub fn perturbed_sim(
    model: &SimilarityModel,
    input: &PerturbedInput,
    delta: &Delta,
    target: &Target,
) -> Result<f64, super::ModelError> {
    input.check(delta)?;
    Ok(model.sim_to(&input.apply(delta), target))
}

/// Loss and its gradient with respect to `δ`; also returns the similarity.
pub fn loss_and_gradient(
    model: &SimilarityModel,
    input: &PerturbedInput,
    delta: &Delta,
    target: &Target,
    spec: &LossSpec,
) -> Result<(f64, f64, Delta), super::ModelError> {
    input.check(delta)?;
    let (sim, dinput) = model.sim_and_input_grad(&input.apply(delta), target);
    let mut grad = input.pull_back(&dinput);
    let k = spec.dbase();
    grad.data.iter_mut().for_each(|x| *x *= k);
    if spec.eps_reg != 0.0 {
        for (g, n) in grad.data.iter_mut().zip(delta.norm_grad(spec.norm)) {
            *g += spec.eps_reg * n;
        }
    }
    let loss = spec.base(sim) + spec.eps_reg * delta.norm(spec.norm);
    Ok((loss, sim, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function::synth::{generate, SynthConfig};
    use crate::models::tests::all_models;
    use crate::perturbation::get_positions;
    use crate::rng;
    use rand::Rng;

    fn setup() -> (Vec<crate::function::BinaryFunction>, Vec<SimilarityModel>) {
        let fs = generate(&SynthConfig { families: 6, variants: 2, seed: 12, ..Default::default() });
        let models = all_models(5, &fs);
        (fs, models)
    }

    #[test]
    fn zero_delta_gives_the_skeleton_loss() {
        let (fs, models) = setup();
        for m in &models {
            let ex = m.extractor();
            let plan = get_positions(&fs[0], 4, 1);
            let pin = PerturbedInput::new(m, &ex.extract(&fs[0]), &plan, &[0, 1, 2, 3], 2);
            let target = m.target(&ModelInput::of(&ex.extract(&fs[5])));
            let spec = LossSpec::new(Mode::Targeted);
            let (loss, sim, _) = loss_and_gradient(m, &pin, &pin.zero_delta(), &target, &spec).unwrap();
            assert_eq!(sim, m.sim_to(&pin.base, &target));
            assert_eq!(loss, 1.0 - sim);
        }
    }

    #[test]
    fn delta_shape_is_checked() {
        let (fs, models) = setup();
        let m = &models[0];
        let ex = m.extractor();
        let plan = get_positions(&fs[0], 2, 1);
        let pin = PerturbedInput::new(m, &ex.extract(&fs[0]), &plan, &[0, 1], 3);
        let target = m.target(&ModelInput::of(&ex.extract(&fs[1])));
        assert_eq!((pin.rows(), pin.cols()), (2, 5));
        assert!(loss_and_gradient(m, &pin, &Delta::zeros(3, 5), &target, &LossSpec::new(Mode::Targeted)).is_err());
    }

    #[test]
    fn input_gradients_match_finite_differences() {
        let (fs, models) = setup();
        let mut r = rng::stream(9, 9);
        for m in &models {
            let ex = m.extractor();
            let mut worst: f64 = 0.0;
            for inst in 0..10 {
                let f = &fs[inst % fs.len()];
                let plan = get_positions(f, 3, inst as u64);
                let pin = PerturbedInput::new(m, &ex.extract(f), &plan, &[0, 1, 2], 2);
                let target = m.target(&ModelInput::of(&ex.extract(&fs[(inst + 3) % fs.len()])));
                let mut delta = pin.zero_delta();
                delta.data.iter_mut().for_each(|x| *x = r.gen_range(0.1..1.5));
                let mode = if inst % 2 == 0 { Mode::Targeted } else { Mode::Untargeted };
                let spec = LossSpec { mode, eps_reg: 0.01, norm: if inst % 3 == 0 { Norm::L1 } else { Norm::L2 } };
                let (_, _, grad) = loss_and_gradient(m, &pin, &delta, &target, &spec).unwrap();
                for _ in 0..6 {
                    let i = r.gen_range(0..delta.data.len());
                    let h = 1e-5;
                    let mut dp = delta.clone();
                    dp.data[i] += h;
                    let mut dm = delta.clone();
                    dm.data[i] -= h;
                    let lp = loss_and_gradient(m, &pin, &dp, &target, &spec).unwrap().0;
                    let lm = loss_and_gradient(m, &pin, &dm, &target, &spec).unwrap().0;
                    let numeric = (lp - lm) / (2.0 * h);
                    let err = (grad.data[i] - numeric).abs() / grad.data[i].abs().max(numeric.abs()).max(1e-6);
                    worst = worst.max(err);
                }
            }
            assert!(worst <= 1e-4, "{}: {worst}", m.family());
        }
    }

    #[test]
    fn regularizer_weight_zero_ignores_the_norm() {
        let (fs, models) = setup();
        let m = &models[1];
        let ex = m.extractor();
        let plan = get_positions(&fs[2], 2, 0);
        let pin = PerturbedInput::new(m, &ex.extract(&fs[2]), &plan, &[0, 1], 1);
        let target = m.target(&ModelInput::of(&ex.extract(&fs[4])));
        let mut delta = pin.zero_delta();
        delta.data[3] = 2.0;
        let spec = LossSpec { eps_reg: 0.0, ..LossSpec::new(Mode::Untargeted) };
        let (loss, sim, _) = loss_and_gradient(m, &pin, &delta, &target, &spec).unwrap();
        assert_eq!(loss, sim);
    }
}
