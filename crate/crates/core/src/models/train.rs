//! Siamese training on labelled pairs: full-batch Adam on the mean squared
//! error `(sim − y)²`, with step halving so the loss never increases.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ModelInput, SimilarityModel};
use crate::function::synth::family_of;
use crate::function::BinaryFunction;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub a: usize,
    pub b: usize,
    /// 1 for functions compiled from the same source, 0 otherwise.
    pub label: f64,
}

/// Up to `n` pairs over `functions`, alternating similar (same family,
/// different name) and dissimilar (different family). Families come from
/// the synthetic naming scheme; functions outside it are only used as
/// dissimilar partners.
pub fn labeled_pairs(functions: &[BinaryFunction], n: usize, seed: u64) -> Vec<LabeledPair> {
    let fams: Vec<Option<usize>> = functions.iter().map(|f| family_of(&f.name)).collect();
    let mut r = rng::stream(seed, 0x7061_6972);
    let mut similar = Vec::new();
    for i in 0..functions.len() {
        for j in i + 1..functions.len() {
            if fams[i].is_some() && fams[i] == fams[j] {
                similar.push((i, j));
            }
        }
    }
    similar.shuffle(&mut r);
    let mut out = Vec::with_capacity(n);
    let mut sim_iter = similar.into_iter();
    let mut attempts = 0;
    while out.len() < n && functions.len() > 1 && attempts < 100 * n.max(1) {
        attempts += 1;
        if out.len() % 2 == 0 {
            if let Some((a, b)) = sim_iter.next() {
                out.push(LabeledPair { a, b, label: 1.0 });
                continue;
            }
        }
        let a = r.gen_range(0..functions.len());
        let b = r.gen_range(0..functions.len());
        if a != b && (fams[a].is_none() || fams[a] != fams[b]) {
            out.push(LabeledPair { a, b, label: 0.0 });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Halvings tried before an epoch is abandoned.
    pub max_backtracks: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 50, lr: 0.01, max_backtracks: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Loss before training, then after every epoch.
    pub losses: Vec<f64>,
}

fn batch(model: &SimilarityModel, inputs: &[ModelInput], pairs: &[LabeledPair]) -> (f64, Vec<f64>) {
    let parts: Vec<(f64, super::Params)> = pairs
        .par_iter()
        .map(|p| {
            let y = p.label;
            let (sim, g) = model.pair_param_grad(&inputs[p.a], &inputs[p.b], |s| 2.0 * (s - y));
            ((sim - y).powi(2), g)
        })
        .collect();
    let n = pairs.len().max(1) as f64;
    let mut grad = vec![0.0; model.params().len()];
    let mut loss = 0.0;
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g.data) {
            *a += b;
        }
    }
    grad.iter_mut().for_each(|x| *x /= n);
    (loss / n, grad)
}

fn loss_only(model: &SimilarityModel, inputs: &[ModelInput], pairs: &[LabeledPair]) -> f64 {
    let losses: Vec<f64> =
        pairs.par_iter().map(|p| (model.sim_inputs(&inputs[p.a], &inputs[p.b]) - p.label).powi(2)).collect();
    losses.iter().sum::<f64>() / pairs.len().max(1) as f64
}

/// Trains `model` in place. Gradients are reduced in pair order, so the
/// result does not depend on the thread count.
pub fn train_siamese(
    model: &mut SimilarityModel,
    inputs: &[ModelInput],
    pairs: &[LabeledPair],
    cfg: &TrainConfig,
) -> TrainReport {
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let len = model.params().len();
    let (mut m, mut v) = (vec![0.0; len], vec![0.0; len]);
    let mut losses = vec![loss_only(model, inputs, pairs)];
    for epoch in 1..=cfg.epochs {
        let (loss, grad) = batch(model, inputs, pairs);
        let t = epoch as i32;
        for i in 0..len {
            m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
            v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
        }
        let step: Vec<f64> = (0..len)
            .map(|i| {
                let mh = m[i] / (1.0 - b1.powi(t));
                let vh = v[i] / (1.0 - b2.powi(t));
                cfg.lr * mh / (vh.sqrt() + eps)
            })
            .collect();
        let mut accepted = loss;
        let mut scale = 1.0;
        for _ in 0..=cfg.max_backtracks {
            let mut p = model.params().clone();
            for (x, s) in p.data.iter_mut().zip(&step) {
                *x -= scale * s;
            }
            p.round_to_f32();
            let mut trial = model.clone();
            trial.set_params(p);
            let l = loss_only(&trial, inputs, pairs);
            if l <= loss {
                *model = trial;
                accepted = l;
                break;
            }
            scale *= 0.5;
        }
        log::debug!("epoch {epoch}: loss {accepted:.6}");
        losses.push(accepted);
    }
    TrainReport { losses }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::ModelFamily;
    use crate::function::synth::{generate, SynthConfig};
    use crate::models::tests::small_table;

    fn inputs(model: &SimilarityModel, fs: &[BinaryFunction]) -> Vec<ModelInput> {
        let ex = model.extractor();
        fs.iter().map(|f| ModelInput::of(&ex.extract(f))).collect()
    }

    #[test]
    fn zero_epochs_is_a_no_op() {
        let fs = generate(&SynthConfig { families: 4, variants: 2, ..Default::default() });
        let mut m = SimilarityModel::new(ModelFamily::AcfgGnn, 1, None).unwrap();
        let before = m.params().clone();
        let xs = inputs(&m, &fs);
        let pairs = labeled_pairs(&fs, 10, 0);
        let rep = train_siamese(&mut m, &xs, &pairs, &TrainConfig { epochs: 0, ..Default::default() });
        assert_eq!(m.params(), &before);
        assert_eq!(rep.losses.len(), 1);
    }

    #[test]
    fn pairs_are_labelled_by_family() {
        let fs = generate(&SynthConfig { families: 10, variants: 3, ..Default::default() });
        let pairs = labeled_pairs(&fs, 40, 2);
        assert_eq!(pairs.len(), 40);
        assert_eq!(pairs.iter().filter(|p| p.label == 1.0).count(), 20);
        for p in pairs {
            let same = family_of(&fs[p.a].name) == family_of(&fs[p.b].name);
            assert_eq!(same, p.label == 1.0);
            assert_ne!(p.a, p.b);
        }
    }

    #[test]
    fn training_is_deterministic_across_thread_counts() {
        let fs = generate(&SynthConfig { families: 6, variants: 2, seed: 3, ..Default::default() });
        let table = small_table(&fs);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                let mut m = SimilarityModel::new(ModelFamily::SeqEmbed, 4, Some(table.clone())).unwrap();
                let xs = inputs(&m, &fs);
                let pairs = labeled_pairs(&fs, 12, 1);
                let rep = train_siamese(&mut m, &xs, &pairs, &TrainConfig { epochs: 3, ..Default::default() });
                (m.params().clone(), rep)
            })
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn loss_never_increases() {
        let fs = generate(&SynthConfig { families: 8, variants: 2, seed: 4, ..Default::default() });
        let mut m = SimilarityModel::new(ModelFamily::GraphMatcher, 2, None).unwrap();
        let xs = inputs(&m, &fs);
        let pairs = labeled_pairs(&fs, 20, 3);
        let rep = train_siamese(&mut m, &xs, &pairs, &TrainConfig { epochs: 10, ..Default::default() });
        assert!(rep.losses.windows(2).all(|w| w[1] <= w[0]));
        assert!(rep.losses.last() < rep.losses.first());
    }

    #[test]
    fn fifty_epochs_separate_similar_from_dissimilar() {
        let fs = generate(&SynthConfig { families: 25, variants: 4, seed: 6, ..Default::default() });
        let table = small_table(&fs);
        for family in ModelFamily::ALL {
            let mut m = SimilarityModel::new(family, 8, Some(table.clone())).unwrap();
            let xs = inputs(&m, &fs);
            let pairs = labeled_pairs(&fs, 200, 5);
            train_siamese(&mut m, &xs, &pairs, &TrainConfig::default());
            let mean = |label: f64| {
                let s: Vec<f64> =
                    pairs.iter().filter(|p| p.label == label).map(|p| m.sim_inputs(&xs[p.a], &xs[p.b])).collect();
                s.iter().sum::<f64>() / s.len() as f64
            };
            let gap = mean(1.0) - mean(0.0);
            assert!(gap > 0.2, "{family}: {gap}");
        }
    }
}
