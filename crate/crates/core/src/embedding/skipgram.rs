//! Skip-gram with negative sampling, single-threaded and seeded.

use std::collections::HashMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;

use super::{EmbeddingError, EmbeddingTable, SkipGramParams, Vocabulary, OOV_TOKEN};
use crate::asm::NormalizedToken;
use crate::rng;

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Vocabulary ordered by decreasing count then token; tokens below
/// `min_count` collapse into a trailing [`OOV_TOKEN`] entry.
fn build_vocab(corpus: &[Vec<NormalizedToken>], min_count: usize) -> (Vocabulary, Vec<u64>) {
    let mut counts: HashMap<&NormalizedToken, u64> = HashMap::new();
    for t in corpus.iter().flatten() {
        *counts.entry(t).or_default() += 1;
    }
    let mut kept: Vec<(&NormalizedToken, u64)> =
        counts.iter().filter(|(_, c)| **c >= min_count as u64).map(|(t, c)| (*t, *c)).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let dropped: u64 = counts.values().filter(|c| **c < min_count as u64).sum();
    let mut tokens: Vec<NormalizedToken> = kept.iter().map(|(t, _)| (*t).clone()).collect();
    let mut freq: Vec<u64> = kept.iter().map(|(_, c)| *c).collect();
    if dropped > 0 {
        tokens.push(NormalizedToken::new(OOV_TOKEN));
        freq.push(dropped);
    }
    (Vocabulary::new(tokens), freq)
}

pub fn train_skipgram(corpus: &[Vec<NormalizedToken>], params: &SkipGramParams) -> Result<EmbeddingTable, EmbeddingError> {
    if corpus.iter().all(Vec::is_empty) {
        return Err(EmbeddingError::EmptyCorpus);
    }
    let (vocab, freq) = build_vocab(corpus, params.min_count);
    let dim = params.dim;
    let v = vocab.len();
    let mut rng = rng::stream(params.seed, 0x7367);
    let mut input: Vec<f32> = (0..v * dim).map(|_| (rng.gen::<f32>() - 0.5) / dim as f32).collect();
    let mut output = vec![0f32; v * dim];
    let noise = WeightedIndex::new(freq.iter().map(|c| (*c as f64).powf(0.75))).expect("positive counts");
    let sentences: Vec<Vec<usize>> =
        corpus.iter().map(|s| s.iter().map(|t| vocab.id(t) as usize).collect()).collect();

    let total = (sentences.iter().map(Vec::len).sum::<usize>() * params.epochs).max(1) as f32;
    let mut seen = 0usize;
    let mut grad = vec![0f32; dim];
    for _ in 0..params.epochs {
        for s in &sentences {
            for (pos, &center) in s.iter().enumerate() {
                let lr = (params.lr * (1.0 - seen as f32 / total)).max(params.lr * 1e-4);
                seen += 1;
                let reach = rng.gen_range(1..=params.window.max(1));
                let lo = pos.saturating_sub(reach);
                let hi = (pos + reach).min(s.len() - 1);
                for ctx_pos in lo..=hi {
                    if ctx_pos == pos {
                        continue;
                    }
                    let context = s[ctx_pos];
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    let c_in = center * dim;
                    for k in 0..=params.negative {
                        let (target, label) = if k == 0 {
                            (context, 1.0)
                        } else {
                            let t = noise.sample(&mut rng);
                            if t == context {
                                continue;
                            }
                            (t, 0.0)
                        };
                        let t_out = target * dim;
                        let dot: f32 = (0..dim).map(|j| input[c_in + j] * output[t_out + j]).sum();
                        let g = (label - sigmoid(dot)) * lr;
                        for j in 0..dim {
                            grad[j] += g * output[t_out + j];
                            output[t_out + j] += g * input[c_in + j];
                        }
                    }
                    for j in 0..dim {
                        input[c_in + j] += grad[j];
                    }
                }
            }
        }
    }
    Ok(EmbeddingTable::new(vocab, dim, input, params.clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{cosine, token_corpus};
    use crate::function::synth::{generate, SynthConfig};

    fn toks(s: &str) -> Vec<NormalizedToken> {
        s.split_whitespace().map(NormalizedToken::new).collect()
    }

    #[test]
    fn defaults() {
        let p = SkipGramParams::default();
        assert_eq!((p.dim, p.window, p.min_count), (100, 8, 8));
        assert!((p.lr - 0.05).abs() < 1e-9);
    }

    #[test]
    fn degenerate_corpora() {
        assert!(matches!(train_skipgram(&[vec![]], &SkipGramParams::default()), Err(EmbeddingError::EmptyCorpus)));
        let one = vec![toks(&"nop ".repeat(20))];
        let t = train_skipgram(&one, &SkipGramParams { dim: 8, ..Default::default() }).unwrap();
        assert_eq!(t.vocab().tokens(), &[NormalizedToken::new("nop")]);
        assert_eq!(t.vocab().oov(), None);
    }

    #[test]
    fn rare_tokens_become_oov() {
        let corpus = vec![toks("a a a b a a c"), toks("a b b b")];
        let t = train_skipgram(&corpus, &SkipGramParams { dim: 4, min_count: 3, ..Default::default() }).unwrap();
        let names: Vec<&str> = t.vocab().tokens().iter().map(|t| t.as_str()).collect();
        assert_eq!(names, ["a", "b", OOV_TOKEN]);
        assert_eq!(t.embed(&NormalizedToken::new("c"), true).unwrap(), t.row(2));
    }

    #[test]
    fn deterministic_and_learns_context() {
        let fs = generate(&SynthConfig { families: 30, variants: 4, seed: 1, ..Default::default() });
        let corpus = token_corpus(&fs);
        let p = SkipGramParams { dim: 24, min_count: 2, epochs: 3, seed: 5, ..Default::default() };
        let a = train_skipgram(&corpus, &p).unwrap();
        assert_eq!(a, train_skipgram(&corpus, &p).unwrap());
        assert!(a.vectors.iter().all(|x| x.is_finite()));
        // the two halves of the prologue always co-occur
        let push = NormalizedToken::new("push_rbp");
        let mov = NormalizedToken::new("mov_rbp_rsp");
        let c = cosine(a.embed(&push, false).unwrap(), a.embed(&mov, false).unwrap());
        let mean: f64 = (0..a.len() as u32).map(|i| cosine(a.embed(&push, false).unwrap(), a.row(i))).sum::<f64>()
            / a.len() as f64;
        assert!(c > mean, "cos {c} vs mean {mean}");
    }
}
