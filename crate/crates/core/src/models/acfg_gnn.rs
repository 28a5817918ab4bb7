//! Structure2vec-style embedding of attributed CFGs.
//!
//! ```text
//! a_v     = W1 ln(1 + x_v) + b1
//! μ⁰      = 0
//! μᵗ⁺¹_v  = tanh(a_v + P1 tanh(P2 Σ_{u ∈ N(v)} μᵗ_u))      t < ROUNDS
//! e       = W3 tanh(W2 Σ_v μ_v + b2) + b3
//! ```
//! Neighbourhoods ignore edge direction.

use super::linalg::{add_assign, matvec, matvec_acc, matvec_t_acc, outer_acc, tanh_back, tanh_in_place, Params, TensorSpec};
use super::GraphInput;
use crate::features::ACFG_WIDTH;

pub const WIDTH: usize = 16;
pub const ROUNDS: usize = 3;
pub const OUT: usize = 16;

const W1: usize = 0;
const B1: usize = 1;
const P1: usize = 2;
const P2: usize = 3;
const W2: usize = 4;
const B2: usize = 5;
const W3: usize = 6;
const B3: usize = 7;

pub fn specs() -> Vec<TensorSpec> {
    vec![
        TensorSpec::new("w1", &[WIDTH, ACFG_WIDTH]),
        TensorSpec::new("b1", &[WIDTH]),
        TensorSpec::new("p1", &[WIDTH, WIDTH]),
        TensorSpec::new("p2", &[WIDTH, WIDTH]),
        TensorSpec::new("w2", &[WIDTH, WIDTH]),
        TensorSpec::new("b2", &[WIDTH]),
        TensorSpec::new("w3", &[OUT, WIDTH]),
        TensorSpec::new("b3", &[OUT]),
    ]
}

pub struct Cache {
    xt: Vec<Vec<f64>>,
    /// μᵗ for t = 0..=ROUNDS.
    mu: Vec<Vec<Vec<f64>>>,
    /// Neighbour sums and inner activations of every round.
    s: Vec<Vec<Vec<f64>>>,
    q: Vec<Vec<Vec<f64>>>,
    g: Vec<f64>,
    z: Vec<f64>,
}

pub fn forward(p: &Params, input: &GraphInput) -> (Vec<f64>, Cache) {
    let n = input.rows.len();
    let xt: Vec<Vec<f64>> = input.rows.iter().map(|r| r.iter().map(|x| x.ln_1p()).collect()).collect();
    let a: Vec<Vec<f64>> = xt
        .iter()
        .map(|x| {
            let mut v = p.get(B1).to_vec();
            matvec_acc(p.get(W1), WIDTH, ACFG_WIDTH, x, &mut v);
            v
        })
        .collect();
    let mut mu = vec![vec![vec![0.0; WIDTH]; n]];
    let mut s_all = Vec::with_capacity(ROUNDS);
    let mut q_all = Vec::with_capacity(ROUNDS);
    for t in 0..ROUNDS {
        let prev = &mu[t];
        let s: Vec<Vec<f64>> = input
            .adj
            .iter()
            .map(|nb| {
                let mut acc = vec![0.0; WIDTH];
                for &u in nb {
                    add_assign(&mut acc, &prev[u]);
                }
                acc
            })
            .collect();
        let q: Vec<Vec<f64>> = s
            .iter()
            .map(|sv| {
                let mut v = vec![0.0; WIDTH];
                matvec(p.get(P2), WIDTH, WIDTH, sv, &mut v);
                tanh_in_place(&mut v);
                v
            })
            .collect();
        let next: Vec<Vec<f64>> = q
            .iter()
            .zip(&a)
            .map(|(qv, av)| {
                let mut v = av.clone();
                matvec_acc(p.get(P1), WIDTH, WIDTH, qv, &mut v);
                tanh_in_place(&mut v);
                v
            })
            .collect();
        s_all.push(s);
        q_all.push(q);
        mu.push(next);
    }
    let mut g = vec![0.0; WIDTH];
    for m in &mu[ROUNDS] {
        add_assign(&mut g, m);
    }
    let mut z = p.get(B2).to_vec();
    matvec_acc(p.get(W2), WIDTH, WIDTH, &g, &mut z);
    tanh_in_place(&mut z);
    let mut e = p.get(B3).to_vec();
    matvec_acc(p.get(W3), OUT, WIDTH, &z, &mut e);
    (e, Cache { xt, mu, s: s_all, q: q_all, g, z })
}

/// Accumulates parameter gradients into `dp` and returns the gradient with
/// respect to the raw node rows.
pub fn backward(p: &Params, input: &GraphInput, cache: &Cache, de: &[f64], dp: &mut Params) -> Vec<Vec<f64>> {
    let n = input.rows.len();
    outer_acc(dp.get_mut(W3), de, &cache.z);
    add_assign(dp.get_mut(B3), de);
    let mut dz = vec![0.0; WIDTH];
    matvec_t_acc(p.get(W3), OUT, WIDTH, de, &mut dz);
    let dpre2 = tanh_back(&cache.z, &dz);
    outer_acc(dp.get_mut(W2), &dpre2, &cache.g);
    add_assign(dp.get_mut(B2), &dpre2);
    let mut dg = vec![0.0; WIDTH];
    matvec_t_acc(p.get(W2), WIDTH, WIDTH, &dpre2, &mut dg);

    let mut dmu = vec![dg; n];
    let mut da = vec![vec![0.0; WIDTH]; n];
    for t in (0..ROUNDS).rev() {
        let mut dprev = vec![vec![0.0; WIDTH]; n];
        let mut ds = vec![vec![0.0; WIDTH]; n];
        for v in 0..n {
            let dpre = tanh_back(&cache.mu[t + 1][v], &dmu[v]);
            add_assign(&mut da[v], &dpre);
            outer_acc(dp.get_mut(P1), &dpre, &cache.q[t][v]);
            let mut dq = vec![0.0; WIDTH];
            matvec_t_acc(p.get(P1), WIDTH, WIDTH, &dpre, &mut dq);
            let dr = tanh_back(&cache.q[t][v], &dq);
            outer_acc(dp.get_mut(P2), &dr, &cache.s[t][v]);
            matvec_t_acc(p.get(P2), WIDTH, WIDTH, &dr, &mut ds[v]);
        }
        for (v, nb) in input.adj.iter().enumerate() {
            for &u in nb {
                add_assign(&mut dprev[u], &ds[v]);
            }
        }
        dmu = dprev;
    }
    da.iter()
        .zip(&cache.xt)
        .zip(&input.rows)
        .map(|((dav, xt), x)| {
            outer_acc(dp.get_mut(W1), dav, xt);
            add_assign(dp.get_mut(B1), dav);
            let mut dxt = vec![0.0; ACFG_WIDTH];
            matvec_t_acc(p.get(W1), WIDTH, ACFG_WIDTH, dav, &mut dxt);
            dxt.iter().zip(x).map(|(d, x)| d / (1.0 + x)).collect()
        })
        .collect()
}
