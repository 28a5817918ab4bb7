//! Bidirectional recurrent encoder with self-attentive pooling over frozen
//! instruction embeddings.
//!
//! ```text
//! →h_t = tanh(Wxf x_t + Whf →h_{t−1} + bf)        ←h_t likewise from the end
//! H_t  = [→h_t ; ←h_t]
//! A    = softmax_t(Ws2 tanh(Ws1 H_t))             one row per hop
//! M    = [Σ_t A_rt H_t]_r
//! e    = W2 tanh(W1 M + b1) + b2
//! ```

use super::linalg::{
    add_assign, dot, matvec, matvec_acc, matvec_t_acc, outer_acc, softmax, softmax_back, tanh_back, tanh_in_place,
    Params, TensorSpec,
};
use super::SeqInput;
use crate::embedding::EmbeddingTable;
use crate::features::SeqItem;

pub const HIDDEN: usize = 16;
pub const ATT_DIM: usize = 8;
pub const HOPS: usize = 2;
pub const MID: usize = 32;
pub const OUT: usize = 16;
const BI: usize = 2 * HIDDEN;
const POOLED: usize = HOPS * BI;

const WXF: usize = 0;
const WHF: usize = 1;
const BF: usize = 2;
const WXB: usize = 3;
const WHB: usize = 4;
const BB: usize = 5;
const WS1: usize = 6;
const WS2: usize = 7;
const W1: usize = 8;
const B1: usize = 9;
const W2: usize = 10;
const B2: usize = 11;

pub fn specs(dim: usize) -> Vec<TensorSpec> {
    vec![
        TensorSpec::new("wxf", &[HIDDEN, dim]),
        TensorSpec::new("whf", &[HIDDEN, HIDDEN]),
        TensorSpec::new("bf", &[HIDDEN]),
        TensorSpec::new("wxb", &[HIDDEN, dim]),
        TensorSpec::new("whb", &[HIDDEN, HIDDEN]),
        TensorSpec::new("bb", &[HIDDEN]),
        TensorSpec::new("ws1", &[ATT_DIM, BI]),
        TensorSpec::new("ws2", &[HOPS, ATT_DIM]),
        TensorSpec::new("w1", &[MID, POOLED]),
        TensorSpec::new("b1", &[MID]),
        TensorSpec::new("w2", &[OUT, MID]),
        TensorSpec::new("b2", &[OUT]),
    ]
}

fn row_f64(table: &EmbeddingTable, id: u32) -> Vec<f64> {
    if (id as usize) < table.len() {
        table.row(id).iter().map(|x| *x as f64).collect()
    } else {
        vec![0.0; table.dim()]
    }
}

/// Input projections `[Wxf x ; Wxb x]` of one vector.
fn project(p: &Params, dim: usize, x: &[f64]) -> [Vec<f64>; 2] {
    let mut f = vec![0.0; HIDDEN];
    let mut b = vec![0.0; HIDDEN];
    matvec(p.get(WXF), HIDDEN, dim, x, &mut f);
    matvec(p.get(WXB), HIDDEN, dim, x, &mut b);
    [f, b]
}

/// Projections of every vocabulary row, so token inputs skip the
/// `HIDDEN × dim` products. Computed with the same routine as free vectors.
pub fn projection_cache(p: &Params, table: &EmbeddingTable) -> Vec<[Vec<f64>; 2]> {
    (0..table.len() as u32).map(|id| project(p, table.dim(), &row_f64(table, id))).collect()
}

pub struct Cache {
    fwd: Vec<Vec<f64>>,
    bwd: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    att: Vec<Vec<f64>>,
    pooled: Vec<f64>,
    z: Vec<f64>,
}

impl Cache {
    fn h(&self, t: usize) -> Vec<f64> {
        self.fwd[t].iter().chain(&self.bwd[t]).copied().collect()
    }
}

pub fn forward(
    p: &Params,
    table: &EmbeddingTable,
    proj: &[[Vec<f64>; 2]],
    input: &SeqInput,
) -> (Vec<f64>, Cache) {
    let dim = table.dim();
    let zero = [vec![0.0; HIDDEN], vec![0.0; HIDDEN]];
    let free_proj: Vec<[Vec<f64>; 2]> = input.free.iter().map(|x| project(p, dim, x)).collect();
    let projections: Vec<&[Vec<f64>; 2]> = input
        .items
        .iter()
        .map(|it| match it {
            SeqItem::Token(id) => proj.get(*id as usize).unwrap_or(&zero),
            SeqItem::Free(k) => &free_proj[*k],
        })
        .collect();
    let n = projections.len();
    let step = |w: usize, b: usize, x: &[f64], prev: &[f64]| {
        let mut h = x.to_vec();
        add_assign(&mut h, p.get(b));
        matvec_acc(p.get(w), HIDDEN, HIDDEN, prev, &mut h);
        tanh_in_place(&mut h);
        h
    };
    let mut fwd: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (t, pr) in projections.iter().enumerate() {
        let prev = if t == 0 { &zero[0] } else { &fwd[t - 1] };
        let h = step(WHF, BF, &pr[0], prev);
        fwd.push(h);
    }
    let mut bwd: Vec<Vec<f64>> = vec![Vec::new(); n];
    for t in (0..n).rev() {
        let h = step(WHB, BB, &projections[t][1], if t + 1 == n { &zero[1] } else { &bwd[t + 1] });
        bwd[t] = h;
    }
    let mut cache = Cache { fwd, bwd, u: Vec::with_capacity(n), att: Vec::new(), pooled: vec![0.0; POOLED], z: Vec::new() };
    let hs: Vec<Vec<f64>> = (0..n).map(|t| cache.h(t)).collect();
    for h in &hs {
        let mut u = vec![0.0; ATT_DIM];
        matvec(p.get(WS1), ATT_DIM, BI, h, &mut u);
        tanh_in_place(&mut u);
        cache.u.push(u);
    }
    let ws2 = p.get(WS2);
    for r in 0..HOPS {
        let w = &ws2[r * ATT_DIM..(r + 1) * ATT_DIM];
        let a = if n == 0 { Vec::new() } else { softmax(&cache.u.iter().map(|u| dot(w, u)).collect::<Vec<_>>()) };
        for (at, h) in a.iter().zip(&hs) {
            for (o, x) in cache.pooled[r * BI..(r + 1) * BI].iter_mut().zip(h) {
                *o += at * x;
            }
        }
        cache.att.push(a);
    }
    let mut z = p.get(B1).to_vec();
    matvec_acc(p.get(W1), MID, POOLED, &cache.pooled, &mut z);
    tanh_in_place(&mut z);
    let mut e = p.get(B2).to_vec();
    matvec_acc(p.get(W2), OUT, MID, &z, &mut e);
    cache.z = z;
    (e, cache)
}

/// Accumulates parameter gradients into `dp`; returns the gradient with
/// respect to each free vector of the input.
pub fn backward(
    p: &Params,
    table: &EmbeddingTable,
    input: &SeqInput,
    cache: &Cache,
    de: &[f64],
    dp: &mut Params,
    want_params: bool,
) -> Vec<Vec<f64>> {
    let dim = table.dim();
    let n = input.items.len();
    if want_params {
        outer_acc(dp.get_mut(W2), de, &cache.z);
        add_assign(dp.get_mut(B2), de);
    }
    let mut dz = vec![0.0; MID];
    matvec_t_acc(p.get(W2), OUT, MID, de, &mut dz);
    let dpre1 = tanh_back(&cache.z, &dz);
    if want_params {
        outer_acc(dp.get_mut(W1), &dpre1, &cache.pooled);
        add_assign(dp.get_mut(B1), &dpre1);
    }
    let mut dpooled = vec![0.0; POOLED];
    matvec_t_acc(p.get(W1), MID, POOLED, &dpre1, &mut dpooled);

    let hs: Vec<Vec<f64>> = (0..n).map(|t| cache.h(t)).collect();
    let mut dh = vec![vec![0.0; BI]; n];
    let mut du = vec![vec![0.0; ATT_DIM]; n];
    let ws2 = p.get(WS2).to_vec();
    for r in 0..HOPS {
        let dm = &dpooled[r * BI..(r + 1) * BI];
        let a = &cache.att[r];
        let da: Vec<f64> = hs.iter().map(|h| dot(dm, h)).collect();
        for (t, at) in a.iter().enumerate() {
            for (x, g) in dh[t].iter_mut().zip(dm) {
                *x += at * g;
            }
        }
        let ds = softmax_back(a, &da);
        let w = &ws2[r * ATT_DIM..(r + 1) * ATT_DIM];
        for t in 0..n {
            if want_params {
                for (k, uk) in cache.u[t].iter().enumerate() {
                    dp.get_mut(WS2)[r * ATT_DIM + k] += ds[t] * uk;
                }
            }
            for (x, wk) in du[t].iter_mut().zip(w) {
                *x += ds[t] * wk;
            }
        }
    }
    for t in 0..n {
        let dv = tanh_back(&cache.u[t], &du[t]);
        if want_params {
            outer_acc(dp.get_mut(WS1), &dv, &hs[t]);
        }
        matvec_t_acc(p.get(WS1), ATT_DIM, BI, &dv, &mut dh[t]);
    }

    let mut dfree = vec![vec![0.0; dim]; input.free.len()];
    let x_of = |t: usize| match input.items[t] {
        SeqItem::Token(id) => row_f64(table, id),
        SeqItem::Free(k) => input.free[k].clone(),
    };
    let zero = vec![0.0; HIDDEN];
    // forward direction: gradients flow from the end
    let mut carry = vec![0.0; HIDDEN];
    for t in (0..n).rev() {
        let mut g = dh[t][..HIDDEN].to_vec();
        add_assign(&mut g, &carry);
        let dpre = tanh_back(&cache.fwd[t], &g);
        let prev = if t == 0 { &zero } else { &cache.fwd[t - 1] };
        if want_params {
            add_assign(dp.get_mut(BF), &dpre);
            outer_acc(dp.get_mut(WHF), &dpre, prev);
            outer_acc(dp.get_mut(WXF), &dpre, &x_of(t));
        }
        if let SeqItem::Free(k) = input.items[t] {
            matvec_t_acc(p.get(WXF), HIDDEN, dim, &dpre, &mut dfree[k]);
        }
        carry = vec![0.0; HIDDEN];
        matvec_t_acc(p.get(WHF), HIDDEN, HIDDEN, &dpre, &mut carry);
    }
    let mut carry = vec![0.0; HIDDEN];
    for t in 0..n {
        let mut g = dh[t][HIDDEN..].to_vec();
        add_assign(&mut g, &carry);
        let dpre = tanh_back(&cache.bwd[t], &g);
        let next = if t + 1 == n { &zero } else { &cache.bwd[t + 1] };
        if want_params {
            add_assign(dp.get_mut(BB), &dpre);
            outer_acc(dp.get_mut(WHB), &dpre, next);
            outer_acc(dp.get_mut(WXB), &dpre, &x_of(t));
        }
        if let SeqItem::Free(k) = input.items[t] {
            matvec_t_acc(p.get(WXB), HIDDEN, dim, &dpre, &mut dfree[k]);
        }
        carry = vec![0.0; HIDDEN];
        matvec_t_acc(p.get(WHB), HIDDEN, HIDDEN, &dpre, &mut carry);
    }
    dfree
}
