//! Graph matching network over mnemonic-class bags.
//!
//! Both graphs are propagated jointly. Each round a node combines its state,
//! the sum of its neighbours and a cross-graph term `h_i − Σ_j a_ij h'_j`
//! where `a_i·` is a softmax over dot products with the other graph's nodes.
//! A gated sum then pools the nodes and the pooled vectors are compared by
//! squared distance.
//!
//! ```text
//! h⁰_v   = tanh(We ln(1 + x_v) + be)
//! hᵗ⁺¹_v = tanh(Wu [hᵗ_v ; Σ_{u ∈ N(v)} hᵗ_u ; μᵗ_v] + bu)
//! g      = Σ_v σ(Wg h_v + bg) ⊙ tanh(Wo h_v + bo)
//! z      = tanh(Wh g + bh)
//! sim    = 2 σ(−κ ‖z − z'‖² / D)
//! ```
//! The computation treats both arguments identically, so the score is
//! symmetric without averaging over argument orders.

use super::linalg::{
    add_assign, dot, matvec_acc, matvec_t_acc, outer_acc, sigmoid, softmax, softmax_back, tanh_back, tanh_in_place,
    Params, TensorSpec,
};
use super::GraphInput;
use crate::asm::GMN_CLASSES;

pub const WIDTH: usize = 16;
pub const ROUNDS: usize = 2;
pub const OUT: usize = 16;
/// Sharpness of the distance-to-similarity map.
pub const KAPPA: f64 = 2.0;

const WE: usize = 0;
const BE: usize = 1;
const WU: usize = 2;
const BU: usize = 3;
const WG: usize = 4;
const BG: usize = 5;
const WO: usize = 6;
const BO: usize = 7;
const WH: usize = 8;
const BH: usize = 9;

pub fn specs() -> Vec<TensorSpec> {
    vec![
        TensorSpec::new("we", &[WIDTH, GMN_CLASSES]),
        TensorSpec::new("be", &[WIDTH]),
        TensorSpec::new("wu", &[WIDTH, 3 * WIDTH]),
        TensorSpec::new("bu", &[WIDTH]),
        TensorSpec::new("wg", &[OUT, WIDTH]),
        TensorSpec::new("bg", &[OUT]),
        TensorSpec::new("wo", &[OUT, WIDTH]),
        TensorSpec::new("bo", &[OUT]),
        TensorSpec::new("wh", &[OUT, OUT]),
        TensorSpec::new("bh", &[OUT]),
    ]
}

struct Side {
    xt: Vec<Vec<f64>>,
    /// hᵗ for t = 0..=ROUNDS.
    h: Vec<Vec<Vec<f64>>>,
    /// Concatenated update inputs and cross-attention weights per round.
    cat: Vec<Vec<Vec<f64>>>,
    att: Vec<Vec<Vec<f64>>>,
    gate: Vec<Vec<f64>>,
    val: Vec<Vec<f64>>,
    g: Vec<f64>,
    z: Vec<f64>,
}

pub struct Cache {
    sides: [Side; 2],
    d: f64,
}

fn encode(p: &Params, input: &GraphInput) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let xt: Vec<Vec<f64>> = input.rows.iter().map(|r| r.iter().map(|x| x.ln_1p()).collect()).collect();
    let we = p.get(WE);
    let h0 = xt
        .iter()
        .map(|x| {
            let mut v = p.get(BE).to_vec();
            for (k, xk) in x.iter().enumerate() {
                if *xk != 0.0 {
                    for (r, o) in v.iter_mut().enumerate() {
                        *o += we[r * GMN_CLASSES + k] * xk;
                    }
                }
            }
            tanh_in_place(&mut v);
            v
        })
        .collect();
    (xt, h0)
}

/// One propagation round for the nodes `h` of one graph against `other`.
fn propagate(
    p: &Params,
    adj: &[Vec<usize>],
    h: &[Vec<f64>],
    other: &[Vec<f64>],
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut cats = Vec::with_capacity(h.len());
    let mut atts = Vec::with_capacity(h.len());
    let next = h
        .iter()
        .zip(adj)
        .map(|(hv, nb)| {
            let mut m = vec![0.0; WIDTH];
            for &u in nb {
                add_assign(&mut m, &h[u]);
            }
            let a = if other.is_empty() {
                Vec::new()
            } else {
                softmax(&other.iter().map(|o| dot(hv, o)).collect::<Vec<_>>())
            };
            let mut mu = hv.clone();
            for (aj, o) in a.iter().zip(other) {
                for (x, y) in mu.iter_mut().zip(o) {
                    *x -= aj * y;
                }
            }
            let cat: Vec<f64> = hv.iter().chain(&m).chain(&mu).copied().collect();
            let mut out = p.get(BU).to_vec();
            matvec_acc(p.get(WU), WIDTH, 3 * WIDTH, &cat, &mut out);
            tanh_in_place(&mut out);
            cats.push(cat);
            atts.push(a);
            out
        })
        .collect();
    (next, cats, atts)
}

fn pool(p: &Params, h: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let mut g = vec![0.0; OUT];
    let mut gates = Vec::with_capacity(h.len());
    let mut vals = Vec::with_capacity(h.len());
    for hv in h {
        let mut gate = p.get(BG).to_vec();
        matvec_acc(p.get(WG), OUT, WIDTH, hv, &mut gate);
        gate.iter_mut().for_each(|x| *x = sigmoid(*x));
        let mut val = p.get(BO).to_vec();
        matvec_acc(p.get(WO), OUT, WIDTH, hv, &mut val);
        tanh_in_place(&mut val);
        for k in 0..OUT {
            g[k] += gate[k] * val[k];
        }
        gates.push(gate);
        vals.push(val);
    }
    let mut z = p.get(BH).to_vec();
    matvec_acc(p.get(WH), OUT, OUT, &g, &mut z);
    tanh_in_place(&mut z);
    (gates, vals, g, z)
}

pub fn forward(p: &Params, a: &GraphInput, b: &GraphInput) -> (f64, Cache) {
    let (xa, ha) = encode(p, a);
    let (xb, hb) = encode(p, b);
    let mut h = [vec![ha], vec![hb]];
    let mut cat = [Vec::new(), Vec::new()];
    let mut att = [Vec::new(), Vec::new()];
    for t in 0..ROUNDS {
        let (na, ca, aa) = propagate(p, &a.adj, &h[0][t], &h[1][t]);
        let (nb, cb, ab) = propagate(p, &b.adj, &h[1][t], &h[0][t]);
        h[0].push(na);
        h[1].push(nb);
        cat[0].push(ca);
        cat[1].push(cb);
        att[0].push(aa);
        att[1].push(ab);
    }
    let [h0, h1] = h;
    let [c0, c1] = cat;
    let [a0, a1] = att;
    let side = |xt, h: Vec<Vec<Vec<f64>>>, cat, att| {
        let (gate, val, g, z) = pool(p, &h[ROUNDS]);
        Side { xt, h, cat, att, gate, val, g, z }
    };
    let s0 = side(xa, h0, c0, a0);
    let s1 = side(xb, h1, c1, a1);
    let d: f64 = s0.z.iter().zip(&s1.z).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / OUT as f64;
    let sim = (2.0 * sigmoid(-KAPPA * d)).min(1.0);
    (sim, Cache { sides: [s0, s1], d })
}

/// Gradients of `sim` (scaled by `dsim`): parameters into `dp`, raw node
/// rows of both inputs returned.
pub fn backward(
    p: &Params,
    inputs: [&GraphInput; 2],
    cache: &Cache,
    dsim: f64,
    dp: &mut Params,
) -> [Vec<Vec<f64>>; 2] {
    let s = sigmoid(-KAPPA * cache.d);
    let dd = dsim * 2.0 * s * (1.0 - s) * -KAPPA;
    let [s0, s1] = &cache.sides;
    let dz0: Vec<f64> = s0.z.iter().zip(&s1.z).map(|(x, y)| dd * 2.0 * (x - y) / OUT as f64).collect();
    let dz1: Vec<f64> = dz0.iter().map(|x| -x).collect();

    // pooling
    let mut dh: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
    for (k, (side, dz)) in [(s0, dz0), (s1, dz1)].into_iter().enumerate() {
        let dpre = tanh_back(&side.z, &dz);
        outer_acc(dp.get_mut(WH), &dpre, &side.g);
        add_assign(dp.get_mut(BH), &dpre);
        let mut dg = vec![0.0; OUT];
        matvec_t_acc(p.get(WH), OUT, OUT, &dpre, &mut dg);
        dh[k] = side.h[ROUNDS]
            .iter()
            .zip(side.gate.iter().zip(&side.val))
            .map(|(hv, (gate, val))| {
                let dpg: Vec<f64> = (0..OUT).map(|i| dg[i] * val[i] * gate[i] * (1.0 - gate[i])).collect();
                let dval: Vec<f64> = (0..OUT).map(|i| dg[i] * gate[i]).collect();
                let dpo = tanh_back(val, &dval);
                outer_acc(dp.get_mut(WG), &dpg, hv);
                add_assign(dp.get_mut(BG), &dpg);
                outer_acc(dp.get_mut(WO), &dpo, hv);
                add_assign(dp.get_mut(BO), &dpo);
                let mut d = vec![0.0; WIDTH];
                matvec_t_acc(p.get(WG), OUT, WIDTH, &dpg, &mut d);
                matvec_t_acc(p.get(WO), OUT, WIDTH, &dpo, &mut d);
                d
            })
            .collect();
    }

    // propagation rounds, both graphs together
    for t in (0..ROUNDS).rev() {
        let mut dprev = [vec![vec![0.0; WIDTH]; s0.h[t].len()], vec![vec![0.0; WIDTH]; s1.h[t].len()]];
        for k in 0..2 {
            let side = &cache.sides[k];
            let other_h = &cache.sides[1 - k].h[t];
            for v in 0..side.h[t].len() {
                let dpre = tanh_back(&side.h[t + 1][v], &dh[k][v]);
                outer_acc(dp.get_mut(WU), &dpre, &side.cat[t][v]);
                add_assign(dp.get_mut(BU), &dpre);
                let mut dcat = vec![0.0; 3 * WIDTH];
                matvec_t_acc(p.get(WU), WIDTH, 3 * WIDTH, &dpre, &mut dcat);
                add_assign(&mut dprev[k][v], &dcat[..WIDTH]);
                for &u in &inputs[k].adj[v] {
                    add_assign(&mut dprev[k][u], &dcat[WIDTH..2 * WIDTH]);
                }
                let dmu = &dcat[2 * WIDTH..];
                add_assign(&mut dprev[k][v], dmu);
                let a = &side.att[t][v];
                if a.is_empty() {
                    continue;
                }
                // c = Σ_j a_j h'_j enters μ with a minus sign
                let da: Vec<f64> = other_h.iter().map(|o| -dot(dmu, o)).collect();
                for (j, aj) in a.iter().enumerate() {
                    for (x, g) in dprev[1 - k][j].iter_mut().zip(dmu) {
                        *x -= aj * g;
                    }
                }
                let dscore = softmax_back(a, &da);
                let hv = &side.h[t][v];
                for (j, ds) in dscore.iter().enumerate() {
                    for i in 0..WIDTH {
                        dprev[k][v][i] += ds * other_h[j][i];
                        dprev[1 - k][j][i] += ds * hv[i];
                    }
                }
            }
        }
        dh = dprev;
    }

    // encoder
    let mut dx: [Vec<Vec<f64>>; 2] = [Vec::new(), Vec::new()];
    for k in 0..2 {
        let side = &cache.sides[k];
        dx[k] = side.h[0]
            .iter()
            .zip(&dh[k])
            .zip(side.xt.iter().zip(&inputs[k].rows))
            .map(|((h0, dhv), (xt, x))| {
                let dpre = tanh_back(h0, dhv);
                add_assign(dp.get_mut(BE), &dpre);
                let dwe = dp.get_mut(WE);
                for (c, xc) in xt.iter().enumerate() {
                    if *xc != 0.0 {
                        for (r, g) in dpre.iter().enumerate() {
                            dwe[r * GMN_CLASSES + c] += g * xc;
                        }
                    }
                }
                let mut dxt = vec![0.0; GMN_CLASSES];
                matvec_t_acc(p.get(WE), WIDTH, GMN_CLASSES, &dpre, &mut dxt);
                dxt.iter().zip(x).map(|(d, x)| d / (1.0 + x)).collect()
            })
            .collect();
    }
    dx
}
