//! Small dense helpers over row-major `f64` slices, plus the flat parameter
//! store shared by all model families.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng;

/// `out = W x` for a `rows × cols` matrix.
pub fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        let row = &w[r * cols..(r + 1) * cols];
        *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

/// `out += W x`.
pub fn matvec_acc(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        let row = &w[r * cols..(r + 1) * cols];
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `dx += Wᵀ dy`.
pub fn matvec_t_acc(w: &[f64], rows: usize, cols: usize, dy: &[f64], dx: &mut [f64]) {
    for (r, g) in dy.iter().enumerate().take(rows) {
        if *g == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (d, a) in dx.iter_mut().zip(row) {
            *d += g * a;
        }
    }
}

/// `dW += dy xᵀ`.
pub fn outer_acc(dw: &mut [f64], dy: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, g) in dy.iter().enumerate() {
        if *g == 0.0 {
            continue;
        }
        for (d, a) in dw[r * cols..(r + 1) * cols].iter_mut().zip(x) {
            *d += g * a;
        }
    }
}

pub fn add_assign(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

pub fn tanh_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = x.tanh());
}

/// `dy ⊙ (1 − y²)`: gradient through `y = tanh(·)`.
pub fn tanh_back(y: &[f64], dy: &[f64]) -> Vec<f64> {
    y.iter().zip(dy).map(|(y, g)| g * (1.0 - y * y)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Softmax of `v`, shifted by its maximum.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Gradient through `a = softmax(s)`: `a ⊙ (da − ⟨a, da⟩)`.
pub fn softmax_back(a: &[f64], da: &[f64]) -> Vec<f64> {
    let inner = dot(a, da);
    a.iter().zip(da).map(|(a, d)| a * (d - inner)).collect()
}

/// Cosine of `a` and `b`, clamped to `[-1, 1]`. Two zero vectors count as
/// identical (1); one zero vector as orthogonal (0).
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (ab, aa, bb) = (dot(a, b), dot(a, a), dot(b, b));
    match (aa == 0.0, bb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => (ab / (aa * bb).sqrt()).clamp(-1.0, 1.0),
    }
}

/// Cosine with its gradients with respect to both arguments.
pub fn cosine_with_grad(a: &[f64], b: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let (ab, aa, bb) = (dot(a, b), dot(a, a), dot(b, b));
    if aa == 0.0 || bb == 0.0 {
        return (cosine(a, b), vec![0.0; a.len()], vec![0.0; b.len()]);
    }
    let norm = (aa * bb).sqrt();
    let c = ab / norm;
    let da = a.iter().zip(b).map(|(x, y)| y / norm - c * x / aa).collect();
    let db = a.iter().zip(b).map(|(x, y)| x / norm - c * y / bb).collect();
    (c.clamp(-1.0, 1.0), da, db)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn new(name: &str, shape: &[usize]) -> Self {
        Self { name: name.to_string(), shape: shape.to_vec() }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Named tensors packed into one flat vector. Values are always exactly
/// representable as `f32`, so weight files round-trip losslessly.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    specs: Vec<TensorSpec>,
    offsets: Vec<usize>,
    pub data: Vec<f64>,
}

impl Params {
    pub fn zeros(specs: Vec<TensorSpec>) -> Self {
        let mut offsets = Vec::with_capacity(specs.len() + 1);
        let mut at = 0;
        for s in &specs {
            offsets.push(at);
            at += s.numel();
        }
        offsets.push(at);
        Self { specs, offsets, data: vec![0.0; at] }
    }

    /// Matrices drawn from U(−a, a) with `a = sqrt(6 / (fan_in + fan_out))`;
    /// vectors start at zero.
    pub fn init(specs: Vec<TensorSpec>, seed: u64) -> Self {
        let mut p = Self::zeros(specs);
        let mut r = rng::stream(seed, 0x7765_6967);
        for i in 0..p.specs.len() {
            let shape = p.specs[i].shape.clone();
            if shape.len() == 2 {
                let a = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                for x in p.get_mut(i) {
                    *x = r.gen_range(-a..a);
                }
            }
        }
        p.round_to_f32();
        p
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.data[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[self.offsets[i]..self.offsets[i + 1]]
    }

    /// A zeroed gradient buffer with the same layout.
    pub fn zeros_like(&self) -> Self {
        Self { specs: self.specs.clone(), offsets: self.offsets.clone(), data: vec![0.0; self.data.len()] }
    }

    pub fn round_to_f32(&mut self) {
        self.data.iter_mut().for_each(|x| *x = *x as f32 as f64);
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_gradient_matches_finite_differences() {
        let a = [0.3, -1.2, 0.7];
        let b = [1.1, 0.4, -0.5];
        let (_, da, db) = cosine_with_grad(&a, &b);
        let h = 1e-6;
        for i in 0..3 {
            let mut ap = a;
            ap[i] += h;
            let mut am = a;
            am[i] -= h;
            assert!(((cosine(&ap, &b) - cosine(&am, &b)) / (2.0 * h) - da[i]).abs() < 1e-8);
            let mut bp = b;
            bp[i] += h;
            let mut bm = b;
            bm[i] -= h;
            assert!(((cosine(&a, &bp) - cosine(&a, &bm)) / (2.0 * h) - db[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn cosine_of_identical_vectors_is_exactly_one() {
        let mut r = rng::stream(1, 2);
        for _ in 0..1000 {
            let v: Vec<f64> = (0..16).map(|_| r.gen_range(-3.0..3.0)).collect();
            assert_eq!(cosine(&v, &v), 1.0);
        }
        assert_eq!(cosine(&[0.0, 0.0], &[0.0, 0.0]), 1.0);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
    }

    #[test]
    fn softmax_backward() {
        let s = [0.2, -0.4, 1.3];
        let da = [0.5, -1.0, 0.25];
        let g = softmax_back(&softmax(&s), &da);
        let h = 1e-6;
        for i in 0..3 {
            let mut sp = s;
            sp[i] += h;
            let mut sm = s;
            sm[i] -= h;
            let f = |v: &[f64]| dot(&softmax(v), &da);
            assert!(((f(&sp) - f(&sm)) / (2.0 * h) - g[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn params_layout() {
        let p = Params::init(vec![TensorSpec::new("w", &[3, 4]), TensorSpec::new("b", &[3])], 1);
        assert_eq!(p.len(), 15);
        assert_eq!(p.get(1), &[0.0; 3]);
        assert!(p.get(0).iter().all(|x| *x as f32 as f64 == *x && *x != 0.0));
    }
}
