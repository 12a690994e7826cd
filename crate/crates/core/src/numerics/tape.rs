//! Reverse-mode differentiation over dense matrix operations.
//!
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order; `backward` walks it once in reverse.

use std::rc::Rc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::tensor::gemm;
use crate::numerics::{Scalar, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    MatMulBt { a: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    ScaleRows(Var, Rc<Vec<T>>),
    Gelu(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, rstd: Vec<T> },
    Mask(Var, Vec<T>),
    ConcatCols(Var, Var),
    StackRows(Vec<Var>),
    GatherRows(Var, Rc<Vec<usize>>),
    ScatterAddRows(Var, Rc<Vec<usize>>),
    BroadcastRow(Var),
    SegmentAttention { q: Var, k: Var, v: Var, seg: Rc<Vec<usize>>, heads: usize, scale: T, probs: Vec<T> },
    SegmentMean { a: Var, seg: Rc<Vec<usize>>, inv_count: Vec<T> },
    Softmax(Var),
    L2NormalizeRows { a: Var, norms: Vec<T> },
    NllSum { logits: Var, gold: Vec<usize>, probs: Vec<T> },
    Sum(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Operation recorder for one forward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Tape::new()
    }
}

fn gelu_cdf<T: Scalar>(x: T) -> T {
    let half = T::from_f64_lossy(0.5);
    half * (T::one() + (x * T::from_f64_lossy(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

fn gelu_pdf<T: Scalar>(x: T) -> T {
    let inv_sqrt_2pi = T::from_f64_lossy(0.398_942_280_401_432_7);
    inv_sqrt_2pi * (-(x * x) * T::from_f64_lossy(0.5)).exp()
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Tape<T> {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// Differentiable leaf.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// `x W^T + b` row-wise: `x` is `n x d_in`, `W` is `d_out x d_in`, `b` is `1 x d_out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xs, ws) = (self.shape(x), self.shape(w));
        if xs[1] != ws[1] {
            return Err(Error::shape("linear", format!("input {xs:?} vs weight {ws:?}")));
        }
        if let Some(b) = b {
            let bs = self.shape(b);
            if bs != [1, ws[0]] {
                return Err(Error::shape("linear", format!("bias {bs:?} for weight {ws:?}")));
            }
        }
        let mut out = Tensor::zeros(xs[0], ws[0]);
        gemm(T::one(), self.value(x), false, self.value(w), true, T::zero(), &mut out);
        if let Some(b) = b {
            let bias = self.value(b).data().to_vec();
            for r in 0..out.rows() {
                for (o, &bv) in out.row_mut(r).iter_mut().zip(&bias) {
                    *o = *o + bv;
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        Ok(self.push(out, Op::Linear { x, w, b }, rg))
    }

    /// `a b^T`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[1] != sb[1] {
            return Err(Error::shape("matmul_bt", format!("{sa:?} vs {sb:?}")));
        }
        let mut out = Tensor::zeros(sa[0], sb[0]);
        gemm(T::one(), self.value(a), false, self.value(b), true, T::zero(), &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMulBt { a, b }, rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(va.rows(), va.cols(), data).expect("same shape")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_map(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_map(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_map(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    /// Multiply row `i` by the constant `scales[i]`.
    pub fn scale_rows(&mut self, a: Var, scales: Rc<Vec<T>>) -> Result<Var> {
        let v = self.value(a);
        if scales.len() != v.rows() {
            return Err(Error::shape("scale_rows", format!("{} scales for {} rows", scales.len(), v.rows())));
        }
        let mut out = v.clone();
        for (r, &s) in scales.iter().enumerate() {
            for o in out.row_mut(r) {
                *o = *o * s;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::ScaleRows(a, scales), rg))
    }

    /// Exact GELU, `x * Phi(x)`.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * gelu_cdf(x));
        let rg = self.rg(a);
        self.push(out, Op::Gelu(a), rg)
    }

    /// Row-wise layer normalization with affine `gain` and `bias` (`1 x d`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let xs = self.shape(x);
        if self.shape(gain) != [1, xs[1]] || self.shape(bias) != [1, xs[1]] {
            return Err(Error::shape("layer_norm", format!("affine params for width {}", xs[1])));
        }
        let (n, d) = (xs[0], xs[1]);
        let eps = T::from_f64_lossy(LAYER_NORM_EPS);
        let inv_d = T::one() / T::from_usize(d).expect("width");
        let xv = self.value(x);
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![T::zero(); n * d];
        let mut rstd = vec![T::zero(); n];
        let mut out = Tensor::zeros(n, d);
        for r in 0..n {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            let orow = out.row_mut(r);
            for c in 0..d {
                let h = (row[c] - mean) * rs;
                xhat[r * d + c] = h;
                orow[c] = h * g[c] + b[c];
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, xhat, rstd }, rg))
    }

    /// Inverted dropout. Identity (same `Var`) when not training or `rate == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: &mut R, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(a).len())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        Ok(self.apply_mask(a, mask))
    }

    /// Elementwise product with a constant mask.
    pub fn apply_mask(&mut self, a: Var, mask: Vec<T>) -> Var {
        let v = self.value(a);
        let data = v.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let out = Tensor::from_vec(v.rows(), v.cols(), data).expect("mask length");
        let rg = self.rg(a);
        self.push(out, Op::Mask(a, mask), rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[0] != sb[0] {
            return Err(Error::shape("concat_cols", format!("{sa:?} vs {sb:?}")));
        }
        let mut out = Tensor::zeros(sa[0], sa[1] + sb[1]);
        for r in 0..sa[0] {
            let (va, vb) = (self.value(a).row(r), self.value(b).row(r));
            let orow = out.row_mut(r);
            orow[..sa[1]].copy_from_slice(va);
            orow[sa[1]..].copy_from_slice(vb);
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::ConcatCols(a, b), rg))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        self.stack_rows(&[a, b])
    }

    /// Vertical concatenation of any number of blocks with equal width.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::shape("stack_rows", "no blocks"));
        };
        let cols = self.shape(first)[1];
        if let Some(&bad) = parts.iter().find(|&&p| self.shape(p)[1] != cols) {
            return Err(Error::shape("stack_rows", format!("width {} vs {cols}", self.shape(bad)[1])));
        }
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
            rows += self.shape(p)[0];
        }
        let out = Tensor::from_vec(rows, cols, data).expect("shape");
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::StackRows(parts.to_vec()), rg))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Rc<Vec<usize>>) -> Result<Var> {
        let rows = self.shape(a)[0];
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::shape("gather_rows", format!("row {bad} of {rows}")));
        }
        let out = self.value(a).gather_rows(&idx);
        let rg = self.rg(a);
        Ok(self.push(out, Op::GatherRows(a, idx), rg))
    }

    /// `out[idx[i]] += a[i]` into `n_out` zero-initialized rows.
    pub fn scatter_add_rows(&mut self, a: Var, idx: Rc<Vec<usize>>, n_out: usize) -> Result<Var> {
        let sa = self.shape(a);
        if idx.len() != sa[0] || idx.iter().any(|&i| i >= n_out) {
            return Err(Error::shape("scatter_add_rows", "index list does not fit"));
        }
        let mut out = Tensor::zeros(n_out, sa[1]);
        let va = self.value(a);
        for (i, &t) in idx.iter().enumerate() {
            for (o, &x) in out.row_mut(t).iter_mut().zip(va.row(i)) {
                *o = *o + x;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::ScatterAddRows(a, idx), rg))
    }

    /// Repeat a `1 x d` row `n` times.
    pub fn broadcast_row(&mut self, a: Var, n: usize) -> Result<Var> {
        let sa = self.shape(a);
        if sa[0] != 1 {
            return Err(Error::shape("broadcast_row", format!("{sa:?} is not a row")));
        }
        let row = self.value(a).data().to_vec();
        let mut data = Vec::with_capacity(n * sa[1]);
        for _ in 0..n {
            data.extend_from_slice(&row);
        }
        let out = Tensor::from_vec(n, sa[1], data).expect("shape");
        let rg = self.rg(a);
        Ok(self.push(out, Op::BroadcastRow(a), rg))
    }

    /// Multi-head scaled dot-product attention where key/value row `j`
    /// belongs to query row `seg[j]`. Query rows with no keys produce zeros.
    pub fn segment_attention(&mut self, q: Var, k: Var, v: Var, seg: Rc<Vec<usize>>, heads: usize) -> Result<Var> {
        let (sq, sk, sv) = (self.shape(q), self.shape(k), self.shape(v));
        let d = sq[1];
        if heads == 0 || d % heads != 0 {
            return Err(Error::shape("attention", format!("width {d} not divisible by {heads} heads")));
        }
        if sk[1] != d || sv != sk || seg.len() != sk[0] || seg.iter().any(|&t| t >= sq[0]) {
            return Err(Error::shape("attention", format!("q {sq:?} k {sk:?} v {sv:?} seg {}", seg.len())));
        }
        let dh = d / heads;
        let scale = T::one() / T::from_usize(dh).expect("dim").sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let n_t = sq[0];
        let n_j = sk[0];
        let mut scores = vec![T::zero(); n_j * heads];
        let mut maxes = vec![T::neg_infinity(); n_t * heads];
        for j in 0..n_j {
            let t = seg[j];
            let (qr, kr) = (qv.row(t), kv.row(j));
            for h in 0..heads {
                let s = (h * dh..(h + 1) * dh).map(|c| qr[c] * kr[c]).sum::<T>() * scale;
                scores[j * heads + h] = s;
                let m = &mut maxes[t * heads + h];
                if s > *m {
                    *m = s;
                }
            }
        }
        let mut sums = vec![T::zero(); n_t * heads];
        for j in 0..n_j {
            let t = seg[j];
            for h in 0..heads {
                let e = (scores[j * heads + h] - maxes[t * heads + h]).exp();
                scores[j * heads + h] = e;
                sums[t * heads + h] = sums[t * heads + h] + e;
            }
        }
        let mut out = Tensor::zeros(n_t, d);
        for j in 0..n_j {
            let t = seg[j];
            let vr = vv.row(j);
            for h in 0..heads {
                let p = scores[j * heads + h] / sums[t * heads + h];
                scores[j * heads + h] = p;
                let orow = out.row_mut(t);
                for c in h * dh..(h + 1) * dh {
                    orow[c] = orow[c] + p * vr[c];
                }
            }
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(
            out,
            Op::SegmentAttention {
                q,
                k,
                v,
                seg,
                heads,
                scale,
                probs: scores,
            },
            rg,
        ))
    }

    /// Row `t` of the output is the mean of the rows `j` with `seg[j] == t`
    /// (zero when there are none).
    pub fn segment_mean(&mut self, a: Var, seg: Rc<Vec<usize>>, n_out: usize) -> Result<Var> {
        let sa = self.shape(a);
        if seg.len() != sa[0] || seg.iter().any(|&t| t >= n_out) {
            return Err(Error::shape("segment_mean", "segment ids do not fit"));
        }
        let mut counts = vec![0usize; n_out];
        for &t in seg.iter() {
            counts[t] += 1;
        }
        let inv_count: Vec<T> = counts
            .iter()
            .map(|&c| if c == 0 { T::zero() } else { T::one() / T::from_usize(c).expect("count") })
            .collect();
        let mut out = Tensor::zeros(n_out, sa[1]);
        let va = self.value(a);
        for (j, &t) in seg.iter().enumerate() {
            let w = inv_count[t];
            for (o, &x) in out.row_mut(t).iter_mut().zip(va.row(j)) {
                *o = *o + w * x;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::SegmentMean { a, seg, inv_count }, rg))
    }

    /// Mean over all rows, `1 x d`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let n = self.shape(a)[0];
        if n == 0 {
            return Err(Error::shape("mean_rows", "empty input"));
        }
        self.segment_mean(a, Rc::new(vec![0; n]), 1)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        let rg = self.rg(a);
        self.push(out, Op::Softmax(a), rg)
    }

    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let tiny = T::from_f64_lossy(1e-12);
        let mut out = va.clone();
        let mut norms = Vec::with_capacity(va.rows());
        for r in 0..va.rows() {
            let n = va.row(r).iter().map(|&x| x * x).sum::<T>().sqrt().max(tiny);
            norms.push(n);
            for o in out.row_mut(r) {
                *o = *o / n;
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::L2NormalizeRows { a, norms }, rg)
    }

    /// Sum over rows of `-log softmax(logits[r])[gold[r]]`, as a `1 x 1` tensor.
    pub fn nll_sum(&mut self, logits: Var, gold: Vec<usize>) -> Result<Var> {
        let sl = self.shape(logits);
        if gold.len() != sl[0] {
            return Err(Error::shape("nll_sum", format!("{} gold labels for {} rows", gold.len(), sl[0])));
        }
        if let Some(&g) = gold.iter().find(|&&g| g >= sl[1]) {
            return Err(Error::Query(format!("gold index {g} outside {} candidates", sl[1])));
        }
        let probs = softmax_rows(self.value(logits));
        let mut loss = T::zero();
        let lv = self.value(logits);
        for (r, &g) in gold.iter().enumerate() {
            let row = lv.row(r);
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<T>().ln();
            loss = loss + (lse - row[g]);
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::row_vector(vec![loss]),
            Op::NllSum {
                logits,
                gold,
                probs: probs.into_vec(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Tensor::row_vector(vec![s]), Op::Sum(a), rg)
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.shape(loss) != [1, 1] {
            return Err(Error::shape("backward", format!("loss has shape {:?}", self.shape(loss))));
        }
        if !self.rg(loss) {
            return Err(Error::Numerical("loss does not depend on any differentiable leaf".into()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut visits = vec![0u32; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(1, 1, T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            visits[i] += 1;
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads, visits })
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[i];
        let acc = |v: Var, delta: Tensor<T>, grads: &mut [Option<Tensor<T>>]| {
            if !self.rg(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                if self.rg(*x) {
                    let mut dx = Tensor::zeros(self.shape(*x)[0], self.shape(*x)[1]);
                    gemm(T::one(), g, false, self.value(*w), false, T::zero(), &mut dx);
                    acc(*x, dx, grads);
                }
                if self.rg(*w) {
                    let mut dw = Tensor::zeros(self.shape(*w)[0], self.shape(*w)[1]);
                    gemm(T::one(), g, true, self.value(*x), false, T::zero(), &mut dw);
                    acc(*w, dw, grads);
                }
                if let Some(b) = b {
                    if self.rg(*b) {
                        let mut db = Tensor::zeros(1, g.cols());
                        for r in 0..g.rows() {
                            for (o, &x) in db.data_mut().iter_mut().zip(g.row(r)) {
                                *o = *o + x;
                            }
                        }
                        acc(*b, db, grads);
                    }
                }
            }
            Op::MatMulBt { a, b } => {
                if self.rg(*a) {
                    let mut da = Tensor::zeros(self.shape(*a)[0], self.shape(*a)[1]);
                    gemm(T::one(), g, false, self.value(*b), false, T::zero(), &mut da);
                    acc(*a, da, grads);
                }
                if self.rg(*b) {
                    let mut db = Tensor::zeros(self.shape(*b)[0], self.shape(*b)[1]);
                    gemm(T::one(), g, true, self.value(*a), false, T::zero(), &mut db);
                    acc(*b, db, grads);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone(), grads);
                acc(*b, g.clone(), grads);
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone(), grads);
                acc(*b, g.map(|x| -x), grads);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let ga = zip(g, vb, |x, y| x * y);
                let gb = zip(g, va, |x, y| x * y);
                acc(*a, ga, grads);
                acc(*b, gb, grads);
            }
            Op::Scale(a, s) => acc(*a, g.map(|x| x * *s), grads),
            Op::ScaleRows(a, scales) => {
                let mut d = g.clone();
                for (r, &s) in scales.iter().enumerate() {
                    for o in d.row_mut(r) {
                        *o = *o * s;
                    }
                }
                acc(*a, d, grads);
            }
            Op::Gelu(a) => {
                let d = zip(g, self.value(*a), |gy, x| gy * (gelu_cdf(x) + x * gelu_pdf(x)));
                acc(*a, d, grads);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let (n, d) = (g.rows(), g.cols());
                let gv = self.value(*gain).data();
                if self.rg(*gain) || self.rg(*bias) {
                    let mut dg = Tensor::zeros(1, d);
                    let mut db = Tensor::zeros(1, d);
                    for r in 0..n {
                        let gr = g.row(r);
                        for c in 0..d {
                            dg.data_mut()[c] = dg.data()[c] + gr[c] * xhat[r * d + c];
                            db.data_mut()[c] = db.data()[c] + gr[c];
                        }
                    }
                    acc(*gain, dg, grads);
                    acc(*bias, db, grads);
                }
                if self.rg(*x) {
                    let inv_d = T::one() / T::from_usize(d).expect("width");
                    let mut dx = Tensor::zeros(n, d);
                    for r in 0..n {
                        let gr = g.row(r);
                        let xh = &xhat[r * d..(r + 1) * d];
                        let mut mean_dh = T::zero();
                        let mut mean_dh_xh = T::zero();
                        for c in 0..d {
                            let dh = gr[c] * gv[c];
                            mean_dh = mean_dh + dh;
                            mean_dh_xh = mean_dh_xh + dh * xh[c];
                        }
                        mean_dh = mean_dh * inv_d;
                        mean_dh_xh = mean_dh_xh * inv_d;
                        let out = dx.row_mut(r);
                        for c in 0..d {
                            let dh = gr[c] * gv[c];
                            out[c] = rstd[r] * (dh - mean_dh - xh[c] * mean_dh_xh);
                        }
                    }
                    acc(*x, dx, grads);
                }
            }
            Op::Mask(a, mask) => {
                let data = g.data().iter().zip(mask).map(|(&x, &m)| x * m).collect();
                acc(*a, Tensor::from_vec(g.rows(), g.cols(), data).expect("shape"), grads);
            }
            Op::ConcatCols(a, b) => {
                let (wa, wb) = (self.shape(*a)[1], self.shape(*b)[1]);
                let mut da = Tensor::zeros(g.rows(), wa);
                let mut db = Tensor::zeros(g.rows(), wb);
                for r in 0..g.rows() {
                    da.row_mut(r).copy_from_slice(&g.row(r)[..wa]);
                    db.row_mut(r).copy_from_slice(&g.row(r)[wa..]);
                }
                acc(*a, da, grads);
                acc(*b, db, grads);
            }
            Op::StackRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let rows = self.shape(p)[0];
                    let span = start * g.cols()..(start + rows) * g.cols();
                    acc(p, Tensor::from_vec(rows, g.cols(), g.data()[span].to_vec()).expect("shape"), grads);
                    start += rows;
                }
            }
            Op::GatherRows(a, idx) => {
                if self.rg(*a) {
                    let mut da = Tensor::zeros(self.shape(*a)[0], g.cols());
                    for (i, &src) in idx.iter().enumerate() {
                        for (o, &x) in da.row_mut(src).iter_mut().zip(g.row(i)) {
                            *o = *o + x;
                        }
                    }
                    acc(*a, da, grads);
                }
            }
            Op::ScatterAddRows(a, idx) => {
                if self.rg(*a) {
                    acc(*a, g.gather_rows(idx), grads);
                }
            }
            Op::BroadcastRow(a) => {
                let mut da = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, &x) in da.data_mut().iter_mut().zip(g.row(r)) {
                        *o = *o + x;
                    }
                }
                acc(*a, da, grads);
            }
            Op::SegmentAttention {
                q,
                k,
                v,
                seg,
                heads,
                scale,
                probs,
            } => {
                let heads = *heads;
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let (n_t, d) = (qv.rows(), qv.cols());
                let n_j = kv.rows();
                let dh = d / heads;
                let mut dprob = vec![T::zero(); n_j * heads];
                let mut dv = Tensor::zeros(n_j, d);
                for j in 0..n_j {
                    let t = seg[j];
                    let (gr, vr) = (g.row(t), vv.row(j));
                    let dvr = dv.row_mut(j);
                    for h in 0..heads {
                        let p = probs[j * heads + h];
                        let mut s = T::zero();
                        for c in h * dh..(h + 1) * dh {
                            s = s + gr[c] * vr[c];
                            dvr[c] = p * gr[c];
                        }
                        dprob[j * heads + h] = s;
                    }
                }
                let mut dots = vec![T::zero(); n_t * heads];
                for j in 0..n_j {
                    let t = seg[j];
                    for h in 0..heads {
                        dots[t * heads + h] = dots[t * heads + h] + probs[j * heads + h] * dprob[j * heads + h];
                    }
                }
                let mut dq = Tensor::zeros(n_t, d);
                let mut dk = Tensor::zeros(n_j, d);
                for j in 0..n_j {
                    let t = seg[j];
                    for h in 0..heads {
                        let ds = probs[j * heads + h] * (dprob[j * heads + h] - dots[t * heads + h]) * *scale;
                        for c in h * dh..(h + 1) * dh {
                            let kval = kv.get(j, c);
                            let qval = qv.get(t, c);
                            dq.data_mut()[t * d + c] = dq.data()[t * d + c] + ds * kval;
                            dk.data_mut()[j * d + c] = ds * qval;
                        }
                    }
                }
                acc(*q, dq, grads);
                acc(*k, dk, grads);
                acc(*v, dv, grads);
            }
            Op::SegmentMean { a, seg, inv_count } => {
                let mut da = Tensor::zeros(seg.len(), g.cols());
                for (j, &t) in seg.iter().enumerate() {
                    let w = inv_count[t];
                    for (o, &x) in da.row_mut(j).iter_mut().zip(g.row(t)) {
                        *o = w * x;
                    }
                }
                acc(*a, da, grads);
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let mut da = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum::<T>();
                    for (o, (&p, &q)) in da.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = p * (q - dot);
                    }
                }
                acc(*a, da, grads);
            }
            Op::L2NormalizeRows { a, norms } => {
                let y = &node.value;
                let mut da = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum::<T>();
                    for (o, (&p, &q)) in da.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = (q - p * dot) / norms[r];
                    }
                }
                acc(*a, da, grads);
            }
            Op::NllSum { logits, gold, probs } => {
                let gs = g.scalar();
                let cols = self.shape(*logits)[1];
                let mut d = Tensor::from_vec(gold.len(), cols, probs.clone()).expect("shape");
                for (r, &gi) in gold.iter().enumerate() {
                    d.data_mut()[r * cols + gi] = d.data()[r * cols + gi] - T::one();
                }
                d.scale_assign(gs);
                acc(*logits, d, grads);
            }
            Op::Sum(a) => {
                let s = self.shape(*a);
                acc(*a, Tensor::filled(s[0], s[1], g.scalar()), grads);
            }
        }
    }
}

fn zip<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    for r in 0..x.rows() {
        let row = out.row_mut(r);
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s = s + *v;
        }
        for v in row.iter_mut() {
            *v = *v / s;
        }
    }
    out
}

/// Result of [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    visits: Vec<u32>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0].take()
    }

    /// How many times backward processed each node (0 or 1).
    pub fn visits(&self) -> &[u32] {
        &self.visits
    }
}
