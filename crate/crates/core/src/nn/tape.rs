//! Reverse-mode automatic differentiation over [`Matrix`] values.
//!
//! A [`Tape`] records one forward evaluation; [`Tape::backward`] walks it in
//! reverse. Parameters enter through [`Tape::param`], which borrows the
//! tensor from its store and tags it with a set index so that gradients for
//! several stores (query and key networks) can be told apart.

use std::borrow::Cow;
use std::collections::HashMap;
use std::hash::{DefaultHasher, Hash, Hasher};

use super::recurrent::{self, CellKind, RecurrentCache};
use super::{Matrix, ParamGrads, ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pool {
    Max,
    Mean,
}

enum Op<'p> {
    Input,
    Param,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    LayerNorm { x: Var, gain: Var, shift: Var, xhat: Matrix, inv_std: Vec<f64> },
    Im2Col { x: Var, taps: usize },
    PairPool { x: Var, pool: Pool, arg: Vec<usize> },
    MaxRows { x: Var, arg: Vec<usize> },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    SoftmaxRows(Var),
    L2NormalizeRows { x: Var, norms: Vec<f64> },
    Recurrent { xp: Var, wh: Var, bh: Var, cache: Box<RecurrentCache> },
    InfoNce { anchor: Var, positives: Var, negatives: &'p Matrix, tau: f64, weights: Vec<f64> },
    Sum(Var),
    Detach,
}

struct Node<'p> {
    value: Cow<'p, Matrix>,
    op: Op<'p>,
}

#[derive(Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
    params: HashMap<(u8, ParamId), Var>,
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'p, Matrix>, op: Op<'p>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn owned(&mut self, value: Matrix, op: Op<'p>) -> Var {
        self.push(Cow::Owned(value), op)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// A differentiable input that is not a parameter.
    pub fn input(&mut self, m: Matrix) -> Var {
        self.owned(m, Op::Input)
    }

    /// Parameter leaf; repeated requests return the same node.
    pub fn param(&mut self, set: u8, store: &'p ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&(set, id)) {
            return v;
        }
        let v = self.push(Cow::Borrowed(store.get(id)), Op::Param);
        self.params.insert((set, id), v);
        v
    }

    /// Copy of `x` that blocks gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let v = self.value(x).clone();
        self.owned(v, Op::Detach)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.owned(v, Op::MatMul(a, b))
    }

    /// `a * b^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(false, self.value(b), true);
        self.owned(v, Op::MatMulNT(a, b))
    }

    /// Adds the `1 x n` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(bv.shape(), (1, av.cols()), "add_row shape mismatch");
        let mut v = av.clone();
        for r in 0..v.rows() {
            for (x, y) in v.row_mut(r).iter_mut().zip(bv.data()) {
                *x += y;
            }
        }
        self.owned(v, Op::AddRow(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "add shape mismatch");
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.owned(v, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).shape(), self.value(b).shape(), "mul shape mismatch");
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.owned(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.owned(v, Op::Scale(a, s))
    }

    /// Hash of every ReLU gate and max-pool choice on the tape. Two
    /// evaluations with equal signatures lie on the same smooth piece of a
    /// piecewise-smooth function.
    pub fn branch_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(a) => self.value(*a).data().iter().for_each(|&v| (v > 0.0).hash(&mut h)),
                Op::PairPool { arg, .. } | Op::MaxRows { arg, .. } => arg.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.owned(v, Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.owned(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.owned(v, Op::Tanh(a))
    }

    /// Per-row layer normalisation with `1/d` variance.
    pub fn layer_norm(&mut self, x: Var, gain: Var, shift: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (n, d) = xv.shape();
        let (g, s) = (self.value(gain), self.value(shift));
        assert_eq!(g.shape(), (1, d));
        assert_eq!(s.shape(), (1, d));
        let mut xhat = Matrix::zeros(n, d);
        let mut out = Matrix::zeros(n, d);
        let mut inv_std = Vec::with_capacity(n);
        for r in 0..n {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for c in 0..d {
                let h = (row[c] - mean) * is;
                xhat.set(r, c, h);
                out.set(r, c, h * g.data()[c] + s.data()[c]);
            }
        }
        self.owned(out, Op::LayerNorm { x, gain, shift, xhat, inv_std })
    }

    /// Unfolds `x` (`n x c`) into `n x (taps * c)` windows centred on each
    /// row with zero padding; column `k * c + ch` holds row `t + k - taps/2`.
    pub fn im2col(&mut self, x: Var, taps: usize) -> Var {
        assert!(taps % 2 == 1, "im2col needs an odd tap count");
        let xv = self.value(x);
        let (n, c) = xv.shape();
        let half = taps / 2;
        let mut out = Matrix::zeros(n, taps * c);
        for t in 0..n {
            for k in 0..taps {
                let src = t + k;
                if src < half || src - half >= n {
                    continue;
                }
                out.row_mut(t)[k * c..(k + 1) * c].copy_from_slice(xv.row(src - half));
            }
        }
        self.owned(out, Op::Im2Col { x, taps })
    }

    /// Non-overlapping pooling of row pairs; a trailing odd row is dropped.
    pub fn pair_pool(&mut self, x: Var, pool: Pool) -> Result<Var> {
        let xv = self.value(x);
        let (n, c) = xv.shape();
        if n < 2 {
            return Err(Error::Argument(format!("pooling needs at least 2 positions, got {n}")));
        }
        let m = n / 2;
        let mut out = Matrix::zeros(m, c);
        let mut arg = Vec::new();
        if pool == Pool::Max {
            arg.reserve(m * c);
        }
        for r in 0..m {
            let (a, b) = (xv.row(2 * r), xv.row(2 * r + 1));
            for ch in 0..c {
                let v = match pool {
                    Pool::Max => {
                        let pick_b = b[ch] > a[ch];
                        arg.push(2 * r + pick_b as usize);
                        if pick_b {
                            b[ch]
                        } else {
                            a[ch]
                        }
                    }
                    Pool::Mean => 0.5 * (a[ch] + b[ch]),
                };
                out.set(r, ch, v);
            }
        }
        Ok(self.owned(out, Op::PairPool { x, pool, arg }))
    }

    /// Column-wise max over all rows, giving `1 x c`. Ties go to the first row.
    pub fn max_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let (n, c) = xv.shape();
        assert!(n > 0, "max over an empty sequence");
        let mut out = Matrix::zeros(1, c);
        let mut arg = vec![0usize; c];
        for ch in 0..c {
            let mut best = xv.get(0, ch);
            for r in 1..n {
                let v = xv.get(r, ch);
                if v > best {
                    best = v;
                    arg[ch] = r;
                }
            }
            out.set(0, ch, best);
        }
        self.owned(out, Op::MaxRows { x, arg })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let n = self.value(parts[0]).rows();
        let width: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Matrix::zeros(n, width);
        let mut off = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.rows(), n, "concat_cols row mismatch");
            for r in 0..n {
                out.row_mut(r)[off..off + pv.cols()].copy_from_slice(pv.row(r));
            }
            off += pv.cols();
        }
        self.owned(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let c = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols(), c, "concat_rows column mismatch");
            data.extend_from_slice(pv.data());
            rows += pv.rows();
        }
        self.owned(Matrix::from_vec(rows, c, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Var {
        let xv = self.value(x);
        assert!(start + width <= xv.cols());
        let out = Matrix::from_fn(xv.rows(), width, |r, c| xv.get(r, start + c));
        self.owned(out, Op::SliceCols { x, start })
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, count: usize) -> Var {
        let xv = self.value(x);
        assert!(start + count <= xv.rows());
        let c = xv.cols();
        let out = Matrix::from_vec(count, c, xv.data()[start * c..(start + count) * c].to_vec());
        self.owned(out, Op::SliceRows { x, start })
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut out = xv.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        self.owned(out, Op::SoftmaxRows(x))
    }

    /// Scales every row to unit L2 norm. Fails on a zero row.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let mut out = xv.clone();
        let mut norms = Vec::with_capacity(xv.rows());
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(n > 0.0) || !n.is_finite() {
                return Err(Error::ZeroNorm);
            }
            for v in row.iter_mut() {
                *v /= n;
            }
            norms.push(n);
        }
        Ok(self.owned(out, Op::L2NormalizeRows { x, norms }))
    }

    /// Runs one recurrent layer direction over precomputed input projections
    /// `xp` (`n x gates*h`) with recurrent weights `wh` (`h x gates*h`) and
    /// bias `bh` (`1 x gates*h`). Output is `n x h`, row `t` aligned with
    /// input row `t` in both directions.
    pub fn recurrent(&mut self, kind: CellKind, xp: Var, wh: Var, bh: Var, reverse: bool) -> Var {
        let (out, cache) = recurrent::forward(kind, self.value(xp), self.value(wh), self.value(bh), reverse);
        self.owned(out, Op::Recurrent { xp, wh, bh, cache: Box::new(cache) })
    }

    /// `-log(sum_p e^{a.p/tau} / (sum_p e^{a.p/tau} + sum_m e^{a.m/tau}))`
    /// for a `1 x d` anchor, `P x d` positives and `K x d` negatives.
    pub fn info_nce(&mut self, anchor: Var, positives: Var, negatives: &'p Matrix, tau: f64) -> Result<Var> {
        let (a, p) = (self.value(anchor), self.value(positives));
        let d = a.cols();
        if a.rows() != 1 || p.cols() != d || negatives.cols() != d {
            return Err(Error::Argument(format!(
                "info_nce shape mismatch: anchor {:?}, positives {:?}, negatives {:?}",
                a.shape(),
                p.shape(),
                negatives.shape()
            )));
        }
        if p.rows() == 0 || negatives.rows() == 0 {
            return Err(Error::Argument("info_nce needs at least one positive and one negative".into()));
        }
        if !(tau > 0.0) {
            return Err(Error::Argument(format!("temperature must be > 0, got {tau}")));
        }
        let logits_pos = p.matmul_t(false, a, true);
        let logits_neg = negatives.matmul_t(false, a, true);
        let (loss, weights) = info_nce_value(logits_pos.data(), logits_neg.data(), tau);
        Ok(self.owned(Matrix::from_vec(1, 1, vec![loss]), Op::InfoNce { anchor, positives, negatives, tau, weights }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.owned(Matrix::from_vec(1, 1, vec![s]), Op::Sum(x))
    }

    /// Gradients of the `1 x 1` node `root` with respect to every node.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).shape(), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::filled(1, 1, 1.0));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            let g = match &node.op {
                Op::Input | Op::Param | Op::Detach => continue,
                _ => match grads[i].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            self.backprop_node(node, &g, &mut grads);
        }
        let mut params = HashMap::new();
        for (&(set, id), &v) in &self.params {
            if let Some(g) = grads[v.0].take() {
                params.insert((set, id), g);
            }
        }
        Gradients { nodes: grads, params }
    }

    fn backprop_node(&self, node: &Node<'p>, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let val = |v: Var| -> &Matrix { &self.nodes[v.0].value };
        match &node.op {
            Op::Input | Op::Param | Op::Detach => {}
            Op::MatMul(a, b) => {
                let ga = g.matmul_t(false, val(*b), true);
                let gb = val(*a).matmul_t(true, g, false);
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::MatMulNT(a, b) => {
                let ga = g.matmul(val(*b));
                let gb = g.matmul_t(true, val(*a), false);
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::AddRow(a, b) => {
                let mut gb = Matrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (acc, x) in gb.data_mut().iter_mut().zip(g.row(r)) {
                        *acc += x;
                    }
                }
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, gb);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                let ga = g.zip_map(val(*b), |x, y| x * y);
                let gb = g.zip_map(val(*a), |x, y| x * y);
                accumulate(grads, *a, ga);
                accumulate(grads, *b, gb);
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.map(|x| x * s)),
            Op::Relu(a) => {
                let ga = g.zip_map(val(*a), |d, x| if x > 0.0 { d } else { 0.0 });
                accumulate(grads, *a, ga);
            }
            Op::Sigmoid(a) => {
                let ga = g.zip_map(&node.value, |d, y| d * y * (1.0 - y));
                accumulate(grads, *a, ga);
            }
            Op::Tanh(a) => {
                let ga = g.zip_map(&node.value, |d, y| d * (1.0 - y * y));
                accumulate(grads, *a, ga);
            }
            Op::LayerNorm { x, gain, shift, xhat, inv_std } => {
                let (n, d) = g.shape();
                let gv = val(*gain);
                let mut gx = Matrix::zeros(n, d);
                let mut ggain = Matrix::zeros(1, d);
                let mut gshift = Matrix::zeros(1, d);
                for r in 0..n {
                    let (gr, hr) = (g.row(r), xhat.row(r));
                    let mut sum_dh = 0.0;
                    let mut sum_dh_h = 0.0;
                    for c in 0..d {
                        let dh = gr[c] * gv.data()[c];
                        sum_dh += dh;
                        sum_dh_h += dh * hr[c];
                        ggain.data_mut()[c] += gr[c] * hr[c];
                        gshift.data_mut()[c] += gr[c];
                    }
                    let k = inv_std[r] / d as f64;
                    let out = gx.row_mut(r);
                    for c in 0..d {
                        let dh = gr[c] * gv.data()[c];
                        out[c] = k * (d as f64 * dh - sum_dh - hr[c] * sum_dh_h);
                    }
                }
                accumulate(grads, *x, gx);
                accumulate(grads, *gain, ggain);
                accumulate(grads, *shift, gshift);
            }
            Op::Im2Col { x, taps } => {
                let (n, c) = val(*x).shape();
                let half = taps / 2;
                let mut gx = Matrix::zeros(n, c);
                for t in 0..n {
                    for k in 0..*taps {
                        let src = t + k;
                        if src < half || src - half >= n {
                            continue;
                        }
                        let dst = gx.row_mut(src - half);
                        for (d, s) in dst.iter_mut().zip(&g.row(t)[k * c..(k + 1) * c]) {
                            *d += s;
                        }
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::PairPool { x, pool, arg } => {
                let (n, c) = val(*x).shape();
                let mut gx = Matrix::zeros(n, c);
                for r in 0..g.rows() {
                    for ch in 0..c {
                        let d = g.get(r, ch);
                        match pool {
                            Pool::Max => {
                                let src = arg[r * c + ch];
                                gx.set(src, ch, gx.get(src, ch) + d);
                            }
                            Pool::Mean => {
                                gx.set(2 * r, ch, gx.get(2 * r, ch) + 0.5 * d);
                                gx.set(2 * r + 1, ch, gx.get(2 * r + 1, ch) + 0.5 * d);
                            }
                        }
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::MaxRows { x, arg } => {
                let (n, c) = val(*x).shape();
                let mut gx = Matrix::zeros(n, c);
                for ch in 0..c {
                    gx.set(arg[ch], ch, g.get(0, ch));
                }
                accumulate(grads, *x, gx);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (n, w) = val(p).shape();
                    let gp = Matrix::from_fn(n, w, |r, c| g.get(r, off + c));
                    off += w;
                    accumulate(grads, p, gp);
                }
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut off = 0;
                for &p in parts {
                    let n = val(p).rows();
                    let gp = Matrix::from_vec(n, c, g.data()[off * c..(off + n) * c].to_vec());
                    off += n;
                    accumulate(grads, p, gp);
                }
            }
            Op::SliceCols { x, start } => {
                let (n, c) = val(*x).shape();
                let mut gx = Matrix::zeros(n, c);
                for r in 0..n {
                    gx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                }
                accumulate(grads, *x, gx);
            }
            Op::SliceRows { x, start } => {
                let (n, c) = val(*x).shape();
                let mut gx = Matrix::zeros(n, c);
                gx.data_mut()[start * c..(start + g.rows()) * c].copy_from_slice(g.data());
                accumulate(grads, *x, gx);
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let mut gx = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: f64 = y.row(r).iter().zip(g.row(r)).map(|(a, b)| a * b).sum();
                    for c in 0..y.cols() {
                        gx.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::L2NormalizeRows { x, norms } => {
                let y = &node.value;
                let mut gx = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: f64 = y.row(r).iter().zip(g.row(r)).map(|(a, b)| a * b).sum();
                    for c in 0..y.cols() {
                        gx.set(r, c, (g.get(r, c) - y.get(r, c) * dot) / norms[r]);
                    }
                }
                accumulate(grads, *x, gx);
            }
            Op::Recurrent { xp, wh, bh, cache } => {
                let (gxp, gwh, gbh) = recurrent::backward(cache, val(*wh), g);
                accumulate(grads, *xp, gxp);
                accumulate(grads, *wh, gwh);
                accumulate(grads, *bh, gbh);
            }
            Op::InfoNce { anchor, positives, negatives, tau, weights } => {
                // d loss / d logit_j = weights[j]; logit = row . anchor / tau
                let (a, p) = (val(*anchor), val(*positives));
                let up = g.get(0, 0) / tau;
                let n_pos = p.rows();
                let mut ga = Matrix::zeros(1, a.cols());
                let mut gp = Matrix::zeros(n_pos, a.cols());
                for j in 0..n_pos {
                    let w = weights[j] * up;
                    for (acc, x) in ga.data_mut().iter_mut().zip(p.row(j)) {
                        *acc += w * x;
                    }
                    for (acc, x) in gp.row_mut(j).iter_mut().zip(a.data()) {
                        *acc = w * x;
                    }
                }
                for j in 0..negatives.rows() {
                    let w = weights[n_pos + j] * up;
                    for (acc, x) in ga.data_mut().iter_mut().zip(negatives.row(j)) {
                        *acc += w * x;
                    }
                }
                accumulate(grads, *anchor, ga);
                accumulate(grads, *positives, gp);
            }
            Op::Sum(x) => {
                let (n, c) = val(*x).shape();
                accumulate(grads, *x, Matrix::filled(n, c, g.get(0, 0)));
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Loss value and `d loss / d logit` for positive then negative logits
/// (already dot products; divided by `tau` here). Uses a max shift.
pub(crate) fn info_nce_value(pos: &[f64], neg: &[f64], tau: f64) -> (f64, Vec<f64>) {
    let scaled = |x: &f64| x / tau;
    let m = pos.iter().chain(neg).map(scaled).fold(f64::NEG_INFINITY, f64::max);
    let e_pos: Vec<f64> = pos.iter().map(|x| (scaled(x) - m).exp()).collect();
    let e_neg: Vec<f64> = neg.iter().map(|x| (scaled(x) - m).exp()).collect();
    let s_pos: f64 = e_pos.iter().sum();
    let s_all = s_pos + e_neg.iter().sum::<f64>();
    let loss = s_all.ln() - s_pos.ln();
    let mut w = Vec::with_capacity(pos.len() + neg.len());
    w.extend(e_pos.iter().map(|e| e / s_all - e / s_pos));
    w.extend(e_neg.iter().map(|e| e / s_all));
    (loss, w)
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    nodes: Vec<Option<Matrix>>,
    params: HashMap<(u8, ParamId), Matrix>,
}

impl Gradients {
    /// Gradient of an input or intermediate node (`None` if it does not
    /// influence the root).
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.nodes[v.0].as_ref()
    }

    /// Gradients for parameter set `set`, zero where a parameter is unused.
    pub fn param_grads(&self, set: u8, store: &ParamStore) -> ParamGrads {
        let mut out = ParamGrads::zeros_like(store);
        for id in store.ids() {
            if let Some(g) = self.params.get(&(set, id)) {
                out.values[id.index()] = g.clone();
            }
        }
        out
    }
}
