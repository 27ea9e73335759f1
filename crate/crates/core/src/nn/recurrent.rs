//! Fused GRU and LSTM layer kernels with hand-written backpropagation
//! through time.
//!
//! Gate layout along the `gates * h` axis: GRU `[reset, update, candidate]`,
//! LSTM `[input, forget, cell, output]`. The GRU candidate applies the reset
//! gate to the recurrent projection including its bias.

use super::tape::sigmoid;
use super::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Gru,
    Lstm,
}

impl CellKind {
    pub fn gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }
}

pub(crate) struct RecurrentCache {
    kind: CellKind,
    reverse: bool,
    hidden: usize,
    steps: usize,
    /// Post-activation gates per input row, `n x gates*h`.
    gates: Matrix,
    /// GRU: recurrent candidate projection `h W_hn + b_hn`; LSTM: cell state.
    aux: Matrix,
    /// Hidden state entering each row's step.
    h_prev: Matrix,
    /// LSTM: cell state entering each step.
    c_prev: Matrix,
}

fn order(n: usize, reverse: bool) -> impl DoubleEndedIterator<Item = usize> {
    (0..n).map(move |s| if reverse { n - 1 - s } else { s })
}

/// `out[g] = sum_k h[k] * w[k, g] + b[g]`.
fn vec_mat(h: &[f64], w: &Matrix, b: &[f64], out: &mut [f64]) {
    out.copy_from_slice(b);
    for (k, &hk) in h.iter().enumerate() {
        if hk == 0.0 {
            continue;
        }
        for (o, &wk) in out.iter_mut().zip(w.row(k)) {
            *o += hk * wk;
        }
    }
}

pub(crate) fn forward(kind: CellKind, xp: &Matrix, wh: &Matrix, bh: &Matrix, reverse: bool) -> (Matrix, RecurrentCache) {
    let hidden = wh.rows();
    let g = kind.gates() * hidden;
    assert_eq!(wh.cols(), g, "recurrent weight width");
    assert_eq!(xp.cols(), g, "recurrent input projection width");
    assert_eq!(bh.shape(), (1, g), "recurrent bias shape");
    let n = xp.rows();
    let mut out = Matrix::zeros(n, hidden);
    let mut gates = Matrix::zeros(n, g);
    let mut aux = Matrix::zeros(n, hidden);
    let mut h_prev = Matrix::zeros(n, hidden);
    let mut c_prev = Matrix::zeros(if kind == CellKind::Lstm { n } else { 0 }, hidden);
    let mut h = vec![0.0; hidden];
    let mut c = vec![0.0; hidden];
    let mut hh = vec![0.0; g];
    for t in order(n, reverse) {
        h_prev.row_mut(t).copy_from_slice(&h);
        vec_mat(&h, wh, bh.data(), &mut hh);
        let x = xp.row(t);
        match kind {
            CellKind::Gru => {
                let gr = gates.row_mut(t);
                for k in 0..hidden {
                    let r = sigmoid(x[k] + hh[k]);
                    let z = sigmoid(x[hidden + k] + hh[hidden + k]);
                    let cand = (x[2 * hidden + k] + r * hh[2 * hidden + k]).tanh();
                    gr[k] = r;
                    gr[hidden + k] = z;
                    gr[2 * hidden + k] = cand;
                    h[k] = (1.0 - z) * cand + z * h[k];
                }
                aux.row_mut(t).copy_from_slice(&hh[2 * hidden..]);
            }
            CellKind::Lstm => {
                c_prev.row_mut(t).copy_from_slice(&c);
                let gr = gates.row_mut(t);
                for k in 0..hidden {
                    let i = sigmoid(x[k] + hh[k]);
                    let f = sigmoid(x[hidden + k] + hh[hidden + k]);
                    let cg = (x[2 * hidden + k] + hh[2 * hidden + k]).tanh();
                    let o = sigmoid(x[3 * hidden + k] + hh[3 * hidden + k]);
                    gr[k] = i;
                    gr[hidden + k] = f;
                    gr[2 * hidden + k] = cg;
                    gr[3 * hidden + k] = o;
                    c[k] = f * c[k] + i * cg;
                    h[k] = o * c[k].tanh();
                }
                aux.row_mut(t).copy_from_slice(&c);
            }
        }
        out.row_mut(t).copy_from_slice(&h);
    }
    let cache = RecurrentCache { kind, reverse, hidden, steps: n, gates, aux, h_prev, c_prev };
    (out, cache)
}

/// Returns gradients for `(xp, wh, bh)` given the output gradient.
pub(crate) fn backward(cache: &RecurrentCache, wh: &Matrix, gout: &Matrix) -> (Matrix, Matrix, Matrix) {
    let hd = cache.hidden;
    let g = cache.kind.gates() * hd;
    let n = cache.steps;
    let mut gxp = Matrix::zeros(n, g);
    let mut gwh = Matrix::zeros(hd, g);
    let mut gbh = Matrix::zeros(1, g);
    let mut dh_next = vec![0.0; hd];
    let mut dc_next = vec![0.0; hd];
    let mut dpre = vec![0.0; g];
    for t in order(n, cache.reverse).rev() {
        let gr = cache.gates.row(t);
        let hp = cache.h_prev.row(t);
        let mut dh: Vec<f64> = gout.row(t).iter().zip(&dh_next).map(|(a, b)| a + b).collect();
        let dx = gxp.row_mut(t);
        match cache.kind {
            CellKind::Gru => {
                let hn = cache.aux.row(t);
                for k in 0..hd {
                    let (r, z, cand) = (gr[k], gr[hd + k], gr[2 * hd + k]);
                    let d_cand = dh[k] * (1.0 - z);
                    let dz = dh[k] * (hp[k] - cand);
                    let dn_pre = d_cand * (1.0 - cand * cand);
                    let dr = dn_pre * hn[k];
                    let dr_pre = dr * r * (1.0 - r);
                    let dz_pre = dz * z * (1.0 - z);
                    dx[k] = dr_pre;
                    dx[hd + k] = dz_pre;
                    dx[2 * hd + k] = dn_pre;
                    dpre[k] = dr_pre;
                    dpre[hd + k] = dz_pre;
                    dpre[2 * hd + k] = dn_pre * r;
                    dh[k] *= z;
                }
            }
            CellKind::Lstm => {
                let c_now = cache.aux.row(t);
                let cp = cache.c_prev.row(t);
                for k in 0..hd {
                    let (i, f, cg, o) = (gr[k], gr[hd + k], gr[2 * hd + k], gr[3 * hd + k]);
                    let tc = c_now[k].tanh();
                    let dc = dc_next[k] + dh[k] * o * (1.0 - tc * tc);
                    let d_o = dh[k] * tc;
                    let di = dc * cg;
                    let dcg = dc * i;
                    let df = dc * cp[k];
                    dc_next[k] = dc * f;
                    dpre[k] = di * i * (1.0 - i);
                    dpre[hd + k] = df * f * (1.0 - f);
                    dpre[2 * hd + k] = dcg * (1.0 - cg * cg);
                    dpre[3 * hd + k] = d_o * o * (1.0 - o);
                    dh[k] = 0.0;
                }
                dx.copy_from_slice(&dpre);
            }
        }
        // recurrent projection: hh = h_prev W + b
        for (acc, d) in gbh.data_mut().iter_mut().zip(&dpre) {
            *acc += d;
        }
        for k in 0..hd {
            if hp[k] != 0.0 {
                for (acc, d) in gwh.row_mut(k).iter_mut().zip(&dpre) {
                    *acc += hp[k] * d;
                }
            }
            let back: f64 = wh.row(k).iter().zip(&dpre).map(|(w, d)| w * d).sum();
            dh_next[k] = dh[k] + back;
        }
    }
    (gxp, gwh, gbh)
}
