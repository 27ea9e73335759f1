use rand::Rng;

use super::params::Builder;
use super::recurrent::CellKind;
use super::{Matrix, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const CONV_TAPS: usize = 5;

/// A parameter store bound to a tape set index.
#[derive(Clone, Copy)]
pub struct Bind<'p> {
    pub store: &'p ParamStore,
    pub set: u8,
}

impl<'p> Bind<'p> {
    pub fn new(store: &'p ParamStore, set: u8) -> Self {
        Self { store, set }
    }

    pub fn var(&self, tape: &mut Tape<'p>, id: ParamId) -> Var {
        tape.param(self.set, self.store, id)
    }
}

/// Affine map `x W + b` on rows; `W` is stored `in x out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, name: &str, input: usize, output: usize) -> Self {
        b.scoped(name, |b| Self { w: b.uniform("w", input, output, input), b: b.uniform("b", 1, output, input), input, output })
    }

    pub fn forward<'p>(&self, tape: &mut Tape<'p>, p: Bind<'p>, x: Var) -> Var {
        let w = p.var(tape, self.w);
        let b = p.var(tape, self.b);
        let xw = tape.matmul(x, w);
        tape.add_row(xw, b)
    }
}

/// Two affine layers with a ReLU in between.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, name: &str, input: usize, hidden: usize, output: usize) -> Self {
        b.scoped(name, |b| Self { first: Linear::new(b, "fc1", input, hidden), second: Linear::new(b, "fc2", hidden, output) })
    }

    pub fn forward<'p>(&self, tape: &mut Tape<'p>, p: Bind<'p>, x: Var) -> Var {
        let h = self.first.forward(tape, p, x);
        let h = tape.relu(h);
        self.second.forward(tape, p, h)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl LayerNorm {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, name: &str, width: usize) -> Self {
        b.scoped(name, |b| Self { gain: b.constant("gain", 1, width, 1.0), shift: b.constant("shift", 1, width, 0.0) })
    }

    pub fn forward<'p>(&self, tape: &mut Tape<'p>, p: Bind<'p>, x: Var) -> Var {
        let g = p.var(tape, self.gain);
        let s = p.var(tape, self.shift);
        tape.layer_norm(x, g, s, LAYER_NORM_EPS)
    }
}

/// Stride-1, 5-tap convolution along the sequence axis with zero padding 2.
/// The kernel is stored as a `(5 * in) x out` matrix whose row
/// `tap * in + channel` holds the weights applied to `x[t + tap - 2][channel]`.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub kernel: ParamId,
    pub bias: ParamId,
}

impl Conv1d {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, name: &str, input: usize, output: usize) -> Self {
        let fan_in = input * CONV_TAPS;
        b.scoped(name, |b| Self { kernel: b.uniform("kernel", fan_in, output, fan_in), bias: b.uniform("bias", 1, output, fan_in) })
    }

    pub fn forward<'p>(&self, tape: &mut Tape<'p>, p: Bind<'p>, x: Var) -> Var {
        let k = p.var(tape, self.kernel);
        let b = p.var(tape, self.bias);
        conv1d_var(tape, x, k, b)
    }
}

pub(crate) fn conv1d_var(tape: &mut Tape<'_>, x: Var, kernel: Var, bias: Var) -> Var {
    let cols = tape.im2col(x, CONV_TAPS);
    let y = tape.matmul(cols, kernel);
    tape.add_row(y, bias)
}

/// One direction of one recurrent layer.
#[derive(Debug, Clone)]
struct Direction {
    input: Linear,
    wh: ParamId,
    bh: ParamId,
}

/// Stacked bidirectional GRU or LSTM. Output width is `2 * per_direction`
/// taken from the top layer.
#[derive(Debug, Clone)]
pub struct BiRecurrent {
    pub kind: CellKind,
    pub per_direction: usize,
    layers: Vec<[Direction; 2]>,
}

impl BiRecurrent {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, kind: CellKind, input: usize, per_direction: usize, layers: usize) -> Self {
        let g = kind.gates() * per_direction;
        let layers = (0..layers)
            .map(|l| {
                let width = if l == 0 { input } else { 2 * per_direction };
                b.scoped(&format!("layer{l}"), |b| {
                    ["fwd", "bwd"].map(|dir| {
                        b.scoped(dir, |b| Direction {
                            input: Linear::new(b, "input", width, g),
                            wh: b.uniform("wh", per_direction, g, per_direction),
                            bh: b.uniform("bh", 1, g, per_direction),
                        })
                    })
                })
            })
            .collect();
        Self { kind, per_direction, layers }
    }

    pub fn forward<'p>(&self, tape: &mut Tape<'p>, p: Bind<'p>, x: Var) -> Var {
        let mut h = x;
        for layer in &self.layers {
            let outs: Vec<Var> = layer
                .iter()
                .zip([false, true])
                .map(|(d, reverse)| {
                    let xp = d.input.forward(tape, p, h);
                    let wh = p.var(tape, d.wh);
                    let bh = p.var(tape, d.bh);
                    tape.recurrent(self.kind, xp, wh, bh, reverse)
                })
                .collect();
            h = tape.concat_cols(&outs);
        }
        h
    }
}

/// Fixed sinusoidal position table, `n x d`.
pub fn sinusoidal_positions(n: usize, d: usize) -> Matrix {
    Matrix::from_fn(n, d, |pos, i| {
        let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
        let a = pos as f64 * freq;
        if i % 2 == 0 {
            a.sin()
        } else {
            a.cos()
        }
    })
}

/// Single pre-norm Transformer encoder layer followed by a final layer norm:
/// `h = x + MHA(LN1(x))`, `y = LN_f(h + FF(LN2(h)))`, with sinusoidal
/// positions added to the (optionally projected) input.
#[derive(Debug, Clone)]
pub struct TransformerLayer {
    pub width: usize,
    pub heads: usize,
    input: Option<Linear>,
    ln1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    pub attn_out: Linear,
    ln2: LayerNorm,
    ff1: Linear,
    pub ff2: Linear,
    ln_final: LayerNorm,
}

impl TransformerLayer {
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, input: usize, width: usize, heads: usize, ff_width: usize) -> Result<Self> {
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(Error::Argument(format!("width {width} is not divisible by {heads} heads")));
        }
        Ok(Self {
            width,
            heads,
            input: (input != width).then(|| Linear::new(b, "input", input, width)),
            ln1: LayerNorm::new(b, "ln1", width),
            q: Linear::new(b, "q", width, width),
            k: Linear::new(b, "k", width, width),
            v: Linear::new(b, "v", width, width),
            attn_out: Linear::new(b, "attn_out", width, width),
            ln2: LayerNorm::new(b, "ln2", width),
            ff1: Linear::new(b, "ff1", width, ff_width),
            ff2: Linear::new(b, "ff2", ff_width, width),
            ln_final: LayerNorm::new(b, "ln_final", width),
        })
    }

    pub fn forward<'p>(&self, tape: &mut Tape<'p>, p: Bind<'p>, x: Var) -> Var {
        let x = match &self.input {
            Some(l) => l.forward(tape, p, x),
            None => x,
        };
        let n = tape.value(x).rows();
        let pos = tape.input(sinusoidal_positions(n, self.width));
        let x0 = tape.add(x, pos);

        let a = self.ln1.forward(tape, p, x0);
        let (q, k, v) = (self.q.forward(tape, p, a), self.k.forward(tape, p, a), self.v.forward(tape, p, a));
        let dh = self.width / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let heads: Vec<Var> = (0..self.heads)
            .map(|h| {
                let qh = tape.slice_cols(q, h * dh, dh);
                let kh = tape.slice_cols(k, h * dh, dh);
                let vh = tape.slice_cols(v, h * dh, dh);
                let s = tape.matmul_nt(qh, kh);
                let s = tape.scale(s, scale);
                let att = tape.softmax_rows(s);
                tape.matmul(att, vh)
            })
            .collect();
        let o = tape.concat_cols(&heads);
        let o = self.attn_out.forward(tape, p, o);
        let x1 = tape.add(x0, o);

        let f = self.ln2.forward(tape, p, x1);
        let f = self.ff1.forward(tape, p, f);
        let f = tape.relu(f);
        let f = self.ff2.forward(tape, p, f);
        let x2 = tape.add(x1, f);
        self.ln_final.forward(tape, p, x2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum S2sKind {
    Gru,
    Lstm,
    Transformer,
}

impl S2sKind {
    pub fn as_str(self) -> &'static str {
        match self {
            S2sKind::Gru => "gru",
            S2sKind::Lstm => "lstm",
            S2sKind::Transformer => "transformer",
        }
    }
}

impl std::str::FromStr for S2sKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gru" => Ok(S2sKind::Gru),
            "lstm" => Ok(S2sKind::Lstm),
            "transformer" => Ok(S2sKind::Transformer),
            other => Err(Error::Argument(format!("unknown sequence encoder {other:?} (gru|lstm|transformer)"))),
        }
    }
}

/// Sequence-to-sequence encoder: maps `n x input` tokens to `n x width`.
#[derive(Debug, Clone)]
pub enum S2sEncoder {
    Recurrent(BiRecurrent),
    Transformer(TransformerLayer),
}

pub const RECURRENT_LAYERS: usize = 2;
pub const TRANSFORMER_HEADS: usize = 8;

impl S2sEncoder {
    /// GRU/LSTM: two stacked bidirectional layers of `width / 2` units each.
    /// Transformer: one layer of model width `width`, 8 heads (fewer if
    /// `width` is not divisible by 8), feed-forward width `2 * width`.
    pub fn new<R: Rng>(b: &mut Builder<'_, R>, kind: S2sKind, input: usize, width: usize) -> Result<Self> {
        match kind {
            S2sKind::Gru | S2sKind::Lstm => {
                if width < 2 || !width.is_multiple_of(2) {
                    return Err(Error::Argument(format!("bidirectional width must be even, got {width}")));
                }
                let cell = if kind == S2sKind::Gru { CellKind::Gru } else { CellKind::Lstm };
                Ok(Self::Recurrent(BiRecurrent::new(b, cell, input, width / 2, RECURRENT_LAYERS)))
            }
            S2sKind::Transformer => {
                let heads = (1..=TRANSFORMER_HEADS).rev().find(|h| width.is_multiple_of(*h)).unwrap_or(1);
                Ok(Self::Transformer(TransformerLayer::new(b, input, width, heads, 2 * width)?))
            }
        }
    }

    pub fn forward<'p>(&self, tape: &mut Tape<'p>, p: Bind<'p>, x: Var) -> Var {
        match self {
            Self::Recurrent(r) => r.forward(tape, p, x),
            Self::Transformer(t) => t.forward(tape, p, x),
        }
    }
}
