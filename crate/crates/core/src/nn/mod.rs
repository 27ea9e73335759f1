//! Differentiable building blocks: a reverse-mode tape over dense matrices,
//! affine/convolution/normalisation/pooling primitives and three
//! sequence-to-sequence encoders.

pub mod gradcheck;
mod layers;
mod matrix;
mod params;
mod recurrent;
mod tape;

pub use layers::{
    sinusoidal_positions, BiRecurrent, Bind, Conv1d, LayerNorm, Linear, Mlp, S2sEncoder, S2sKind, TransformerLayer, CONV_TAPS,
    LAYER_NORM_EPS, RECURRENT_LAYERS, TRANSFORMER_HEADS,
};
pub use matrix::{gemm_into, Matrix};
pub use params::{init_uniform, Builder, ParamGrads, ParamId, ParamStore};
pub use recurrent::CellKind;
pub(crate) use tape::info_nce_value;
pub use tape::{Gradients, Pool, Tape, Var};

use crate::error::{arg, Result};

/// `W x + b` with `W` given as `d_out x d_in`.
pub fn linear_map(x: &[f64], w: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    if w.cols() != x.len() || w.rows() != b.len() {
        return arg(format!("linear_map shapes: W {:?}, x {}, b {}", w.shape(), x.len(), b.len()));
    }
    let xm = Matrix::from_vec(x.len(), 1, x.to_vec());
    let y = w.matmul(&xm);
    Ok(y.data().iter().zip(b).map(|(a, c)| a + c).collect())
}

/// Rearranges a kernel given in `[out][in][tap]` order into the
/// `(taps * in) x out` layout used by [`Conv1d`].
pub fn kernel_to_columns(kernel: &[f64], out: usize, input: usize) -> Result<Matrix> {
    if kernel.len() != out * input * CONV_TAPS {
        return arg(format!("kernel has {} values, expected {out}x{input}x{CONV_TAPS}", kernel.len()));
    }
    Ok(Matrix::from_fn(CONV_TAPS * input, out, |r, o| {
        let (tap, i) = (r / input, r % input);
        kernel[(o * input + i) * CONV_TAPS + tap]
    }))
}

/// 1-D cross-correlation along rows with 5 taps, stride 1 and zero padding 2.
/// `kernel` is in `[out][in][tap]` order.
pub fn conv1d(seq: &Matrix, kernel: &[f64], out: usize, bias: &[f64]) -> Result<Matrix> {
    if seq.rows() == 0 {
        return arg("conv1d needs a non-empty sequence");
    }
    if bias.len() != out {
        return arg(format!("conv1d bias has {} values, expected {out}", bias.len()));
    }
    let cols = kernel_to_columns(kernel, out, seq.cols())?;
    let mut tape = Tape::new();
    let x = tape.input(seq.clone());
    let k = tape.input(cols);
    let b = tape.input(Matrix::row_vector(bias.to_vec()));
    let y = layers::conv1d_var(&mut tape, x, k, b);
    Ok(tape.value(y).clone())
}

/// Layer normalisation of one vector with `1/d` variance.
pub fn layer_norm_op(x: &[f64], gain: &[f64], shift: &[f64], eps: f64) -> Result<Vec<f64>> {
    if x.is_empty() || gain.len() != x.len() || shift.len() != x.len() {
        return arg("layer_norm_op shape mismatch");
    }
    let mut tape = Tape::new();
    let xv = tape.input(Matrix::row_vector(x.to_vec()));
    let g = tape.input(Matrix::row_vector(gain.to_vec()));
    let s = tape.input(Matrix::row_vector(shift.to_vec()));
    let y = tape.layer_norm(xv, g, s, eps);
    Ok(tape.value(y).data().to_vec())
}

/// Kernel-2, stride-2 max pooling along rows; an odd trailing row is dropped.
pub fn maxpool1d(seq: &Matrix) -> Result<Matrix> {
    let mut tape = Tape::new();
    let x = tape.input(seq.clone());
    let y = tape.pair_pool(x, Pool::Max)?;
    Ok(tape.value(y).clone())
}

/// Runs a sequence encoder on `n x input` tokens.
pub fn s2s_encode(seq: &Matrix, encoder: &S2sEncoder, input_width: usize, store: &ParamStore) -> Result<Matrix> {
    if seq.cols() != input_width {
        return arg(format!("s2s input width {} does not match model width {input_width}", seq.cols()));
    }
    if seq.rows() == 0 {
        return arg("s2s_encode needs a non-empty sequence");
    }
    let mut tape = Tape::new();
    let x = tape.input(seq.clone());
    let y = encoder.forward(&mut tape, Bind::new(store, 0), x);
    Ok(tape.value(y).clone())
}
