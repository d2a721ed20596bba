//! Direct (tape-free) layer evaluations used by the inference and streaming
//! paths. These mirror the tape ops bit-for-bit so that batch inference,
//! streaming inference and the training graph agree.

use super::{sc, Scalar};

/// `y = x · W + b` for a single row `x: [in]`, `w: [in, out]` row-major.
pub fn fc<F: Scalar>(x: &[F], w: &[F], b: &[F], out: &mut [F]) {
    let in_dim = x.len();
    let out_dim = out.len();
    debug_assert_eq!(w.len(), in_dim * out_dim);
    debug_assert_eq!(b.len(), out_dim);
    out.copy_from_slice(b);
    for (i, &xi) in x.iter().enumerate() {
        if xi.is_zero() {
            continue;
        }
        let row = &w[i * out_dim..(i + 1) * out_dim];
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
}

#[inline]
pub fn sigmoid<F: Scalar>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// One LSTM step, updating `h` and `c` in place. Gate order i, f, g, o;
/// `wx: [in, 4H]`, `wh: [H, 4H]`, `b: [4H]`; `gates` is a `[4H]` scratch
/// buffer.
pub fn lstm_step<F: Scalar>(
    x: &[F],
    h: &mut [F],
    c: &mut [F],
    wx: &[F],
    wh: &[F],
    b: &[F],
    gates: &mut [F],
) {
    let hidden = h.len();
    let four_h = 4 * hidden;
    debug_assert_eq!(gates.len(), four_h);
    gates.copy_from_slice(b);
    for (i, &xi) in x.iter().enumerate() {
        if xi.is_zero() {
            continue;
        }
        let row = &wx[i * four_h..(i + 1) * four_h];
        for (gj, &wi) in gates.iter_mut().zip(row) {
            *gj += xi * wi;
        }
    }
    for (i, &hi) in h.iter().enumerate() {
        if hi.is_zero() {
            continue;
        }
        let row = &wh[i * four_h..(i + 1) * four_h];
        for (gj, &wi) in gates.iter_mut().zip(row) {
            *gj += hi * wi;
        }
    }
    for j in 0..hidden {
        let i_gate = sigmoid(gates[j]);
        let f_gate = sigmoid(gates[hidden + j]);
        let g_gate = gates[2 * hidden + j].tanh();
        let o_gate = sigmoid(gates[3 * hidden + j]);
        c[j] = f_gate * c[j] + i_gate * g_gate;
        h[j] = o_gate * c[j].tanh();
    }
}

/// Layer norm of one feature vector, in place.
pub fn layer_norm<F: Scalar>(x: &mut [F], gamma: &[F], beta: &[F], eps: F) {
    let n = sc::<F>(x.len() as f64);
    let mean: F = x.iter().copied().sum::<F>() / n;
    let var: F = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
    let inv_std = F::one() / (var + eps).sqrt();
    for (i, v) in x.iter_mut().enumerate() {
        *v = (*v - mean) * inv_std * gamma[i] + beta[i];
    }
}

/// Inference-mode batch norm of one feature vector (running statistics).
pub fn batch_norm_infer<F: Scalar>(
    x: &mut [F],
    gamma: &[F],
    beta: &[F],
    running_mean: &[F],
    running_var: &[F],
    eps: F,
) {
    for (i, v) in x.iter_mut().enumerate() {
        let inv_std = F::one() / (running_var[i] + eps).sqrt();
        *v = (*v - running_mean[i]) * inv_std * gamma[i] + beta[i];
    }
}

/// Gated linear unit: `out[i] = x[i] * sigmoid(x[d + i])`.
pub fn glu<F: Scalar>(x: &[F], out: &mut [F]) {
    let d = out.len();
    debug_assert_eq!(x.len(), 2 * d);
    for i in 0..d {
        out[i] = x[i] * sigmoid(x[d + i]);
    }
}
