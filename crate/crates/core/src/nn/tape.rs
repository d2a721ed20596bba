//! Reverse-mode autodiff over a dynamic tape.
//!
//! Nodes are recorded in creation order; [`Tape::backward`] walks them in
//! reverse, accumulating gradients. Parameters enter the graph as leaf nodes
//! bound to a [`ParamStore`] entry; after backward,
//! [`Tape::apply_param_grads`] adds the leaf gradients into the store.
//!
//! The op set is exactly what the band-split model, its discriminators and
//! the losses need, including STFT/iSTFT as linear ops with adjoint
//! backward passes.

use std::collections::HashMap;

use num_complex::Complex;

use super::params::{ParamId, ParamStore};
use super::{sc, Scalar};
use crate::dsp::fft::{hann_window, one_sided_ifft_real, real_fft_one_sided, FftCache};
use crate::error::{Error, Result};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    pub(crate) id: usize,
}

#[derive(Debug)]
enum Op<F: Scalar> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, F),
    AddScalar(usize, F),
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    /// `[r, n] + [n]`, bias broadcast over rows.
    AddBias {
        a: usize,
        bias: usize,
    },
    /// `[r, n] * [n]`, columnwise broadcast.
    MulCols {
        a: usize,
        v: usize,
    },
    /// `y[r,c] = a[r,c] * scale[c] + shift[c]` with constant coefficients.
    ColAffine {
        a: usize,
        scale: Vec<F>,
    },
    Sigmoid(usize),
    Tanh(usize),
    LeakyRelu(usize, F),
    Abs(usize),
    Powf(usize, F),
    Sqrt(usize),
    Reshape(usize),
    Transpose {
        a: usize,
        rows: usize,
        cols: usize,
    },
    SliceRows {
        a: usize,
        r0: usize,
        cols: usize,
    },
    SliceCols {
        a: usize,
        c0: usize,
        c1: usize,
        cols: usize,
    },
    GatherRows {
        a: usize,
        rows: Vec<usize>,
        cols: usize,
    },
    ConcatRows {
        parts: Vec<usize>,
        cols: usize,
    },
    ConcatCols {
        parts: Vec<usize>,
        rows: usize,
    },
    SumAll(usize),
    MeanAll(usize),
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        rows: usize,
        cols: usize,
        mean: Vec<F>,
        inv_std: Vec<F>,
    },
    /// Training-mode batch norm (stats over rows, per column).
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        rows: usize,
        cols: usize,
        mean: Vec<F>,
        inv_std: Vec<F>,
    },
    Conv2d {
        x: usize,
        w: usize,
        b: usize,
        cin: usize,
        h: usize,
        wd: usize,
        cout: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
        oh: usize,
        ow: usize,
    },
    /// `[c, h*w] -> [1, c]` mean over spatial positions.
    GlobalMeanPool {
        x: usize,
        channels: usize,
        hw: usize,
    },
    /// Real STFT: `[len] -> [2*n_bins, n_frames]` (re rows, then im rows).
    Stft {
        x: usize,
        win_len: usize,
        hop: usize,
        n_bins: usize,
        n_frames: usize,
    },
    /// WOLA inverse STFT of (re, im), each `[n_bins, n_frames]`.
    Istft {
        re: usize,
        im: usize,
        win_len: usize,
        hop: usize,
        n_bins: usize,
        n_frames: usize,
        out_len: usize,
    },
}

pub struct Tape<F: Scalar> {
    shapes: Vec<Vec<usize>>,
    ops: Vec<Op<F>>,
    values: Vec<Vec<F>>,
    grads: Vec<Option<Vec<F>>>,
    param_leaves: Vec<(usize, u64, ParamId)>,
    fft: FftCache<F>,
    windows: HashMap<usize, Vec<F>>,
    ran_backward: bool,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            shapes: Vec::new(),
            ops: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            param_leaves: Vec::new(),
            fft: FftCache::new(),
            windows: HashMap::new(),
            ran_backward: false,
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<F>, op: Op<F>) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        let id = self.ops.len();
        self.shapes.push(shape);
        self.values.push(values);
        self.grads.push(None);
        self.ops.push(op);
        Var { id }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.shapes[v.id]
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.values[v.id]
    }

    pub fn value_scalar(&self, v: Var) -> F {
        debug_assert_eq!(self.values[v.id].len(), 1);
        self.values[v.id][0]
    }

    /// Gradient of the last backward pass, if this node received one.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.grads[v.id].as_deref()
    }

    fn numel(&self, v: Var) -> usize {
        self.values[v.id].len()
    }

    fn window(&mut self, len: usize) -> Vec<F> {
        self.windows
            .entry(len)
            .or_insert_with(|| hann_window(len))
            .clone()
    }

    // ---- leaves ------------------------------------------------------

    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<F>) -> Var {
        self.push(shape, values, Op::Leaf)
    }

    pub fn scalar(&mut self, value: F) -> Var {
        self.constant(vec![1], vec![value])
    }

    pub fn zeros(&mut self, shape: Vec<usize>) -> Var {
        let n = shape.iter().product();
        self.constant(shape, vec![F::zero(); n])
    }

    /// Leaf bound to a parameter tensor; its gradient is accumulated into the
    /// store by [`Tape::apply_param_grads`].
    pub fn param(&mut self, store: &ParamStore<F>, id: ParamId) -> Var {
        let t = store.get(id);
        let v = self.push(t.shape.clone(), t.data.clone(), Op::Leaf);
        self.param_leaves.push((v.id, store.tag(), id));
        v
    }

    pub fn param_named(&mut self, store: &ParamStore<F>, name: &str) -> Result<Var> {
        let id = store
            .id(name)
            .ok_or_else(|| Error::param(format!("unknown parameter {name}")))?;
        Ok(self.param(store, id))
    }

    // ---- elementwise -------------------------------------------------

    fn check_same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shapes[a.id] != self.shapes[b.id] {
            return Err(Error::param(format!(
                "{what}: shape mismatch {:?} vs {:?}",
                self.shapes[a.id], self.shapes[b.id]
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape(a, b, "add")?;
        let vals = self.values[a.id]
            .iter()
            .zip(&self.values[b.id])
            .map(|(&x, &y)| x + y)
            .collect();
        Ok(self.push(self.shapes[a.id].clone(), vals, Op::Add(a.id, b.id)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape(a, b, "sub")?;
        let vals = self.values[a.id]
            .iter()
            .zip(&self.values[b.id])
            .map(|(&x, &y)| x - y)
            .collect();
        Ok(self.push(self.shapes[a.id].clone(), vals, Op::Sub(a.id, b.id)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same_shape(a, b, "mul")?;
        let vals = self.values[a.id]
            .iter()
            .zip(&self.values[b.id])
            .map(|(&x, &y)| x * y)
            .collect();
        Ok(self.push(self.shapes[a.id].clone(), vals, Op::Mul(a.id, b.id)))
    }

    pub fn scale(&mut self, a: Var, s: F) -> Var {
        let vals = self.values[a.id].iter().map(|&x| x * s).collect();
        self.push(self.shapes[a.id].clone(), vals, Op::Scale(a.id, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: F) -> Var {
        let vals = self.values[a.id].iter().map(|&x| x + s).collect();
        self.push(self.shapes[a.id].clone(), vals, Op::AddScalar(a.id, s))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -F::one())
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let vals = self.values[a.id]
            .iter()
            .map(|&x| F::one() / (F::one() + (-x).exp()))
            .collect();
        self.push(self.shapes[a.id].clone(), vals, Op::Sigmoid(a.id))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let vals = self.values[a.id].iter().map(|&x| x.tanh()).collect();
        self.push(self.shapes[a.id].clone(), vals, Op::Tanh(a.id))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: F) -> Var {
        let vals = self.values[a.id]
            .iter()
            .map(|&x| if x > F::zero() { x } else { x * slope })
            .collect();
        self.push(self.shapes[a.id].clone(), vals, Op::LeakyRelu(a.id, slope))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let vals = self.values[a.id].iter().map(|&x| x.abs()).collect();
        self.push(self.shapes[a.id].clone(), vals, Op::Abs(a.id))
    }

    /// Elementwise `x^p` for non-negative inputs; subgradient 0 at `x == 0`.
    pub fn powf(&mut self, a: Var, p: F) -> Var {
        let vals = self.values[a.id].iter().map(|&x| x.powf(p)).collect();
        self.push(self.shapes[a.id].clone(), vals, Op::Powf(a.id, p))
    }

    /// Elementwise square root; subgradient 0 at `x == 0`.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let vals = self.values[a.id].iter().map(|&x| x.sqrt()).collect();
        self.push(self.shapes[a.id].clone(), vals, Op::Sqrt(a.id))
    }

    // ---- linear algebra ----------------------------------------------

    fn dims2(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        match self.shapes[v.id].as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::param(format!("{what}: expected 2-d, got {other:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul lhs")?;
        let (k2, n) = self.dims2(b, "matmul rhs")?;
        if k != k2 {
            return Err(Error::param(format!(
                "matmul: inner dims {k} vs {k2} differ"
            )));
        }
        let mut out = vec![F::zero(); m * n];
        {
            let av = &self.values[a.id];
            let bv = &self.values[b.id];
            for i in 0..m {
                for kk in 0..k {
                    let aik = av[i * k + kk];
                    if aik.is_zero() {
                        continue;
                    }
                    let brow = &bv[kk * n..(kk + 1) * n];
                    let crow = &mut out[i * n..(i + 1) * n];
                    for (c, &bj) in crow.iter_mut().zip(brow) {
                        *c += aik * bj;
                    }
                }
            }
        }
        Ok(self.push(
            vec![m, n],
            out,
            Op::MatMul {
                a: a.id,
                b: b.id,
                m,
                k,
                n,
            },
        ))
    }

    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (r, n) = self.dims2(a, "add_bias input")?;
        if self.shapes[bias.id] != vec![n] {
            return Err(Error::param(format!(
                "add_bias: bias shape {:?} vs {n} columns",
                self.shapes[bias.id]
            )));
        }
        let mut vals = self.values[a.id].clone();
        let bv = &self.values[bias.id];
        for row in vals.chunks_mut(n) {
            for (x, &b) in row.iter_mut().zip(bv) {
                *x += b;
            }
        }
        Ok(self.push(vec![r, n], vals, Op::AddBias { a: a.id, bias: bias.id }))
    }

    pub fn mul_cols(&mut self, a: Var, v: Var) -> Result<Var> {
        let (r, n) = self.dims2(a, "mul_cols input")?;
        if self.shapes[v.id] != vec![n] {
            return Err(Error::param(format!(
                "mul_cols: vector shape {:?} vs {n} columns",
                self.shapes[v.id]
            )));
        }
        let mut vals = self.values[a.id].clone();
        let vv = &self.values[v.id];
        for row in vals.chunks_mut(n) {
            for (x, &s) in row.iter_mut().zip(vv) {
                *x *= s;
            }
        }
        Ok(self.push(vec![r, n], vals, Op::MulCols { a: a.id, v: v.id }))
    }

    /// Column-wise affine with constant coefficients (no gradient to them).
    pub fn col_affine(&mut self, a: Var, scale: Vec<F>, shift: Vec<F>) -> Result<Var> {
        let (r, n) = self.dims2(a, "col_affine input")?;
        if scale.len() != n || shift.len() != n {
            return Err(Error::param("col_affine: coefficient length mismatch"));
        }
        let mut vals = self.values[a.id].clone();
        for row in vals.chunks_mut(n) {
            for c in 0..n {
                row[c] = row[c] * scale[c] + shift[c];
            }
        }
        Ok(self.push(vec![r, n], vals, Op::ColAffine { a: a.id, scale }))
    }

    // ---- shape ops -----------------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.iter().product::<usize>() != self.numel(a) {
            return Err(Error::param(format!(
                "reshape: {:?} -> {:?} changes element count",
                self.shapes[a.id], shape
            )));
        }
        let vals = self.values[a.id].clone();
        Ok(self.push(shape, vals, Op::Reshape(a.id)))
    }

    /// `[r, c] -> [c, r]`.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = self.dims2(a, "transpose input")?;
        let src = &self.values[a.id];
        let mut vals = vec![F::zero(); rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                vals[c * rows + r] = src[r * cols + c];
            }
        }
        Ok(self.push(vec![cols, rows], vals, Op::Transpose { a: a.id, rows, cols }))
    }

    pub fn slice_rows(&mut self, a: Var, r0: usize, r1: usize) -> Result<Var> {
        let (r, cols) = self.dims2(a, "slice_rows input")?;
        if r0 >= r1 || r1 > r {
            return Err(Error::param(format!("slice_rows: [{r0},{r1}) of {r} rows")));
        }
        let vals = self.values[a.id][r0 * cols..r1 * cols].to_vec();
        Ok(self.push(
            vec![r1 - r0, cols],
            vals,
            Op::SliceRows { a: a.id, r0, cols },
        ))
    }

    pub fn slice_cols(&mut self, a: Var, c0: usize, c1: usize) -> Result<Var> {
        let (rows, cols) = self.dims2(a, "slice_cols input")?;
        if c0 >= c1 || c1 > cols {
            return Err(Error::param(format!(
                "slice_cols: [{c0},{c1}) of {cols} columns"
            )));
        }
        let w = c1 - c0;
        let mut vals = Vec::with_capacity(rows * w);
        for row in 0..rows {
            vals.extend_from_slice(&self.values[a.id][row * cols + c0..row * cols + c1]);
        }
        Ok(self.push(
            vec![rows, w],
            vals,
            Op::SliceCols { a: a.id, c0, c1, cols },
        ))
    }

    pub fn gather_rows(&mut self, a: Var, rows: Vec<usize>) -> Result<Var> {
        let (r, cols) = self.dims2(a, "gather_rows input")?;
        if rows.iter().any(|&i| i >= r) {
            return Err(Error::param("gather_rows: index out of range"));
        }
        let mut vals = Vec::with_capacity(rows.len() * cols);
        for &i in &rows {
            vals.extend_from_slice(&self.values[a.id][i * cols..(i + 1) * cols]);
        }
        Ok(self.push(
            vec![rows.len(), cols],
            vals,
            Op::GatherRows { a: a.id, rows, cols },
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::param("concat_rows: no parts"));
        }
        let (_, cols) = self.dims2(parts[0], "concat_rows part")?;
        let mut total_rows = 0;
        let mut vals = Vec::new();
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_rows part")?;
            if c != cols {
                return Err(Error::param("concat_rows: column mismatch"));
            }
            total_rows += r;
            vals.extend_from_slice(&self.values[p.id]);
        }
        Ok(self.push(
            vec![total_rows, cols],
            vals,
            Op::ConcatRows {
                parts: parts.iter().map(|p| p.id).collect(),
                cols,
            },
        ))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::param("concat_cols: no parts"));
        }
        let (rows, _) = self.dims2(parts[0], "concat_cols part")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2(p, "concat_cols part")?;
            if r != rows {
                return Err(Error::param("concat_cols: row mismatch"));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut vals = vec![F::zero(); rows * total];
        let mut offset = 0;
        for (pi, &p) in parts.iter().enumerate() {
            let w = widths[pi];
            for row in 0..rows {
                vals[row * total + offset..row * total + offset + w]
                    .copy_from_slice(&self.values[p.id][row * w..(row + 1) * w]);
            }
            offset += w;
        }
        Ok(self.push(
            vec![rows, total],
            vals,
            Op::ConcatCols {
                parts: parts.iter().map(|p| p.id).collect(),
                rows,
            },
        ))
    }

    // ---- reductions ----------------------------------------------------

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.values[a.id].iter().copied().sum();
        self.push(vec![1], vec![s], Op::SumAll(a.id))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.numel(a).max(1);
        let s: F = self.values[a.id].iter().copied().sum();
        self.push(vec![1], vec![s / sc::<F>(n as f64)], Op::MeanAll(a.id))
    }

    // ---- normalization --------------------------------------------------

    /// Layer norm over the last dimension of `[rows, cols]`, with affine.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: F) -> Result<Var> {
        let (rows, cols) = self.dims2(x, "layer_norm input")?;
        if self.shapes[gamma.id] != vec![cols] || self.shapes[beta.id] != vec![cols] {
            return Err(Error::param("layer_norm: affine shape mismatch"));
        }
        let mut mean = vec![F::zero(); rows];
        let mut inv_std = vec![F::zero(); rows];
        let mut vals = vec![F::zero(); rows * cols];
        let denom = sc::<F>(cols as f64);
        for r in 0..rows {
            let row = &self.values[x.id][r * cols..(r + 1) * cols];
            let mu: F = row.iter().copied().sum::<F>() / denom;
            let var: F = row.iter().map(|&v| (v - mu) * (v - mu)).sum::<F>() / denom;
            let is = F::one() / (var + eps).sqrt();
            mean[r] = mu;
            inv_std[r] = is;
            for c in 0..cols {
                let xhat = (row[c] - mu) * is;
                vals[r * cols + c] = xhat * self.values[gamma.id][c] + self.values[beta.id][c];
            }
        }
        Ok(self.push(
            vec![rows, cols],
            vals,
            Op::LayerNorm {
                x: x.id,
                gamma: gamma.id,
                beta: beta.id,
                rows,
                cols,
                mean,
                inv_std,
            },
        ))
    }

    /// Training-mode batch norm over rows of `[rows, cols]`; returns the
    /// normalized output plus the batch statistics (biased variance) so the
    /// caller can update running estimates.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: F,
    ) -> Result<(Var, Vec<F>, Vec<F>)> {
        let (rows, cols) = self.dims2(x, "batch_norm input")?;
        if self.shapes[gamma.id] != vec![cols] || self.shapes[beta.id] != vec![cols] {
            return Err(Error::param("batch_norm: affine shape mismatch"));
        }
        let denom = sc::<F>(rows as f64);
        let mut mean = vec![F::zero(); cols];
        let mut var = vec![F::zero(); cols];
        for r in 0..rows {
            for c in 0..cols {
                mean[c] += self.values[x.id][r * cols + c];
            }
        }
        for m in mean.iter_mut() {
            *m /= denom;
        }
        for r in 0..rows {
            for c in 0..cols {
                let d = self.values[x.id][r * cols + c] - mean[c];
                var[c] += d * d;
            }
        }
        for v in var.iter_mut() {
            *v /= denom;
        }
        let inv_std: Vec<F> = var.iter().map(|&v| F::one() / (v + eps).sqrt()).collect();
        let mut vals = vec![F::zero(); rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                let xhat = (self.values[x.id][r * cols + c] - mean[c]) * inv_std[c];
                vals[r * cols + c] = xhat * self.values[gamma.id][c] + self.values[beta.id][c];
            }
        }
        let out = self.push(
            vec![rows, cols],
            vals,
            Op::BatchNorm {
                x: x.id,
                gamma: gamma.id,
                beta: beta.id,
                rows,
                cols,
                mean: mean.clone(),
                inv_std,
            },
        );
        Ok((out, mean, var))
    }

    /// Inference-mode batch norm using fixed running statistics.
    pub fn batch_norm_infer(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[F],
        running_var: &[F],
        eps: F,
    ) -> Result<Var> {
        let (_, cols) = self.dims2(x, "batch_norm input")?;
        if running_mean.len() != cols || running_var.len() != cols {
            return Err(Error::param("batch_norm: running stats shape mismatch"));
        }
        let scale: Vec<F> = running_var
            .iter()
            .map(|&v| F::one() / (v + eps).sqrt())
            .collect();
        let shift: Vec<F> = running_mean
            .iter()
            .zip(&scale)
            .map(|(&m, &s)| -m * s)
            .collect();
        let xhat = self.col_affine(x, scale, shift)?;
        let scaled = self.mul_cols(xhat, gamma)?;
        self.add_bias(scaled, beta)
    }

    // ---- convolution -----------------------------------------------------

    /// 2-D convolution with zero padding: input `[cin, h, w]`, weights
    /// `[cout, cin, kh, kw]`, bias `[cout]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let (cin, h, wd) = match self.shapes[x.id].as_slice() {
            [c, h, w] => (*c, *h, *w),
            other => return Err(Error::param(format!("conv2d input rank: {other:?}"))),
        };
        let (cout, kcin, kh, kw) = match self.shapes[w.id].as_slice() {
            [a, b2, c, d] => (*a, *b2, *c, *d),
            other => return Err(Error::param(format!("conv2d weight rank: {other:?}"))),
        };
        if kcin != cin || self.shapes[b.id] != vec![cout] {
            return Err(Error::param("conv2d: channel mismatch"));
        }
        if h + 2 * pad < kh || wd + 2 * pad < kw || stride == 0 {
            return Err(Error::param("conv2d: kernel exceeds padded input"));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let mut out = vec![F::zero(); cout * oh * ow];
        {
            let xv = &self.values[x.id];
            let wv = &self.values[w.id];
            let bv = &self.values[b.id];
            for co in 0..cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = bv[co];
                        for ci in 0..cin {
                            for ky in 0..kh {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if ix < 0 || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += wv[((co * cin + ci) * kh + ky) * kw + kx]
                                        * xv[(ci * h + iy as usize) * wd + ix as usize];
                                }
                            }
                        }
                        out[(co * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        Ok(self.push(
            vec![cout, oh, ow],
            out,
            Op::Conv2d {
                x: x.id,
                w: w.id,
                b: b.id,
                cin,
                h,
                wd,
                cout,
                kh,
                kw,
                stride,
                pad,
                oh,
                ow,
            },
        ))
    }

    /// Mean over all spatial positions of `[c, h, w]`, yielding `[1, c]`.
    pub fn global_mean_pool(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = match self.shapes[x.id].as_slice() {
            [c, h, w] => (*c, *h, *w),
            other => return Err(Error::param(format!("pool input rank: {other:?}"))),
        };
        let hw = h * w;
        let denom = sc::<F>(hw as f64);
        let vals: Vec<F> = (0..c)
            .map(|ci| {
                self.values[x.id][ci * hw..(ci + 1) * hw]
                    .iter()
                    .copied()
                    .sum::<F>()
                    / denom
            })
            .collect();
        Ok(self.push(
            vec![1, c],
            vals,
            Op::GlobalMeanPool { x: x.id, channels: c, hw },
        ))
    }

    // ---- signal transforms ------------------------------------------------

    /// STFT of a 1-D signal with a Hann window.
    ///
    /// Output is `[2*n_bins, n_frames]`: rows `0..n_bins` hold real parts,
    /// rows `n_bins..2*n_bins` imaginary parts.
    pub fn stft(&mut self, x: Var, win_len: usize, hop: usize) -> Result<Var> {
        let len = match self.shapes[x.id].as_slice() {
            [l] => *l,
            other => return Err(Error::param(format!("stft input rank: {other:?}"))),
        };
        if len < win_len {
            return Err(Error::Length {
                detail: format!("stft: {len} samples < window {win_len}"),
            });
        }
        let window = self.window(win_len);
        let n_frames = 1 + (len - win_len) / hop;
        let n_bins = win_len / 2 + 1;
        let mut out = vec![F::zero(); 2 * n_bins * n_frames];
        let mut frame = vec![F::zero(); win_len];
        for t in 0..n_frames {
            for (i, f) in frame.iter_mut().enumerate() {
                *f = self.values[x.id][t * hop + i] * window[i];
            }
            let spec = real_fft_one_sided(&mut self.fft, &frame);
            for (f, c) in spec.iter().enumerate() {
                out[f * n_frames + t] = c.re;
                out[(n_bins + f) * n_frames + t] = c.im;
            }
        }
        Ok(self.push(
            vec![2 * n_bins, n_frames],
            out,
            Op::Stft {
                x: x.id,
                win_len,
                hop,
                n_bins,
                n_frames,
            },
        ))
    }

    /// Weighted overlap-add inverse STFT of separate re/im matrices
    /// (`[n_bins, n_frames]` each), matching `dsp::istft_slice`.
    pub fn istft(&mut self, re: Var, im: Var, win_len: usize, hop: usize, out_len: usize) -> Result<Var> {
        let (n_bins, n_frames) = self.dims2(re, "istft re")?;
        self.check_same_shape(re, im, "istft")?;
        if n_bins != win_len / 2 + 1 {
            return Err(Error::param(format!(
                "istft: {n_bins} bins vs window {win_len}"
            )));
        }
        let span = win_len + n_frames.saturating_sub(1) * hop;
        if n_frames == 0 || out_len > span {
            return Err(Error::Length {
                detail: format!("istft: {out_len} samples from span {span}"),
            });
        }
        let window = self.window(win_len);
        let mut acc = vec![F::zero(); span];
        let mut env = vec![F::zero(); span];
        let mut spec = vec![Complex::new(F::zero(), F::zero()); n_bins];
        for t in 0..n_frames {
            for f in 0..n_bins {
                spec[f] = Complex::new(
                    self.values[re.id][f * n_frames + t],
                    self.values[im.id][f * n_frames + t],
                );
            }
            let frame = one_sided_ifft_real(&mut self.fft, &spec, win_len);
            for i in 0..win_len {
                acc[t * hop + i] += frame[i] * window[i];
                env[t * hop + i] += window[i] * window[i];
            }
        }
        let tiny = sc::<F>(1e-10);
        let mut out = vec![F::zero(); out_len];
        for (o, (a, e)) in out.iter_mut().zip(acc.iter().zip(&env)) {
            if *e > tiny {
                *o = *a / *e;
            }
        }
        Ok(self.push(
            vec![out_len],
            out,
            Op::Istft {
                re: re.id,
                im: im.id,
                win_len,
                hop,
                n_bins,
                n_frames,
                out_len,
            },
        ))
    }

    // ---- composite helpers -------------------------------------------------

    /// Gated linear unit over the last dimension: `[r, 2d] -> [r, d]`.
    pub fn glu(&mut self, x: Var) -> Result<Var> {
        let (_, cols) = self.dims2(x, "glu input")?;
        if cols % 2 != 0 {
            return Err(Error::param(format!("glu: odd feature dim {cols}")));
        }
        let half = cols / 2;
        let a = self.slice_cols(x, 0, half)?;
        let b = self.slice_cols(x, half, cols)?;
        let g = self.sigmoid(b);
        self.mul(a, g)
    }

    /// One LSTM step. Gate order i, f, g, o; `wx: [in, 4H]`, `wh: [H, 4H]`,
    /// `b: [4H]`; `x: [1, in]`, `h`/`c`: `[1, H]`.
    pub fn lstm_step(
        &mut self,
        x: Var,
        h: Var,
        c: Var,
        wx: Var,
        wh: Var,
        b: Var,
    ) -> Result<(Var, Var)> {
        let (_, four_h) = self.dims2(wh, "lstm wh")?;
        let hid = four_h / 4;
        let xs = self.matmul(x, wx)?;
        let hs = self.matmul(h, wh)?;
        let pre = self.add(xs, hs)?;
        let pre = self.add_bias(pre, b)?;
        let i_g = self.slice_cols(pre, 0, hid)?;
        let f_g = self.slice_cols(pre, hid, 2 * hid)?;
        let g_g = self.slice_cols(pre, 2 * hid, 3 * hid)?;
        let o_g = self.slice_cols(pre, 3 * hid, 4 * hid)?;
        let i = self.sigmoid(i_g);
        let f = self.sigmoid(f_g);
        let g = self.tanh(g_g);
        let o = self.sigmoid(o_g);
        let fc = self.mul(f, c)?;
        let ig = self.mul(i, g)?;
        let c_new = self.add(fc, ig)?;
        let ct = self.tanh(c_new);
        let h_new = self.mul(o, ct)?;
        Ok((h_new, c_new))
    }

    /// Runs an LSTM over the rows of `xs: [steps, in]`, optionally in
    /// reverse; output rows stay in input order. Returns the output matrix
    /// `[steps, H]` and the final `(h, c)`.
    pub fn lstm_over_rows(
        &mut self,
        xs: Var,
        h0: Var,
        c0: Var,
        wx: Var,
        wh: Var,
        b: Var,
        reverse: bool,
    ) -> Result<(Var, (Var, Var))> {
        let (steps, _) = self.dims2(xs, "lstm sequence")?;
        let mut h = h0;
        let mut c = c0;
        let mut outputs = vec![None; steps];
        let order: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..steps).rev())
        } else {
            Box::new(0..steps)
        };
        for t in order {
            let x = self.slice_rows(xs, t, t + 1)?;
            let (h2, c2) = self.lstm_step(x, h, c, wx, wh, b)?;
            h = h2;
            c = c2;
            outputs[t] = Some(h);
        }
        let rows: Vec<Var> = outputs.into_iter().map(|o| o.unwrap()).collect();
        let out = self.concat_rows(&rows)?;
        Ok((out, (h, c)))
    }

    // ---- backward ---------------------------------------------------------

    /// Populates gradients of everything `loss` depends on.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.values[loss.id].len() != 1 {
            return Err(Error::param("backward: loss must be scalar"));
        }
        if self.ran_backward {
            return Err(Error::param("backward: tape already consumed"));
        }
        self.ran_backward = true;
        self.grads[loss.id] = Some(vec![F::one()]);

        for i in (0..=loss.id).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.step_backward(i, &g);
            // Leaves keep their gradient available for collection.
            if matches!(self.ops[i], Op::Leaf) {
                self.grads[i] = Some(g);
            }
        }
        Ok(())
    }

    /// Adds the gradients of parameter leaves bound to this store (matched
    /// by the store's identity tag) into its gradient buffers.
    pub fn apply_param_grads(&self, store: &mut ParamStore<F>) {
        for &(node, tag, pid) in &self.param_leaves {
            if tag != store.tag() {
                continue;
            }
            if let Some(g) = &self.grads[node] {
                let t = store.get_mut(pid);
                for (pg, &ng) in t.grad.iter_mut().zip(g) {
                    *pg += ng;
                }
            }
        }
    }

    fn acc_into<'a>(
        grads: &'a mut [Option<Vec<F>>],
        shapes: &[Vec<usize>],
        id: usize,
    ) -> &'a mut Vec<F> {
        let n: usize = shapes[id].iter().product();
        grads[id].get_or_insert_with(|| vec![F::zero(); n])
    }

    fn step_backward(&mut self, i: usize, g: &[F]) {
        // Split borrows: ops/values read-only, grads mutable.
        let ops = &self.ops;
        let values = &self.values;
        let shapes = &self.shapes;
        let grads = &mut self.grads;
        macro_rules! sink {
            ($id:expr) => {
                Self::acc_into(grads, shapes, $id)
            };
        }
        match &ops[i] {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for (ga, &gi) in sink!(*a).iter_mut().zip(g) {
                    *ga += gi;
                }
                for (gb, &gi) in sink!(*b).iter_mut().zip(g) {
                    *gb += gi;
                }
            }
            Op::Sub(a, b) => {
                for (ga, &gi) in sink!(*a).iter_mut().zip(g) {
                    *ga += gi;
                }
                for (gb, &gi) in sink!(*b).iter_mut().zip(g) {
                    *gb -= gi;
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                {
                    let bv = &values[b];
                    let ga = sink!(a);
                    for k in 0..g.len() {
                        ga[k] += g[k] * bv[k];
                    }
                }
                {
                    let av = &values[a];
                    let gb = sink!(b);
                    for k in 0..g.len() {
                        gb[k] += g[k] * av[k];
                    }
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                for (ga, &gi) in sink!(*a).iter_mut().zip(g) {
                    *ga += gi * s;
                }
            }
            Op::AddScalar(a, _) => {
                for (ga, &gi) in sink!(*a).iter_mut().zip(g) {
                    *ga += gi;
                }
            }
            Op::MatMul { a, b, m, k, n } => {
                let (a, b, m, k, n) = (*a, *b, *m, *k, *n);
                {
                    let bv = &values[b];
                    let ga = sink!(a);
                    for ii in 0..m {
                        for kk in 0..k {
                            let mut acc = F::zero();
                            let grow = &g[ii * n..(ii + 1) * n];
                            let brow = &bv[kk * n..(kk + 1) * n];
                            for (gj, bj) in grow.iter().zip(brow) {
                                acc += *gj * *bj;
                            }
                            ga[ii * k + kk] += acc;
                        }
                    }
                }
                {
                    let av = &values[a];
                    let gb = sink!(b);
                    for kk in 0..k {
                        for ii in 0..m {
                            let aik = av[ii * k + kk];
                            if aik.is_zero() {
                                continue;
                            }
                            let grow = &g[ii * n..(ii + 1) * n];
                            let brow = &mut gb[kk * n..(kk + 1) * n];
                            for (bj, gj) in brow.iter_mut().zip(grow) {
                                *bj += aik * *gj;
                            }
                        }
                    }
                }
            }
            Op::AddBias { a, bias } => {
                let (a, bias) = (*a, *bias);
                let n = shapes[bias].iter().product::<usize>();
                for (ga, &gi) in sink!(a).iter_mut().zip(g) {
                    *ga += gi;
                }
                let gb = sink!(bias);
                for (k, &gi) in g.iter().enumerate() {
                    gb[k % n] += gi;
                }
            }
            Op::MulCols { a, v } => {
                let (a, v) = (*a, *v);
                let n = shapes[v].iter().product::<usize>();
                {
                    let vv = &values[v];
                    let ga = sink!(a);
                    for (k, &gi) in g.iter().enumerate() {
                        ga[k] += gi * vv[k % n];
                    }
                }
                {
                    let av = &values[a];
                    let gv = sink!(v);
                    for (k, &gi) in g.iter().enumerate() {
                        gv[k % n] += gi * av[k];
                    }
                }
            }
            Op::ColAffine { a, scale } => {
                let a = *a;
                let n = scale.len();
                let ga = sink!(a);
                for (k, &gi) in g.iter().enumerate() {
                    ga[k] += gi * scale[k % n];
                }
            }
            Op::Sigmoid(a) => {
                let out = &values[i];
                for (k, ga) in sink!(*a).iter_mut().enumerate() {
                    *ga += g[k] * out[k] * (F::one() - out[k]);
                }
            }
            Op::Tanh(a) => {
                let out = &values[i];
                for (k, ga) in sink!(*a).iter_mut().enumerate() {
                    *ga += g[k] * (F::one() - out[k] * out[k]);
                }
            }
            Op::LeakyRelu(a, slope) => {
                let slope = *slope;
                let xin = &values[*a];
                for (k, ga) in sink!(*a).iter_mut().enumerate() {
                    *ga += if xin[k] > F::zero() { g[k] } else { g[k] * slope };
                }
            }
            Op::Abs(a) => {
                let xin = &values[*a];
                for (k, ga) in sink!(*a).iter_mut().enumerate() {
                    let s = if xin[k] > F::zero() {
                        F::one()
                    } else if xin[k] < F::zero() {
                        -F::one()
                    } else {
                        F::zero()
                    };
                    *ga += g[k] * s;
                }
            }
            Op::Powf(a, p) => {
                let p = *p;
                let xin = &values[*a];
                for (k, ga) in sink!(*a).iter_mut().enumerate() {
                    if !xin[k].is_zero() {
                        *ga += g[k] * p * xin[k].powf(p - F::one());
                    }
                }
            }
            Op::Sqrt(a) => {
                let out = &values[i];
                let half = sc::<F>(0.5);
                for (k, ga) in sink!(*a).iter_mut().enumerate() {
                    if !out[k].is_zero() {
                        *ga += g[k] * half / out[k];
                    }
                }
            }
            Op::Reshape(a) => {
                for (ga, &gi) in sink!(*a).iter_mut().zip(g) {
                    *ga += gi;
                }
            }
            Op::Transpose { a, rows, cols } => {
                let (rows, cols) = (*rows, *cols);
                let ga = sink!(*a);
                for r in 0..rows {
                    for c in 0..cols {
                        ga[r * cols + c] += g[c * rows + r];
                    }
                }
            }
            Op::SliceRows { a, r0, cols } => {
                let off = r0 * cols;
                let ga = sink!(*a);
                for (k, &gi) in g.iter().enumerate() {
                    ga[off + k] += gi;
                }
            }
            Op::SliceCols { a, c0, c1, cols } => {
                let w = c1 - c0;
                let ga = sink!(*a);
                for (k, &gi) in g.iter().enumerate() {
                    let row = k / w;
                    let col = k % w;
                    ga[row * cols + c0 + col] += gi;
                }
            }
            Op::GatherRows { a, rows, cols } => {
                let ga = sink!(*a);
                for (out_row, &src_row) in rows.iter().enumerate() {
                    for c in 0..*cols {
                        ga[src_row * cols + c] += g[out_row * cols + c];
                    }
                }
            }
            Op::ConcatRows { parts, cols } => {
                let mut offset = 0;
                for &p in parts {
                    let rows = shapes[p][0];
                    let n = rows * cols;
                    let gp = sink!(p);
                    for k in 0..n {
                        gp[k] += g[offset + k];
                    }
                    offset += n;
                }
            }
            Op::ConcatCols { parts, rows } => {
                let total: usize = parts.iter().map(|&p| shapes[p][1]).sum();
                let mut offset = 0;
                for &p in parts {
                    let w = shapes[p][1];
                    let gp = sink!(p);
                    for r in 0..*rows {
                        for c in 0..w {
                            gp[r * w + c] += g[r * total + offset + c];
                        }
                    }
                    offset += w;
                }
            }
            Op::SumAll(a) => {
                let gi = g[0];
                for ga in sink!(*a).iter_mut() {
                    *ga += gi;
                }
            }
            Op::MeanAll(a) => {
                let n: usize = shapes[*a].iter().product();
                let gi = g[0] / sc::<F>(n.max(1) as f64);
                for ga in sink!(*a).iter_mut() {
                    *ga += gi;
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                rows,
                cols,
                mean,
                inv_std,
            } => {
                let (x, gamma, beta, rows, cols) = (*x, *gamma, *beta, *rows, *cols);
                let denom = sc::<F>(cols as f64);
                let gv = &values[gamma];
                let xv = &values[x];
                // gamma/beta grads
                {
                    let gg = sink!(gamma);
                    for r in 0..rows {
                        for c in 0..cols {
                            let xhat = (xv[r * cols + c] - mean[r]) * inv_std[r];
                            gg[c] += g[r * cols + c] * xhat;
                        }
                    }
                }
                {
                    let gb = sink!(beta);
                    for r in 0..rows {
                        for c in 0..cols {
                            gb[c] += g[r * cols + c];
                        }
                    }
                }
                {
                    let gx = sink!(x);
                    for r in 0..rows {
                        let mut mean_h = F::zero();
                        let mut mean_hx = F::zero();
                        for c in 0..cols {
                            let h = g[r * cols + c] * gv[c];
                            let xhat = (xv[r * cols + c] - mean[r]) * inv_std[r];
                            mean_h += h;
                            mean_hx += h * xhat;
                        }
                        mean_h /= denom;
                        mean_hx /= denom;
                        for c in 0..cols {
                            let h = g[r * cols + c] * gv[c];
                            let xhat = (xv[r * cols + c] - mean[r]) * inv_std[r];
                            gx[r * cols + c] += inv_std[r] * (h - mean_h - xhat * mean_hx);
                        }
                    }
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                rows,
                cols,
                mean,
                inv_std,
            } => {
                let (x, gamma, beta, rows, cols) = (*x, *gamma, *beta, *rows, *cols);
                let denom = sc::<F>(rows as f64);
                let gv = &values[gamma];
                let xv = &values[x];
                {
                    let gg = sink!(gamma);
                    for r in 0..rows {
                        for c in 0..cols {
                            let xhat = (xv[r * cols + c] - mean[c]) * inv_std[c];
                            gg[c] += g[r * cols + c] * xhat;
                        }
                    }
                }
                {
                    let gb = sink!(beta);
                    for r in 0..rows {
                        for c in 0..cols {
                            gb[c] += g[r * cols + c];
                        }
                    }
                }
                {
                    let gx = sink!(x);
                    for c in 0..cols {
                        let mut mean_h = F::zero();
                        let mut mean_hx = F::zero();
                        for r in 0..rows {
                            let h = g[r * cols + c] * gv[c];
                            let xhat = (xv[r * cols + c] - mean[c]) * inv_std[c];
                            mean_h += h;
                            mean_hx += h * xhat;
                        }
                        mean_h /= denom;
                        mean_hx /= denom;
                        for r in 0..rows {
                            let h = g[r * cols + c] * gv[c];
                            let xhat = (xv[r * cols + c] - mean[c]) * inv_std[c];
                            gx[r * cols + c] += inv_std[c] * (h - mean_h - xhat * mean_hx);
                        }
                    }
                }
            }
            Op::Conv2d {
                x,
                w,
                b,
                cin,
                h,
                wd,
                cout,
                kh,
                kw,
                stride,
                pad,
                oh,
                ow,
            } => {
                let (x, w, b) = (*x, *w, *b);
                let (cin, h, wd, cout, kh, kw, stride, pad, oh, ow) =
                    (*cin, *h, *wd, *cout, *kh, *kw, *stride, *pad, *oh, *ow);
                {
                    let gb = sink!(b);
                    for co in 0..cout {
                        let mut acc = F::zero();
                        for k in 0..oh * ow {
                            acc += g[co * oh * ow + k];
                        }
                        gb[co] += acc;
                    }
                }
                {
                    let xv = &values[x];
                    let gw = sink!(w);
                    for co in 0..cout {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let gi = g[(co * oh + oy) * ow + ox];
                                if gi.is_zero() {
                                    continue;
                                }
                                for ci in 0..cin {
                                    for ky in 0..kh {
                                        let iy = (oy * stride + ky) as isize - pad as isize;
                                        if iy < 0 || iy >= h as isize {
                                            continue;
                                        }
                                        for kx in 0..kw {
                                            let ix = (ox * stride + kx) as isize - pad as isize;
                                            if ix < 0 || ix >= wd as isize {
                                                continue;
                                            }
                                            gw[((co * cin + ci) * kh + ky) * kw + kx] += gi
                                                * xv[(ci * h + iy as usize) * wd + ix as usize];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                {
                    let wv = &values[w];
                    let gx = sink!(x);
                    for co in 0..cout {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let gi = g[(co * oh + oy) * ow + ox];
                                if gi.is_zero() {
                                    continue;
                                }
                                for ci in 0..cin {
                                    for ky in 0..kh {
                                        let iy = (oy * stride + ky) as isize - pad as isize;
                                        if iy < 0 || iy >= h as isize {
                                            continue;
                                        }
                                        for kx in 0..kw {
                                            let ix = (ox * stride + kx) as isize - pad as isize;
                                            if ix < 0 || ix >= wd as isize {
                                                continue;
                                            }
                                            gx[(ci * h + iy as usize) * wd + ix as usize] += gi
                                                * wv[((co * cin + ci) * kh + ky) * kw + kx];
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::GlobalMeanPool { x, channels, hw } => {
                let scale = F::one() / sc::<F>(*hw as f64);
                let gx = sink!(*x);
                for c in 0..*channels {
                    let gi = g[c] * scale;
                    for k in 0..*hw {
                        gx[c * hw + k] += gi;
                    }
                }
            }
            Op::Stft {
                x,
                win_len,
                hop,
                n_bins,
                n_frames,
            } => {
                let (x, win_len, hop, n_bins, n_frames) = (*x, *win_len, *hop, *n_bins, *n_frames);
                let window = self
                    .windows
                    .get(&win_len)
                    .expect("window cached at forward")
                    .clone();
                let mut gbuf = vec![Complex::new(F::zero(), F::zero()); win_len];
                let inverse = self.fft.inverse(win_len);
                let gx = Self::acc_into(grads, shapes, x);
                for t in 0..n_frames {
                    for item in gbuf.iter_mut() {
                        *item = Complex::new(F::zero(), F::zero());
                    }
                    for f in 0..n_bins {
                        gbuf[f] = Complex::new(g[f * n_frames + t], g[(n_bins + f) * n_frames + t]);
                    }
                    // Adjoint of the one-sided windowed DFT:
                    // x_grad[n] += w[n] * Re( sum_f G[f] e^{+i 2π f n / N} ).
                    inverse.process(&mut gbuf);
                    for n in 0..win_len {
                        gx[t * hop + n] += window[n] * gbuf[n].re;
                    }
                }
            }
            Op::Istft {
                re,
                im,
                win_len,
                hop,
                n_bins,
                n_frames,
                out_len,
            } => {
                let (re, im, win_len, hop, n_bins, n_frames, out_len) =
                    (*re, *im, *win_len, *hop, *n_bins, *n_frames, *out_len);
                let window = self
                    .windows
                    .get(&win_len)
                    .expect("window cached at forward")
                    .clone();
                let span = win_len + (n_frames - 1) * hop;
                let mut env = vec![F::zero(); span];
                for t in 0..n_frames {
                    for i in 0..win_len {
                        env[t * hop + i] += window[i] * window[i];
                    }
                }
                let tiny = sc::<F>(1e-10);
                let mut v = vec![F::zero(); span];
                for j in 0..out_len {
                    if env[j] > tiny {
                        v[j] = g[j] / env[j];
                    }
                }
                let forward = self.fft.forward(win_len);
                let inv_n = F::one() / sc::<F>(win_len as f64);
                let mut u = vec![Complex::new(F::zero(), F::zero()); win_len];
                for t in 0..n_frames {
                    for n in 0..win_len {
                        u[n] = Complex::new(window[n] * v[t * hop + n], F::zero());
                    }
                    forward.process(&mut u);
                    // One-sided weights: interior bins were Hermitian-doubled
                    // in the forward synthesis.
                    {
                        let gre = Self::acc_into(grads, shapes, re);
                        for f in 0..n_bins {
                            let doubled = f > 0 && (f < n_bins - 1 || win_len % 2 == 1);
                            let cf = if doubled { sc::<F>(2.0) } else { F::one() };
                            gre[f * n_frames + t] += cf * inv_n * u[f].re;
                        }
                    }
                    {
                        let gim = Self::acc_into(grads, shapes, im);
                        for f in 0..n_bins {
                            let doubled = f > 0 && (f < n_bins - 1 || win_len % 2 == 1);
                            let cf = if doubled { sc::<F>(2.0) } else { F::one() };
                            gim[f * n_frames + t] += cf * inv_n * u[f].im;
                        }
                    }
                }
            }
        }
    }
}
