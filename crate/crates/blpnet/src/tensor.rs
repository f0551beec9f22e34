//! Dense-tensor kernels: the forward and backward primitives every layer of
//! the detector heads and the OCR net is built from.
//!
//! All values are `f32`, row-major. Ops are pure functions of their inputs;
//! nothing here touches global state, and randomness (dropout) is injected by
//! the caller as a seedable generator.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} has a zero dimension")]
    ZeroDimension { shape: Vec<usize> },
    #[error("data length {got} does not match shape {shape:?} (expected {expected})")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: spatial extent too small ({detail})")]
    DegenerateExtent { op: &'static str, detail: String },
    #[error("non-finite value in {op} input")]
    NonFinite { op: &'static str },
    #[error("dropout rate {rate} outside [0, 1)")]
    InvalidRate { rate: f32 },
}

/// Dense N-dimensional array of `f32`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::ZeroDimension { shape });
        }
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(TensorError::DataLength {
                shape,
                expected,
                got: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Reinterpret as rank-1 without copying.
    pub fn flattened(mut self) -> Tensor {
        self.shape = vec![self.data.len()];
        self
    }

    /// Same data, new shape; element count must match.
    pub fn reshaped(mut self, shape: &[usize]) -> Result<Tensor, TensorError> {
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::ZeroDimension {
                shape: shape.to_vec(),
            });
        }
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(TensorError::DataLength {
                shape: shape.to_vec(),
                expected,
                got: self.data.len(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Element access by multi-index. Intended for tests and small fixtures;
    /// hot paths index the raw slice directly.
    pub fn at(&self, idx: &[usize]) -> f32 {
        assert_eq!(idx.len(), self.shape.len(), "index rank mismatch");
        let mut flat = 0usize;
        for (i, (&ix, &dim)) in idx.iter().zip(&self.shape).enumerate() {
            assert!(ix < dim, "index {ix} out of range for dim {i} ({dim})");
            flat = flat * dim + ix;
        }
        self.data[flat]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Weights and bias of one 2-D convolution.
///
/// Weight layout is `[kh, kw, in_channels, out_channels]`; the learnable
/// parameter count is `(kh*kw*in_channels + 1) * out_channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl ConvKernel {
    pub fn new(weights: Tensor, bias: Tensor) -> Result<Self, TensorError> {
        if weights.rank() != 4 {
            return Err(TensorError::ShapeMismatch {
                op: "ConvKernel",
                detail: format!("weights must be rank 4, got {:?}", weights.shape()),
            });
        }
        let out_ch = weights.shape()[3];
        if bias.shape() != [out_ch] {
            return Err(TensorError::ShapeMismatch {
                op: "ConvKernel",
                detail: format!(
                    "bias shape {:?} does not match {out_ch} output channels",
                    bias.shape()
                ),
            });
        }
        Ok(Self { weights, bias })
    }

    pub fn kh(&self) -> usize {
        self.weights.shape()[0]
    }
    pub fn kw(&self) -> usize {
        self.weights.shape()[1]
    }
    pub fn in_channels(&self) -> usize {
        self.weights.shape()[2]
    }
    pub fn out_channels(&self) -> usize {
        self.weights.shape()[3]
    }

    pub fn param_count(&self) -> usize {
        (self.kh() * self.kw() * self.in_channels() + 1) * self.out_channels()
    }
}

fn expect_rank3(t: &Tensor, op: &'static str) -> Result<(usize, usize, usize), TensorError> {
    match *t.shape() {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(TensorError::ShapeMismatch {
            op,
            detail: format!("expected [h, w, c], got {:?}", t.shape()),
        }),
    }
}

/// Stride-1 valid 2-D convolution (cross-correlation, no padding):
/// `out[y, x, o] = bias[o] + sum_{i,j,k} in[y+i, x+j, k] * w[i, j, k, o]`.
pub fn conv2d(input: &Tensor, kernel: &ConvKernel) -> Result<Tensor, TensorError> {
    let (h, w, c) = expect_rank3(input, "conv2d")?;
    let (kh, kw, kin, kout) = (
        kernel.kh(),
        kernel.kw(),
        kernel.in_channels(),
        kernel.out_channels(),
    );
    if kin != c {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            detail: format!("input has {c} channels, kernel expects {kin}"),
        });
    }
    if h < kh || w < kw {
        return Err(TensorError::DegenerateExtent {
            op: "conv2d",
            detail: format!("input {h}x{w} smaller than kernel {kh}x{kw}"),
        });
    }
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let mut out = vec![0.0f32; oh * ow * kout];
    let inp = input.data();
    let wts = kernel.weights.data();
    let bias = kernel.bias.data();

    let mut acc = vec![0.0f32; kout];
    for y in 0..oh {
        for x in 0..ow {
            acc.copy_from_slice(bias);
            for i in 0..kh {
                let row = ((y + i) * w + x) * c;
                let wrow = i * kw * kin * kout;
                for j in 0..kw {
                    let base = row + j * c;
                    let wbase = wrow + j * kin * kout;
                    for k in 0..c {
                        let v = inp[base + k];
                        let ws = &wts[wbase + k * kout..wbase + (k + 1) * kout];
                        for (a, &wv) in acc.iter_mut().zip(ws) {
                            *a += v * wv;
                        }
                    }
                }
            }
            out[(y * ow + x) * kout..(y * ow + x + 1) * kout].copy_from_slice(&acc);
        }
    }
    Tensor::new(vec![oh, ow, kout], out)
}

/// Gradients of a scalar loss through [`conv2d`]:
/// returns `(grad_input, grad_weights, grad_bias)`.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &ConvKernel,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), TensorError> {
    let (h, w, c) = expect_rank3(input, "conv2d_backward")?;
    let (kh, kw, kin, kout) = (
        kernel.kh(),
        kernel.kw(),
        kernel.in_channels(),
        kernel.out_channels(),
    );
    if kin != c {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d_backward",
            detail: format!("input has {c} channels, kernel expects {kin}"),
        });
    }
    let (oh, ow) = (h.wrapping_sub(kh) + 1, w.wrapping_sub(kw) + 1);
    if grad_out.shape() != [oh, ow, kout] {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d_backward",
            detail: format!(
                "grad_out shape {:?}, expected [{oh}, {ow}, {kout}]",
                grad_out.shape()
            ),
        });
    }

    let inp = input.data();
    let wts = kernel.weights.data();
    let go = grad_out.data();

    let mut gin = vec![0.0f32; inp.len()];
    let mut gw = vec![0.0f32; wts.len()];
    let mut gb = vec![0.0f32; kout];

    for y in 0..oh {
        for x in 0..ow {
            let g = &go[(y * ow + x) * kout..(y * ow + x + 1) * kout];
            for (o, &gv) in g.iter().enumerate() {
                gb[o] += gv;
            }
            for i in 0..kh {
                let row = ((y + i) * w + x) * c;
                let wrow = i * kw * kin * kout;
                for j in 0..kw {
                    let base = row + j * c;
                    let wbase = wrow + j * kin * kout;
                    for k in 0..c {
                        let v = inp[base + k];
                        let ws = &wts[wbase + k * kout..wbase + (k + 1) * kout];
                        let gws = &mut gw[wbase + k * kout..wbase + (k + 1) * kout];
                        let mut acc = 0.0f32;
                        for ((&wv, gwv), &gv) in ws.iter().zip(gws.iter_mut()).zip(g) {
                            acc += wv * gv;
                            *gwv += v * gv;
                        }
                        gin[base + k] += acc;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(vec![h, w, c], gin)?,
        Tensor::new(vec![kh, kw, kin, kout], gw)?,
        Tensor::new(vec![kout], gb)?,
    ))
}

/// 2x2 max pooling, stride 2; a trailing odd row/column is dropped.
/// The returned indices point into the flat input buffer and route the
/// backward pass.
pub fn maxpool2(input: &Tensor) -> Result<(Tensor, Vec<u32>), TensorError> {
    let (h, w, c) = expect_rank3(input, "maxpool2")?;
    if h < 2 || w < 2 {
        return Err(TensorError::DegenerateExtent {
            op: "maxpool2",
            detail: format!("input {h}x{w} needs at least 2x2"),
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let inp = input.data();
    let mut out = vec![0.0f32; oh * ow * c];
    let mut idx = vec![0u32; oh * ow * c];
    for y in 0..oh {
        for x in 0..ow {
            for k in 0..c {
                let mut best = f32::NEG_INFINITY;
                let mut best_at = 0usize;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let p = ((2 * y + dy) * w + 2 * x + dx) * c + k;
                        if inp[p] > best {
                            best = inp[p];
                            best_at = p;
                        }
                    }
                }
                let o = (y * ow + x) * c + k;
                out[o] = best;
                idx[o] = best_at as u32;
            }
        }
    }
    Ok((Tensor::new(vec![oh, ow, c], out)?, idx))
}

/// Routes `grad_out` back to the argmax positions recorded by [`maxpool2`].
pub fn maxpool2_backward(input_shape: &[usize], argmax: &[u32], grad_out: &Tensor) -> Tensor {
    let mut gin = Tensor::zeros(input_shape);
    let g = gin.data_mut();
    for (&p, &gv) in argmax.iter().zip(grad_out.data()) {
        g[p as usize] += gv;
    }
    gin
}

/// Affine layer: `out = input^T * weights + bias` with `weights` of shape
/// `[m, n]`. Reductions accumulate in f64.
pub fn dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor, TensorError> {
    let m = match *input.shape() {
        [m] => m,
        _ => {
            return Err(TensorError::ShapeMismatch {
                op: "dense",
                detail: format!("input must be rank 1, got {:?}", input.shape()),
            })
        }
    };
    let (wm, n) = match *weights.shape() {
        [wm, n] => (wm, n),
        _ => {
            return Err(TensorError::ShapeMismatch {
                op: "dense",
                detail: format!("weights must be rank 2, got {:?}", weights.shape()),
            })
        }
    };
    if wm != m || bias.shape() != [n] {
        return Err(TensorError::ShapeMismatch {
            op: "dense",
            detail: format!(
                "input[{m}] x weights{:?} + bias{:?}",
                weights.shape(),
                bias.shape()
            ),
        });
    }
    let inp = input.data();
    let wts = weights.data();
    let mut acc = vec![0.0f64; n];
    for (i, &v) in inp.iter().enumerate() {
        let row = &wts[i * n..(i + 1) * n];
        let v = v as f64;
        for (a, &wv) in acc.iter_mut().zip(row) {
            *a += v * wv as f64;
        }
    }
    let out: Vec<f32> = acc
        .iter()
        .zip(bias.data())
        .map(|(&a, &b)| (a + b as f64) as f32)
        .collect();
    Tensor::new(vec![n], out)
}

/// Gradients through [`dense`]: `(grad_input, grad_weights, grad_bias)`.
pub fn dense_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), TensorError> {
    let m = input.len();
    let (wm, n) = (weights.shape()[0], weights.shape()[1]);
    if wm != m || grad_out.shape() != [n] {
        return Err(TensorError::ShapeMismatch {
            op: "dense_backward",
            detail: format!(
                "input[{m}], weights{:?}, grad_out{:?}",
                weights.shape(),
                grad_out.shape()
            ),
        });
    }
    let inp = input.data();
    let wts = weights.data();
    let go = grad_out.data();

    let mut gin = vec![0.0f32; m];
    let mut gw = vec![0.0f32; m * n];
    for i in 0..m {
        let row = &wts[i * n..(i + 1) * n];
        let grow = &mut gw[i * n..(i + 1) * n];
        let v = inp[i];
        let mut acc = 0.0f64;
        for ((&wv, gwv), &gv) in row.iter().zip(grow.iter_mut()).zip(go) {
            acc += (wv * gv) as f64;
            *gwv = v * gv;
        }
        gin[i] = acc as f32;
    }
    Ok((
        Tensor::new(vec![m], gin)?,
        Tensor::new(vec![m, n], gw)?,
        Tensor::new(vec![n], go.to_vec())?,
    ))
}

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut gin = grad_out.clone();
    for (g, &v) in gin.data_mut().iter_mut().zip(input.data()) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
    gin
}

/// Numerically stabilized softmax over the flattened input; output sums to 1.
pub fn softmax(input: &Tensor) -> Result<Tensor, TensorError> {
    if !input.is_finite() {
        return Err(TensorError::NonFinite { op: "softmax" });
    }
    let max = input.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let mut out = input.clone().flattened();
    let mut sum = 0.0f64;
    for v in out.data_mut() {
        *v = (*v - max).exp();
        sum += *v as f64;
    }
    let inv = (1.0 / sum) as f32;
    for v in out.data_mut() {
        *v *= inv;
    }
    Ok(out)
}

/// Jacobian-vector product of softmax: `gin_i = y_i * (g_i - sum_j g_j y_j)`.
pub fn softmax_backward(output: &Tensor, grad_out: &Tensor) -> Tensor {
    let dot: f64 = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| (y * g) as f64)
        .sum();
    let mut gin = grad_out.clone();
    for (g, &y) in gin.data_mut().iter_mut().zip(output.data()) {
        *g = y * (*g - dot as f32);
    }
    gin
}

/// Mean over the spatial extent of each channel: `[h, w, c] -> [c]`.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor, TensorError> {
    let (h, w, c) = expect_rank3(input, "global_avg_pool")?;
    let inp = input.data();
    let mut acc = vec![0.0f64; c];
    for px in inp.chunks_exact(c) {
        for (a, &v) in acc.iter_mut().zip(px) {
            *a += v as f64;
        }
    }
    let inv = 1.0 / (h * w) as f64;
    let out: Vec<f32> = acc.iter().map(|&a| (a * inv) as f32).collect();
    Tensor::new(vec![c], out)
}

pub fn global_avg_pool_backward(input_shape: &[usize], grad_out: &Tensor) -> Tensor {
    let (h, w, c) = (input_shape[0], input_shape[1], input_shape[2]);
    let inv = 1.0 / (h * w) as f32;
    let go = grad_out.data();
    Tensor::from_fn(input_shape, |i| go[i % c] * inv)
}

pub fn flatten(input: &Tensor) -> Tensor {
    input.clone().flattened()
}

/// Inverted dropout. In training mode each element is zeroed with probability
/// `rate` and survivors are scaled by `1/(1-rate)`, so inference is identity.
/// Returns the keep-mask used (empty at inference or rate 0).
pub fn dropout<R: Rng>(
    input: &Tensor,
    rate: f32,
    rng: &mut R,
    training: bool,
) -> Result<(Tensor, Vec<bool>), TensorError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(TensorError::InvalidRate { rate });
    }
    if !training || rate == 0.0 {
        return Ok((input.clone(), Vec::new()));
    }
    let scale = 1.0 / (1.0 - rate);
    let mut out = input.clone();
    let mask: Vec<bool> = out
        .data_mut()
        .iter_mut()
        .map(|v| {
            let keep = rng.random::<f32>() >= rate;
            *v = if keep { *v * scale } else { 0.0 };
            keep
        })
        .collect();
    Ok((out, mask))
}

/// Backward through dropout given the keep-mask from the forward pass.
/// An empty mask means the forward pass was the identity.
pub fn dropout_backward(mask: &[bool], rate: f32, grad_out: &Tensor) -> Tensor {
    if mask.is_empty() {
        return grad_out.clone();
    }
    let scale = 1.0 / (1.0 - rate);
    let mut gin = grad_out.clone();
    for (g, &keep) in gin.data_mut().iter_mut().zip(mask) {
        *g = if keep { *g * scale } else { 0.0 };
    }
    gin
}
