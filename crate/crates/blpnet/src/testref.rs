//! Test-only reference implementations in f64, written independently of the
//! production kernels: straightforward quadruple loops and central finite
//! differences. Unit tests compare the optimized f32 paths against these.

#![cfg(test)]

use crate::tensor::{ConvKernel, Tensor};

/// Plain-loop f64 valid convolution, indexing by coordinates only.
pub fn conv2d_f64(input: &Tensor, kernel: &ConvKernel) -> Vec<f64> {
    let (h, w, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (kh, kw, cout) = (kernel.kh(), kernel.kw(), kernel.out_channels());
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let mut out = vec![0.0f64; oh * ow * cout];
    for y in 0..oh {
        for x in 0..ow {
            for o in 0..cout {
                let mut acc = kernel.bias.data()[o] as f64;
                for i in 0..kh {
                    for j in 0..kw {
                        for k in 0..c {
                            acc += input.at(&[y + i, x + j, k]) as f64
                                * kernel.weights.at(&[i, j, k, o]) as f64;
                        }
                    }
                }
                out[(y * ow + x) * cout + o] = acc;
            }
        }
    }
    out
}

fn conv_loss_f64(input: &[f64], ishape: &[usize], wts: &[f64], bias: &[f64], kshape: &[usize], direction: &[f64]) -> f64 {
    // L = sum_i direction_i * conv_out_i, all in f64.
    let (h, w, c) = (ishape[0], ishape[1], ishape[2]);
    let (kh, kw, cin, cout) = (kshape[0], kshape[1], kshape[2], kshape[3]);
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let mut loss = 0.0f64;
    for y in 0..oh {
        for x in 0..ow {
            for o in 0..cout {
                let mut acc = bias[o];
                for i in 0..kh {
                    for j in 0..kw {
                        for k in 0..c {
                            acc += input[((y + i) * w + x + j) * c + k]
                                * wts[((i * kw + j) * cin + k) * cout + o];
                        }
                    }
                }
                loss += direction[(y * ow + x) * cout + o] * acc;
            }
        }
    }
    loss
}

/// Max relative error between the production conv backward pass and central
/// finite differences of an f64 forward, probing every parameter and input.
pub fn conv_grad_max_rel_err(input: &Tensor, kernel: &ConvKernel, seed: u64) -> f64 {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);

    let (h, w) = (input.shape()[0], input.shape()[1]);
    let (kh, kw) = (kernel.kh(), kernel.kw());
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let direction: Vec<f64> = (0..oh * ow * kernel.out_channels())
        .map(|_| rng.random::<f64>() * 2.0 - 1.0)
        .collect();
    let go = Tensor::new(
        vec![oh, ow, kernel.out_channels()],
        direction.iter().map(|&v| v as f32).collect(),
    )
    .unwrap();
    let (gi, gw, gb) = crate::tensor::conv2d_backward(input, kernel, &go).unwrap();

    let i64v: Vec<f64> = input.data().iter().map(|&v| v as f64).collect();
    let w64: Vec<f64> = kernel.weights.data().iter().map(|&v| v as f64).collect();
    let b64: Vec<f64> = kernel.bias.data().iter().map(|&v| v as f64).collect();
    let ishape = input.shape();
    let kshape = kernel.weights.shape();
    let eps = 1e-4f64;
    let mut max_rel = 0.0f64;
    let mut check = |analytic: f64, numeric: f64| {
        let rel = (analytic - numeric).abs() / numeric.abs().max(1e-3);
        if rel > max_rel {
            max_rel = rel;
        }
    };

    for p in 0..i64v.len() {
        let mut plus = i64v.clone();
        plus[p] += eps;
        let mut minus = i64v.clone();
        minus[p] -= eps;
        let fd = (conv_loss_f64(&plus, ishape, &w64, &b64, kshape, &direction)
            - conv_loss_f64(&minus, ishape, &w64, &b64, kshape, &direction))
            / (2.0 * eps);
        check(gi.data()[p] as f64, fd);
    }
    for p in 0..w64.len() {
        let mut plus = w64.clone();
        plus[p] += eps;
        let mut minus = w64.clone();
        minus[p] -= eps;
        let fd = (conv_loss_f64(&i64v, ishape, &plus, &b64, kshape, &direction)
            - conv_loss_f64(&i64v, ishape, &minus, &b64, kshape, &direction))
            / (2.0 * eps);
        check(gw.data()[p] as f64, fd);
    }
    for p in 0..b64.len() {
        let mut plus = b64.clone();
        plus[p] += eps;
        let mut minus = b64.clone();
        minus[p] -= eps;
        let fd = (conv_loss_f64(&i64v, ishape, &w64, &plus, kshape, &direction)
            - conv_loss_f64(&i64v, ishape, &w64, &minus, kshape, &direction))
            / (2.0 * eps);
        check(gb.data()[p] as f64, fd);
    }
    max_rel
}

/// Same drill for the affine layer.
pub fn dense_grad_max_rel_err(x: &Tensor, w: &Tensor, b: &Tensor, seed: u64) -> f64 {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (m, n) = (w.shape()[0], w.shape()[1]);
    let direction: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let go = Tensor::new(vec![n], direction.iter().map(|&v| v as f32).collect()).unwrap();
    let (gi, gw, gb) = crate::tensor::dense_backward(x, w, &go).unwrap();

    let x64: Vec<f64> = x.data().iter().map(|&v| v as f64).collect();
    let w64: Vec<f64> = w.data().iter().map(|&v| v as f64).collect();
    let b64: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
    let loss = |x64: &[f64], w64: &[f64], b64: &[f64]| -> f64 {
        (0..n)
            .map(|j| {
                let pre: f64 = (0..m).map(|i| x64[i] * w64[i * n + j]).sum::<f64>() + b64[j];
                direction[j] * pre
            })
            .sum()
    };
    let eps = 1e-4f64;
    let mut max_rel = 0.0f64;
    let mut check = |analytic: f64, numeric: f64| {
        let rel = (analytic - numeric).abs() / numeric.abs().max(1e-3);
        if rel > max_rel {
            max_rel = rel;
        }
    };
    for p in 0..m {
        let mut plus = x64.clone();
        plus[p] += eps;
        let mut minus = x64.clone();
        minus[p] -= eps;
        check(
            gi.data()[p] as f64,
            (loss(&plus, &w64, &b64) - loss(&minus, &w64, &b64)) / (2.0 * eps),
        );
    }
    for p in 0..m * n {
        let mut plus = w64.clone();
        plus[p] += eps;
        let mut minus = w64.clone();
        minus[p] -= eps;
        check(
            gw.data()[p] as f64,
            (loss(&x64, &plus, &b64) - loss(&x64, &minus, &b64)) / (2.0 * eps),
        );
    }
    for p in 0..n {
        let mut plus = b64.clone();
        plus[p] += eps;
        let mut minus = b64.clone();
        minus[p] -= eps;
        check(
            gb.data()[p] as f64,
            (loss(&x64, &w64, &plus) - loss(&x64, &w64, &minus)) / (2.0 * eps),
        );
    }
    max_rel
}
