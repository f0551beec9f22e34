//! Motion-deblurring toolbox for plate crops: a Laplacian-variance sharpness
//! gate, FIR blur modeling and least-squares kernel estimation, frequency-
//! domain regularized inversion, wavelet-thresholded Landweber iteration,
//! and TV-regularized accelerated proximal gradient ([`tv::fista_deblur`]).
//!
//! Blur throughout is the horizontal FIR model `out[x] = sum_i k[i] *
//! in[x+i-T/2]` with replicate edges and an odd tap count.

pub mod dft;
pub mod tv;

pub use tv::fista_deblur;

use crate::image::GrayImage;
use dft::Complex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DeblurError {
    #[error("bad blur kernel: {detail}")]
    BadKernel { detail: String },
    #[error("bad deblur parameters: {detail}")]
    BadParams { detail: String },
    #[error("kernel fit is singular even with ridge regularization")]
    SingularFit,
}

/// Sharpness score: variance of the 3x3 Laplacian response (replicate
/// edges). Blurring suppresses high frequencies, so blurrier images score
/// lower; a constant image scores zero.
pub fn sharpness(img: &GrayImage) -> f32 {
    let (w, h) = (img.width() as isize, img.height() as isize);
    let n = (w * h) as f64;
    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            let lap = img.get_clamped(x - 1, y)
                + img.get_clamped(x + 1, y)
                + img.get_clamped(x, y - 1)
                + img.get_clamped(x, y + 1)
                - 4.0 * img.get_clamped(x, y);
            let lap = lap as f64;
            sum += lap;
            sum_sq += lap * lap;
        }
    }
    let mean = sum / n;
    (sum_sq / n - mean * mean).max(0.0) as f32
}

/// The escalating bank of motion-blur kernels used by the retry loop:
/// normalized boxes of 3, 5, and 9 taps.
pub fn kernel_bank() -> [Vec<f32>; 3] {
    [vec![1.0 / 3.0; 3], vec![1.0 / 5.0; 5], vec![1.0 / 9.0; 9]]
}

/// Apply the horizontal FIR blur model (odd centered taps, replicate edges).
pub fn apply_blur(img: &GrayImage, taps: &[f32]) -> Result<GrayImage, DeblurError> {
    let taps64 = tv::validate_kernel(taps, img.width())?;
    let x: Vec<f64> = img.pixels().iter().map(|&v| v as f64).collect();
    let y = tv::blur_forward(&x, img.width(), img.height(), &taps64);
    Ok(GrayImage::new(
        img.width(),
        img.height(),
        y.iter().map(|&v| v as f32).collect(),
    )
    .expect("blur preserves dimensions"))
}

/// Estimate a `taps`-tap centered FIR blur kernel from an observed blurry
/// image and the sharp reference it came from, by least squares over
/// interior pixels (normal equations, Gaussian elimination with partial
/// pivoting; a ridge term is added if the system is singular, as happens on
/// constant images).
pub fn wiener_fit(
    observed: &GrayImage,
    reference: &GrayImage,
    taps: usize,
) -> Result<Vec<f32>, DeblurError> {
    if taps == 0 || taps % 2 == 0 {
        return Err(DeblurError::BadKernel {
            detail: format!("tap count {taps} must be odd"),
        });
    }
    let (w, h) = (reference.width(), reference.height());
    if observed.width() != w || observed.height() != h {
        return Err(DeblurError::BadParams {
            detail: "observed and reference sizes differ".into(),
        });
    }
    if taps > w {
        return Err(DeblurError::BadKernel {
            detail: format!("kernel ({taps} taps) wider than image ({w})"),
        });
    }
    let c = taps / 2;
    let mut a = vec![0.0f64; taps * taps];
    let mut v = vec![0.0f64; taps];
    for row in 0..h {
        for x in c..w - c {
            let b = observed.get(x, row) as f64;
            for i in 0..taps {
                let ri = reference.get(x + i - c, row) as f64;
                v[i] += ri * b;
                for j in 0..taps {
                    let rj = reference.get(x + j - c, row) as f64;
                    a[i * taps + j] += ri * rj;
                }
            }
        }
    }
    match solve_linear(&a, &v, taps) {
        Some(k) => Ok(k.iter().map(|&x| x as f32).collect()),
        None => {
            // Ridge fallback for rank-deficient designs.
            let trace: f64 = (0..taps).map(|i| a[i * taps + i]).sum();
            let ridge = 1e-8 * (trace / taps as f64).max(1e-12);
            let mut ar = a.clone();
            for i in 0..taps {
                ar[i * taps + i] += ridge;
            }
            solve_linear(&ar, &v, taps)
                .map(|k| k.iter().map(|&x| x as f32).collect())
                .ok_or(DeblurError::SingularFit)
        }
    }
}

/// Gaussian elimination with partial pivoting; `None` when a pivot vanishes.
fn solve_linear(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut m = a.to_vec();
    let mut rhs = b.to_vec();
    let scale: f64 = a.iter().fold(0.0f64, |acc, &x| acc.max(x.abs())).max(1e-300);
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&r1, &r2| {
                m[r1 * n + col]
                    .abs()
                    .partial_cmp(&m[r2 * n + col].abs())
                    .unwrap()
            })
            .unwrap();
        if m[pivot_row * n + col].abs() < 1e-12 * scale {
            return None;
        }
        if pivot_row != col {
            for k in 0..n {
                m.swap(col * n + k, pivot_row * n + k);
            }
            rhs.swap(col, pivot_row);
        }
        let pivot = m[col * n + col];
        for row in col + 1..n {
            let factor = m[row * n + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            for k in col..n {
                m[row * n + k] -= factor * m[col * n + k];
            }
            rhs[row] -= factor * rhs[col];
        }
    }
    let mut x = vec![0.0f64; n];
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for k in row + 1..n {
            acc -= m[row * n + k] * x[k];
        }
        x[row] = acc / m[row * n + row];
    }
    Some(x)
}

/// Frequency-domain regularized inversion, row by row:
/// `X = conj(H) * Y / (|H|^2 + noise_power)` where `H` is the kernel's DFT
/// at the row length (circular blur model, kernel centered at the origin).
/// A `noise_power` of zero is replaced by a `1e-12` guard so spectral zeros
/// of the kernel cannot divide by zero.
pub fn wiener_deconvolve(
    observed: &GrayImage,
    taps: &[f32],
    noise_power: f32,
) -> Result<GrayImage, DeblurError> {
    let (w, h) = (observed.width(), observed.height());
    let taps64 = tv::validate_kernel(taps, w)?;
    if !(noise_power >= 0.0 && noise_power.is_finite()) {
        return Err(DeblurError::BadParams {
            detail: format!("noise_power {noise_power} must be finite and non-negative"),
        });
    }
    let floor = if noise_power > 0.0 {
        noise_power as f64
    } else {
        1e-12
    };
    // Kernel embedded circularly with its center tap at index 0.
    let c = taps64.len() / 2;
    let mut kbuf = vec![Complex::ZERO; w];
    for (i, &t) in taps64.iter().enumerate() {
        let pos = (i as isize - c as isize).rem_euclid(w as isize) as usize;
        kbuf[pos].re += t;
    }
    let spectrum = dft::fft(&kbuf);

    let mut out = vec![0.0f32; w * h];
    for row in 0..h {
        let signal: Vec<Complex> = (0..w)
            .map(|x| Complex::new(observed.get(x, row) as f64, 0.0))
            .collect();
        let y = dft::fft(&signal);
        let x: Vec<Complex> = y
            .iter()
            .zip(&spectrum)
            .map(|(&yv, &hv)| (hv.conj() * yv).scale(1.0 / (hv.abs2() + floor)))
            .collect();
        let restored = dft::ifft(&x);
        for (xpos, v) in restored.iter().enumerate() {
            out[row * w + xpos] = v.re as f32;
        }
    }
    Ok(GrayImage::new(w, h, out).expect("deconvolution preserves dimensions"))
}

/// Result of [`haar_deblur`].
#[derive(Debug, Clone)]
pub struct HaarResult {
    pub image: GrayImage,
    pub iterations: usize,
    /// Whether the relative-change stopping rule fired before `max_iters`.
    pub converged: bool,
}

/// Landweber iteration with single-level Haar soft-thresholding: each step
/// moves along `K^T (y - K x)` with step `1/L`, then shrinks the wavelet
/// detail bands by `lambda * step`, suppressing ringing while edges stay.
/// Stops when the relative update norm drops below `tol`; `converged`
/// reports whether that happened within `max_iters`.
pub fn haar_deblur(
    observed: &GrayImage,
    taps: &[f32],
    lambda: f32,
    max_iters: usize,
    tol: f32,
) -> Result<HaarResult, DeblurError> {
    let (w, h) = (observed.width(), observed.height());
    let taps64 = tv::validate_kernel(taps, w)?;
    if !(lambda >= 0.0 && lambda.is_finite()) || !(tol > 0.0) || max_iters == 0 {
        return Err(DeblurError::BadParams {
            detail: format!("lambda {lambda}, tol {tol}, max_iters {max_iters}"),
        });
    }
    let y: Vec<f64> = observed.pixels().iter().map(|&v| v as f64).collect();
    let lip = tv::operator_norm_sq(w, h, &taps64);
    let step = 1.0 / lip;
    let threshold = lambda as f64 * step;

    let mut x = y.clone();
    let mut iterations = 0;
    let mut converged = false;
    for it in 1..=max_iters {
        iterations = it;
        let kx = tv::blur_forward(&x, w, h, &taps64);
        let resid: Vec<f64> = kx.iter().zip(&y).map(|(&a, &b)| a - b).collect();
        let grad = tv::blur_adjoint(&resid, w, h, &taps64);
        let mut next: Vec<f64> = x.iter().zip(&grad).map(|(&xv, &g)| xv - step * g).collect();
        haar_shrink(&mut next, w, h, threshold);

        let mut diff = 0.0f64;
        let mut norm = 0.0f64;
        for (&a, &b) in next.iter().zip(&x) {
            diff += (a - b) * (a - b);
            norm += b * b;
        }
        x = next;
        if diff.sqrt() / norm.sqrt().max(1e-12) < tol as f64 {
            converged = true;
            break;
        }
    }
    let pixels: Vec<f32> = x.iter().map(|&v| v.clamp(0.0, 1.0) as f32).collect();
    Ok(HaarResult {
        image: GrayImage::new(w, h, pixels).expect("sizes preserved"),
        iterations,
        converged,
    })
}

/// One level of the orthonormal 2x2 Haar transform, soft-thresholding of the
/// three detail bands, and inverse — done in place per 2x2 block. Trailing
/// odd rows/columns pass through untouched.
fn haar_shrink(x: &mut [f64], w: usize, h: usize, threshold: f64) {
    if threshold <= 0.0 {
        return;
    }
    let soft = |v: f64| v.signum() * (v.abs() - threshold).max(0.0);
    for by in 0..h / 2 {
        for bx in 0..w / 2 {
            let (r0, r1) = (2 * by * w + 2 * bx, (2 * by + 1) * w + 2 * bx);
            let (a, b, c, d) = (x[r0], x[r0 + 1], x[r1], x[r1 + 1]);
            let ll = (a + b + c + d) / 2.0;
            let lh = soft((a - b + c - d) / 2.0);
            let hl = soft((a + b - c - d) / 2.0);
            let hh = soft((a - b - c + d) / 2.0);
            x[r0] = (ll + lh + hl + hh) / 2.0;
            x[r0 + 1] = (ll - lh + hl - hh) / 2.0;
            x[r1] = (ll + lh - hl - hh) / 2.0;
            x[r1 + 1] = (ll - lh - hl + hh) / 2.0;
        }
    }
}
