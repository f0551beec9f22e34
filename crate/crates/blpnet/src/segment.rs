//! Two-phase active-contour segmentation for plate crops, plus the
//! connected-component bookkeeping that turns a mask into ordered character
//! crops.
//!
//! Two level-set evolutions are provided: a global piecewise-constant model
//! ([`chan_vese`]) that fits one mean per phase, and a region-scalable model
//! ([`rsf`]) that fits Gaussian-windowed *local* means, which keeps working
//! when illumination drifts across the plate. Both min-max normalize
//! intensities first (so any positive affine relight yields the same
//! contour), canonicalize the mask to the brighter phase, and record energy
//! checkpoints. For the piecewise-constant model a checkpoint that would
//! raise the energy is rejected — the contour reverts and the time step
//! halves — so its recorded trace never increases.

use crate::image::{gaussian_blur, GrayImage};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("bad segmentation parameters: {detail}")]
    BadParams { detail: String },
    #[error("image {width}x{height} too small to segment")]
    TooSmall { width: usize, height: usize },
}

/// Result of a two-phase segmentation.
#[derive(Debug, Clone)]
pub struct SegmentResult {
    /// Row-major phase mask; `true` marks the brighter phase.
    pub mask: Vec<bool>,
    /// Mean intensity of the bright phase, in the input's original units.
    pub c_bright: f32,
    /// Mean intensity of the dark phase, in the input's original units.
    pub c_dark: f32,
    /// Checkpoint energies. For [`chan_vese`] the trace is non-increasing
    /// by construction (overshooting steps are rewound); for [`rsf`] it is
    /// recorded as observed.
    pub energy_trace: Vec<f64>,
    pub iterations: usize,
    /// Whether the sign-change fraction dropped below the convergence
    /// threshold before the iteration budget ran out.
    pub converged: bool,
    /// Set when the input had no usable contrast (single-phase result).
    pub degenerate: bool,
}

/// Settings for the piecewise-constant evolution.
#[derive(Debug, Clone)]
pub struct ContourParams {
    pub max_iters: usize,
    pub dt: f32,
    /// Contour-length penalty.
    pub mu: f32,
    pub lambda1: f32,
    pub lambda2: f32,
    /// Width of the smoothed Heaviside/delta, in level-set units.
    pub epsilon: f32,
    /// Iterations between energy checkpoints.
    pub checkpoint_every: usize,
    /// Stop once fewer than this fraction of pixels changed phase between
    /// accepted checkpoints.
    pub convergence_fraction: f32,
}

impl Default for ContourParams {
    fn default() -> Self {
        Self {
            max_iters: 400,
            dt: 1.0,
            mu: 0.01,
            lambda1: 1.0,
            lambda2: 1.0,
            epsilon: 1.0,
            checkpoint_every: 10,
            convergence_fraction: 1e-4,
        }
    }
}

/// Settings for the region-scalable evolution.
///
/// The data weights default two orders of magnitude above the
/// piecewise-constant model's because the local fitting residuals live on
/// unit-normalized intensities: squared residuals are O(1e-2), and the
/// front only moves at a useful pace once they are scaled up against the
/// O(1) level-set regularizer.
#[derive(Debug, Clone)]
pub struct RsfParams {
    pub max_iters: usize,
    pub dt: f32,
    /// Scale of the Gaussian window that localizes the fitted means.
    pub sigma: f32,
    /// Contour-length penalty.
    pub nu: f32,
    /// Distance-regularization weight keeping the level set near a signed
    /// distance function (and thereby bounded).
    pub mu: f32,
    pub lambda1: f32,
    pub lambda2: f32,
    pub epsilon: f32,
    pub checkpoint_every: usize,
    pub convergence_fraction: f32,
}

impl Default for RsfParams {
    fn default() -> Self {
        Self {
            max_iters: 400,
            dt: 0.1,
            sigma: 5.0,
            nu: 1.5,
            mu: 1.0,
            lambda1: 500.0,
            lambda2: 500.0,
            epsilon: 1.0,
            checkpoint_every: 10,
            convergence_fraction: 1e-3,
        }
    }
}

/// Level sets are clamped to this range each step, keeping the field
/// bounded regardless of how long the data force pushes one way.
const PHI_BOUND: f32 = 20.0;
/// Curvature estimates beyond pixel scale are discretization noise.
const KAPPA_BOUND: f32 = 2.0;
/// Convergence may only fire after this many accepted checkpoints, so a
/// slow start is not mistaken for a stationary contour.
const MIN_CHECKPOINTS: usize = 3;

fn heaviside(phi: f32, eps: f32) -> f32 {
    0.5 * (1.0 + std::f32::consts::FRAC_2_PI * (phi / eps).atan())
}

fn delta(phi: f32, eps: f32) -> f32 {
    eps / (std::f32::consts::PI * (eps * eps + phi * phi))
}

fn at(buf: &[f32], w: usize, h: usize, x: isize, y: isize) -> f32 {
    let xc = x.clamp(0, w as isize - 1) as usize;
    let yc = y.clamp(0, h as isize - 1) as usize;
    buf[yc * w + xc]
}

/// Mean curvature of the level set, `div(grad(phi)/|grad(phi)|)`, via
/// central differences with replicate edges, clamped to pixel scale.
fn curvature(phi: &[f32], w: usize, h: usize, out: &mut Vec<f32>) {
    out.clear();
    out.reserve(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let px = (at(phi, w, h, x + 1, y) - at(phi, w, h, x - 1, y)) * 0.5;
            let py = (at(phi, w, h, x, y + 1) - at(phi, w, h, x, y - 1)) * 0.5;
            let pxx = at(phi, w, h, x + 1, y) - 2.0 * at(phi, w, h, x, y) + at(phi, w, h, x - 1, y);
            let pyy = at(phi, w, h, x, y + 1) - 2.0 * at(phi, w, h, x, y) + at(phi, w, h, x, y - 1);
            let pxy = (at(phi, w, h, x + 1, y + 1) + at(phi, w, h, x - 1, y - 1)
                - at(phi, w, h, x + 1, y - 1)
                - at(phi, w, h, x - 1, y + 1))
                * 0.25;
            let g2 = px * px + py * py;
            let k = (pxx * py * py - 2.0 * px * py * pxy + pyy * px * px) / (g2.powf(1.5) + 1e-8);
            out.push(k.clamp(-KAPPA_BOUND, KAPPA_BOUND));
        }
    }
}

fn gradient_magnitude(phi: &[f32], w: usize, h: usize, x: isize, y: isize) -> f32 {
    let px = (at(phi, w, h, x + 1, y) - at(phi, w, h, x - 1, y)) * 0.5;
    let py = (at(phi, w, h, x, y + 1) - at(phi, w, h, x, y - 1)) * 0.5;
    (px * px + py * py).sqrt()
}

/// Min-max normalize to `[0, 1]`; `None` for (near-)constant images.
fn normalize(img: &GrayImage) -> Option<(Vec<f32>, f32, f32)> {
    let (lo, hi) = img.range();
    if !(hi - lo).is_finite() || hi - lo < 1e-6 {
        return None;
    }
    let inv = 1.0 / (hi - lo);
    Some((
        img.pixels().iter().map(|&v| (v - lo) * inv).collect(),
        lo,
        hi,
    ))
}

fn degenerate_result(img: &GrayImage) -> SegmentResult {
    let v = img.pixels().first().copied().unwrap_or(0.0);
    SegmentResult {
        mask: vec![false; img.pixels().len()],
        c_bright: v,
        c_dark: v,
        energy_trace: vec![0.0],
        iterations: 0,
        converged: true,
        degenerate: true,
    }
}

fn validate_common(
    img: &GrayImage,
    max_iters: usize,
    dt: f32,
    eps: f32,
    checkpoint_every: usize,
) -> Result<(), SegmentError> {
    if img.width() < 4 || img.height() < 4 {
        return Err(SegmentError::TooSmall {
            width: img.width(),
            height: img.height(),
        });
    }
    if max_iters == 0 || checkpoint_every == 0 {
        return Err(SegmentError::BadParams {
            detail: "max_iters and checkpoint_every must be positive".into(),
        });
    }
    if !(dt > 0.0) || !(eps > 0.0) {
        return Err(SegmentError::BadParams {
            detail: format!("dt {dt} and epsilon {eps} must be positive"),
        });
    }
    Ok(())
}

/// Orient a finished level set so the reported mask marks the brighter
/// phase, and report each phase's sharp mean in original intensity units.
fn finish(
    phi: &[f32],
    intensity: &[f32],
    lo: f32,
    hi: f32,
    energy_trace: Vec<f64>,
    iterations: usize,
    converged: bool,
) -> SegmentResult {
    let mut mask: Vec<bool> = phi.iter().map(|&p| p > 0.0).collect();
    let (mut s_in, mut n_in, mut s_out, mut n_out) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for (&m, &i) in mask.iter().zip(intensity) {
        if m {
            s_in += i as f64;
            n_in += 1.0;
        } else {
            s_out += i as f64;
            n_out += 1.0;
        }
    }
    // An all-one-phase result reports that phase's mean for both sides.
    let c_in = if n_in > 0.0 { s_in / n_in } else { s_out / n_out.max(1e-12) };
    let c_out = if n_out > 0.0 { s_out / n_out } else { c_in };
    let (mut c_bright, mut c_dark) = (c_in, c_out);
    if c_in < c_out {
        for m in &mut mask {
            *m = !*m;
        }
        std::mem::swap(&mut c_bright, &mut c_dark);
    }
    let range = (hi - lo) as f64;
    SegmentResult {
        mask,
        c_bright: (lo as f64 + c_bright * range) as f32,
        c_dark: (lo as f64 + c_dark * range) as f32,
        energy_trace,
        iterations,
        converged,
        degenerate: false,
    }
}

/// Two-phase piecewise-constant segmentation: evolve a level set so each
/// phase is fit by a single mean intensity, with a length penalty keeping
/// the contour smooth. The mask marks the brighter phase.
pub fn chan_vese(img: &GrayImage, params: &ContourParams) -> Result<SegmentResult, SegmentError> {
    validate_common(img, params.max_iters, params.dt, params.epsilon, params.checkpoint_every)?;
    let (w, h) = (img.width(), img.height());
    let Some((intensity, lo, hi)) = normalize(img) else {
        return Ok(degenerate_result(img));
    };

    // Deterministic seed: a signed checkerboard puts small fronts
    // everywhere, and a faint intensity tilt breaks the tie between the two
    // phases (a pure checkerboard samples both phases identically, leaving
    // the region means equal and the contour parked at an unstable
    // equilibrium).
    let mean = intensity.iter().map(|&v| v as f64).sum::<f64>() / intensity.len() as f64;
    let mut phi: Vec<f32> = (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f32, (i / w) as f32);
            (std::f32::consts::PI * x / 5.0).sin() * (std::f32::consts::PI * y / 5.0).sin()
                + 0.25 * (intensity[i] - mean as f32)
        })
        .collect();

    let eps = params.epsilon;
    let mut dt = params.dt;
    let mut kappa = Vec::new();
    let mut phi_checkpoint = phi.clone();
    let mut energy_trace: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    let means = |phi: &[f32]| -> (f64, f64) {
        let (mut s1, mut n1, mut s2, mut n2) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for (&p, &i) in phi.iter().zip(&intensity) {
            let hh = heaviside(p, eps) as f64;
            s1 += hh * i as f64;
            n1 += hh;
            s2 += (1.0 - hh) * i as f64;
            n2 += 1.0 - hh;
        }
        (s1 / n1.max(1e-12), s2 / n2.max(1e-12))
    };
    let energy = |phi: &[f32], c1: f64, c2: f64| -> f64 {
        let mut e = 0.0f64;
        for y in 0..h as isize {
            for x in 0..w as isize {
                let p = phi[y as usize * w + x as usize];
                let i = intensity[y as usize * w + x as usize] as f64;
                let hh = heaviside(p, eps) as f64;
                let d1 = i - c1;
                let d2 = i - c2;
                e += params.mu as f64
                    * delta(p, eps) as f64
                    * gradient_magnitude(phi, w, h, x, y) as f64
                    + params.lambda1 as f64 * hh * d1 * d1
                    + params.lambda2 as f64 * (1.0 - hh) * d2 * d2;
            }
        }
        e
    };

    let (mut c1, mut c2) = means(&phi);
    let mut last_energy = energy(&phi, c1, c2);
    energy_trace.push(last_energy);

    while iterations < params.max_iters && !converged {
        for _ in 0..params.checkpoint_every {
            if iterations >= params.max_iters {
                break;
            }
            iterations += 1;
            let (a, b) = means(&phi);
            c1 = a;
            c2 = b;
            curvature(&phi, w, h, &mut kappa);
            for ((p, &k), &i) in phi.iter_mut().zip(&kappa).zip(&intensity) {
                let d1 = i - c1 as f32;
                let d2 = i - c2 as f32;
                let force = delta(*p, eps)
                    * (params.mu * k - params.lambda1 * d1 * d1 + params.lambda2 * d2 * d2);
                *p = (*p + dt * force).clamp(-PHI_BOUND, PHI_BOUND);
            }
        }
        let (a, b) = means(&phi);
        let e = energy(&phi, a, b);
        if e <= last_energy {
            let flips = phi
                .iter()
                .zip(&phi_checkpoint)
                .filter(|(&p, &q)| (p > 0.0) != (q > 0.0))
                .count();
            energy_trace.push(e);
            last_energy = e;
            phi_checkpoint = phi.clone();
            if energy_trace.len() > MIN_CHECKPOINTS
                && (flips as f32) < params.convergence_fraction * (w * h) as f32
            {
                converged = true;
            }
        } else {
            // Overshot: rewind to the accepted contour and damp the step.
            phi = phi_checkpoint.clone();
            dt *= 0.5;
            if dt < 1e-7 {
                converged = true;
            }
        }
    }

    Ok(finish(&phi, &intensity, lo, hi, energy_trace, iterations, converged))
}

/// Region-scalable two-phase segmentation: each phase is fit by local means
/// computed under a Gaussian window of scale `sigma`, so a smooth
/// illumination gradient across the plate does not drag the contour the way
/// it does with a single global mean per phase.
///
/// Two standard robustness devices keep the result independent of where the
/// seed circle lands: the fitting force acts on all level sets (not just
/// near the zero crossing), and where one phase is locally absent its fit
/// falls back toward that phase's global mean instead of a guarded-division
/// artifact.
pub fn rsf(img: &GrayImage, params: &RsfParams) -> Result<SegmentResult, SegmentError> {
    validate_common(img, params.max_iters, params.dt, params.epsilon, params.checkpoint_every)?;
    if !(params.sigma > 0.0) {
        return Err(SegmentError::BadParams {
            detail: format!("sigma {} must be positive", params.sigma),
        });
    }
    let (w, h) = (img.width(), img.height());
    let Some((intensity, lo, hi)) = normalize(img) else {
        return Ok(degenerate_result(img));
    };
    let norm_img = GrayImage::new(w, h, intensity.clone()).expect("normalized image");
    let k_i = gaussian_blur(&norm_img, params.sigma); // K * I, fixed

    // Deterministic seed: a centered circle wide enough to cover the text
    // area while leaving the image border outside. The outside phase then
    // sweeps inward through the (connected) background, and the local fits
    // stop it at character boundaries.
    let (cx, cy) = ((w as f32 - 1.0) / 2.0, (h as f32 - 1.0) / 2.0);
    let r0 = 0.45 * w.max(h) as f32;
    let mut phi: Vec<f32> = (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f32, (i / w) as f32);
            r0 - ((x - cx).powi(2) + (y - cy).powi(2)).sqrt()
        })
        .collect();

    let eps = params.epsilon;
    let dt = params.dt;
    let mut kappa = Vec::new();
    let mut phi_checkpoint = phi.clone();
    let mut energy_trace: Vec<f64> = Vec::new();
    let mut iterations = 0;
    let mut converged = false;

    let blur_of = |vals: &[f32]| -> Vec<f32> {
        let im = GrayImage::new(w, h, vals.to_vec()).expect("field image");
        gaussian_blur(&im, params.sigma).pixels().to_vec()
    };

    // Local fits and pointwise fitting residuals for the current phi. Each
    // phase's local mean is pulled toward its global mean with a small
    // weight, which takes over smoothly wherever that phase is locally
    // absent and the windowed division would otherwise be meaningless.
    const GLOBAL_BLEND: f32 = 0.05;
    let fits = |phi: &[f32]| -> (Vec<f32>, Vec<f32>) {
        let hh: Vec<f32> = phi.iter().map(|&p| heaviside(p, eps)).collect();
        let hi_prod: Vec<f32> = hh.iter().zip(&intensity).map(|(&a, &b)| a * b).collect();
        let k_h = blur_of(&hh);
        let k_hi = blur_of(&hi_prod);
        let (mut s1, mut n1, mut s2, mut n2) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        for (&hv, &iv) in hh.iter().zip(&intensity) {
            s1 += (hv * iv) as f64;
            n1 += hv as f64;
            s2 += ((1.0 - hv) * iv) as f64;
            n2 += (1.0 - hv) as f64;
        }
        let c1 = (s1 / n1.max(1e-12)) as f32;
        let c2 = (s2 / n2.max(1e-12)) as f32;
        let f1: Vec<f32> = k_hi
            .iter()
            .zip(&k_h)
            .map(|(&num, &den)| {
                ((num + GLOBAL_BLEND * c1) / (den + GLOBAL_BLEND)).clamp(0.0, 1.0)
            })
            .collect();
        let f2: Vec<f32> = k_i
            .pixels()
            .iter()
            .zip(&k_hi)
            .zip(&k_h)
            .map(|((&ki, &khi), &kh)| {
                ((ki - khi + GLOBAL_BLEND * c2) / (1.0 - kh + GLOBAL_BLEND)).clamp(0.0, 1.0)
            })
            .collect();
        let e_of = |f: &[f32]| -> Vec<f32> {
            let kf = blur_of(f);
            let fsq: Vec<f32> = f.iter().map(|&v| v * v).collect();
            let kf2 = blur_of(&fsq);
            intensity
                .iter()
                .zip(kf.iter().zip(&kf2))
                .map(|(&i, (&kfv, &kf2v))| (i * i - 2.0 * i * kfv + kf2v).max(0.0))
                .collect()
        };
        (e_of(&f1), e_of(&f2))
    };

    let energy = |phi: &[f32], e1: &[f32], e2: &[f32]| -> f64 {
        let mut e = 0.0f64;
        for y in 0..h as isize {
            for x in 0..w as isize {
                let idx = y as usize * w + x as usize;
                let p = phi[idx];
                let hh = heaviside(p, eps) as f64;
                let g = gradient_magnitude(phi, w, h, x, y) as f64;
                e += params.lambda1 as f64 * hh * e1[idx] as f64
                    + params.lambda2 as f64 * (1.0 - hh) * e2[idx] as f64
                    + params.nu as f64 * delta(p, eps) as f64 * g
                    + params.mu as f64 * 0.5 * (g - 1.0) * (g - 1.0);
            }
        }
        e
    };

    let (e1, e2) = fits(&phi);
    energy_trace.push(energy(&phi, &e1, &e2));

    let bound = (w + h) as f32;
    while iterations < params.max_iters && !converged {
        for _ in 0..params.checkpoint_every {
            if iterations >= params.max_iters {
                break;
            }
            iterations += 1;
            let (e1, e2) = fits(&phi);
            curvature(&phi, w, h, &mut kappa);
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let idx = y as usize * w + x as usize;
                    let p = phi[idx];
                    let lap = at(&phi, w, h, x + 1, y)
                        + at(&phi, w, h, x - 1, y)
                        + at(&phi, w, h, x, y + 1)
                        + at(&phi, w, h, x, y - 1)
                        - 4.0 * p;
                    let force = -params.lambda1 * e1[idx]
                        + params.lambda2 * e2[idx]
                        + delta(p, eps) * params.nu * kappa[idx]
                        + params.mu * (lap - kappa[idx]);
                    // One level-set unit per step caps front speed at a
                    // pixel-ish scale regardless of the data weights.
                    let step = (dt * force).clamp(-1.0, 1.0);
                    phi[idx] = (p + step).clamp(-bound, bound);
                }
            }
        }
        let (e1, e2) = fits(&phi);
        energy_trace.push(energy(&phi, &e1, &e2));
        let flips = phi
            .iter()
            .zip(&phi_checkpoint)
            .filter(|(&p, &q)| (p > 0.0) != (q > 0.0))
            .count();
        phi_checkpoint = phi.clone();
        if energy_trace.len() > MIN_CHECKPOINTS
            && (flips as f32) < params.convergence_fraction * (w * h) as f32
        {
            converged = true;
        }
    }

    Ok(finish(&phi, &intensity, lo, hi, energy_trace, iterations, converged))
}

// ---------------------------------------------------------------------------
// Connected components and character extraction
// ---------------------------------------------------------------------------

/// One 8-connected region of the foreground.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub min_x: usize,
    pub min_y: usize,
    pub max_x: usize,
    pub max_y: usize,
    /// Number of pixels in the region.
    pub area: usize,
    pub centroid: (f32, f32),
}

impl Component {
    pub fn width(&self) -> usize {
        self.max_x - self.min_x + 1
    }
    pub fn height(&self) -> usize {
        self.max_y - self.min_y + 1
    }
    /// Height over width.
    pub fn aspect(&self) -> f32 {
        self.height() as f32 / self.width() as f32
    }
}

/// Component labeling of a mask.
#[derive(Debug, Clone)]
pub struct Labeling {
    pub components: Vec<Component>,
    /// Row-major labels: 0 is background, `i+1` is `components[i]`.
    pub labels: Vec<u32>,
    pub width: usize,
    pub height: usize,
}

/// Label 8-connected `true` regions of `mask` (diagonal contact joins).
pub fn connected_components(mask: &[bool], width: usize, height: usize) -> Labeling {
    assert_eq!(mask.len(), width * height, "mask size mismatch");
    let mut labels = vec![0u32; mask.len()];
    let mut components = Vec::new();
    let mut queue = std::collections::VecDeque::new();
    for start in 0..mask.len() {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        let id = components.len() as u32 + 1;
        labels[start] = id;
        queue.push_back(start);
        let (mut min_x, mut min_y) = (width, height);
        let (mut max_x, mut max_y) = (0usize, 0usize);
        let mut area = 0usize;
        let (mut sx, mut sy) = (0.0f64, 0.0f64);
        while let Some(idx) = queue.pop_front() {
            let (x, y) = (idx % width, idx / width);
            area += 1;
            sx += x as f64;
            sy += y as f64;
            min_x = min_x.min(x);
            min_y = min_y.min(y);
            max_x = max_x.max(x);
            max_y = max_y.max(y);
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let nx = x as isize + dx;
                    let ny = y as isize + dy;
                    if nx < 0 || ny < 0 || nx >= width as isize || ny >= height as isize {
                        continue;
                    }
                    let nidx = ny as usize * width + nx as usize;
                    if mask[nidx] && labels[nidx] == 0 {
                        labels[nidx] = id;
                        queue.push_back(nidx);
                    }
                }
            }
        }
        components.push(Component {
            min_x,
            min_y,
            max_x,
            max_y,
            area,
            centroid: ((sx / area as f64) as f32, (sy / area as f64) as f32),
        });
    }
    Labeling {
        components,
        labels,
        width,
        height,
    }
}

/// Filtering and crop-geometry settings for character extraction.
#[derive(Debug, Clone)]
pub struct CropParams {
    /// Component area bounds as fractions of the full image area.
    pub min_area_frac: f32,
    pub max_area_frac: f32,
    /// Height/width bounds for a plausible character.
    pub min_aspect: f32,
    pub max_aspect: f32,
    /// Extra margin around the bounding box, as a fraction of its longer side.
    pub margin_frac: f32,
    /// Side length of the square output crops.
    pub out_size: usize,
    /// Accept a two-row split when the row-center separation exceeds this
    /// fraction of the image height. Glyph ink boxes within one row can
    /// have centers a quarter-height apart, while true double rows sit
    /// near half a height apart, so the threshold lives between the two.
    pub row_gap_frac: f32,
}

impl Default for CropParams {
    fn default() -> Self {
        Self {
            min_area_frac: 0.005,
            max_area_frac: 0.30,
            min_aspect: 0.25,
            max_aspect: 10.0,
            margin_frac: 0.15,
            out_size: 64,
            row_gap_frac: 0.32,
        }
    }
}

/// One character cut out of a plate, in reading order.
#[derive(Debug, Clone)]
pub struct CharacterCrop {
    /// Square, resized patch; glyph bright on dark background.
    pub image: GrayImage,
    /// Bounding box in plate coordinates (inclusive).
    pub min_x: usize,
    pub min_y: usize,
    pub max_x: usize,
    pub max_y: usize,
    /// Reading-order index, dense from 0.
    pub index: usize,
    /// Text row: 0 for the top (or only) row, 1 for the bottom.
    pub row: usize,
}

/// Components within the plausible-character area/aspect window.
pub fn filter_components(
    components: &[Component],
    width: usize,
    height: usize,
    params: &CropParams,
) -> Vec<Component> {
    let total = (width * height) as f32;
    components
        .iter()
        .filter(|c| {
            let frac = c.area as f32 / total;
            frac >= params.min_area_frac
                && frac <= params.max_area_frac
                && c.aspect() >= params.min_aspect
                && c.aspect() <= params.max_aspect
        })
        .cloned()
        .collect()
}

/// Cluster vertical centers into at most two rows with 1-D 2-means.
/// Returns the two row centers when the split is wide enough to be a real
/// second text line, `None` for a single row.
fn split_rows(ys: &[f32], height: usize, gap_frac: f32) -> Option<(f32, f32)> {
    if ys.len() < 2 {
        return None;
    }
    let min_gap = gap_frac * height as f32;
    let mut m1 = ys.iter().copied().fold(f32::INFINITY, f32::min);
    let mut m2 = ys.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if m2 - m1 < min_gap {
        return None;
    }
    for _ in 0..32 {
        let (mut s1, mut n1, mut s2, mut n2) = (0.0f32, 0u32, 0.0f32, 0u32);
        for &y in ys {
            if (y - m1).abs() <= (y - m2).abs() {
                s1 += y;
                n1 += 1;
            } else {
                s2 += y;
                n2 += 1;
            }
        }
        if n1 == 0 || n2 == 0 {
            return None;
        }
        let (a, b) = (s1 / n1 as f32, s2 / n2 as f32);
        if a == m1 && b == m2 {
            break;
        }
        m1 = a;
        m2 = b;
    }
    if m2 - m1 >= min_gap {
        Some((m1, m2))
    } else {
        None
    }
}

/// Arrange filtered components in reading order and cut one
/// polarity-normalized square crop per component. Each crop takes the
/// original intensities in the padded bounding box, min-max normalizes
/// them, flips them if the component is darker than its surroundings (so
/// glyphs always come out bright on dark), letterboxes to a square, and
/// resizes to `out_size`.
pub fn order_and_crop(
    img: &GrayImage,
    labeling: &Labeling,
    components: &[Component],
    params: &CropParams,
) -> Vec<CharacterCrop> {
    let (w, h) = (img.width(), img.height());
    let ys: Vec<f32> = components.iter().map(|c| c.centroid.1).collect();
    let rows = split_rows(&ys, h, params.row_gap_frac);
    let row_of = |c: &Component| -> usize {
        match rows {
            Some((m1, m2)) => {
                if (c.centroid.1 - m1).abs() <= (c.centroid.1 - m2).abs() {
                    0
                } else {
                    1
                }
            }
            None => 0,
        }
    };
    let mut ordered: Vec<(usize, Component)> =
        components.iter().map(|c| (row_of(c), c.clone())).collect();
    ordered.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.centroid.0.total_cmp(&b.1.centroid.0)));

    ordered
        .into_iter()
        .enumerate()
        .map(|(index, (row, comp))| {
            let margin = ((comp.width().max(comp.height())) as f32 * params.margin_frac) as usize;
            let x0 = comp.min_x.saturating_sub(margin);
            let y0 = comp.min_y.saturating_sub(margin);
            let x1 = (comp.max_x + margin).min(w - 1);
            let y1 = (comp.max_y + margin).min(h - 1);
            let crop = img
                .crop(x0, y0, x1 - x0 + 1, y1 - y0 + 1)
                .expect("component box is inside the image");

            // Compare the component's intensity with its surroundings to
            // decide whether the glyph needs inverting.
            let comp_id = labeling.labels
                [comp.centroid.1.round() as usize * w + comp.centroid.0.round() as usize];
            let (mut s_in, mut n_in, mut s_out, mut n_out) = (0.0f64, 0.0, 0.0f64, 0.0);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let v = img.get(x, y) as f64;
                    if comp_id != 0 && labeling.labels[y * w + x] == comp_id {
                        s_in += v;
                        n_in += 1.0;
                    } else {
                        s_out += v;
                        n_out += 1.0;
                    }
                }
            }
            let glyph_darker = n_in > 0.0 && n_out > 0.0 && s_in / n_in < s_out / n_out;

            let (lo, hi) = crop.range();
            let range = (hi - lo).max(1e-6);
            let normed = GrayImage::from_fn(crop.width(), crop.height(), |x, y| {
                let v = (crop.get(x, y) - lo) / range;
                if glyph_darker {
                    1.0 - v
                } else {
                    v
                }
            });

            // Letterbox to a square, background 0.
            let side = normed.width().max(normed.height());
            let ox = (side - normed.width()) / 2;
            let oy = (side - normed.height()) / 2;
            let square = GrayImage::from_fn(side, side, |x, y| {
                if x >= ox && x < ox + normed.width() && y >= oy && y < oy + normed.height() {
                    normed.get(x - ox, y - oy)
                } else {
                    0.0
                }
            });
            let image = square
                .resize(params.out_size, params.out_size)
                .expect("out_size is positive");
            CharacterCrop {
                image,
                min_x: comp.min_x,
                min_y: comp.min_y,
                max_x: comp.max_x,
                max_y: comp.max_y,
                index,
                row,
            }
        })
        .collect()
}

/// Full mask-to-crops path. The character phase is taken to be whichever
/// side of the mask covers less area (glyphs are sparse on a plate), then
/// the crops come back labeled with reading order.
pub fn extract_characters(
    img: &GrayImage,
    mask: &[bool],
    params: &CropParams,
) -> Vec<CharacterCrop> {
    let fg_count = mask.iter().filter(|&&m| m).count();
    let fg: Vec<bool> = if fg_count * 2 > mask.len() {
        mask.iter().map(|&m| !m).collect()
    } else {
        mask.to_vec()
    };
    let labeling = connected_components(&fg, img.width(), img.height());
    let kept = filter_components(&labeling.components, img.width(), img.height(), params);
    order_and_crop(img, &labeling, &kept, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exhaustive optimal two-phase threshold: minimizes total within-class
    /// squared deviation over every split of the sorted pixel values.
    /// Returns the mask of the brighter class.
    fn brute_force_two_phase(img: &GrayImage) -> Vec<bool> {
        let mut vals: Vec<f32> = img.pixels().to_vec();
        vals.sort_by(f32::total_cmp);
        let n = vals.len();
        let prefix: Vec<f64> = std::iter::once(0.0)
            .chain(vals.iter().scan(0.0f64, |acc, &v| {
                *acc += v as f64;
                Some(*acc)
            }))
            .collect();
        let prefix_sq: Vec<f64> = std::iter::once(0.0)
            .chain(vals.iter().scan(0.0f64, |acc, &v| {
                *acc += (v as f64) * (v as f64);
                Some(*acc)
            }))
            .collect();
        let sse = |a: usize, b: usize| -> f64 {
            // Sum of squared deviations of vals[a..b] from its mean.
            let k = (b - a) as f64;
            let s = prefix[b] - prefix[a];
            let s2 = prefix_sq[b] - prefix_sq[a];
            s2 - s * s / k
        };
        let mut best = (f64::INFINITY, 0usize);
        for split in 1..n {
            if vals[split] == vals[split - 1] {
                continue; // identical values cannot straddle a threshold
            }
            let cost = sse(0, split) + sse(split, n);
            if cost < best.0 {
                best = (cost, split);
            }
        }
        let threshold = vals[best.1.max(1) - 1];
        img.pixels().iter().map(|&v| v > threshold).collect()
    }

    fn agreement(a: &[bool], b: &[bool]) -> f32 {
        let same = a.iter().zip(b).filter(|(x, y)| x == y).count();
        same as f32 / a.len() as f32
    }

    #[test]
    fn heaviside_delta_sanity() {
        assert!((heaviside(0.0, 1.0) - 0.5).abs() < 1e-6);
        assert!(heaviside(50.0, 1.0) > 0.99);
        assert!(heaviside(-50.0, 1.0) < 0.01);
        // delta integrates to ~1.
        let integral: f32 = (-5000..5000).map(|i| delta(i as f32 * 0.01, 1.0) * 0.01).sum();
        assert!((integral - 1.0).abs() < 0.02, "{integral}");
    }

    #[test]
    fn chan_vese_matches_threshold_oracle_on_split_image() {
        let img = GrayImage::from_fn(48, 24, |x, y| {
            let base = if x < 24 { 0.2 } else { 0.8 };
            base + 0.02 * (((x * 31 + y * 17) % 7) as f32 / 7.0 - 0.5)
        });
        let result = chan_vese(&img, &ContourParams::default()).unwrap();
        let oracle = brute_force_two_phase(&img);
        let agree = agreement(&result.mask, &oracle);
        assert!(agree >= 0.99, "agreement {agree}");
        assert!(result.c_bright > result.c_dark);
        assert!((result.c_bright - 0.8).abs() < 0.05, "{}", result.c_bright);
        assert!((result.c_dark - 0.2).abs() < 0.05, "{}", result.c_dark);
        assert!(result.converged);
        assert!(!result.degenerate);
    }

    #[test]
    fn chan_vese_energy_trace_never_increases() {
        let img = GrayImage::from_fn(40, 20, |x, y| {
            if (x / 7 + y / 7) % 2 == 0 {
                0.25
            } else {
                0.75
            }
        });
        let result = chan_vese(&img, &ContourParams::default()).unwrap();
        assert!(result.energy_trace.len() >= 2);
        for win in result.energy_trace.windows(2) {
            assert!(win[1] <= win[0] + 1e-9, "{} -> {}", win[0], win[1]);
        }
    }

    #[test]
    fn chan_vese_affine_intensity_invariance_is_exact() {
        // Quantized values and a power-of-two relight keep the min-max
        // normalization bitwise identical, so the two runs must agree on
        // every pixel.
        let img = GrayImage::from_fn(32, 16, |x, y| ((x * 31 + y * 17) % 13) as f32 / 16.0);
        let relit = GrayImage::from_fn(32, 16, |x, y| 0.25 + 0.5 * img.get(x, y));
        let params = ContourParams {
            max_iters: 60,
            ..ContourParams::default()
        };
        let a = chan_vese(&img, &params).unwrap();
        let b = chan_vese(&relit, &params).unwrap();
        assert_eq!(a.mask, b.mask);
        // Fitted means land in each input's own units.
        assert!((b.c_bright - (0.25 + 0.5 * a.c_bright)).abs() < 1e-3);
        assert!((b.c_dark - (0.25 + 0.5 * a.c_dark)).abs() < 1e-3);
    }

    #[test]
    fn chan_vese_inverted_image_gives_complementary_mask() {
        let img = GrayImage::from_fn(32, 32, |x, _| if x < 16 { 0.1 } else { 0.9 });
        let inv = GrayImage::from_fn(32, 32, |x, y| 1.0 - img.get(x, y));
        let a = chan_vese(&img, &ContourParams::default()).unwrap();
        let b = chan_vese(&inv, &ContourParams::default()).unwrap();
        let complement: Vec<bool> = a.mask.iter().map(|&m| !m).collect();
        let agree = agreement(&b.mask, &complement);
        assert!(agree >= 0.99, "agreement {agree}");
    }

    #[test]
    fn constant_image_degenerates_gracefully() {
        let img = GrayImage::filled(16, 16, 0.4);
        let r = chan_vese(&img, &ContourParams::default()).unwrap();
        assert!(r.degenerate);
        assert!(r.converged);
        assert!(r.mask.iter().all(|&m| !m));
        let r = rsf(&img, &RsfParams::default()).unwrap();
        assert!(r.degenerate);
    }

    fn glyph_card(w: usize, h: usize, glyph_xs: &[usize]) -> (Vec<bool>, GrayImage) {
        let mut truth = vec![false; w * h];
        for &gx in glyph_xs {
            for y in 6..h - 6 {
                for x in gx..gx + 8 {
                    truth[y * w + x] = true;
                }
            }
        }
        let img = GrayImage::from_fn(w, h, |x, y| if truth[y * w + x] { 1.0 } else { 0.45 });
        (truth, img)
    }

    #[test]
    fn rsf_matches_chan_vese_without_inhomogeneity() {
        let (_, img) = glyph_card(72, 24, &[10, 28, 46]);
        let cv = chan_vese(&img, &ContourParams::default()).unwrap();
        let rs = rsf(&img, &RsfParams::default()).unwrap();
        let agree = agreement(&cv.mask, &rs.mask);
        assert!(agree >= 0.98, "cross-model agreement {agree}");
    }

    #[test]
    fn rsf_survives_illumination_ramp_where_global_fit_fails() {
        // Bright glyph bars on a dark card, multiplied by a strong
        // left-to-right illumination ramp: the dimmest glyphs fall below
        // the brightest background, so no single global threshold is right
        // everywhere and the global two-mean fit must misclassify, while
        // the locally fitted model should stay near the truth.
        let (w, h) = (72, 24);
        let (truth, flat) = glyph_card(w, h, &[6, 24, 42, 60]);
        let ramped = GrayImage::from_fn(w, h, |x, y| {
            let ramp = 0.3 + 0.7 * x as f32 / (w - 1) as f32;
            flat.get(x, y) * ramp
        });

        let cv = chan_vese(&ramped, &ContourParams::default()).unwrap();
        let rs = rsf(&ramped, &RsfParams::default()).unwrap();
        let cv_agree = agreement(&cv.mask, &truth);
        let rs_agree = agreement(&rs.mask, &truth);
        assert!(
            rs_agree > cv_agree,
            "local fit {rs_agree:.3} should beat global fit {cv_agree:.3}"
        );
        assert!(rs_agree >= 0.95, "local fit agreement {rs_agree:.3}");
        assert!(cv_agree < 0.95, "global fit agreement {cv_agree:.3}");
    }

    #[test]
    fn components_hand_cases() {
        // Diagonal contact joins under 8-connectivity.
        let mask = [
            true, false, false, //
            false, true, false, //
            false, false, true,
        ];
        let labeling = connected_components(&mask, 3, 3);
        assert_eq!(labeling.components.len(), 1);
        assert_eq!(labeling.components[0].area, 3);

        // Two separated blobs stay separate, with correct boxes and labels.
        let w = 7;
        let h = 4;
        #[rustfmt::skip]
        let mask = [
            1, 1, 0, 0, 0, 0, 0,
            1, 1, 0, 0, 0, 1, 0,
            0, 0, 0, 0, 1, 1, 0,
            0, 0, 0, 0, 0, 0, 0,
        ]
        .iter()
        .map(|&v| v == 1)
        .collect::<Vec<bool>>();
        let labeling = connected_components(&mask, w, h);
        assert_eq!(labeling.components.len(), 2);
        let a = &labeling.components[0];
        assert_eq!((a.min_x, a.min_y, a.max_x, a.max_y), (0, 0, 1, 1));
        assert_eq!(a.area, 4);
        let b = &labeling.components[1];
        assert_eq!(b.area, 3);
        assert_eq!((b.min_x, b.min_y, b.max_x, b.max_y), (4, 1, 5, 2));
        assert_eq!(labeling.labels[0], 1);
        assert_eq!(labeling.labels[w + 5], 2);
        assert_eq!(labeling.labels[3 * w], 0);

        // Empty mask: no regions.
        let labeling = connected_components(&[false; 12], 4, 3);
        assert!(labeling.components.is_empty());
    }

    #[test]
    fn ordering_two_rows_reading_order() {
        let mk = |x: usize, y: usize| Component {
            min_x: x,
            min_y: y,
            max_x: x + 4,
            max_y: y + 6,
            area: 35,
            centroid: (x as f32 + 2.0, y as f32 + 3.0),
        };
        let img = GrayImage::filled(64, 64, 0.5);
        let labeling = connected_components(&vec![false; 64 * 64], 64, 64);
        // Bottom row listed first, scrambled x; top row after.
        let comps = vec![mk(30, 40), mk(5, 40), mk(18, 8), mk(2, 8), mk(55, 40)];
        let crops = order_and_crop(&img, &labeling, &comps, &CropParams::default());
        let xs: Vec<usize> = crops.iter().map(|c| c.min_x).collect();
        let rows: Vec<usize> = crops.iter().map(|c| c.row).collect();
        let indices: Vec<usize> = crops.iter().map(|c| c.index).collect();
        assert_eq!(rows, vec![0, 0, 1, 1, 1]);
        assert_eq!(xs, vec![2, 18, 5, 30, 55]);
        assert_eq!(indices, vec![0, 1, 2, 3, 4]);
        // Single row stays x-sorted with row 0 throughout.
        let comps = vec![mk(30, 10), mk(5, 12), mk(18, 11)];
        let crops = order_and_crop(&img, &labeling, &comps, &CropParams::default());
        let xs: Vec<usize> = crops.iter().map(|c| c.min_x).collect();
        assert_eq!(xs, vec![5, 18, 30]);
        assert!(crops.iter().all(|c| c.row == 0));
    }

    #[test]
    fn filter_drops_specks_and_stripes() {
        let w = 100;
        let h = 50;
        let comps = vec![
            Component { min_x: 0, min_y: 0, max_x: 0, max_y: 0, area: 1, centroid: (0.0, 0.0) },
            Component { min_x: 10, min_y: 10, max_x: 17, max_y: 29, area: 120, centroid: (13.0, 20.0) },
            Component { min_x: 0, min_y: 40, max_x: 99, max_y: 41, area: 200, centroid: (50.0, 40.5) },
        ];
        let kept = filter_components(&comps, w, h, &CropParams::default());
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].area, 120);
    }

    #[test]
    fn crops_are_square_bright_on_dark() {
        // Dark glyph on a light background must come out inverted.
        let (w, h) = (40, 24);
        let img = GrayImage::from_fn(w, h, |x, y| {
            if (10..16).contains(&x) && (6..18).contains(&y) {
                0.1
            } else {
                0.9
            }
        });
        // Mask marks the brighter phase, i.e. the background here; the
        // extraction must still pick the dark glyph as the character.
        let mask: Vec<bool> = img.pixels().iter().map(|&v| v > 0.5).collect();
        let crops = extract_characters(&img, &mask, &CropParams::default());
        assert_eq!(crops.len(), 1);
        let crop = &crops[0];
        assert_eq!((crop.image.width(), crop.image.height()), (64, 64));
        assert_eq!((crop.index, crop.row), (0, 0));
        assert_eq!((crop.min_x, crop.max_x), (10, 15));
        // Center (glyph) bright, corners (background/letterbox) dark.
        assert!(crop.image.get(32, 32) > 0.7, "center {}", crop.image.get(32, 32));
        assert!(crop.image.get(1, 1) < 0.3, "corner {}", crop.image.get(1, 1));
    }

    #[test]
    fn parameter_validation() {
        let img = GrayImage::filled(16, 16, 0.5);
        let p = ContourParams { dt: 0.0, ..ContourParams::default() };
        assert!(chan_vese(&img, &p).is_err());
        let p = ContourParams { max_iters: 0, ..ContourParams::default() };
        assert!(chan_vese(&img, &p).is_err());
        let p = RsfParams { sigma: -1.0, ..RsfParams::default() };
        assert!(rsf(&img, &p).is_err());
        let tiny = GrayImage::filled(2, 2, 0.5);
        assert!(chan_vese(&tiny, &ContourParams::default()).is_err());
    }
}

