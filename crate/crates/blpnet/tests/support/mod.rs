//! Shared fixtures for the acceptance suite: a lazily built demo kit
//! (trained heads, trained recognizer, rendered streams) plus oracles that
//! deliberately avoid the library's own algorithms so agreement checks are
//! meaningful.

use blpnet::image::GrayImage;
use blpnet::kit::{build_kit, KitOptions, KitPaths};
use blpnet::pipeline::{Models, PipelineConfig};
use std::sync::OnceLock;
use tempfile::TempDir;

/// Everything the model-dependent checks share: one kit build, one load.
pub struct SharedKit {
    /// Keeps the temp directory alive for the whole test process.
    pub _dir: TempDir,
    pub paths: KitPaths,
    pub config: PipelineConfig,
    pub models: Models,
}

/// Build (once) and return the shared demo kit, with a 200-frame stream.
pub fn kit() -> &'static SharedKit {
    static KIT: OnceLock<SharedKit> = OnceLock::new();
    KIT.get_or_init(|| {
        let dir = TempDir::new().expect("create kit directory");
        let options = KitOptions {
            stream_frames: 200,
            ..KitOptions::default()
        };
        let paths = build_kit(dir.path(), &options).expect("build demo kit");
        let config = PipelineConfig::load(&paths.config).expect("load kit config");
        let models = Models::load(&config, dir.path()).expect("load kit models");
        SharedKit {
            _dir: dir,
            paths,
            config,
            models,
        }
    })
}

/// Fraction of positions where the two masks agree.
pub fn agreement(a: &[bool], b: &[bool]) -> f64 {
    assert_eq!(a.len(), b.len(), "masks must cover the same pixels");
    if a.is_empty() {
        return 1.0;
    }
    let same = a.iter().zip(b).filter(|(x, y)| x == y).count();
    same as f64 / a.len() as f64
}

/// Peak signal-to-noise ratio in dB against a unit-range reference.
pub fn psnr(reference: &GrayImage, candidate: &GrayImage) -> f64 {
    let a = reference.pixels();
    let b = candidate.pixels();
    assert_eq!(a.len(), b.len(), "images must match in size");
    let mse: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = (x - y) as f64;
            d * d
        })
        .sum::<f64>()
        / a.len() as f64;
    10.0 * (1.0 / mse.max(1e-12)).log10()
}

/// Exhaustive two-constant optimum: try every ordered pair of levels from a
/// uniform grid over the image's intensity range, assign each pixel to the
/// nearer constant, and keep the assignment of the lowest-cost pair.
/// Returns `true` for pixels attached to the brighter constant. No level
/// sets, no gradient flow — pure search, so it cannot share a bug with the
/// contour implementation it judges.
pub fn brute_force_two_phase(img: &GrayImage, levels: usize) -> Vec<bool> {
    assert!(levels >= 2, "need at least two grid levels");
    let px = img.pixels();
    let lo = px.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = px.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let span = (hi - lo).max(1e-6);
    let grid: Vec<f32> = (0..levels)
        .map(|i| lo + span * i as f32 / (levels - 1) as f32)
        .collect();

    let mut best_cost = f64::INFINITY;
    let mut best = (lo, hi);
    for (i, &dark) in grid.iter().enumerate() {
        for &bright in &grid[i + 1..] {
            let cost: f64 = px
                .iter()
                .map(|&v| {
                    let d = (v - dark) as f64;
                    let b = (v - bright) as f64;
                    (d * d).min(b * b)
                })
                .sum();
            if cost < best_cost {
                best_cost = cost;
                best = (dark, bright);
            }
        }
    }
    let (dark, bright) = best;
    px.iter()
        .map(|&v| {
            let d = v - dark;
            let b = v - bright;
            b * b <= d * d
        })
        .collect()
}

/// Two flat halves plus mild seeded noise: the easiest possible two-phase
/// instance, where the contour fit and the exhaustive optimum must agree.
pub fn half_split_fixture(seed: u64) -> GrayImage {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (64usize, 48usize);
    GrayImage::from_fn(w, h, |x, _| {
        let base = if x < w / 2 { 0.3 } else { 0.7 };
        base + (rng.random::<f32>() - 0.5) * 0.1
    })
}

/// Bright glyph bars on a dark card under a strong multiplicative
/// left-to-right illumination ramp. The dimmest bars end up darker than the
/// brightest background, so any single global threshold must misclassify
/// somewhere; a locally fitted model can still recover the bars. Returns
/// the true ink mask alongside the image.
pub fn ramp_glyph_fixture() -> (Vec<bool>, GrayImage) {
    let (w, h) = (72usize, 24usize);
    let mut ink = vec![false; w * h];
    for &gx in &[6usize, 24, 42, 60] {
        for y in 6..h - 6 {
            for x in gx..gx + 8 {
                ink[y * w + x] = true;
            }
        }
    }
    let mut px = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let flat = if ink[y * w + x] { 1.0 } else { 0.45 };
            let ramp = 0.3 + 0.7 * x as f32 / (w - 1) as f32;
            px[y * w + x] = flat * ramp;
        }
    }
    let img = GrayImage::new(w, h, px).expect("fixture dimensions are consistent");
    (ink, img)
}
