//! Global two-phase fit versus locally fitted statistics, on the instance
//! class that separates them: glyph bars under an illumination ramp strong
//! enough that the dimmest ink is darker than the brightest background, so
//! no single global threshold can be right everywhere.
//!
//! Run with: `cargo run --release --example segment_compare`

use blpnet::image::GrayImage;
use blpnet::segment::{chan_vese, rsf, ContourParams, RsfParams};

/// Glyph-bar test card and its true ink mask.
fn bar_card(w: usize, h: usize, bar_starts: &[usize]) -> (Vec<bool>, GrayImage) {
    let mut ink = vec![false; w * h];
    for &gx in bar_starts {
        for y in 6..h - 6 {
            for x in gx..gx + 8 {
                ink[y * w + x] = true;
            }
        }
    }
    let img = GrayImage::from_fn(w, h, |x, y| if ink[y * w + x] { 1.0 } else { 0.45 });
    (ink, img)
}

fn agreement(a: &[bool], b: &[bool]) -> f64 {
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (w, h) = (72usize, 24usize);
    let (truth, flat) = bar_card(w, h, &[6, 24, 42, 60]);

    // Uniform lighting: both models recover the bars.
    let global = chan_vese(&flat, &ContourParams::default())?;
    let local = rsf(&flat, &RsfParams::default())?;
    println!(
        "uniform card:  global {:.1}%  local {:.1}%  (truth agreement)",
        100.0 * agreement(&global.mask, &truth),
        100.0 * agreement(&local.mask, &truth)
    );

    // Multiplicative left-to-right ramp: only the local model survives.
    let ramped = GrayImage::from_fn(w, h, |x, y| {
        let ramp = 0.3 + 0.7 * x as f32 / (w - 1) as f32;
        flat.get(x, y) * ramp
    });
    let global = chan_vese(&ramped, &ContourParams::default())?;
    let local = rsf(&ramped, &RsfParams::default())?;
    println!(
        "ramped card:   global {:.1}%  local {:.1}%",
        100.0 * agreement(&global.mask, &truth),
        100.0 * agreement(&local.mask, &truth)
    );
    println!(
        "global fit: {} iterations, converged {}, phase means {:.3}/{:.3}",
        global.iterations, global.converged, global.c_dark, global.c_bright
    );
    println!(
        "local fit:  {} iterations, converged {}",
        local.iterations, local.converged
    );
    Ok(())
}
