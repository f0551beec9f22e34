//! Procedural fixture data: a deterministic 60-class glyph alphabet rendered
//! from 5×7 stroke grids, plate cards composed from those glyphs, uneven-light
//! and split-intensity segmentation fixtures, and street-scene frames with
//! known vehicle/plate geometry for detector training.
//!
//! Everything here is seeded and reproducible; no external assets are read.

use crate::detector::BBox;
use crate::image::{save_pgm, GrayImage, ImageError};
use crate::segment::{connected_components, order_and_crop, CropParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("unknown glyph label {0:?}")]
    UnknownLabel(String),
    #[error("empty card row")]
    EmptyRow,
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Glyph stroke grid width (cells).
pub const GRID_W: usize = 5;
/// Glyph stroke grid height (cells).
pub const GRID_H: usize = 7;

/// A corpus sample: an image and its class label.
pub type LabeledImage = (GrayImage, String);

// ---------------------------------------------------------------------------
// Glyph alphabet
// ---------------------------------------------------------------------------

/// Deterministic alphabet: one connected 5×7 stroke pattern per class label.
/// The standard set has 60 classes — ten digit labels and fifty letter-style
/// labels — mirroring the character inventory the recognizer is sized for.
pub struct GlyphSet {
    labels: Vec<String>,
    patterns: Vec<[bool; GRID_W * GRID_H]>,
}

/// The 60 standard class labels: "0".."9", then "A".."Z", then "AA".."AX".
pub fn standard_labels() -> Vec<String> {
    let mut labels: Vec<String> = (0..10).map(|d| d.to_string()).collect();
    labels.extend((b'A'..=b'Z').map(|c| (c as char).to_string()));
    labels.extend((b'A'..=b'X').map(|c| format!("A{}", c as char)));
    labels
}

/// Grow one connected pattern by a seeded random walk on the stroke grid.
fn walk_pattern(seed: u64) -> [bool; GRID_W * GRID_H] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cells = [false; GRID_W * GRID_H];
    let target = rng.random_range(10..=18usize);
    let (mut x, mut y) = (
        rng.random_range(1..GRID_W - 1),
        rng.random_range(1..GRID_H - 1),
    );
    cells[y * GRID_W + x] = true;
    let mut filled = 1;
    for _ in 0..400 {
        if filled >= target {
            break;
        }
        match rng.random_range(0..4u8) {
            0 if x + 1 < GRID_W => x += 1,
            1 if x > 0 => x -= 1,
            2 if y + 1 < GRID_H => y += 1,
            _ if y > 0 => y -= 1,
            _ => {}
        }
        if !cells[y * GRID_W + x] {
            cells[y * GRID_W + x] = true;
            filled += 1;
        }
    }
    cells
}

fn pattern_bbox(cells: &[bool; GRID_W * GRID_H]) -> (usize, usize, usize, usize) {
    let (mut x0, mut y0, mut x1, mut y1) = (GRID_W, GRID_H, 0, 0);
    for y in 0..GRID_H {
        for x in 0..GRID_W {
            if cells[y * GRID_W + x] {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    (x0, y0, x1, y1)
}

impl GlyphSet {
    /// Build an alphabet for the given labels. Patterns are derived from the
    /// class position, re-rolled until distinct and reasonably proportioned.
    pub fn for_labels(labels: Vec<String>) -> GlyphSet {
        let mut patterns = Vec::with_capacity(labels.len());
        let mut seen: HashSet<[bool; GRID_W * GRID_H]> = HashSet::new();
        for i in 0..labels.len() {
            let mut salt = 0u64;
            let cells = loop {
                let cells = walk_pattern(0x5EED_u64 + (i as u64) * 1009 + salt * 7_777_777);
                let (x0, y0, x1, y1) = pattern_bbox(&cells);
                let wide_enough = x1 - x0 >= 2 && y1 - y0 >= 3;
                if wide_enough && !seen.contains(&cells) {
                    break cells;
                }
                salt += 1;
            };
            seen.insert(cells);
            patterns.push(cells);
        }
        GlyphSet { labels, patterns }
    }

    /// The standard 60-class alphabet.
    pub fn standard() -> GlyphSet {
        GlyphSet::for_labels(standard_labels())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, class: usize) -> &str {
        &self.labels[class]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn pattern(&self, class: usize) -> &[bool; GRID_W * GRID_H] {
        &self.patterns[class]
    }
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

/// Paint a stroke pattern onto `img`: the grid is scaled by `scale` pixels per
/// cell and placed with its top-left corner at (`ox`, `oy`). Coverage is
/// estimated by 2×2 subsampling, so subpixel placement antialiases.
fn paint_pattern(
    img: &mut GrayImage,
    cells: &[bool; GRID_W * GRID_H],
    scale: f32,
    ox: f32,
    oy: f32,
    fg: f32,
) {
    let x_end = (ox + GRID_W as f32 * scale).ceil().min(img.width() as f32) as usize;
    let y_end = (oy + GRID_H as f32 * scale).ceil().min(img.height() as f32) as usize;
    let x_start = ox.floor().max(0.0) as usize;
    let y_start = oy.floor().max(0.0) as usize;
    for py in y_start..y_end {
        for px in x_start..x_end {
            let mut hits = 0u8;
            for (sx, sy) in [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)] {
                let gx = (px as f32 + sx - ox) / scale;
                let gy = (py as f32 + sy - oy) / scale;
                if gx >= 0.0 && gy >= 0.0 {
                    let (cx, cy) = (gx as usize, gy as usize);
                    if cx < GRID_W && cy < GRID_H && cells[cy * GRID_W + cx] {
                        hits += 1;
                    }
                }
            }
            if hits > 0 {
                let cov = f32::from(hits) / 4.0;
                let v = img.get(px, py);
                img.set(px, py, v + (fg - v) * cov);
            }
        }
    }
}

/// Render one glyph as the recognizer sees it: painted on a small patch, then
/// passed through the same bounding-box/margin/normalize/letterbox/resample
/// path the character extractor applies to segmented components. `jitter`
/// scales seeded randomness in placement, glyph scale, and contrast; zero
/// gives the canonical centered rendering.
pub fn training_crop(
    set: &GlyphSet,
    class: usize,
    out_size: usize,
    rng: &mut impl Rng,
    jitter: f32,
) -> GrayImage {
    let cells = &set.patterns[class];
    let mut u = |lo: f32, hi: f32| -> f32 {
        if jitter == 0.0 {
            (lo + hi) * 0.5
        } else {
            rng.random_range(lo..=hi)
        }
    };
    let scale = 6.0 * (1.0 + jitter * u(-0.2, 0.2));
    let bg = 0.1 * jitter * u(0.0, 1.0);
    let fg = 1.0 - 0.15 * jitter * u(0.0, 1.0);
    let pad = (scale * 1.5) as usize;
    let w = (GRID_W as f32 * scale).ceil() as usize + 2 * pad;
    let h = (GRID_H as f32 * scale).ceil() as usize + 2 * pad;
    let wiggle = jitter * scale;
    let ox = pad as f32 + u(-wiggle, wiggle);
    let oy = pad as f32 + u(-wiggle, wiggle);

    let mut patch = GrayImage::filled(w, h, bg);
    paint_pattern(&mut patch, cells, scale, ox, oy, fg);

    // Majority-coverage mask, exactly what a clean segmentation would yield.
    let thresh = bg + 0.5 * (fg - bg);
    let mask: Vec<bool> = patch.pixels().iter().map(|&v| v >= thresh).collect();
    let labeling = connected_components(&mask, w, h);
    let params = CropParams {
        out_size,
        ..CropParams::default()
    };
    let crops = order_and_crop(&patch, &labeling, &labeling.components, &params);
    crops
        .into_iter()
        .next()
        .expect("walk patterns always produce one component")
        .image
}

/// Labeled corpus of rendered glyph crops: `per_class` samples for each
/// requested class, deterministic in `seed`. The first sample of each class
/// is the canonical rendering; the rest are jittered.
pub fn glyph_corpus(
    set: &GlyphSet,
    classes: &[usize],
    per_class: usize,
    out_size: usize,
    seed: u64,
) -> Vec<LabeledImage> {
    let mut out = Vec::with_capacity(classes.len() * per_class);
    for &class in classes {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (class as u64).wrapping_mul(0x9E37_79B9));
        for sample in 0..per_class {
            let jitter = if sample == 0 { 0.0 } else { 1.0 };
            let img = training_crop(set, class, out_size, &mut rng, jitter);
            out.push((img, set.labels[class].clone()));
        }
    }
    out
}

/// Write a corpus as one directory per label holding numbered PGM files —
/// the on-disk layout the training loader reads back.
pub fn write_pgm_corpus(dir: impl AsRef<Path>, corpus: &[LabeledImage]) -> Result<(), SynthError> {
    let dir = dir.as_ref();
    let mut counters: std::collections::HashMap<&str, usize> = std::collections::HashMap::new();
    for (img, label) in corpus {
        let sub = dir.join(label);
        std::fs::create_dir_all(&sub).map_err(|e| {
            SynthError::Image(ImageError::Io {
                path: sub.display().to_string(),
                source: e,
            })
        })?;
        let n = counters.entry(label.as_str()).or_insert(0);
        save_pgm(img, sub.join(format!("{n:04}.pgm")))?;
        *n += 1;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Plate cards
// ---------------------------------------------------------------------------

/// Geometry and contrast of a rendered plate card.
#[derive(Debug, Clone)]
pub struct CardSpec {
    /// Pixels per stroke-grid cell (the stroke width).
    pub cell: usize,
    /// Horizontal gap between glyph boxes.
    pub gap: usize,
    /// Border margin around the text block.
    pub margin: usize,
    /// Vertical gap between the two text rows.
    pub row_gap: usize,
    pub bg: f32,
    pub fg: f32,
}

impl Default for CardSpec {
    fn default() -> Self {
        CardSpec {
            cell: 6,
            gap: 10,
            margin: 12,
            row_gap: 14,
            bg: 0.45,
            fg: 1.0,
        }
    }
}

/// A rendered plate card with its ground truth: the labels per text row and
/// the pixel box of every glyph in reading order.
pub struct PlateCard {
    pub image: GrayImage,
    pub rows: Vec<Vec<String>>,
    /// Inclusive glyph-box pixel rectangles (x0, y0, x1, y1), reading order.
    pub char_boxes: Vec<(usize, usize, usize, usize)>,
}

impl PlateCard {
    /// All labels in reading order (top row then bottom row).
    pub fn reading_order(&self) -> Vec<String> {
        self.rows.iter().flatten().cloned().collect()
    }
}

/// Compose glyphs into a one- or two-row plate card on a uniform background.
pub fn plate_card(
    set: &GlyphSet,
    rows: &[Vec<String>],
    spec: &CardSpec,
) -> Result<PlateCard, SynthError> {
    if rows.is_empty() || rows.iter().any(|r| r.is_empty()) {
        return Err(SynthError::EmptyRow);
    }
    let mut indexed: Vec<Vec<usize>> = Vec::new();
    for row in rows {
        let mut idx = Vec::new();
        for label in row {
            idx.push(
                set.index_of(label)
                    .ok_or_else(|| SynthError::UnknownLabel(label.clone()))?,
            );
        }
        indexed.push(idx);
    }

    let glyph_w = GRID_W * spec.cell;
    let glyph_h = GRID_H * spec.cell;
    let row_w = |n: usize| n * glyph_w + (n - 1) * spec.gap;
    let width = 2 * spec.margin + indexed.iter().map(|r| row_w(r.len())).max().unwrap();
    let height =
        2 * spec.margin + indexed.len() * glyph_h + (indexed.len() - 1) * spec.row_gap;

    let mut image = GrayImage::filled(width, height, spec.bg);
    let mut char_boxes = Vec::new();
    for (ri, row) in indexed.iter().enumerate() {
        let y0 = spec.margin + ri * (glyph_h + spec.row_gap);
        // Center shorter rows.
        let x_start = (width - row_w(row.len())) / 2;
        for (ci, &class) in row.iter().enumerate() {
            let x0 = x_start + ci * (glyph_w + spec.gap);
            paint_pattern(
                &mut image,
                &set.patterns[class],
                spec.cell as f32,
                x0 as f32,
                y0 as f32,
                spec.fg,
            );
            char_boxes.push((x0, y0, x0 + glyph_w - 1, y0 + glyph_h - 1));
        }
    }
    Ok(PlateCard {
        image,
        rows: rows.to_vec(),
        char_boxes,
    })
}

// ---------------------------------------------------------------------------
// Segmentation fixtures
// ---------------------------------------------------------------------------

/// Multiply the image by a horizontal illumination ramp running from `lo` at
/// the left edge to `hi` at the right — the uneven-lighting fixture that
/// defeats global two-phase fits.
pub fn ramp_lit(img: &GrayImage, lo: f32, hi: f32) -> GrayImage {
    let w = img.width().max(2);
    GrayImage::from_fn(img.width(), img.height(), |x, y| {
        let gain = lo + (hi - lo) * (x as f32 / (w - 1) as f32);
        (img.get(x, y) * gain).clamp(0.0, 1.0)
    })
}

/// Four vertical bars on a mid-dark card: the reference fixture for local
/// versus global segmentation. Returns the image and the bar mask.
pub fn bars_fixture() -> (GrayImage, Vec<bool>) {
    let (w, h) = (72usize, 24usize);
    let bar_at = |x: usize| [6usize, 24, 42, 60].iter().any(|&b| x >= b && x < b + 8);
    let img = GrayImage::from_fn(w, h, |x, y| {
        if bar_at(x) && y >= 4 && y < h - 4 {
            1.0
        } else {
            0.45
        }
    });
    let mask = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            bar_at(x) && y >= 4 && y < h - 4
        })
        .collect();
    (img, mask)
}

/// Two-level split image with seeded noise: left half at `lo`, right half at
/// `hi`, plus uniform noise of the given amplitude.
pub fn split_fixture(w: usize, h: usize, lo: f32, hi: f32, noise: f32, seed: u64) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GrayImage::from_fn(w, h, |x, _| {
        let base = if x < w / 2 { lo } else { hi };
        (base + rng.random_range(-noise..=noise)).clamp(0.0, 1.0)
    })
}

// ---------------------------------------------------------------------------
// Street scenes
// ---------------------------------------------------------------------------

/// Frame dimensions for scene rendering.
#[derive(Debug, Clone)]
pub struct FramePar {
    pub width: usize,
    pub height: usize,
}

impl Default for FramePar {
    fn default() -> Self {
        FramePar {
            width: 256,
            height: 160,
        }
    }
}

/// A rendered scene frame with its ground-truth geometry.
pub struct Scene {
    pub frame: GrayImage,
    pub vehicle: Option<BBox>,
    /// Plate box in frame coordinates (always inside the vehicle box).
    pub plate: Option<BBox>,
    pub rows: Vec<Vec<String>>,
}

impl Scene {
    /// Plate box re-normalized to the vehicle crop's coordinate frame —
    /// the regression target for the second detection stage.
    pub fn plate_in_vehicle(&self) -> Option<BBox> {
        let (v, p) = (self.vehicle?, self.plate?);
        let (vw, vh) = (v.width().max(1e-6), v.height().max(1e-6));
        Some(BBox::from_raw([
            (p.x_min - v.x_min) / vw,
            (p.y_min - v.y_min) / vh,
            (p.x_max - v.x_min) / vw,
            (p.y_max - v.y_min) / vh,
        ]))
    }
}

fn textured_background(par: &FramePar, rng: &mut ChaCha8Rng) -> GrayImage {
    let tilt = rng.random_range(-0.05..=0.05f32);
    let base = rng.random_range(0.08..=0.14f32);
    let mut img = GrayImage::from_fn(par.width, par.height, |x, _| {
        base + tilt * (x as f32 / par.width as f32)
    });
    for v in img.pixels_mut() {
        *v = (*v + rng.random_range(-0.03..=0.03)).clamp(0.0, 1.0);
    }
    img
}

/// Render a frame with no vehicle in it — textured road-scene background.
pub fn empty_frame(par: &FramePar, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Scene {
        frame: textured_background(par, &mut rng),
        vehicle: None,
        plate: None,
        rows: Vec::new(),
    }
}

/// Render a frame containing one vehicle carrying the given plate text at a
/// seeded-random position. The plate is a [`plate_card`] scaled down to
/// street resolution (4-pixel strokes) and pasted onto the vehicle body.
pub fn vehicle_frame(
    set: &GlyphSet,
    rows: &[Vec<String>],
    par: &FramePar,
    seed: u64,
) -> Result<Scene, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frame = textured_background(par, &mut rng);

    let card = plate_card(
        set,
        rows,
        &CardSpec {
            cell: 4,
            gap: 7,
            margin: 8,
            row_gap: 9,
            ..CardSpec::default()
        },
    )?;
    let (cw, ch) = (card.image.width(), card.image.height());

    // Vehicle body wraps the plate with randomized padding.
    let pad_x = rng.random_range(12..=22usize);
    let pad_top = rng.random_range(18..=30usize);
    let pad_bottom = rng.random_range(8..=14usize);
    let vw = cw + 2 * pad_x;
    let vh = ch + pad_top + pad_bottom;
    assert!(
        vw + 2 < par.width && vh + 2 < par.height,
        "frame too small for the vehicle"
    );
    let vx = rng.random_range(1..par.width - vw - 1);
    let vy = rng.random_range(1..par.height - vh - 1);

    let body = rng.random_range(0.24..=0.32f32);
    for y in vy..vy + vh {
        for x in vx..vx + vw {
            let border = x == vx || y == vy || x == vx + vw - 1 || y == vy + vh - 1;
            let v = if border {
                0.05
            } else {
                (body + rng.random_range(-0.02..=0.02)).clamp(0.0, 1.0)
            };
            frame.set(x, y, v);
        }
    }
    // Windshield band, so the body is not a featureless rectangle.
    for y in vy + 3..vy + 3 + (pad_top / 2) {
        for x in vx + vw / 5..vx + vw - vw / 5 {
            frame.set(x, y, 0.16);
        }
    }

    let px = vx + pad_x;
    let py = vy + pad_top;
    for y in 0..ch {
        for x in 0..cw {
            frame.set(px + x, py + y, card.image.get(x, y));
        }
    }

    let (fw, fh) = (par.width as f32, par.height as f32);
    let vehicle = BBox::new(
        vx as f32 / fw,
        vy as f32 / fh,
        (vx + vw) as f32 / fw,
        (vy + vh) as f32 / fh,
    )
    .expect("vehicle rectangle is inside the frame");
    let plate = BBox::new(
        px as f32 / fw,
        py as f32 / fh,
        (px + cw) as f32 / fw,
        (py + ch) as f32 / fh,
    )
    .expect("plate rectangle is inside the vehicle");

    Ok(Scene {
        frame,
        vehicle: Some(vehicle),
        plate: Some(plate),
        rows: rows.to_vec(),
    })
}
