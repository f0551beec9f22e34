//! Grayscale image container plus the small amount of I/O and geometry the
//! pipeline needs: PGM/PPM round-trips, bilinear resize, crops, and the raw
//! frame-sequence container used by the streaming CLI.
//!
//! Pixels are `f32` in `[0, 1]`, row-major. Binary PGM (P5) is the native
//! disk format; PPM (P6) loads as luma. PNG support is feature-gated.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: not a PGM/PPM file (bad magic {magic:?})")]
    BadMagic { path: String, magic: String },
    #[error("{path}: malformed header: {detail}")]
    BadHeader { path: String, detail: String },
    #[error("{path}: pixel payload truncated (expected {expected} bytes, got {got})")]
    Truncated {
        path: String,
        expected: usize,
        got: usize,
    },
    #[error("{path}: unsupported format: {detail}")]
    Unsupported { path: String, detail: String },
    #[error("image dimensions {width}x{height} invalid: {detail}")]
    BadDimensions {
        width: usize,
        height: usize,
        detail: String,
    },
    #[error("crop [{x},{y} {w}x{h}] outside image {iw}x{ih}")]
    CropOutOfBounds {
        x: usize,
        y: usize,
        w: usize,
        h: usize,
        iw: usize,
        ih: usize,
    },
}

/// Row-major grayscale image, `f32` pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(ImageError::BadDimensions {
                width,
                height,
                detail: format!("{} pixels supplied", pixels.len()),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0.0; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.pixels[y * self.width + x] = v;
    }

    /// Sample with edge clamping (reads off the border return the nearest
    /// pixel), used by convolution and geometric transforms.
    pub fn get_clamped(&self, x: isize, y: isize) -> f32 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.pixels[yc * self.width + xc]
    }

    /// Bilinear sample at fractional coordinates, edge-clamped.
    pub fn sample_bilinear(&self, x: f32, y: f32) -> f32 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (x0, y0) = (x0 as isize, y0 as isize);
        let p00 = self.get_clamped(x0, y0);
        let p10 = self.get_clamped(x0 + 1, y0);
        let p01 = self.get_clamped(x0, y0 + 1);
        let p11 = self.get_clamped(x0 + 1, y0 + 1);
        let top = p00 + (p10 - p00) * fx;
        let bot = p01 + (p11 - p01) * fx;
        top + (bot - top) * fy
    }

    /// Resize to `new_w` x `new_h` by bilinear interpolation with
    /// pixel-center alignment.
    pub fn resize(&self, new_w: usize, new_h: usize) -> Result<GrayImage, ImageError> {
        if new_w == 0 || new_h == 0 {
            return Err(ImageError::BadDimensions {
                width: new_w,
                height: new_h,
                detail: "resize target must be non-empty".into(),
            });
        }
        let sx = self.width as f32 / new_w as f32;
        let sy = self.height as f32 / new_h as f32;
        Ok(GrayImage::from_fn(new_w, new_h, |x, y| {
            let src_x = (x as f32 + 0.5) * sx - 0.5;
            let src_y = (y as f32 + 0.5) * sy - 0.5;
            self.sample_bilinear(src_x, src_y)
        }))
    }

    /// Copy out an axis-aligned sub-rectangle.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<GrayImage, ImageError> {
        if w == 0 || h == 0 || x + w > self.width || y + h > self.height {
            return Err(ImageError::CropOutOfBounds {
                x,
                y,
                w,
                h,
                iw: self.width,
                ih: self.height,
            });
        }
        let mut pixels = Vec::with_capacity(w * h);
        for row in y..y + h {
            pixels.extend_from_slice(&self.pixels[row * self.width + x..row * self.width + x + w]);
        }
        Ok(GrayImage {
            width: w,
            height: h,
            pixels,
        })
    }

    /// Quantize to bytes with clamping (round-half-up via `+0.5` floor).
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0 + 0.5) as u8)
            .collect()
    }

    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Result<Self, ImageError> {
        let pixels = bytes.iter().map(|&b| b as f32 / 255.0).collect();
        GrayImage::new(width, height, pixels)
    }

    /// Pixel range as (min, max).
    pub fn range(&self) -> (f32, f32) {
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for &v in &self.pixels {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }
}

fn io_err(path: &Path, source: std::io::Error) -> ImageError {
    ImageError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Read one whitespace/comment-delimited token from a PNM header.
fn read_pnm_token<R: BufRead>(r: &mut R, path: &Path) -> Result<String, ImageError> {
    let mut tok = String::new();
    let mut in_comment = false;
    loop {
        let mut byte = [0u8; 1];
        match r.read_exact(&mut byte) {
            Ok(()) => {}
            Err(e) => {
                if !tok.is_empty() && e.kind() == std::io::ErrorKind::UnexpectedEof {
                    return Ok(tok);
                }
                return Err(io_err(path, e));
            }
        }
        let c = byte[0] as char;
        if in_comment {
            if c == '\n' {
                in_comment = false;
            }
            continue;
        }
        if c == '#' {
            in_comment = true;
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            return Ok(tok);
        }
        tok.push(c);
    }
}

fn parse_dim(tok: &str, path: &Path, what: &str) -> Result<usize, ImageError> {
    tok.parse::<usize>().map_err(|_| ImageError::BadHeader {
        path: path.display().to_string(),
        detail: format!("{what} {tok:?} is not a number"),
    })
}

/// Load a PGM (P2/P5) or PPM (P6) file as grayscale. Color converts with
/// Rec.601 luma weights.
pub fn load_pnm(path: impl AsRef<Path>) -> Result<GrayImage, ImageError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);
    let magic = read_pnm_token(&mut r, path)?;
    if !matches!(magic.as_str(), "P2" | "P5" | "P6") {
        return Err(ImageError::BadMagic {
            path: path.display().to_string(),
            magic,
        });
    }
    let width = parse_dim(&read_pnm_token(&mut r, path)?, path, "width")?;
    let height = parse_dim(&read_pnm_token(&mut r, path)?, path, "height")?;
    let maxval = parse_dim(&read_pnm_token(&mut r, path)?, path, "maxval")?;
    if width == 0 || height == 0 {
        return Err(ImageError::BadHeader {
            path: path.display().to_string(),
            detail: format!("degenerate size {width}x{height}"),
        });
    }
    if maxval == 0 || maxval > 255 {
        return Err(ImageError::Unsupported {
            path: path.display().to_string(),
            detail: format!("maxval {maxval} (only 8-bit supported)"),
        });
    }
    let scale = 1.0 / maxval as f32;
    let n = width * height;
    let pixels = match magic.as_str() {
        "P2" => {
            let mut pixels = Vec::with_capacity(n);
            for _ in 0..n {
                let tok = read_pnm_token(&mut r, path).map_err(|_| ImageError::Truncated {
                    path: path.display().to_string(),
                    expected: n,
                    got: pixels.len(),
                })?;
                pixels.push(parse_dim(&tok, path, "pixel")? as f32 * scale);
            }
            pixels
        }
        "P5" => {
            let mut buf = vec![0u8; n];
            read_payload(&mut r, &mut buf, path, n)?;
            buf.iter().map(|&b| b as f32 * scale).collect()
        }
        "P6" => {
            let mut buf = vec![0u8; n * 3];
            read_payload(&mut r, &mut buf, path, n * 3)?;
            buf.chunks_exact(3)
                .map(|rgb| {
                    (0.299 * rgb[0] as f32 + 0.587 * rgb[1] as f32 + 0.114 * rgb[2] as f32) * scale
                })
                .collect()
        }
        _ => unreachable!(),
    };
    GrayImage::new(width, height, pixels)
}

fn read_payload<R: Read>(
    r: &mut R,
    buf: &mut [u8],
    path: &Path,
    expected: usize,
) -> Result<(), ImageError> {
    let mut got = 0usize;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) => {
                return Err(ImageError::Truncated {
                    path: path.display().to_string(),
                    expected,
                    got,
                })
            }
            Ok(k) => got += k,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(io_err(path, e)),
        }
    }
    Ok(())
}

/// Write a binary PGM (P5).
pub fn save_pgm(image: &GrayImage, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let header = format!("P5\n{} {}\n255\n", image.width(), image.height());
    w.write_all(header.as_bytes())
        .and_then(|_| w.write_all(&image.to_bytes()))
        .map_err(|e| io_err(path, e))
}

/// Load a grayscale frame by extension: `.pgm`/`.ppm` always, `.png` when
/// the `png` feature is enabled.
pub fn load_frame(path: impl AsRef<Path>) -> Result<GrayImage, ImageError> {
    let path = path.as_ref();
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("pgm") | Some("ppm") | Some("pnm") => load_pnm(path),
        #[cfg(feature = "png")]
        Some("png") => load_png(path),
        other => Err(ImageError::Unsupported {
            path: path.display().to_string(),
            detail: format!("extension {other:?}"),
        }),
    }
}

#[cfg(feature = "png")]
fn load_png(path: &Path) -> Result<GrayImage, ImageError> {
    let img = image::open(path).map_err(|e| ImageError::Unsupported {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    let luma = img.to_luma8();
    GrayImage::from_bytes(luma.width() as usize, luma.height() as usize, luma.as_raw())
}

// ---------------------------------------------------------------------------
// Raw frame-sequence container
// ---------------------------------------------------------------------------

/// Magic bytes of the raw frame-sequence container.
pub const FRAMESEQ_MAGIC: &[u8; 4] = b"BLPV";
/// Current frame-sequence container version.
pub const FRAMESEQ_VERSION: u32 = 1;

/// Write frames of identical size as one little-endian container:
/// magic `BLPV`, u32 version, u32 width, u32 height, u32 frame count, then
/// `width*height` gray bytes per frame.
pub fn save_frameseq(frames: &[GrayImage], path: impl AsRef<Path>) -> Result<(), ImageError> {
    let path = path.as_ref();
    let (w0, h0) = match frames.first() {
        Some(f) => (f.width(), f.height()),
        None => {
            return Err(ImageError::BadDimensions {
                width: 0,
                height: 0,
                detail: "frame sequence must contain at least one frame".into(),
            })
        }
    };
    for f in frames {
        if f.width() != w0 || f.height() != h0 {
            return Err(ImageError::BadDimensions {
                width: f.width(),
                height: f.height(),
                detail: format!("all frames must be {w0}x{h0}"),
            });
        }
    }
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    let mut write = |bytes: &[u8]| out.write_all(bytes).map_err(|e| io_err(path, e));
    write(FRAMESEQ_MAGIC)?;
    write(&FRAMESEQ_VERSION.to_le_bytes())?;
    write(&(w0 as u32).to_le_bytes())?;
    write(&(h0 as u32).to_le_bytes())?;
    write(&(frames.len() as u32).to_le_bytes())?;
    for f in frames {
        write(&f.to_bytes())?;
    }
    Ok(())
}

/// Read a frame sequence written by [`save_frameseq`].
pub fn load_frameseq(path: impl AsRef<Path>) -> Result<Vec<GrayImage>, ImageError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| io_err(path, e))?;
    if &magic != FRAMESEQ_MAGIC {
        return Err(ImageError::BadMagic {
            path: path.display().to_string(),
            magic: String::from_utf8_lossy(&magic).into_owned(),
        });
    }
    let mut u32buf = [0u8; 4];
    let mut read_u32 = |r: &mut BufReader<File>| -> Result<u32, ImageError> {
        r.read_exact(&mut u32buf).map_err(|e| io_err(path, e))?;
        Ok(u32::from_le_bytes(u32buf))
    };
    let version = read_u32(&mut r)?;
    if version != FRAMESEQ_VERSION {
        return Err(ImageError::Unsupported {
            path: path.display().to_string(),
            detail: format!("frame container version {version}, expected {FRAMESEQ_VERSION}"),
        });
    }
    let width = read_u32(&mut r)? as usize;
    let height = read_u32(&mut r)? as usize;
    let count = read_u32(&mut r)? as usize;
    if width == 0 || height == 0 || width.saturating_mul(height) > 1 << 28 {
        return Err(ImageError::BadDimensions {
            width,
            height,
            detail: "frame size out of range".into(),
        });
    }
    let mut frames = Vec::with_capacity(count.min(1 << 16));
    let mut buf = vec![0u8; width * height];
    for i in 0..count {
        read_payload(&mut r, &mut buf, path, width * height).map_err(|_| {
            ImageError::Truncated {
                path: path.display().to_string(),
                expected: count,
                got: i,
            }
        })?;
        frames.push(GrayImage::from_bytes(width, height, &buf)?);
    }
    Ok(frames)
}

/// Separable Gaussian blur with replicate edges. `sigma <= 0` returns the
/// input unchanged; the kernel radius is `ceil(3*sigma)`.
pub fn gaussian_blur(img: &GrayImage, sigma: f32) -> GrayImage {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f32> = (-radius..=radius)
        .map(|i| (-0.5 * (i as f32 / sigma).powi(2)).exp())
        .collect();
    let norm: f32 = taps.iter().sum();
    let taps: Vec<f32> = taps.iter().map(|t| t / norm).collect();

    let (w, h) = (img.width(), img.height());
    // Horizontal pass.
    let horiz = GrayImage::from_fn(w, h, |x, y| {
        taps.iter()
            .enumerate()
            .map(|(i, &t)| t * img.get_clamped(x as isize + i as isize - radius, y as isize))
            .sum()
    });
    // Vertical pass.
    GrayImage::from_fn(w, h, |x, y| {
        taps.iter()
            .enumerate()
            .map(|(i, &t)| t * horiz.get_clamped(x as isize, y as isize + i as isize - radius))
            .sum()
    })
}

/// Mean squared error between two equally sized images.
pub fn image_mse(a: &GrayImage, b: &GrayImage) -> Result<f64, ImageError> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(ImageError::BadDimensions {
            width: b.width(),
            height: b.height(),
            detail: format!("expected {}x{}", a.width(), a.height()),
        });
    }
    let sum: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| {
            let d = (x - y) as f64;
            d * d
        })
        .sum();
    Ok(sum / a.pixels().len() as f64)
}

/// Peak signal-to-noise ratio in dB against peak value 1.0.
pub fn psnr(reference: &GrayImage, test: &GrayImage) -> Result<f64, ImageError> {
    let mse = image_mse(reference, test)?;
    Ok(if mse <= 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image(w: usize, h: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| {
            (x as f32 / (w - 1) as f32 + y as f32 / (h - 1) as f32) / 2.0
        })
    }

    #[test]
    fn pgm_round_trip_p5() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.pgm");
        let img = gradient_image(17, 9);
        save_pgm(&img, &path).unwrap();
        let back = load_pnm(&path).unwrap();
        assert_eq!(back.width(), 17);
        assert_eq!(back.height(), 9);
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn pgm_ascii_p2_with_comments() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.pgm");
        std::fs::write(&path, "P2 # comment\n# another\n3 2\n255\n0 128 255\n64 32 16\n").unwrap();
        let img = load_pnm(&path).unwrap();
        assert_eq!((img.width(), img.height()), (3, 2));
        assert!((img.get(1, 0) - 128.0 / 255.0).abs() < 1e-6);
    }

    #[test]
    fn ppm_p6_luma() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ppm");
        let mut bytes = b"P6\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 0, 255, 0]); // red, green
        std::fs::write(&path, bytes).unwrap();
        let img = load_pnm(&path).unwrap();
        assert!((img.get(0, 0) - 0.299).abs() < 1e-3);
        assert!((img.get(1, 0) - 0.587).abs() < 1e-3);
    }

    #[test]
    fn pnm_error_cases() {
        let dir = tempfile::tempdir().unwrap();
        let bad_magic = dir.path().join("bad.pgm");
        std::fs::write(&bad_magic, "P7\n1 1\n255\n\0").unwrap();
        assert!(matches!(
            load_pnm(&bad_magic),
            Err(ImageError::BadMagic { .. })
        ));

        let truncated = dir.path().join("short.pgm");
        std::fs::write(&truncated, b"P5\n4 4\n255\n\x01\x02").unwrap();
        assert!(matches!(
            load_pnm(&truncated),
            Err(ImageError::Truncated { .. })
        ));

        let deep = dir.path().join("deep.pgm");
        std::fs::write(&deep, b"P5\n1 1\n65535\n\x00\x00").unwrap();
        assert!(matches!(
            load_pnm(&deep),
            Err(ImageError::Unsupported { .. })
        ));

        assert!(matches!(
            load_pnm(dir.path().join("missing.pgm")),
            Err(ImageError::Io { .. })
        ));
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = gradient_image(12, 8);
        let same = img.resize(12, 8).unwrap();
        for (a, b) in img.pixels().iter().zip(same.pixels()) {
            assert!((a - b).abs() < 1e-6);
        }
        let flat = GrayImage::filled(10, 6, 0.42);
        let up = flat.resize(64, 64).unwrap();
        for &v in up.pixels() {
            assert!((v - 0.42).abs() < 1e-6);
        }
    }

    #[test]
    fn resize_downsample_preserves_mean_roughly() {
        let img = gradient_image(64, 64);
        let down = img.resize(16, 16).unwrap();
        let mean_a: f32 = img.pixels().iter().sum::<f32>() / img.pixels().len() as f32;
        let mean_b: f32 = down.pixels().iter().sum::<f32>() / down.pixels().len() as f32;
        assert!((mean_a - mean_b).abs() < 0.02);
    }

    #[test]
    fn crop_contents_and_bounds() {
        let img = GrayImage::from_fn(6, 5, |x, y| (y * 6 + x) as f32 / 30.0);
        let c = img.crop(2, 1, 3, 2).unwrap();
        assert_eq!(c.width(), 3);
        assert_eq!(c.height(), 2);
        assert_eq!(c.get(0, 0), img.get(2, 1));
        assert_eq!(c.get(2, 1), img.get(4, 2));
        assert!(img.crop(4, 0, 3, 2).is_err());
        assert!(img.crop(0, 0, 0, 2).is_err());
    }

    #[test]
    fn frameseq_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seq.blpv");
        let frames: Vec<GrayImage> = (0..5)
            .map(|i| GrayImage::from_fn(8, 6, |x, y| ((x + y + i) % 7) as f32 / 6.0))
            .collect();
        save_frameseq(&frames, &path).unwrap();
        let back = load_frameseq(&path).unwrap();
        assert_eq!(back.len(), 5);
        for (a, b) in frames.iter().zip(&back) {
            for (pa, pb) in a.pixels().iter().zip(b.pixels()) {
                assert!((pa - pb).abs() <= 0.5 / 255.0 + 1e-6);
            }
        }
    }

    #[test]
    fn frameseq_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seq.blpv");
        save_frameseq(&[GrayImage::filled(4, 4, 0.5)], &path).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        let bad = dir.path().join("bad.blpv");
        std::fs::write(&bad, &bytes).unwrap();
        assert!(matches!(
            load_frameseq(&bad),
            Err(ImageError::BadMagic { .. })
        ));

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9; // version
        std::fs::write(&bad, &bytes).unwrap();
        assert!(matches!(
            load_frameseq(&bad),
            Err(ImageError::Unsupported { .. })
        ));

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&bad, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(
            load_frameseq(&bad),
            Err(ImageError::Truncated { .. })
        ));
    }

    #[test]
    fn gaussian_blur_preserves_mean_and_softens_edges() {
        let img = GrayImage::from_fn(32, 32, |x, _| if x < 16 { 0.0 } else { 1.0 });
        let blurred = gaussian_blur(&img, 2.0);
        let mean = |im: &GrayImage| im.pixels().iter().sum::<f32>() / im.pixels().len() as f32;
        assert!((mean(&img) - mean(&blurred)).abs() < 1e-3);
        // The step edge spreads: midpoint neighbors are no longer extreme.
        assert!(blurred.get(15, 16) > 0.05 && blurred.get(16, 16) < 0.95);
        // Constant images are fixed points.
        let flat = GrayImage::filled(9, 9, 0.3);
        let same = gaussian_blur(&flat, 1.5);
        for &v in same.pixels() {
            assert!((v - 0.3).abs() < 1e-5);
        }
        // sigma = 0 is the identity.
        assert_eq!(gaussian_blur(&img, 0.0), img);
    }

    #[test]
    fn mse_and_psnr() {
        let a = GrayImage::filled(8, 8, 0.5);
        let b = GrayImage::filled(8, 8, 0.6);
        let mse = image_mse(&a, &b).unwrap();
        assert!((mse - 0.01).abs() < 1e-6);
        let p = psnr(&a, &b).unwrap();
        assert!((p - 20.0).abs() < 1e-4);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let c = GrayImage::filled(4, 4, 0.5);
        assert!(image_mse(&a, &c).is_err());
    }
}
