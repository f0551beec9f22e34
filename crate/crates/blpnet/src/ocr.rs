//! Character recognition over a fixed 60-class inventory, and the
//! conditional deblur-retry loop that reads a whole plate crop: sharpness
//! gate, two-phase segmentation with a local-statistics fallback, bounded
//! deblur retries when too few characters surface, classification, and word
//! mapping.

use crate::deblur::{fista_deblur, kernel_bank, sharpness, DeblurError};
use crate::image::{GrayImage, ImageError};
use crate::nn::{Network, NnError};
use crate::segment::{
    chan_vese, extract_characters, rsf, CharacterCrop, ContourParams, CropParams, RsfParams,
    SegmentError,
};
use crate::tensor::Tensor;
use crate::wordmap::{map_plate, WordMapTable};
use std::path::Path;
use std::time::Instant;
use thiserror::Error;

/// Number of character classes the recognizer distinguishes.
pub const NUM_CLASSES: usize = 60;

#[derive(Debug, Error)]
pub enum OcrError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("class map {path}: {detail}")]
    ClassMap { path: String, detail: String },
    #[error("bad recognition config: {detail}")]
    BadConfig { detail: String },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Deblur(#[from] DeblurError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// The ordered 60-label class inventory, loaded from a class-map file
/// (one label per line, line number = class index).
#[derive(Debug, Clone)]
pub struct CharClassSet {
    labels: Vec<String>,
}

impl CharClassSet {
    /// Parse class-map text: exactly [`NUM_CLASSES`] non-empty unique lines.
    pub fn parse(text: &str, origin: &str) -> Result<CharClassSet, OcrError> {
        let mut labels = Vec::with_capacity(NUM_CLASSES);
        for (idx, raw) in text.lines().enumerate() {
            let label = raw.trim();
            if label.is_empty() {
                return Err(OcrError::ClassMap {
                    path: origin.to_string(),
                    detail: format!("line {} is empty", idx + 1),
                });
            }
            if labels.iter().any(|l| l == label) {
                return Err(OcrError::ClassMap {
                    path: origin.to_string(),
                    detail: format!("line {}: duplicate label {label:?}", idx + 1),
                });
            }
            labels.push(label.to_string());
        }
        if labels.len() != NUM_CLASSES {
            return Err(OcrError::ClassMap {
                path: origin.to_string(),
                detail: format!("expected {NUM_CLASSES} labels, found {}", labels.len()),
            });
        }
        Ok(CharClassSet { labels })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<CharClassSet, OcrError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| OcrError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        CharClassSet::parse(&text, &path.display().to_string())
    }

    /// Build directly from labels (tests, synthetic corpora).
    pub fn from_labels(labels: Vec<String>) -> Result<CharClassSet, OcrError> {
        CharClassSet::parse(&labels.join("\n"), "<memory>")
    }

    pub fn label(&self, class: usize) -> &str {
        &self.labels[class]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// One classified character.
#[derive(Debug, Clone, PartialEq)]
pub struct Recognition {
    pub class: usize,
    pub label: String,
    /// The winning softmax component.
    pub confidence: f32,
}

/// Wall-clock milliseconds spent in each reading stage.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub sharpness_ms: f64,
    pub deblur_ms: f64,
    pub segment_ms: f64,
    pub classify_ms: f64,
    pub wordmap_ms: f64,
}

impl StageTimings {
    pub fn total_ms(&self) -> f64 {
        self.sharpness_ms + self.deblur_ms + self.segment_ms + self.classify_ms + self.wordmap_ms
    }
}

/// The outcome of reading one plate crop.
#[derive(Debug, Clone)]
pub struct PlateReading {
    /// Classified characters, in the crops' reading order.
    pub chars: Vec<Recognition>,
    /// The segmented crops the recognitions came from (same order).
    pub crops: Vec<CharacterCrop>,
    /// Labels concatenated without mapping.
    pub raw_string: String,
    /// Word-mapped plate string.
    pub plate_string: String,
    /// Deblur rounds spent (sharpness-gate pass included).
    pub retries: usize,
    /// Whether the fallback local-statistics segmentation produced the crops.
    pub used_rsf: bool,
    /// No characters survived after every retry.
    pub unreadable: bool,
    pub timings: StageTimings,
}

/// Which segmentation model(s) an attempt may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Segmenter {
    /// Two-phase fit first, local-statistics fallback when it comes up short.
    #[default]
    CvThenRsf,
    CvOnly,
    RsfOnly,
}

/// Knobs for the plate-reading loop.
#[derive(Debug, Clone)]
pub struct OcrConfig {
    /// Laplacian-variance gate: a plate below this is deblurred before the
    /// first segmentation attempt.
    pub sharpness_threshold: f32,
    /// Segmenting fewer characters than this triggers a deblur retry.
    pub min_chars: usize,
    /// Deblur round budget (the sharpness-gate pass counts toward it).
    pub max_retries: usize,
    /// Base total-variation threshold for the deblurrer.
    pub lambda: f32,
    /// Per-round multiplier on `lambda`.
    pub lambda_decay: f32,
    pub fista_iters: usize,
    pub segmenter: Segmenter,
    pub crop: CropParams,
    pub cv: ContourParams,
    pub rsf: RsfParams,
}

impl Default for OcrConfig {
    fn default() -> Self {
        OcrConfig {
            sharpness_threshold: 0.01,
            min_chars: 4,
            max_retries: 3,
            lambda: 1e-3,
            lambda_decay: 0.5,
            fista_iters: 80,
            segmenter: Segmenter::default(),
            crop: CropParams::default(),
            cv: ContourParams::default(),
            rsf: RsfParams::default(),
        }
    }
}

impl OcrConfig {
    pub fn validate(&self) -> Result<(), OcrError> {
        if self.min_chars == 0 {
            return Err(OcrError::BadConfig {
                detail: "min_chars must be at least 1".into(),
            });
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(OcrError::BadConfig {
                detail: format!("lambda {} must be positive and finite", self.lambda),
            });
        }
        if !(self.lambda_decay > 0.0 && self.lambda_decay <= 1.0) {
            return Err(OcrError::BadConfig {
                detail: format!("lambda_decay {} must be in (0, 1]", self.lambda_decay),
            });
        }
        if self.fista_iters == 0 {
            return Err(OcrError::BadConfig {
                detail: "fista_iters must be positive".into(),
            });
        }
        if !(self.sharpness_threshold.is_finite() && self.sharpness_threshold >= 0.0) {
            return Err(OcrError::BadConfig {
                detail: "sharpness_threshold must be finite and non-negative".into(),
            });
        }
        Ok(())
    }
}

/// Classify one character crop: forward pass and softmax argmax, lowest
/// index winning ties. Deterministic. The crop is resampled to the net's
/// input plane if the sizes differ.
pub fn recognize_char(
    crop: &GrayImage,
    net: &Network,
    classes: &CharClassSet,
) -> Result<Recognition, OcrError> {
    let shape = &net.spec().input_shape;
    if shape.len() != 3 || shape[2] != 1 {
        return Err(OcrError::BadConfig {
            detail: format!("recognizer expects a [h, w, 1] input net, got {shape:?}"),
        });
    }
    let (h, w) = (shape[0], shape[1]);
    let resized = if crop.width() == w && crop.height() == h {
        crop.clone()
    } else {
        crop.resize(w, h)?
    };
    let input = Tensor::new(vec![h, w, 1], resized.pixels().to_vec()).map_err(NnError::from)?;
    let probs = net.forward(&input)?;
    if probs.len() != classes.len() {
        return Err(OcrError::BadConfig {
            detail: format!(
                "net emits {} classes but the class map has {}",
                probs.len(),
                classes.len()
            ),
        });
    }
    let mut class = 0;
    let mut best = f32::NEG_INFINITY;
    for (i, &p) in probs.data().iter().enumerate() {
        if p > best {
            best = p;
            class = i;
        }
    }
    Ok(Recognition {
        class,
        label: classes.label(class).to_string(),
        confidence: best,
    })
}

/// One segmentation attempt under the configured model choice. In the
/// fallback mode the two-phase fit runs first; when it finds fewer than
/// `min_chars` characters, the local-statistics model is tried and whichever
/// yields more crops wins (ties favor the two-phase fit). The flag reports
/// whether the returned crops came from the local-statistics model.
fn segment_once(
    img: &GrayImage,
    config: &OcrConfig,
) -> Result<(Vec<CharacterCrop>, bool), OcrError> {
    if config.segmenter == Segmenter::RsfOnly {
        let result = rsf(img, &config.rsf)?;
        return Ok((extract_characters(img, &result.mask, &config.crop), true));
    }
    let cv_result = chan_vese(img, &config.cv)?;
    let cv_crops = extract_characters(img, &cv_result.mask, &config.crop);
    if config.segmenter == Segmenter::CvOnly || cv_crops.len() >= config.min_chars {
        return Ok((cv_crops, false));
    }
    let rsf_result = rsf(img, &config.rsf)?;
    let rsf_crops = extract_characters(img, &rsf_result.mask, &config.crop);
    if rsf_crops.len() > cv_crops.len() {
        Ok((rsf_crops, true))
    } else {
        Ok((cv_crops, false))
    }
}

/// Read a whole plate crop: sharpness gate, segmentation, bounded deblur
/// retries while fewer than `min_chars` characters surface, classification
/// in reading order, and word mapping. Never fails on image content — an
/// empty result is returned as an `unreadable` reading.
///
/// Each deblur round restores the *original* crop with the next kernel from
/// the bank (3, 5, then 9 taps) and threshold `lambda * decay^(round-1)`,
/// rather than compounding passes. The best attempt (most characters) is
/// kept across rounds.
pub fn recognize_plate(
    plate: &GrayImage,
    net: &Network,
    classes: &CharClassSet,
    table: &WordMapTable,
    config: &OcrConfig,
) -> Result<PlateReading, OcrError> {
    config.validate()?;
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let sharp = sharpness(plate);
    timings.sharpness_ms = t.elapsed().as_secs_f64() * 1e3;

    let bank = kernel_bank();
    let mut retries = 0usize;
    let mut work = plate.clone();

    if sharp < config.sharpness_threshold && config.max_retries > 0 {
        let t = Instant::now();
        retries = 1;
        let lam = config.lambda;
        work = fista_deblur(plate, &bank[0], lam, config.fista_iters)?.0;
        timings.deblur_ms += t.elapsed().as_secs_f64() * 1e3;
    }

    let mut best: Vec<CharacterCrop> = Vec::new();
    let mut used_rsf = false;
    loop {
        let t = Instant::now();
        let (crops, rsf_used) = segment_once(&work, config)?;
        timings.segment_ms += t.elapsed().as_secs_f64() * 1e3;
        if crops.len() > best.len() {
            best = crops;
            used_rsf = rsf_used;
        }
        if best.len() >= config.min_chars || retries >= config.max_retries {
            break;
        }
        retries += 1;
        let t = Instant::now();
        let kernel = &bank[(retries - 1).min(bank.len() - 1)];
        let lam = config.lambda * config.lambda_decay.powi(retries as i32 - 1);
        work = fista_deblur(plate, kernel, lam, config.fista_iters)?.0;
        timings.deblur_ms += t.elapsed().as_secs_f64() * 1e3;
    }

    let t = Instant::now();
    let mut chars = Vec::with_capacity(best.len());
    for crop in &best {
        chars.push(recognize_char(&crop.image, net, classes)?);
    }
    timings.classify_ms = t.elapsed().as_secs_f64() * 1e3;

    let t = Instant::now();
    let labels: Vec<&str> = chars.iter().map(|r| r.label.as_str()).collect();
    let raw_string: String = labels.concat();
    let plate_string = map_plate(&labels, table);
    timings.wordmap_ms = t.elapsed().as_secs_f64() * 1e3;

    Ok(PlateReading {
        unreadable: chars.is_empty(),
        chars,
        crops: best,
        raw_string,
        plate_string,
        retries,
        used_rsf,
        timings,
    })
}
