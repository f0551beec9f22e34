//! Two-stage detection: a pluggable backbone feature provider feeding a
//! dual-branch dense head (object/no-object softmax plus box regression).
//! The plate head is the same topology re-dimensioned for a different feature
//! width, and is only ever run on vehicle crops — the cascade never looks for
//! plates in a full frame.

use crate::image::GrayImage;
use crate::nn::weights::{self, WeightsError};
use crate::nn::{head_branch_spec, Network, NetworkSpec, NnError};
use crate::tensor::{conv2d, maxpool2, relu, ConvKernel, Tensor};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("invalid bounding box: {detail}")]
    BadBBox { detail: String },
    #[error("degenerate crop: {detail}")]
    DegenerateCrop { detail: String },
    #[error("feature provider: {detail}")]
    Provider { detail: String },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Weights(#[from] WeightsError),
}

// ---------------------------------------------------------------------------
// Boxes and detections
// ---------------------------------------------------------------------------

/// Axis-aligned box in normalized image coordinates, `0 ≤ min ≤ max ≤ 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x_min: f32,
    pub y_min: f32,
    pub x_max: f32,
    pub y_max: f32,
}

impl BBox {
    pub fn new(x_min: f32, y_min: f32, x_max: f32, y_max: f32) -> Result<Self, DetectError> {
        let b = BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        for v in b.coords() {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(DetectError::BadBBox {
                    detail: format!("coordinate {v} outside [0, 1]"),
                });
            }
        }
        if x_min > x_max || y_min > y_max {
            return Err(DetectError::BadBBox {
                detail: format!("min corner ({x_min}, {y_min}) beyond max ({x_max}, {y_max})"),
            });
        }
        Ok(b)
    }

    pub fn coords(&self) -> [f32; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    /// Clamp raw regressor output into a valid box (coordinates into [0, 1],
    /// then max corner pulled up to the min corner if the pair crossed).
    pub fn from_raw(raw: [f32; 4]) -> BBox {
        let c: Vec<f32> = raw.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        BBox {
            x_min: c[0],
            y_min: c[1],
            x_max: c[2].max(c[0]),
            y_max: c[3].max(c[1]),
        }
    }

    pub fn width(&self) -> f32 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f32 {
        self.y_max - self.y_min
    }

    /// Grow the box by `frac` of its size on every side, clamped to [0, 1].
    pub fn padded(&self, frac: f32) -> BBox {
        let dx = self.width() * frac;
        let dy = self.height() * frac;
        BBox::from_raw([
            self.x_min - dx,
            self.y_min - dy,
            self.x_max + dx,
            self.y_max + dy,
        ])
    }
}

/// Mean squared difference over the four normalized coordinates.
pub fn bbox_mse(predicted: &BBox, target: &BBox) -> f32 {
    let p = predicted.coords();
    let t = target.coords();
    p.iter()
        .zip(t.iter())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<f32>()
        / 4.0
}

/// Which cascade stage produced a detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Vehicle,
    Plate,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stage::Vehicle => write!(f, "vehicle"),
            Stage::Plate => write!(f, "plate"),
        }
    }
}

/// One detected object: its box, the two-way class distribution
/// (object, background), and the stage that produced it.
#[derive(Debug, Clone)]
pub struct Detection {
    pub bbox: BBox,
    pub class_probs: [f32; 2],
    pub stage: Stage,
}

// ---------------------------------------------------------------------------
// Feature providers
// ---------------------------------------------------------------------------

/// Source of backbone features for a detection head. Implementations declare
/// a fixed output shape `[h, w, c]` and must return exactly that shape for
/// every input image.
pub trait FeatureProvider {
    fn shape(&self) -> [usize; 3];
    fn extract(&self, image: &GrayImage) -> Result<Tensor, DetectError>;
}

/// Side length every image is resampled to before feature extraction.
const BACKBONE_INPUT: usize = 64;
/// Channels added by the fixed coordinate-moment block.
const MOMENT_CHANNELS: usize = 6;
/// Channels produced by the second convolution.
const CONV_CHANNELS: usize = 10;

/// Deterministic stand-in backbone: a small fixed convolution stack over the
/// resampled image plus coordinate-moment channels (intensity and squared
/// intensity, each raw and multiplied by x/y ramps). Global pooling erases
/// position from plain convolution maps, so the moment channels are what let
/// a dense head regress box coordinates from pooled features.
pub struct ToyBackbone {
    conv1: ConvKernel,
    conv2: ConvKernel,
    shape: [usize; 3],
}

impl ToyBackbone {
    pub fn new(seed: u64) -> ToyBackbone {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |shape: &[usize], fan_in: usize| {
            let bound = (3.0f32 / fan_in as f32).sqrt();
            Tensor::from_fn(shape, |_| rng.random_range(-bound..=bound))
        };
        let conv1 = ConvKernel::new(
            draw(&[3, 3, 1, 6], 9),
            Tensor::zeros(&[6]),
        )
        .expect("static kernel shape");
        let conv2 = ConvKernel::new(
            draw(&[3, 3, 6, CONV_CHANNELS], 54),
            Tensor::zeros(&[CONV_CHANNELS]),
        )
        .expect("static kernel shape");
        // 64 -> conv3 62 -> pool 31 -> conv3 29 -> pool 14
        let side = (((BACKBONE_INPUT - 2) / 2) - 2) / 2;
        ToyBackbone {
            conv1,
            conv2,
            shape: [side, side, CONV_CHANNELS + MOMENT_CHANNELS],
        }
    }
}

impl FeatureProvider for ToyBackbone {
    fn shape(&self) -> [usize; 3] {
        self.shape
    }

    fn extract(&self, image: &GrayImage) -> Result<Tensor, DetectError> {
        let resized = image
            .resize(BACKBONE_INPUT, BACKBONE_INPUT)
            .map_err(|e| DetectError::Provider {
                detail: format!("resample failed: {e}"),
            })?;
        let input = Tensor::new(
            vec![BACKBONE_INPUT, BACKBONE_INPUT, 1],
            resized.pixels().to_vec(),
        )
        .map_err(NnError::from)?;
        let c1 = relu(&conv2d(&input, &self.conv1).map_err(NnError::from)?);
        let (p1, _) = maxpool2(&c1).map_err(NnError::from)?;
        let c2 = relu(&conv2d(&p1, &self.conv2).map_err(NnError::from)?);
        let (p2, _) = maxpool2(&c2).map_err(NnError::from)?;

        let [h, w, c] = self.shape;
        debug_assert_eq!(p2.shape(), &[h, w, CONV_CHANNELS]);
        let mut out = Tensor::zeros(&[h, w, c]);
        let src = p2.data();
        let dst = out.data_mut();
        for y in 0..h {
            for x in 0..w {
                let base = (y * w + x) * c;
                for ch in 0..CONV_CHANNELS {
                    dst[base + ch] = src[(y * w + x) * CONV_CHANNELS + ch];
                }
                // Coordinate moments of the resampled intensity at this cell.
                let fx = (x as f32 + 0.5) / w as f32;
                let fy = (y as f32 + 0.5) / h as f32;
                let sx = resized.width() as f32 / w as f32;
                let sy = resized.height() as f32 / h as f32;
                let mut mean = 0.0f32;
                let mut mean_sq = 0.0f32;
                let mut count = 0.0f32;
                let x0 = (x as f32 * sx) as usize;
                let y0 = (y as f32 * sy) as usize;
                let x1 = (((x + 1) as f32 * sx) as usize).min(resized.width());
                let y1 = (((y + 1) as f32 * sy) as usize).min(resized.height());
                for py in y0..y1 {
                    for px in x0..x1 {
                        let v = resized.get(px, py);
                        mean += v;
                        mean_sq += v * v;
                        count += 1.0;
                    }
                }
                if count > 0.0 {
                    mean /= count;
                    mean_sq /= count;
                }
                let m = CONV_CHANNELS;
                dst[base + m] = mean;
                dst[base + m + 1] = mean * fx;
                dst[base + m + 2] = mean * fy;
                dst[base + m + 3] = mean_sq;
                dst[base + m + 4] = mean_sq * fx;
                dst[base + m + 5] = mean_sq * fy;
            }
        }
        Ok(out)
    }
}

/// Provider that replays one precomputed feature tensor (record name
/// "features" in the standard weight container) regardless of input — used to
/// exercise heads against features captured from a real backbone.
pub struct FileFeatureProvider {
    features: Tensor,
    shape: [usize; 3],
}

impl FileFeatureProvider {
    pub fn open(path: impl AsRef<std::path::Path>) -> Result<FileFeatureProvider, DetectError> {
        let records = weights::load_tensors(path)?;
        let features = records
            .into_iter()
            .find(|(name, _)| name == "features")
            .map(|(_, t)| t)
            .ok_or_else(|| DetectError::Provider {
                detail: "no record named \"features\" in file".into(),
            })?;
        if features.rank() != 3 {
            return Err(DetectError::Provider {
                detail: format!(
                    "features must be rank 3 [h, w, c], got rank {}",
                    features.rank()
                ),
            });
        }
        let s = features.shape();
        let shape = [s[0], s[1], s[2]];
        Ok(FileFeatureProvider { features, shape })
    }
}

impl FeatureProvider for FileFeatureProvider {
    fn shape(&self) -> [usize; 3] {
        self.shape
    }

    fn extract(&self, _image: &GrayImage) -> Result<Tensor, DetectError> {
        Ok(self.features.clone())
    }
}

// ---------------------------------------------------------------------------
// Detection head
// ---------------------------------------------------------------------------

/// Build the dual-branch head over globally pooled backbone features of the
/// given channel width: a 2-way object/background softmax branch and a 4-way
/// linear box branch, each a 256/128/64/32 dense stack with dropout.
pub fn build_detector_head(feature_dim: usize) -> (NetworkSpec, NetworkSpec) {
    (
        head_branch_spec("class", feature_dim, 2, true),
        head_branch_spec("bbox", feature_dim, 4, false),
    )
}

/// The two trained branch networks of one detection stage.
pub struct DetectorHead {
    pub class_net: Network,
    pub bbox_net: Network,
    pub stage: Stage,
}

impl DetectorHead {
    /// Freshly initialized head for the given pooled feature width.
    pub fn init<R: Rng>(
        feature_dim: usize,
        stage: Stage,
        rng: &mut R,
    ) -> Result<DetectorHead, DetectError> {
        let (cls, bbox) = build_detector_head(feature_dim);
        Ok(DetectorHead {
            class_net: Network::init(cls, rng)?,
            bbox_net: Network::init(bbox, rng)?,
            stage,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.class_net.spec().input_shape[0]
    }

    /// Persist both branches into one weight file (branch name prefixes keep
    /// the records distinct).
    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<(), DetectError> {
        let mut records: Vec<(String, Tensor)> = Vec::new();
        for (net, prefix) in [(&self.class_net, "class."), (&self.bbox_net, "bbox.")] {
            for (name, t) in net.param_names().iter().zip(net.param_tensors()) {
                records.push((format!("{prefix}{name}"), t.clone()));
            }
        }
        let refs: Vec<(&str, &Tensor)> = records.iter().map(|(n, t)| (n.as_str(), t)).collect();
        weights::save_tensors(path, &refs)?;
        Ok(())
    }

    /// Load both branches from a file written by [`DetectorHead::save`].
    pub fn load(
        path: impl AsRef<std::path::Path>,
        feature_dim: usize,
        stage: Stage,
    ) -> Result<DetectorHead, DetectError> {
        let records = weights::load_tensors(path)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut head = DetectorHead::init(feature_dim, stage, &mut rng)?;
        for (net, prefix) in [
            (&mut head.class_net, "class."),
            (&mut head.bbox_net, "bbox."),
        ] {
            let names = net.param_names();
            let mut slots = net.param_tensors_mut();
            for (name, slot) in names.iter().zip(slots.iter_mut()) {
                let want = format!("{prefix}{name}");
                let found = records
                    .iter()
                    .find(|(n, _)| *n == want)
                    .map(|(_, t)| t)
                    .ok_or_else(|| {
                        NnError::WeightMismatch(format!("missing record {want}"))
                    })?;
                if found.shape() != slot.shape() {
                    return Err(DetectError::Nn(NnError::WeightMismatch(format!(
                        "record {want}: shape {:?} does not match {:?}",
                        found.shape(),
                        slot.shape()
                    ))));
                }
                **slot = found.clone();
            }
        }
        Ok(head)
    }
}

/// Average a `[h, w, c]` feature map over its spatial grid into a `[c]`
/// vector — the pooling between backbone and head branches.
pub fn global_pool(features: &Tensor) -> Result<Tensor, DetectError> {
    if features.rank() != 3 {
        return Err(DetectError::Provider {
            detail: format!("expected rank-3 features, got rank {}", features.rank()),
        });
    }
    let (h, w, c) = (
        features.shape()[0],
        features.shape()[1],
        features.shape()[2],
    );
    let mut sums = vec![0.0f64; c];
    for (i, &v) in features.data().iter().enumerate() {
        sums[i % c] += v as f64;
    }
    let n = (h * w) as f64;
    Ok(Tensor::new(
        vec![c],
        sums.into_iter().map(|s| (s / n) as f32).collect(),
    )
    .map_err(NnError::from)?)
}

/// Run one detection stage: extract features, pool, and evaluate both head
/// branches. Returns a detection only when the object probability reaches
/// `score_threshold`; the regressed box is clamped into [0, 1].
pub fn detect(
    image: &GrayImage,
    provider: &dyn FeatureProvider,
    head: &DetectorHead,
    score_threshold: f32,
) -> Result<Option<Detection>, DetectError> {
    let features = provider.extract(image)?;
    let declared = provider.shape();
    if features.shape() != declared {
        return Err(DetectError::Provider {
            detail: format!(
                "provider returned shape {:?}, declared {:?}",
                features.shape(),
                declared
            ),
        });
    }
    let pooled = global_pool(&features)?;
    let probs = head.class_net.forward(&pooled)?;
    let object_prob = probs.data()[0];
    if object_prob < score_threshold {
        return Ok(None);
    }
    let raw = head.bbox_net.forward(&pooled)?;
    let d = raw.data();
    Ok(Some(Detection {
        bbox: BBox::from_raw([d[0], d[1], d[2], d[3]]),
        class_probs: [probs.data()[0], probs.data()[1]],
        stage: head.stage,
    }))
}

/// Cut the normalized box out of an image, rounding each edge to the nearest
/// pixel boundary. A box that rounds to zero width or height is an error.
pub fn crop(image: &GrayImage, bbox: &BBox) -> Result<GrayImage, DetectError> {
    let (w, h) = (image.width() as f32, image.height() as f32);
    let x0 = (bbox.x_min * w).round() as usize;
    let y0 = (bbox.y_min * h).round() as usize;
    let x1 = ((bbox.x_max * w).round() as usize).min(image.width());
    let y1 = ((bbox.y_max * h).round() as usize).min(image.height());
    if x1 <= x0 || y1 <= y0 {
        return Err(DetectError::DegenerateCrop {
            detail: format!(
                "box ({}, {}, {}, {}) rounds to an empty pixel rectangle",
                bbox.x_min, bbox.y_min, bbox.x_max, bbox.y_max
            ),
        });
    }
    image
        .crop(x0, y0, x1 - x0, y1 - y0)
        .map_err(|e| DetectError::DegenerateCrop {
            detail: format!("crop failed: {e}"),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn bbox_validation() {
        assert!(BBox::new(0.1, 0.2, 0.8, 0.9).is_ok());
        assert!(BBox::new(-0.1, 0.2, 0.8, 0.9).is_err());
        assert!(BBox::new(0.1, 0.2, 1.2, 0.9).is_err());
        assert!(BBox::new(0.8, 0.2, 0.1, 0.9).is_err());
        assert!(BBox::new(0.1, f32::NAN, 0.8, 0.9).is_err());
    }

    #[test]
    fn bbox_mse_hand_values() {
        let a = BBox::new(0.1, 0.1, 0.5, 0.5).unwrap();
        assert_eq!(bbox_mse(&a, &a), 0.0);
        let b = BBox::new(0.2, 0.2, 0.6, 0.6).unwrap();
        assert!((bbox_mse(&b, &a) - 0.01).abs() < 1e-6);
    }

    #[test]
    fn from_raw_clamps_and_orders() {
        let b = BBox::from_raw([-0.5, 0.3, 1.7, 0.1]);
        assert_eq!(b.x_min, 0.0);
        assert_eq!(b.x_max, 1.0);
        assert_eq!(b.y_min, 0.3);
        // Crossed pair: max pulled up to min.
        assert_eq!(b.y_max, 0.3);
    }

    #[test]
    fn head_branch_dims_at_unit_feature_width() {
        let (cls, bbox) = build_detector_head(1);
        // First dense over a single pooled feature: (1+1)*256.
        assert_eq!(cls.layer_param_counts().unwrap()[0], 512);
        assert_eq!(cls.output_shape().unwrap(), vec![2]);
        assert_eq!(bbox.output_shape().unwrap(), vec![4]);
    }

    #[test]
    fn toy_backbone_is_deterministic_with_declared_shape() {
        let bb = ToyBackbone::new(7);
        let img = GrayImage::from_fn(80, 50, |x, y| ((x * 3 + y * 5) % 17) as f32 / 16.0);
        let f1 = bb.extract(&img).unwrap();
        let f2 = bb.extract(&img).unwrap();
        assert_eq!(f1.shape(), bb.shape());
        assert_eq!(f1.data(), f2.data());
        // Same seed, fresh instance: same features.
        let f3 = ToyBackbone::new(7).extract(&img).unwrap();
        assert_eq!(f1.data(), f3.data());
        // Moment channels respond to position: a bright patch on the left
        // yields a smaller x-weighted mean than the same patch on the right.
        let left = GrayImage::from_fn(64, 64, |x, _| if x < 16 { 1.0 } else { 0.0 });
        let right = GrayImage::from_fn(64, 64, |x, _| if x >= 48 { 1.0 } else { 0.0 });
        let gl = global_pool(&bb.extract(&left).unwrap()).unwrap();
        let gr = global_pool(&bb.extract(&right).unwrap()).unwrap();
        let mx = CONV_CHANNELS + 1; // intensity · x channel
        assert!(gl.data()[mx] < gr.data()[mx]);
    }

    #[test]
    fn file_provider_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("features.blpw");
        let t = Tensor::from_fn(&[4, 5, 3], |i| i as f32 * 0.25);
        weights::save_tensors(&path, &[("features", &t)]).unwrap();
        let p = FileFeatureProvider::open(&path).unwrap();
        assert_eq!(p.shape(), [4, 5, 3]);
        let img = GrayImage::zeros(10, 10);
        assert_eq!(p.extract(&img).unwrap().data(), t.data());

        let bad = dir.path().join("other.blpw");
        weights::save_tensors(&bad, &[("something_else", &t)]).unwrap();
        assert!(matches!(
            FileFeatureProvider::open(&bad),
            Err(DetectError::Provider { .. })
        ));
    }

    #[test]
    fn zero_weight_head_scores_half_and_is_suppressed() {
        let bb = ToyBackbone::new(1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut head = DetectorHead::init(bb.shape()[2], Stage::Vehicle, &mut rng).unwrap();
        for t in head.class_net.param_tensors_mut() {
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        let img = GrayImage::filled(32, 32, 0.5);
        // Uniform two-way softmax: probability exactly one half.
        let kept = detect(&img, &bb, &head, 0.5).unwrap().unwrap();
        assert!((kept.class_probs[0] - 0.5).abs() < 1e-6);
        assert!((kept.class_probs[0] + kept.class_probs[1] - 1.0).abs() < 1e-6);
        assert_eq!(kept.stage, Stage::Vehicle);
        for c in kept.bbox.coords() {
            assert!((0.0..=1.0).contains(&c));
        }
        assert!(detect(&img, &bb, &head, 0.6).unwrap().is_none());
    }

    #[test]
    fn head_save_load_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("head.blpw");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let head = DetectorHead::init(16, Stage::Plate, &mut rng).unwrap();
        head.save(&path).unwrap();
        let loaded = DetectorHead::load(&path, 16, Stage::Plate).unwrap();
        for (a, b) in head
            .class_net
            .param_tensors()
            .iter()
            .chain(head.bbox_net.param_tensors().iter())
            .zip(
                loaded
                    .class_net
                    .param_tensors()
                    .iter()
                    .chain(loaded.bbox_net.param_tensors().iter()),
            )
        {
            assert_eq!(a.data(), b.data());
        }
        assert!(DetectorHead::load(&path, 8, Stage::Plate).is_err());
    }

    #[test]
    fn crop_rounds_to_pixel_rect() {
        let img = GrayImage::from_fn(100, 100, |x, y| if x >= 25 && y >= 25 { 1.0 } else { 0.0 });
        let b = BBox::new(0.25, 0.25, 0.75, 0.75).unwrap();
        let c = crop(&img, &b).unwrap();
        assert_eq!((c.width(), c.height()), (50, 50));
        assert_eq!(c.get(0, 0), 1.0);

        let degenerate = BBox::new(0.4, 0.1, 0.4, 0.9).unwrap();
        assert!(matches!(
            crop(&img, &degenerate),
            Err(DetectError::DegenerateCrop { .. })
        ));
    }

    #[test]
    fn padded_box_grows_and_stays_valid() {
        let b = BBox::new(0.4, 0.4, 0.6, 0.9).unwrap();
        let p = b.padded(0.25);
        assert!(p.x_min < 0.4 && p.x_max > 0.6);
        assert_eq!(p.y_max, 1.0);
        assert!(BBox::new(p.x_min, p.y_min, p.x_max, p.y_max).is_ok());
    }
}
