//! Desk-scale training: seeded image augmentation, dataset splitting with
//! label encoding, mini-batch optimization with early stopping and
//! reduce-learning-rate-on-plateau, finite-difference gradient verification,
//! and a directory-of-PGM corpus loader.

use crate::detector::{BBox, DetectorHead, Stage};
use crate::image::{gaussian_blur, load_pnm, GrayImage, ImageError};
use crate::nn::{
    cross_entropy, cross_entropy_grad, mse, mse_grad, Gradients, Network, NetworkSpec, NnError,
    Optimizer,
};
use crate::synth::LabeledImage;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("bad split ratios: {detail}")]
    BadRatios { detail: String },
    #[error("bad training config: {detail}")]
    BadConfig { detail: String },
    #[error("label {label:?} is not in the encoder")]
    UnknownLabel { label: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Mix a few counters into one seed (splitmix-style), so every sample gets
/// its own deterministic random stream regardless of thread scheduling.
fn mix_seed(a: u64, b: u64, c: u64) -> u64 {
    let mut z = a
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(b.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(c.wrapping_mul(0x94D0_49BB_1331_11EB));
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

/// Randomized transform magnitudes for one corpus. All fractions are
/// half-ranges around the identity; zero everywhere means no augmentation.
#[derive(Debug, Clone)]
pub struct AugmentConfig {
    /// Translation, as a fraction of each image dimension.
    pub shift_frac: f32,
    /// Rotation half-range in degrees.
    pub rotate_deg: f32,
    /// Scale half-range around 1.
    pub zoom_frac: f32,
    /// Horizontal shear half-range.
    pub shear_frac: f32,
    /// Mirror horizontally with probability one half.
    pub flip: bool,
    /// Contrast gain half-range around 1.
    pub contrast_jitter: f32,
    /// Gaussian blur sigma drawn uniformly from this range.
    pub blur_sigma: (f32, f32),
    /// Fraction of pixels replaced by pure black or white.
    pub salt_pepper: f32,
    /// Base seed for per-sample streams derived by the training loop.
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            shift_frac: 0.0,
            rotate_deg: 0.0,
            zoom_frac: 0.0,
            shear_frac: 0.0,
            flip: false,
            contrast_jitter: 0.0,
            blur_sigma: (0.0, 0.0),
            salt_pepper: 0.0,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// The character-recognition recipe: shift, rotate, zoom, and shear, plus
    /// mild contrast/blur/speckle. No mirroring — glyphs are chiral.
    pub fn ocr_recipe(seed: u64) -> AugmentConfig {
        AugmentConfig {
            shift_frac: 0.10,
            rotate_deg: 7.5,
            zoom_frac: 0.20,
            shear_frac: 0.20,
            flip: false,
            contrast_jitter: 0.15,
            blur_sigma: (0.0, 0.6),
            salt_pepper: 0.01,
            seed,
        }
    }

    /// The detection-stage recipe: rotate, shift, flip, varying contrast,
    /// blur, and salt-and-pepper noise.
    pub fn detector_recipe(seed: u64) -> AugmentConfig {
        AugmentConfig {
            shift_frac: 0.10,
            rotate_deg: 5.0,
            zoom_frac: 0.10,
            shear_frac: 0.0,
            flip: true,
            contrast_jitter: 0.25,
            blur_sigma: (0.0, 1.0),
            salt_pepper: 0.02,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fields = [
            ("shift_frac", self.shift_frac),
            ("rotate_deg", self.rotate_deg),
            ("zoom_frac", self.zoom_frac),
            ("shear_frac", self.shear_frac),
            ("contrast_jitter", self.contrast_jitter),
            ("blur lo", self.blur_sigma.0),
            ("blur hi", self.blur_sigma.1),
            ("salt_pepper", self.salt_pepper),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v >= 0.0) {
                return Err(TrainError::BadConfig {
                    detail: format!("{name} must be finite and non-negative, got {v}"),
                });
            }
        }
        if self.blur_sigma.1 < self.blur_sigma.0 {
            return Err(TrainError::BadConfig {
                detail: "blur sigma range is inverted".into(),
            });
        }
        if self.salt_pepper > 1.0 {
            return Err(TrainError::BadConfig {
                detail: "salt_pepper is a fraction of pixels, at most 1".into(),
            });
        }
        Ok(())
    }

    fn is_identity(&self) -> bool {
        self.shift_frac == 0.0
            && self.rotate_deg == 0.0
            && self.zoom_frac == 0.0
            && self.shear_frac == 0.0
            && !self.flip
            && self.contrast_jitter == 0.0
            && self.blur_sigma.1 == 0.0
            && self.salt_pepper == 0.0
    }
}

/// Rotate about the image center by `degrees` (bilinear resampling, replicate
/// borders). Positive angles turn counterclockwise in image coordinates.
pub fn rotate(img: &GrayImage, degrees: f32) -> GrayImage {
    warp(img, degrees, 1.0, 0.0, 0.0, 0.0, false)
}

/// Inverse-mapped affine warp: rotation, uniform zoom, horizontal shear,
/// translation (in pixels), optional horizontal mirror.
fn warp(
    img: &GrayImage,
    degrees: f32,
    zoom: f32,
    shear: f32,
    dx: f32,
    dy: f32,
    flip: bool,
) -> GrayImage {
    let (w, h) = (img.width(), img.height());
    let (cx, cy) = ((w as f32 - 1.0) * 0.5, (h as f32 - 1.0) * 0.5);
    let theta = degrees.to_radians();
    let (sin, cos) = theta.sin_cos();
    // Forward map: rotate · shear · zoom, then translate. Written out, the
    // 2×2 is [[cos, -sin], [sin, cos]] · [[1, shear], [0, 1]] · zoom.
    let m00 = cos * zoom;
    let m01 = (cos * shear - sin) * zoom;
    let m10 = sin * zoom;
    let m11 = (sin * shear + cos) * zoom;
    let det = m00 * m11 - m01 * m10;
    let inv = 1.0 / det;
    GrayImage::from_fn(w, h, |x, y| {
        let px = x as f32 - cx - dx;
        let py = y as f32 - cy - dy;
        let mut sx = (m11 * px - m01 * py) * inv + cx;
        let sy = (-m10 * px + m00 * py) * inv + cy;
        if flip {
            sx = w as f32 - 1.0 - sx;
        }
        img.sample_bilinear(sx, sy)
    })
}

/// Apply one random draw of the configured transforms. Deterministic in the
/// rng state; a zero config returns the image unchanged, exactly.
pub fn augment(img: &GrayImage, config: &AugmentConfig, rng: &mut impl Rng) -> GrayImage {
    if config.is_identity() {
        return img.clone();
    }
    fn sym(rng: &mut impl Rng, half: f32) -> f32 {
        if half == 0.0 {
            0.0
        } else {
            rng.random_range(-half..=half)
        }
    }
    let degrees = sym(rng, config.rotate_deg);
    let zoom = 1.0 + sym(rng, config.zoom_frac);
    let shear = sym(rng, config.shear_frac);
    let dx = sym(rng, config.shift_frac) * img.width() as f32;
    let dy = sym(rng, config.shift_frac) * img.height() as f32;
    let flip = config.flip && rng.random_bool(0.5);

    let mut out = if degrees != 0.0 || zoom != 1.0 || shear != 0.0 || dx != 0.0 || dy != 0.0 || flip
    {
        warp(img, degrees, zoom, shear, dx, dy, flip)
    } else {
        img.clone()
    };

    let contrast = 1.0 + sym(rng, config.contrast_jitter);
    if contrast != 1.0 {
        for v in out.pixels_mut() {
            *v = ((*v - 0.5) * contrast + 0.5).clamp(0.0, 1.0);
        }
    }
    if config.blur_sigma.1 > 0.0 {
        let sigma = rng.random_range(config.blur_sigma.0..=config.blur_sigma.1);
        if sigma > 0.05 {
            out = gaussian_blur(&out, sigma);
        }
    }
    if config.salt_pepper > 0.0 {
        let d = config.salt_pepper;
        for v in out.pixels_mut() {
            let u: f32 = rng.random();
            if u < d {
                *v = if u < d * 0.5 { 0.0 } else { 1.0 };
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Splits and label encoding
// ---------------------------------------------------------------------------

/// Bijective mapping between class labels and dense indices.
#[derive(Debug, Clone)]
pub struct LabelEncoder {
    labels: Vec<String>,
}

impl LabelEncoder {
    /// Encoder over the distinct labels observed in a corpus, sorted for
    /// determinism.
    pub fn from_observed(corpus: &[LabeledImage]) -> LabelEncoder {
        let mut labels: Vec<String> = corpus.iter().map(|(_, l)| l.clone()).collect();
        labels.sort();
        labels.dedup();
        LabelEncoder { labels }
    }

    /// Encoder that fixes indices by an external ordered class list (the
    /// class-map file), independent of which labels a corpus contains.
    pub fn from_class_list(labels: Vec<String>) -> LabelEncoder {
        LabelEncoder { labels }
    }

    pub fn encode(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn decode(&self, class: usize) -> &str {
        &self.labels[class]
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
}

/// Index partition of a corpus plus the label encoder built over it.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub encoder: LabelEncoder,
}

/// Seeded shuffle-and-partition. One to three ratios (train, validation,
/// test) summing to 1; part sizes are apportioned by largest remainder, so
/// each is within one item of its exact share.
pub fn split(corpus: &[LabeledImage], ratios: &[f32], seed: u64) -> Result<DatasetSplit, TrainError> {
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    if ratios.is_empty() || ratios.len() > 3 {
        return Err(TrainError::BadRatios {
            detail: format!("need 1 to 3 ratios, got {}", ratios.len()),
        });
    }
    if ratios.iter().any(|&r| !(0.0..=1.0).contains(&r)) {
        return Err(TrainError::BadRatios {
            detail: format!("ratios must lie in [0, 1]: {ratios:?}"),
        });
    }
    let sum: f32 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-4 {
        return Err(TrainError::BadRatios {
            detail: format!("ratios sum to {sum}, expected 1"),
        });
    }

    let n = corpus.len();
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);

    // Largest-remainder apportionment of n items into the ratio parts.
    let exact: Vec<f64> = ratios.iter().map(|&r| r as f64 * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|&e| e.floor() as usize).collect();
    let mut leftover = n - sizes.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &part in order.iter().cycle() {
        if leftover == 0 {
            break;
        }
        sizes[part] += 1;
        leftover -= 1;
    }

    let mut parts: Vec<Vec<usize>> = Vec::with_capacity(3);
    let mut cursor = 0;
    for &s in &sizes {
        parts.push(indices[cursor..cursor + s].to_vec());
        cursor += s;
    }
    while parts.len() < 3 {
        parts.push(Vec::new());
    }
    let test = parts.pop().unwrap();
    let val = parts.pop().unwrap();
    let train = parts.pop().unwrap();
    Ok(DatasetSplit {
        train,
        val,
        test,
        encoder: LabelEncoder::from_observed(corpus),
    })
}

// ---------------------------------------------------------------------------
// Classifier training
// ---------------------------------------------------------------------------

/// Optimizer choice for a training run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptChoice {
    Adam,
    Sgd { momentum: f32 },
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub optimizer: OptChoice,
    pub lr: f32,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many epochs without validation improvement.
    pub early_stop_patience: usize,
    /// Halving schedule: multiply the learning rate by `reduce_lr_factor`
    /// after `reduce_lr_patience` stale epochs.
    pub reduce_lr_factor: f32,
    pub reduce_lr_patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptChoice::Adam,
            lr: 1e-3,
            batch_size: 64,
            max_epochs: 50,
            early_stop_patience: 5,
            reduce_lr_factor: 0.5,
            reduce_lr_patience: 2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(TrainError::BadConfig {
                detail: "batch_size and max_epochs must be positive".into(),
            });
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(TrainError::BadConfig {
                detail: format!("learning rate {} must be finite and non-negative", self.lr),
            });
        }
        if !(self.reduce_lr_factor > 0.0 && self.reduce_lr_factor <= 1.0) {
            return Err(TrainError::BadConfig {
                detail: format!("reduce_lr_factor {} must be in (0, 1]", self.reduce_lr_factor),
            });
        }
        Ok(())
    }

    fn make_optimizer(&self) -> Optimizer {
        match self.optimizer {
            OptChoice::Adam => Optimizer::adam(self.lr),
            OptChoice::Sgd { momentum } => Optimizer::sgd(self.lr, momentum),
        }
    }
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f32,
    pub train_loss: f32,
    pub val_loss: f32,
    pub val_acc: f32,
}

/// A finished training run: the best-validation network, its history, and
/// whether the run was cut short by a non-finite loss.
pub struct TrainOutcome {
    pub network: Network,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub diverged: bool,
}

/// Resample an image to the network's input plane and wrap it as a
/// `[h, w, 1]` tensor.
pub fn image_input(img: &GrayImage, height: usize, width: usize) -> Result<Tensor, TrainError> {
    let resized = if img.width() == width && img.height() == height {
        img.clone()
    } else {
        img.resize(width, height)?
    };
    Ok(Tensor::new(vec![height, width, 1], resized.pixels().to_vec()).map_err(NnError::from)?)
}

/// Track best-validation state and the two patience counters.
struct Plateau {
    best: f32,
    best_epoch: usize,
    stale: usize,
    stale_since_reduce: usize,
}

impl Plateau {
    fn new() -> Plateau {
        Plateau {
            best: f32::INFINITY,
            best_epoch: 0,
            stale: 0,
            stale_since_reduce: 0,
        }
    }

    /// Record an epoch's validation loss; true when it improved on the best.
    fn observe(&mut self, epoch: usize, val_loss: f32) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.stale = 0;
            self.stale_since_reduce = 0;
            true
        } else {
            self.stale += 1;
            self.stale_since_reduce += 1;
            false
        }
    }
}

/// Train a softmax classifier on encoded image/label pairs with per-epoch
/// validation, early stopping, and learning-rate reduction on plateau.
/// Returns the parameters from the best validation epoch. Deterministic in
/// `(seed, config, corpus order)`: every sample owns a counter-derived random
/// stream and batch gradients are reduced in sample order, so multithreaded
/// runs reproduce bit for bit.
pub fn train_classifier(
    spec: NetworkSpec,
    corpus: &[LabeledImage],
    split: &DatasetSplit,
    config: &TrainConfig,
    aug: &AugmentConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    aug.validate()?;
    if split.train.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let (in_h, in_w) = (spec.input_shape[0], spec.input_shape[1]);

    // Encode once up front; augmentation operates on images, so inputs are
    // (image, class) pairs rather than tensors.
    let mut samples: Vec<(&GrayImage, usize)> = Vec::with_capacity(corpus.len());
    for (img, label) in corpus {
        let class = split
            .encoder
            .encode(label)
            .ok_or_else(|| TrainError::UnknownLabel {
                label: label.clone(),
            })?;
        samples.push((img, class));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0xC0FFEE, 0));
    let mut net = Network::init(spec, &mut rng)?;
    let mut opt = config.make_optimizer();
    let mut plateau = Plateau::new();
    let mut best_params: Vec<Tensor> = net.param_tensors().into_iter().cloned().collect();
    let mut history = Vec::new();
    let mut diverged = false;

    for epoch in 1..=config.max_epochs {
        let mut order = split.train.clone();
        let mut epoch_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, epoch as u64, 1));
        order.shuffle(&mut epoch_rng);

        let mut loss_sum = 0.0f64;
        for batch in order.chunks(config.batch_size) {
            let results: Result<Vec<(f32, Gradients)>, TrainError> = batch
                .par_iter()
                .map(|&idx| {
                    let (img, class) = samples[idx];
                    let mut srng = ChaCha8Rng::seed_from_u64(mix_seed(
                        aug.seed ^ config.seed,
                        epoch as u64,
                        idx as u64,
                    ));
                    let view = augment(img, aug, &mut srng);
                    let input = image_input(&view, in_h, in_w)?;
                    let trace = net.forward_trace(&input, &mut srng)?;
                    let probs = trace.output();
                    let loss = cross_entropy(probs, class);
                    let grad = cross_entropy_grad(probs, class);
                    let (_, grads) = net.backward(&trace, &grad)?;
                    Ok((loss, grads))
                })
                .collect();
            let results = results?;

            let mut acc = Gradients::zeros_like(&net);
            let scale = 1.0 / batch.len() as f32;
            for (loss, grads) in &results {
                loss_sum += *loss as f64;
                acc.add_scaled(grads, scale);
            }
            let mut params = net.param_tensors_mut();
            opt.step(&mut params, &acc);
        }
        let train_loss = (loss_sum / split.train.len() as f64) as f32;

        let (val_loss, val_acc) = if split.val.is_empty() {
            (train_loss, f32::NAN)
        } else {
            evaluate(&net, &samples, &split.val, in_h, in_w)?
        };

        history.push(EpochStats {
            epoch,
            lr: opt.lr(),
            train_loss,
            val_loss,
            val_acc,
        });

        if !train_loss.is_finite() || !val_loss.is_finite() {
            diverged = true;
            break;
        }

        if plateau.observe(epoch, val_loss) {
            best_params = net.param_tensors().into_iter().cloned().collect();
        } else {
            if plateau.stale >= config.early_stop_patience && config.early_stop_patience > 0 {
                break;
            }
            if plateau.stale_since_reduce >= config.reduce_lr_patience
                && config.reduce_lr_patience > 0
            {
                opt.set_lr(opt.lr() * config.reduce_lr_factor);
                plateau.stale_since_reduce = 0;
            }
        }
    }

    // Hand back the best-validation checkpoint, not the final state.
    for (slot, saved) in net.param_tensors_mut().into_iter().zip(&best_params) {
        *slot = saved.clone();
    }
    Ok(TrainOutcome {
        network: net,
        history,
        best_epoch: plateau.best_epoch,
        diverged,
    })
}

/// Mean cross-entropy and accuracy of the network over the given indices.
fn evaluate(
    net: &Network,
    samples: &[(&GrayImage, usize)],
    indices: &[usize],
    in_h: usize,
    in_w: usize,
) -> Result<(f32, f32), TrainError> {
    let results: Result<Vec<(f32, bool)>, TrainError> = indices
        .par_iter()
        .map(|&idx| {
            let (img, class) = samples[idx];
            let input = image_input(img, in_h, in_w)?;
            let probs = net.forward(&input)?;
            let loss = cross_entropy(&probs, class);
            let pred = probs
                .data()
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0);
            Ok((loss, pred == class))
        })
        .collect();
    let results = results?;
    let n = results.len() as f64;
    let loss: f64 = results.iter().map(|(l, _)| *l as f64).sum::<f64>() / n;
    let acc: f64 = results.iter().filter(|(_, ok)| *ok).count() as f64 / n;
    Ok((loss as f32, acc as f32))
}

/// Mean cross-entropy and accuracy of a classifier over the indexed subset
/// of a labeled corpus.
pub fn classifier_metrics(
    net: &Network,
    corpus: &[LabeledImage],
    encoder: &LabelEncoder,
    indices: &[usize],
) -> Result<(f32, f32), TrainError> {
    if indices.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let (in_h, in_w) = (net.spec().input_shape[0], net.spec().input_shape[1]);
    let mut samples = Vec::with_capacity(corpus.len());
    for (img, label) in corpus {
        let class = encoder.encode(label).ok_or_else(|| TrainError::UnknownLabel {
            label: label.clone(),
        })?;
        samples.push((img, class));
    }
    evaluate(net, &samples, indices, in_h, in_w)
}

/// Write history rows as CSV: `epoch,lr,train_loss,val_loss,val_acc`.
pub fn write_history_csv(path: impl AsRef<Path>, history: &[EpochStats]) -> Result<(), TrainError> {
    let path = path.as_ref();
    let mut out = String::from("epoch,lr,train_loss,val_loss,val_acc\n");
    for row in history {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.epoch, row.lr, row.train_loss, row.val_loss, row.val_acc
        ));
    }
    std::fs::write(path, out).map_err(|e| TrainError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

// ---------------------------------------------------------------------------
// Detector-head training
// ---------------------------------------------------------------------------

/// One training sample for a detection head: pooled backbone features plus
/// the box target, or `None` for a background (no-object) sample.
pub struct DetectSample {
    pub pooled: Tensor,
    pub bbox: Option<BBox>,
}

#[derive(Debug, Clone)]
pub struct HeadTrainConfig {
    pub lr: f32,
    /// Per-epoch learning-rate multiplier; 1 keeps the rate constant.
    pub lr_decay: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for HeadTrainConfig {
    fn default() -> Self {
        HeadTrainConfig {
            lr: 2e-3,
            lr_decay: 1.0,
            epochs: 200,
            batch_size: 16,
            seed: 0,
        }
    }
}

/// Train both head branches jointly: object/background cross-entropy on
/// every sample plus box-coordinate MSE on object samples, unit weights.
/// Returns the head and the per-epoch mean combined loss.
pub fn train_detector_head(
    feature_dim: usize,
    stage: Stage,
    samples: &[DetectSample],
    config: &HeadTrainConfig,
) -> Result<(DetectorHead, Vec<f32>), TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(TrainError::BadConfig {
            detail: "epochs and batch_size must be positive".into(),
        });
    }
    if !(config.lr_decay > 0.0 && config.lr_decay <= 1.0) {
        return Err(TrainError::BadConfig {
            detail: format!("lr_decay {} must be in (0, 1]", config.lr_decay),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 0xD7, 0));
    let mut head = DetectorHead::init(feature_dim, stage, &mut rng)
        .map_err(|e| TrainError::BadConfig {
            detail: format!("head init failed: {e}"),
        })?;
    let mut cls_opt = Optimizer::adam(config.lr);
    let mut box_opt = Optimizer::adam(config.lr);
    let mut losses = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut epoch_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, epoch as u64, 2));
        order.shuffle(&mut epoch_rng);

        let mut loss_sum = 0.0f64;
        for batch in order.chunks(config.batch_size) {
            let mut cls_acc = Gradients::zeros_like(&head.class_net);
            let mut box_acc = Gradients::zeros_like(&head.bbox_net);
            let scale = 1.0 / batch.len() as f32;
            for &idx in batch {
                let sample = &samples[idx];
                let mut srng = ChaCha8Rng::seed_from_u64(mix_seed(
                    config.seed,
                    epoch as u64,
                    0x1000 + idx as u64,
                ));
                let class = usize::from(sample.bbox.is_none()); // 0 = object
                let trace = head.class_net.forward_trace(&sample.pooled, &mut srng)?;
                let probs = trace.output();
                let mut loss = cross_entropy(probs, class);
                let (_, grads) = head
                    .class_net
                    .backward(&trace, &cross_entropy_grad(probs, class))?;
                cls_acc.add_scaled(&grads, scale);

                if let Some(bbox) = sample.bbox {
                    let target = Tensor::new(vec![4], bbox.coords().to_vec())
                        .map_err(NnError::from)?;
                    let trace = head.bbox_net.forward_trace(&sample.pooled, &mut srng)?;
                    let pred = trace.output();
                    loss += mse(pred, &target);
                    let (_, grads) = head.bbox_net.backward(&trace, &mse_grad(pred, &target))?;
                    box_acc.add_scaled(&grads, scale);
                }
                loss_sum += loss as f64;
            }
            let mut params = head.class_net.param_tensors_mut();
            cls_opt.step(&mut params, &cls_acc);
            let mut params = head.bbox_net.param_tensors_mut();
            box_opt.step(&mut params, &box_acc);
        }
        losses.push((loss_sum / samples.len() as f64) as f32);
        if config.lr_decay < 1.0 {
            cls_opt.set_lr(cls_opt.lr() * config.lr_decay);
            box_opt.set_lr(box_opt.lr() * config.lr_decay);
        }
    }
    Ok((head, losses))
}

// ---------------------------------------------------------------------------
// Gradient verification
// ---------------------------------------------------------------------------

/// Evaluate the network forward in shadow double precision (dropout inert),
/// given parameter values as f64 vectors aligned with the network's
/// parameter order. Used as the finite-difference baseline, independent of
/// the f32 execution path.
fn forward_f64(net: &Network, params: &[Vec<f64>], input: &[f64]) -> Vec<f64> {
    use crate::nn::LayerSpec;
    let spec = net.spec();
    let mut shape: Vec<usize> = spec.input_shape.clone();
    let mut data: Vec<f64> = input.to_vec();
    let mut p = 0usize;

    for layer in &spec.layers {
        match layer {
            LayerSpec::Conv { kh, kw, out_channels } => {
                let (h, w, cin) = (shape[0], shape[1], shape[2]);
                let (oh, ow, co) = (h - kh + 1, w - kw + 1, *out_channels);
                let kernel = &params[p];
                let bias = &params[p + 1];
                p += 2;
                let mut out = vec![0.0f64; oh * ow * co];
                for oy in 0..oh {
                    for ox in 0..ow {
                        for oc in 0..co {
                            let mut acc = bias[oc];
                            for ky in 0..*kh {
                                for kx in 0..*kw {
                                    for ic in 0..cin {
                                        let iv = data[((oy + ky) * w + (ox + kx)) * cin + ic];
                                        let kv = kernel
                                            [((ky * kw + kx) * cin + ic) * co + oc];
                                        acc += iv * kv;
                                    }
                                }
                            }
                            out[(oy * ow + ox) * co + oc] = acc;
                        }
                    }
                }
                shape = vec![oh, ow, co];
                data = out;
            }
            LayerSpec::MaxPool2 => {
                let (h, w, c) = (shape[0], shape[1], shape[2]);
                let (oh, ow) = (h / 2, w / 2);
                let mut out = vec![0.0f64; oh * ow * c];
                for oy in 0..oh {
                    for ox in 0..ow {
                        for ch in 0..c {
                            let mut best = f64::NEG_INFINITY;
                            for dy in 0..2 {
                                for dx in 0..2 {
                                    let v = data[((oy * 2 + dy) * w + ox * 2 + dx) * c + ch];
                                    best = best.max(v);
                                }
                            }
                            out[(oy * ow + ox) * c + ch] = best;
                        }
                    }
                }
                shape = vec![oh, ow, c];
                data = out;
            }
            LayerSpec::Dense { units } => {
                let m = shape[0];
                let weights = &params[p];
                let bias = &params[p + 1];
                p += 2;
                let mut out = vec![0.0f64; *units];
                for (i, &v) in data.iter().enumerate() {
                    for (j, o) in out.iter_mut().enumerate() {
                        *o += v * weights[i * units + j];
                    }
                }
                for (j, o) in out.iter_mut().enumerate() {
                    *o += bias[j];
                }
                let _ = m;
                shape = vec![*units];
                data = out;
            }
            LayerSpec::Relu => {
                for v in &mut data {
                    *v = v.max(0.0);
                }
            }
            LayerSpec::Softmax => {
                let peak = data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in &mut data {
                    *v = (*v - peak).exp();
                    sum += *v;
                }
                for v in &mut data {
                    *v /= sum;
                }
            }
            LayerSpec::Flatten => {
                shape = vec![shape.iter().product()];
            }
            LayerSpec::GlobalAvgPool => {
                let (h, w, c) = (shape[0], shape[1], shape[2]);
                let mut out = vec![0.0f64; c];
                for (i, &v) in data.iter().enumerate() {
                    out[i % c] += v;
                }
                for o in &mut out {
                    *o /= (h * w) as f64;
                }
                shape = vec![c];
                data = out;
            }
            LayerSpec::Dropout { .. } => {} // inert at evaluation
        }
    }
    data
}

fn ce_f64(probs: &[f64], target: usize) -> f64 {
    -probs[target].max(1e-300).ln()
}

/// Compare analytic parameter gradients against central finite differences
/// of a double-precision shadow forward pass, on `coords` randomly sampled
/// parameter coordinates. Returns the largest relative error. Dropout plays
/// no part (evaluation subnetwork), so the check is deterministic in `seed`.
pub fn gradient_check(
    spec: &NetworkSpec,
    input: &Tensor,
    target: usize,
    coords: usize,
    seed: u64,
) -> Result<f64, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Network::init(spec.clone(), &mut rng)?;

    let trace = net.forward_trace_eval(input)?;
    let probs = trace.output();
    let (_, analytic) = net.backward(&trace, &cross_entropy_grad(probs, target))?;

    let params_f64: Vec<Vec<f64>> = net
        .param_tensors()
        .iter()
        .map(|t| t.data().iter().map(|&v| v as f64).collect())
        .collect();
    let input_f64: Vec<f64> = input.data().iter().map(|&v| v as f64).collect();

    let total: usize = params_f64.iter().map(|p| p.len()).sum();
    if total == 0 {
        return Err(TrainError::BadConfig {
            detail: "network has no parameters to check".into(),
        });
    }
    let mut worst = 0.0f64;
    for _ in 0..coords {
        let flat = rng.random_range(0..total);
        let (mut tensor_idx, mut offset) = (0usize, flat);
        while offset >= params_f64[tensor_idx].len() {
            offset -= params_f64[tensor_idx].len();
            tensor_idx += 1;
        }
        let base = params_f64[tensor_idx][offset];
        let h = 1e-4 * base.abs().max(1.0);

        let mut shifted = params_f64.clone();
        shifted[tensor_idx][offset] = base + h;
        let plus = ce_f64(&forward_f64(&net, &shifted, &input_f64), target);
        shifted[tensor_idx][offset] = base - h;
        let minus = ce_f64(&forward_f64(&net, &shifted, &input_f64), target);
        let fd = (plus - minus) / (2.0 * h);

        let a = analytic.0[tensor_idx].data()[offset] as f64;
        let denom = a.abs().max(fd.abs()).max(1e-3);
        worst = worst.max((a - fd).abs() / denom);
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// Corpus loading
// ---------------------------------------------------------------------------

/// Load a directory-of-PGM corpus: every subdirectory is a class label and
/// every `.pgm`/`.ppm` file inside is one sample. Deterministic order
/// (labels sorted, then file names).
pub fn load_pgm_corpus(dir: impl AsRef<Path>) -> Result<Vec<LabeledImage>, TrainError> {
    let dir = dir.as_ref();
    let io_err = |e: std::io::Error| TrainError::Io {
        path: dir.display().to_string(),
        source: e,
    };
    let mut labels: Vec<(String, std::path::PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err)? {
        let entry = entry.map_err(io_err)?;
        if entry.file_type().map_err(io_err)?.is_dir() {
            labels.push((entry.file_name().to_string_lossy().into_owned(), entry.path()));
        }
    }
    labels.sort();
    let mut corpus = Vec::new();
    for (label, path) in labels {
        let mut files: Vec<std::path::PathBuf> = std::fs::read_dir(&path)
            .map_err(io_err)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("pgm") | Some("ppm") | Some("pnm")
                )
            })
            .collect();
        files.sort();
        for file in files {
            corpus.push((load_pnm(&file)?, label.clone()));
        }
    }
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    Ok(corpus)
}
