//! End-to-end frame-stream orchestration: configuration, model loading, the
//! vehicle → plate → characters cascade with per-frame error capture,
//! sequential and stage-pipelined streaming with JSON-lines output, timing
//! statistics, a raw frame-sequence container, and the character-count
//! benchmark report.

use crate::detector::{crop, detect, BBox, Detection, DetectorHead, FeatureProvider, Stage, ToyBackbone};
use crate::image::{load_frame, load_frameseq, GrayImage};
use crate::nn::{ocr_spec, weights, Network};
use crate::ocr::{recognize_plate, CharClassSet, OcrConfig, PlateReading, Segmenter};
use crate::segment::{CropParams, RsfParams};
use crate::wordmap::{load_table, WordMapTable};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;
use thiserror::Error;

/// Pipeline failures, split by exit-code class: configuration problems
/// (missing or invalid config/model files) versus data problems (missing or
/// unreadable input sources).
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {detail}")]
    Config { detail: String },
    #[error("data: {detail}")]
    Data { detail: String },
}

impl PipelineError {
    pub fn config(detail: impl Into<String>) -> PipelineError {
        PipelineError::Config {
            detail: detail.into(),
        }
    }

    pub fn data(detail: impl Into<String>) -> PipelineError {
        PipelineError::Data {
            detail: detail.into(),
        }
    }

    /// CLI exit code for this failure class (0 is success).
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config { .. } => 1,
            PipelineError::Data { .. } => 2,
        }
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Weight, class-map, and word-map locations, relative to the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub vehicle_head: String,
    pub plate_head: String,
    pub ocr_net: String,
    pub class_map: String,
    pub word_map: String,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            vehicle_head: "vehicle_head.blpw".into(),
            plate_head: "plate_head.blpw".into(),
            ocr_net: "ocr_net.blpw".into(),
            class_map: "classmap.txt".into(),
            word_map: "wordmap.tsv".into(),
        }
    }
}

/// Detection-stage knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    /// Minimum object probability to accept a vehicle detection.
    pub vehicle_threshold: f32,
    /// Minimum object probability to accept a plate detection.
    pub plate_threshold: f32,
    /// Detected boxes are grown by this fraction per side before cropping,
    /// so a slightly tight box still contains the full object.
    pub crop_pad_frac: f32,
    /// Seed of the deterministic convolutional feature extractor.
    pub backbone_seed: u64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            vehicle_threshold: 0.5,
            plate_threshold: 0.5,
            crop_pad_frac: 0.08,
            backbone_seed: 7,
        }
    }
}

/// Which segmentation model the reading loop may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SegmenterChoice {
    #[serde(rename = "cv+rsf")]
    #[default]
    CvThenRsf,
    #[serde(rename = "cv")]
    Cv,
    #[serde(rename = "rsf")]
    Rsf,
}

impl From<SegmenterChoice> for Segmenter {
    fn from(choice: SegmenterChoice) -> Segmenter {
        match choice {
            SegmenterChoice::CvThenRsf => Segmenter::CvThenRsf,
            SegmenterChoice::Cv => Segmenter::CvOnly,
            SegmenterChoice::Rsf => Segmenter::RsfOnly,
        }
    }
}

/// Plate-reading knobs (see [`OcrConfig`] for semantics).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReadConfig {
    pub sharpness_threshold: f32,
    pub min_chars: usize,
    pub max_retries: usize,
    pub lambda: f32,
    pub lambda_decay: f32,
    pub fista_iters: usize,
    /// Side length of the square character crops fed to the recognizer.
    pub crop_size: usize,
    pub segmenter: SegmenterChoice,
    /// Gaussian-window scale of the local-statistics segmenter.
    pub rsf_sigma: f32,
    /// Iteration cap for the global two-phase segmenter.
    pub cv_iters: usize,
    /// Iteration cap for the local-statistics segmenter.
    pub rsf_iters: usize,
}

impl Default for ReadConfig {
    fn default() -> Self {
        let ocr = OcrConfig::default();
        ReadConfig {
            sharpness_threshold: ocr.sharpness_threshold,
            min_chars: ocr.min_chars,
            max_retries: ocr.max_retries,
            lambda: ocr.lambda,
            lambda_decay: ocr.lambda_decay,
            fista_iters: ocr.fista_iters,
            crop_size: ocr.crop.out_size,
            segmenter: SegmenterChoice::default(),
            rsf_sigma: ocr.rsf.sigma,
            cv_iters: ocr.cv.max_iters,
            rsf_iters: ocr.rsf.max_iters,
        }
    }
}

impl ReadConfig {
    /// Expand into the full reading configuration.
    pub fn to_ocr_config(&self) -> OcrConfig {
        let defaults = OcrConfig::default();
        OcrConfig {
            sharpness_threshold: self.sharpness_threshold,
            min_chars: self.min_chars,
            max_retries: self.max_retries,
            lambda: self.lambda,
            lambda_decay: self.lambda_decay,
            fista_iters: self.fista_iters,
            segmenter: self.segmenter.into(),
            crop: CropParams {
                out_size: self.crop_size,
                ..CropParams::default()
            },
            cv: crate::segment::ContourParams {
                max_iters: self.cv_iters,
                ..defaults.cv
            },
            rsf: RsfParams {
                sigma: self.rsf_sigma,
                max_iters: self.rsf_iters,
                ..defaults.rsf
            },
        }
    }
}

/// Streaming knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    /// Bounded queue depth between the detect and recognize stages.
    pub queue_depth: usize,
    /// Zero all emitted timings so repeat runs are byte-identical.
    pub deterministic: bool,
    pub seed: u64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            queue_depth: 4,
            deterministic: false,
            seed: 0,
        }
    }
}

/// Full pipeline configuration, stored as TOML.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub detect: DetectConfig,
    pub read: ReadConfig,
    pub stream: StreamConfig,
}

impl PipelineConfig {
    /// Parse and validate a TOML config file.
    pub fn load(path: impl AsRef<Path>) -> Result<PipelineConfig, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::config(format!("{}: {e}", path.display())))?;
        let config: PipelineConfig = toml::from_str(&text)
            .map_err(|e| PipelineError::config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        for (name, v) in [
            ("vehicle_threshold", self.detect.vehicle_threshold),
            ("plate_threshold", self.detect.plate_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(PipelineError::config(format!(
                    "{name} {v} must lie in [0, 1]"
                )));
            }
        }
        if !(self.detect.crop_pad_frac.is_finite() && self.detect.crop_pad_frac >= 0.0) {
            return Err(PipelineError::config("crop_pad_frac must be non-negative"));
        }
        if self.stream.queue_depth == 0 {
            return Err(PipelineError::config("queue_depth must be at least 1"));
        }
        self.read
            .to_ocr_config()
            .validate()
            .map_err(|e| PipelineError::config(e.to_string()))?;
        Ok(())
    }

    /// Serialize back to TOML (used when generating demo kits).
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

/// Everything the cascade needs in memory, loaded and validated up front.
pub struct Models {
    pub backbone: ToyBackbone,
    pub vehicle_head: DetectorHead,
    pub plate_head: DetectorHead,
    pub ocr_net: Network,
    pub classes: CharClassSet,
    pub table: WordMapTable,
}

impl Models {
    /// Load every referenced file, resolving relative paths against
    /// `base_dir` (normally the config file's directory). Any missing or
    /// malformed file is a config error.
    pub fn load(config: &PipelineConfig, base_dir: &Path) -> Result<Models, PipelineError> {
        let resolve = |rel: &str| -> PathBuf {
            let p = Path::new(rel);
            if p.is_absolute() {
                p.to_path_buf()
            } else {
                base_dir.join(p)
            }
        };
        let cfg_err = |what: &str, e: &dyn std::fmt::Display| {
            PipelineError::config(format!("{what}: {e}"))
        };

        let backbone = ToyBackbone::new(config.detect.backbone_seed);
        let feature_dim = backbone.shape()[2];
        let vehicle_head = DetectorHead::load(
            resolve(&config.paths.vehicle_head),
            feature_dim,
            Stage::Vehicle,
        )
        .map_err(|e| cfg_err("vehicle head", &e))?;
        let plate_head =
            DetectorHead::load(resolve(&config.paths.plate_head), feature_dim, Stage::Plate)
                .map_err(|e| cfg_err("plate head", &e))?;

        let classes = CharClassSet::load(resolve(&config.paths.class_map))
            .map_err(|e| cfg_err("class map", &e))?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ocr_net = Network::init(ocr_spec(classes.len()), &mut rng)
            .map_err(|e| cfg_err("recognizer spec", &e))?;
        weights::load_network(resolve(&config.paths.ocr_net), &mut ocr_net)
            .map_err(|e| cfg_err("recognizer weights", &e))?;

        let table =
            load_table(resolve(&config.paths.word_map)).map_err(|e| cfg_err("word map", &e))?;

        Ok(Models {
            backbone,
            vehicle_head,
            plate_head,
            ocr_net,
            classes,
            table,
        })
    }
}

// ---------------------------------------------------------------------------
// Per-frame processing
// ---------------------------------------------------------------------------

/// Wall-clock milliseconds per cascade stage for one frame.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FrameTimings {
    pub vehicle_ms: f64,
    pub plate_ms: f64,
    pub read_ms: f64,
    pub total_ms: f64,
}

/// The cascade's output for one frame. The structural invariant holds by
/// construction: a plate detection is only ever produced from a vehicle
/// crop, and a reading only from a plate crop.
#[derive(Debug, Clone, Default)]
pub struct FrameResult {
    pub frame: usize,
    pub vehicle: Option<Detection>,
    /// Plate detection with its box re-normalized to frame coordinates.
    pub plate: Option<Detection>,
    pub reading: Option<PlateReading>,
    pub timings: FrameTimings,
    /// Per-frame failure (decode error, degenerate crop, ...); the stream
    /// continues past it.
    pub error: Option<String>,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Map a box expressed inside `outer` (crop-normalized) back to the outer
/// coordinate frame.
fn denormalize(inner: &BBox, outer: &BBox) -> BBox {
    let [ox0, oy0, _, _] = outer.coords();
    let (ow, oh) = (outer.width(), outer.height());
    let [x0, y0, x1, y1] = inner.coords();
    BBox::from_raw([ox0 + x0 * ow, oy0 + y0 * oh, ox0 + x1 * ow, oy0 + y1 * oh])
}

/// Run the full cascade on one frame: vehicle detect → crop → plate detect
/// → crop → plate reading. Any stage yielding nothing short-circuits the
/// rest; any stage error is captured on the result, never propagated.
pub fn process_frame(
    image: &GrayImage,
    models: &Models,
    config: &PipelineConfig,
    frame: usize,
) -> FrameResult {
    let input = FrameInput::Image(image.clone());
    let hand = detect_stage(&input, frame, models, config);
    read_stage(hand, models, config)
}

// ---------------------------------------------------------------------------
// JSON-lines serialization
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct JsonChar<'a> {
    label: &'a str,
    conf: f32,
}

#[derive(Serialize)]
struct JsonTimings {
    vehicle_ms: f64,
    plate_ms: f64,
    read_ms: f64,
    total_ms: f64,
}

#[derive(Serialize)]
struct JsonLine<'a> {
    frame: usize,
    vehicle_bbox: Option<[f32; 4]>,
    plate_bbox: Option<[f32; 4]>,
    chars: Vec<JsonChar<'a>>,
    plate_string: Option<&'a str>,
    timings_ms: JsonTimings,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

/// Render one result as a JSON-lines record (no trailing newline). With
/// `zero_timings` every timing field is 0, making repeat runs byte-identical.
pub fn to_json_line(result: &FrameResult, zero_timings: bool) -> String {
    let t = if zero_timings {
        JsonTimings {
            vehicle_ms: 0.0,
            plate_ms: 0.0,
            read_ms: 0.0,
            total_ms: 0.0,
        }
    } else {
        JsonTimings {
            vehicle_ms: result.timings.vehicle_ms,
            plate_ms: result.timings.plate_ms,
            read_ms: result.timings.read_ms,
            total_ms: result.timings.total_ms,
        }
    };
    let line = JsonLine {
        frame: result.frame,
        vehicle_bbox: result.vehicle.as_ref().map(|d| d.bbox.coords()),
        plate_bbox: result.plate.as_ref().map(|d| d.bbox.coords()),
        chars: result
            .reading
            .iter()
            .flat_map(|r| r.chars.iter())
            .map(|c| JsonChar {
                label: &c.label,
                conf: c.confidence,
            })
            .collect(),
        plate_string: result.reading.as_ref().map(|r| r.plate_string.as_str()),
        timings_ms: t,
        error: result.error.as_deref(),
    };
    serde_json::to_string(&line).expect("frame result serializes")
}

// ---------------------------------------------------------------------------
// Frame sources
// ---------------------------------------------------------------------------

/// A frame input: either a file to decode or an in-memory frame.
enum FrameInput {
    File(PathBuf),
    Image(GrayImage),
}

/// Where frames come from: a directory of numbered images, or a single raw
/// frame-sequence file.
#[derive(Debug, Clone)]
pub enum FrameSource {
    Directory(PathBuf),
    RawSequence(PathBuf),
}

impl FrameSource {
    /// Classify a source path. Missing paths are data errors.
    pub fn open(path: impl AsRef<Path>) -> Result<FrameSource, PipelineError> {
        let path = path.as_ref();
        if path.is_dir() {
            Ok(FrameSource::Directory(path.to_path_buf()))
        } else if path.is_file() {
            Ok(FrameSource::RawSequence(path.to_path_buf()))
        } else {
            Err(PipelineError::data(format!(
                "source {} does not exist",
                path.display()
            )))
        }
    }

    /// Materialize the ordered frame list (directory entries sorted by name).
    fn inputs(&self) -> Result<Vec<FrameInput>, PipelineError> {
        match self {
            FrameSource::Directory(dir) => {
                let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
                    .map_err(|e| PipelineError::data(format!("{}: {e}", dir.display())))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| {
                        matches!(
                            p.extension().and_then(|e| e.to_str()),
                            Some("pgm") | Some("ppm") | Some("pnm") | Some("png")
                        )
                    })
                    .collect();
                paths.sort();
                Ok(paths.into_iter().map(FrameInput::File).collect())
            }
            FrameSource::RawSequence(path) => Ok(load_frameseq(path)
                .map_err(|e| PipelineError::data(e.to_string()))?
                .into_iter()
                .map(FrameInput::Image)
                .collect()),
        }
    }
}

// ---------------------------------------------------------------------------
// Streaming
// ---------------------------------------------------------------------------

/// Whether frames flow through one loop or through the two-stage pipeline
/// with a bounded queue between detect and recognize.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Sequential,
    Pipelined,
}

/// Latency summary for one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageStat {
    pub name: &'static str,
    pub mean_ms: f64,
    pub p95_ms: f64,
}

/// Stream-level throughput report.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingStats {
    pub frames: usize,
    pub elapsed_s: f64,
    /// Frames per wall-clock second; `None` when no frames were processed.
    pub fps: Option<f64>,
    pub stages: Vec<StageStat>,
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

impl TimingStats {
    fn from_timings(timings: &[FrameTimings], elapsed_s: f64) -> TimingStats {
        let frames = timings.len();
        let fps = (frames > 0).then(|| frames as f64 / elapsed_s.max(1e-12));
        let mut stages = Vec::new();
        let pick: [(&'static str, fn(&FrameTimings) -> f64); 4] = [
            ("vehicle", |t| t.vehicle_ms),
            ("plate", |t| t.plate_ms),
            ("read", |t| t.read_ms),
            ("total", |t| t.total_ms),
        ];
        for (name, get) in pick {
            let mut values: Vec<f64> = timings.iter().map(get).collect();
            values.sort_by(f64::total_cmp);
            let mean = if values.is_empty() {
                0.0
            } else {
                values.iter().sum::<f64>() / values.len() as f64
            };
            stages.push(StageStat {
                name,
                mean_ms: mean,
                p95_ms: percentile(&values, 0.95),
            });
        }
        TimingStats {
            frames,
            elapsed_s,
            fps,
            stages,
        }
    }

    /// Human-readable multi-line summary.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "frames: {}   elapsed: {:.3} s   fps: {}\n",
            self.frames,
            self.elapsed_s,
            match self.fps {
                Some(f) => format!("{f:.2}"),
                None => "undefined (no frames)".to_string(),
            }
        ));
        out.push_str("stage      mean ms      p95 ms\n");
        for s in &self.stages {
            out.push_str(&format!("{:<9} {:>9.3} {:>11.3}\n", s.name, s.mean_ms, s.p95_ms));
        }
        out
    }
}

/// What the detect stage hands the recognize stage in pipelined mode.
struct DetectHandoff {
    frame: usize,
    vehicle: Option<Detection>,
    plate: Option<Detection>,
    /// Plate crop awaiting recognition (present only with a plate detection).
    plate_crop: Option<GrayImage>,
    timings: FrameTimings,
    error: Option<String>,
}

/// Decode + detect for pipelined mode: everything up to (not including) the
/// plate reading.
fn detect_stage(
    input: &FrameInput,
    frame: usize,
    models: &Models,
    config: &PipelineConfig,
) -> DetectHandoff {
    let mut hand = DetectHandoff {
        frame,
        vehicle: None,
        plate: None,
        plate_crop: None,
        timings: FrameTimings::default(),
        error: None,
    };
    let t_total = Instant::now();
    let image = match input {
        FrameInput::Image(img) => img.clone(),
        FrameInput::File(path) => match load_frame(path) {
            Ok(img) => img,
            Err(e) => {
                hand.error = Some(format!("decode: {e}"));
                hand.timings.total_ms = ms(t_total);
                return hand;
            }
        },
    };

    let t = Instant::now();
    let vehicle = detect(
        &image,
        &models.backbone,
        &models.vehicle_head,
        config.detect.vehicle_threshold,
    );
    hand.timings.vehicle_ms = ms(t);
    let vehicle = match vehicle {
        Ok(Some(v)) => v,
        Ok(None) => {
            hand.timings.total_ms = ms(t_total);
            return hand;
        }
        Err(e) => {
            hand.error = Some(format!("vehicle stage: {e}"));
            hand.timings.total_ms = ms(t_total);
            return hand;
        }
    };
    let vehicle_box = vehicle.bbox.padded(config.detect.crop_pad_frac);
    hand.vehicle = Some(vehicle);

    let t = Instant::now();
    let plate_result = crop(&image, &vehicle_box).and_then(|vehicle_crop| {
        let plate = detect(
            &vehicle_crop,
            &models.backbone,
            &models.plate_head,
            config.detect.plate_threshold,
        )?;
        Ok(plate.map(|p| (vehicle_crop, p)))
    });
    hand.timings.plate_ms = ms(t);
    match plate_result {
        Ok(Some((vehicle_crop, plate))) => {
            hand.plate = Some(Detection {
                bbox: denormalize(&plate.bbox, &vehicle_box),
                class_probs: plate.class_probs,
                stage: Stage::Plate,
            });
            match crop(&vehicle_crop, &plate.bbox.padded(config.detect.crop_pad_frac)) {
                Ok(plate_crop) => hand.plate_crop = Some(plate_crop),
                Err(e) => hand.error = Some(format!("read stage: {e}")),
            }
        }
        Ok(None) => {}
        Err(e) => hand.error = Some(format!("plate stage: {e}")),
    }
    hand.timings.total_ms = ms(t_total);
    hand
}

/// Recognize stage for pipelined mode: consume a handoff, produce the result.
fn read_stage(hand: DetectHandoff, models: &Models, config: &PipelineConfig) -> FrameResult {
    let mut out = FrameResult {
        frame: hand.frame,
        vehicle: hand.vehicle,
        plate: hand.plate,
        reading: None,
        timings: hand.timings,
        error: hand.error,
    };
    if let Some(plate_crop) = hand.plate_crop {
        let t = Instant::now();
        match recognize_plate(
            &plate_crop,
            &models.ocr_net,
            &models.classes,
            &models.table,
            &config.read.to_ocr_config(),
        ) {
            Ok(r) => out.reading = Some(r),
            Err(e) => out.error = Some(format!("read stage: {e}")),
        }
        out.timings.read_ms = ms(t);
        out.timings.total_ms += out.timings.read_ms;
    }
    out
}

/// Process a frame source end to end, writing one JSON line per frame to
/// `out` in frame order, and return the closing throughput statistics.
/// Results are identical between modes; only timings differ.
pub fn run_stream(
    source: &FrameSource,
    models: &Models,
    config: &PipelineConfig,
    mode: RunMode,
    out: &mut dyn Write,
) -> Result<TimingStats, PipelineError> {
    let inputs = source.inputs()?;
    let zero = config.stream.deterministic;
    let io_err = |e: std::io::Error| PipelineError::data(format!("writing results: {e}"));
    let started = Instant::now();
    let mut timings = Vec::with_capacity(inputs.len());

    match mode {
        RunMode::Sequential => {
            for (frame, input) in inputs.iter().enumerate() {
                let hand = detect_stage(input, frame, models, config);
                let result = read_stage(hand, models, config);
                writeln!(out, "{}", to_json_line(&result, zero)).map_err(io_err)?;
                timings.push(result.timings);
            }
        }
        RunMode::Pipelined => {
            let depth = config.stream.queue_depth;
            std::thread::scope(|scope| -> Result<(), PipelineError> {
                let (tx, rx) = mpsc::sync_channel::<DetectHandoff>(depth);
                let inputs_ref = &inputs;
                scope.spawn(move || {
                    for (frame, input) in inputs_ref.iter().enumerate() {
                        let hand = detect_stage(input, frame, models, config);
                        if tx.send(hand).is_err() {
                            break;
                        }
                    }
                });
                for hand in rx {
                    let result = read_stage(hand, models, config);
                    writeln!(out, "{}", to_json_line(&result, zero)).map_err(io_err)?;
                    timings.push(result.timings);
                }
                Ok(())
            })?;
        }
    }
    Ok(TimingStats::from_timings(&timings, started.elapsed().as_secs_f64()))
}

// ---------------------------------------------------------------------------
// Benchmark
// ---------------------------------------------------------------------------

/// One benchmark table row: a segmentation model at a character count.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub model: &'static str,
    pub chars: usize,
    pub plates: usize,
    pub char_hits: usize,
    pub char_total: usize,
    pub accuracy_pct: f64,
    pub mean_time_s: f64,
}

/// The benchmark report: per-model, per-character-count accuracy and time.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

/// Reference-hardware annotations printed with the table. The reference
/// table lists per-plate OCR times between 0.256 s (4 characters) and
/// 0.502 s (8 characters) and a vehicle-detection validation MSE of 0.0152;
/// hardware and datasets differ, so these are context, not targets.
pub const REFERENCE_NOTES: &[&str] = &[
    "reference (original hardware): RSF 4 chars 95% 0.256 s, 8 chars 74% 0.502 s",
    "reference vehicle-detection validation MSE: 0.0152",
];

impl BenchReport {
    /// Render the table with the reference annotations.
    pub fn render(&self) -> String {
        let mut out = String::from("model  chars  plates  accuracy%  mean_time_s\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<5} {:>6} {:>7} {:>10.1} {:>12.3}\n",
                r.model, r.chars, r.plates, r.accuracy_pct, r.mean_time_s
            ));
        }
        for note in REFERENCE_NOTES {
            out.push_str("# ");
            out.push_str(note);
            out.push('\n');
        }
        out
    }
}

/// A labeled benchmark fixture: plate image path plus true labels in
/// reading order.
#[derive(Debug, Clone)]
pub struct BenchFixture {
    pub path: PathBuf,
    pub labels: Vec<String>,
}

/// Read a fixture manifest: `truth.tsv` inside `dir`, each line
/// `relative-path<TAB>space-separated-labels`, `#` comments allowed.
pub fn load_bench_fixtures(dir: impl AsRef<Path>) -> Result<Vec<BenchFixture>, PipelineError> {
    let dir = dir.as_ref();
    let manifest = dir.join("truth.tsv");
    let text = std::fs::read_to_string(&manifest)
        .map_err(|e| PipelineError::data(format!("{}: {e}", manifest.display())))?;
    let mut fixtures = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((rel, labels)) = line.split_once('\t') else {
            return Err(PipelineError::data(format!(
                "{}: line {} is not `path<TAB>labels`",
                manifest.display(),
                idx + 1
            )));
        };
        let labels: Vec<String> = labels.split_whitespace().map(str::to_string).collect();
        if labels.is_empty() {
            return Err(PipelineError::data(format!(
                "{}: line {} has no labels",
                manifest.display(),
                idx + 1
            )));
        }
        fixtures.push(BenchFixture {
            path: dir.join(rel),
            labels,
        });
    }
    Ok(fixtures)
}

/// Run both segmentation models over the fixture plates and tabulate
/// per-character accuracy and mean per-plate reading time by character
/// count. Accuracy counts position-aligned label matches against the truth.
pub fn benchmark(
    fixtures: &[BenchFixture],
    models: &Models,
    config: &PipelineConfig,
) -> Result<BenchReport, PipelineError> {
    struct Bucket {
        plates: usize,
        hits: usize,
        total: usize,
        time_s: f64,
    }
    let mut rows = Vec::new();
    for (model_name, segmenter) in [("CV", SegmenterChoice::Cv), ("RSF", SegmenterChoice::Rsf)] {
        let read_config = ReadConfig {
            segmenter,
            ..config.read.clone()
        };
        let ocr_config = read_config.to_ocr_config();
        let mut buckets: Vec<(usize, Bucket)> = Vec::new();
        for fixture in fixtures {
            let image = load_frame(&fixture.path)
                .map_err(|e| PipelineError::data(format!("{}: {e}", fixture.path.display())))?;
            let t = Instant::now();
            let reading = recognize_plate(
                &image,
                &models.ocr_net,
                &models.classes,
                &models.table,
                &ocr_config,
            )
            .map_err(|e| PipelineError::data(format!("{}: {e}", fixture.path.display())))?;
            let elapsed = t.elapsed().as_secs_f64();

            let hits = reading
                .chars
                .iter()
                .zip(&fixture.labels)
                .filter(|(rec, truth)| rec.label == **truth)
                .count();
            let count = fixture.labels.len();
            let bucket = match buckets.iter_mut().find(|(c, _)| *c == count) {
                Some((_, b)) => b,
                None => {
                    buckets.push((
                        count,
                        Bucket {
                            plates: 0,
                            hits: 0,
                            total: 0,
                            time_s: 0.0,
                        },
                    ));
                    &mut buckets.last_mut().unwrap().1
                }
            };
            bucket.plates += 1;
            bucket.hits += hits;
            bucket.total += count;
            bucket.time_s += elapsed;
        }
        buckets.sort_by_key(|(c, _)| *c);
        for (chars, b) in buckets {
            rows.push(BenchRow {
                model: model_name,
                chars,
                plates: b.plates,
                char_hits: b.hits,
                char_total: b.total,
                accuracy_pct: 100.0 * b.hits as f64 / b.total.max(1) as f64,
                mean_time_s: b.time_s / b.plates.max(1) as f64,
            });
        }
    }
    Ok(BenchReport { rows })
}
