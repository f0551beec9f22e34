//! Thin command-line front end over the library: frame-stream detection,
//! recognizer training, the character-count benchmark, parameter-count
//! reports, and a demo-kit generator. Exit codes: 0 success, 1 config
//! error, 2 data error.

use blpnet::kit::{build_kit, KitOptions};
use blpnet::nn::weights::save_network;
use blpnet::nn::{head_report, ocr_report};
use blpnet::ocr::CharClassSet;
use blpnet::pipeline::{
    benchmark, load_bench_fixtures, run_stream, FrameSource, Models, PipelineConfig,
    PipelineError, RunMode,
};
use blpnet::train::{
    classifier_metrics, load_pgm_corpus, split, train_classifier, write_history_csv,
    AugmentConfig, LabelEncoder, TrainConfig, TrainError,
};
use clap::{Parser, Subcommand};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "blpnet", version, about = "Cascaded license-plate detection and reading")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stream frames through the cascade, one JSON line per frame.
    Detect {
        /// A directory of image frames or a raw frame-sequence file.
        source: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Zero emitted timings so repeat runs are byte-identical.
        #[arg(long)]
        deterministic: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Overlap detection and recognition through a bounded queue.
        #[arg(long, conflicts_with = "sequential")]
        pipeline: bool,
        /// Process one frame at a time (the default).
        #[arg(long)]
        sequential: bool,
        /// Write JSON lines here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the character recognizer on a directory of labeled glyphs
    /// (one subdirectory per label).
    TrainOcr {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Where to save the trained weights.
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate per-model, per-character-count accuracy and reading time
    /// over labeled plate fixtures.
    Benchmark {
        /// Directory containing plate images and a `truth.tsv` manifest.
        #[arg(long)]
        fixtures: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Print a parameter-count report: `head` (detection head) or `ocr`
    /// (character recognizer).
    ParamReport {
        #[arg(long)]
        spec: String,
    },
    /// Write a self-contained demo kit: trained weights, class and word
    /// maps, a frame stream, benchmark fixtures, and a ready config.
    GenFixtures {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        frames: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// Directory against which a config file's relative paths resolve.
fn config_base(config_path: &Path) -> &Path {
    config_path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."))
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Detect {
            source,
            config,
            deterministic,
            seed,
            pipeline,
            sequential: _,
            out,
        } => {
            let mut cfg = PipelineConfig::load(&config)?;
            if deterministic {
                cfg.stream.deterministic = true;
            }
            if let Some(s) = seed {
                cfg.stream.seed = s;
            }
            let models = Models::load(&cfg, config_base(&config))?;
            let frames = FrameSource::open(&source)?;
            let mode = if pipeline {
                RunMode::Pipelined
            } else {
                RunMode::Sequential
            };
            let stats = match out {
                Some(path) => {
                    let file = std::fs::File::create(&path).map_err(|e| {
                        PipelineError::data(format!("{}: {e}", path.display()))
                    })?;
                    let mut writer = std::io::BufWriter::new(file);
                    let stats = run_stream(&frames, &models, &cfg, mode, &mut writer)?;
                    writer
                        .flush()
                        .map_err(|e| PipelineError::data(format!("{}: {e}", path.display())))?;
                    stats
                }
                None => {
                    let stdout = std::io::stdout();
                    let mut lock = stdout.lock();
                    run_stream(&frames, &models, &cfg, mode, &mut lock)?
                }
            };
            eprint!("{}", stats.render());
            Ok(())
        }
        Command::TrainOcr { data, config, out } => {
            let cfg = PipelineConfig::load(&config)?;
            let base = config_base(&config);
            let class_map = {
                let p = Path::new(&cfg.paths.class_map);
                if p.is_absolute() {
                    p.to_path_buf()
                } else {
                    base.join(p)
                }
            };
            let classes = CharClassSet::load(&class_map)
                .map_err(|e| PipelineError::config(format!("class map: {e}")))?;

            let corpus = load_pgm_corpus(&data).map_err(train_data_err)?;
            let mut parts =
                split(&corpus, &[0.8, 0.1, 0.1], cfg.stream.seed).map_err(train_data_err)?;
            parts.encoder = LabelEncoder::from_class_list(classes.labels().to_vec());

            // Desk-scale corpora are small; smaller batches and a longer
            // stall window keep the optimizer moving on a few hundred
            // samples where the stock settings would give up early.
            let train_config = TrainConfig {
                batch_size: 32,
                early_stop_patience: 8,
                seed: cfg.stream.seed,
                ..TrainConfig::default()
            };
            let aug = AugmentConfig::ocr_recipe(cfg.stream.seed);
            eprintln!(
                "training on {} samples ({} train / {} val / {} test), {} classes",
                corpus.len(),
                parts.train.len(),
                parts.val.len(),
                parts.test.len(),
                parts.encoder.len()
            );
            let outcome = train_classifier(
                blpnet::nn::ocr_spec(parts.encoder.len()),
                &corpus,
                &parts,
                &train_config,
                &aug,
            )
            .map_err(train_data_err)?;

            save_network(&out, &outcome.network)
                .map_err(|e| PipelineError::data(format!("{}: {e}", out.display())))?;
            let history_path = out.with_extension("history.csv");
            write_history_csv(&history_path, &outcome.history).map_err(train_data_err)?;

            if let Some(best) = outcome.history.get(outcome.best_epoch) {
                eprintln!(
                    "best epoch {}: val loss {:.4}, val accuracy {:.1}%",
                    best.epoch,
                    best.val_loss,
                    100.0 * best.val_acc
                );
            }
            if !parts.test.is_empty() {
                let (loss, acc) =
                    classifier_metrics(&outcome.network, &corpus, &parts.encoder, &parts.test)
                        .map_err(train_data_err)?;
                eprintln!("held-out test: loss {:.4}, accuracy {:.1}%", loss, 100.0 * acc);
            }
            if outcome.diverged {
                eprintln!("warning: training stopped early on a non-finite loss");
            }
            eprintln!("weights: {}", out.display());
            eprintln!("history: {}", history_path.display());
            Ok(())
        }
        Command::Benchmark { fixtures, config } => {
            let cfg = PipelineConfig::load(&config)?;
            let models = Models::load(&cfg, config_base(&config))?;
            let fixture_list = load_bench_fixtures(&fixtures)?;
            let report = benchmark(&fixture_list, &models, &cfg)?;
            print!("{}", report.render());
            Ok(())
        }
        Command::ParamReport { spec } => {
            let report = match spec.as_str() {
                "head" | "detector-head" => head_report(),
                "ocr" | "recognizer" => ocr_report(blpnet::ocr::NUM_CLASSES),
                other => {
                    return Err(PipelineError::config(format!(
                        "unknown spec '{other}'; expected 'head' or 'ocr'"
                    )))
                }
            }
            .map_err(|e| PipelineError::config(e.to_string()))?;
            print!("{}", report.render());
            Ok(())
        }
        Command::GenFixtures { out, frames, seed } => {
            let options = KitOptions {
                seed,
                stream_frames: frames,
                ..KitOptions::default()
            };
            let paths = build_kit(&out, &options)
                .map_err(|e| PipelineError::config(format!("building kit: {e}")))?;
            eprintln!("kit written to {}", paths.dir.display());
            eprintln!("  config:  {}", paths.config.display());
            eprintln!("  frames:  {}", paths.frames_dir.display());
            eprintln!("  stream:  {}", paths.stream_file.display());
            eprintln!("  bench:   {}", paths.bench_dir.display());
            eprintln!("  glyphs:  {}", paths.glyphs_dir.display());
            eprintln!("try: blpnet detect {} --config {}", paths.frames_dir.display(), paths.config.display());
            Ok(())
        }
    }
}

/// Training failures during CLI runs are data problems unless the knobs
/// themselves are bad.
fn train_data_err(e: TrainError) -> PipelineError {
    match e {
        TrainError::BadConfig { .. } | TrainError::BadRatios { .. } => {
            PipelineError::config(e.to_string())
        }
        other => PipelineError::data(other.to_string()),
    }
}
