//! The whole system end to end: build a self-contained demo kit (trained
//! detection heads, trained recognizer, class map, word rules, rendered
//! frame stream, benchmark fixtures, ready-to-use config), stream the
//! frames through the cascade in both execution modes, and finish with the
//! per-model accuracy/time benchmark.
//!
//! Run with: `cargo run --release --example full_pipeline`

use blpnet::kit::{build_kit, KitOptions};
use blpnet::pipeline::{
    benchmark, load_bench_fixtures, run_stream, FrameSource, Models, PipelineConfig, RunMode,
};
use std::time::Instant;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("blpnet-demo-kit");
    println!("building demo kit in {} ...", dir.display());
    let started = Instant::now();
    let paths = build_kit(&dir, &KitOptions::default())?;
    println!("kit ready in {:.1} s", started.elapsed().as_secs_f64());

    let mut config = PipelineConfig::load(&paths.config)?;
    config.stream.deterministic = true;
    let models = Models::load(&config, &dir)?;

    let source = FrameSource::open(&paths.frames_dir)?;
    let mut sequential = Vec::new();
    let stats = run_stream(&source, &models, &config, RunMode::Sequential, &mut sequential)?;
    println!("\nsequential stream:\n{}", stats.render());

    let mut pipelined = Vec::new();
    let stats = run_stream(&source, &models, &config, RunMode::Pipelined, &mut pipelined)?;
    println!("pipelined stream:\n{}", stats.render());
    println!(
        "outputs byte-identical across modes: {}",
        sequential == pipelined
    );

    let text = String::from_utf8(sequential)?;
    println!("\nfirst three results:");
    for line in text.lines().take(3) {
        println!("  {line}");
    }

    let fixtures = load_bench_fixtures(&paths.bench_dir)?;
    println!("\nbenchmark over {} labeled plates:", fixtures.len());
    let report = benchmark(&fixtures, &models, &config)?;
    println!("{}", report.render());

    println!("kit kept at {} — try the CLI against it:", dir.display());
    println!(
        "  cargo run -- detect {} --config {}",
        paths.frames_dir.display(),
        paths.config.display()
    );
    Ok(())
}
