//! Train the demo character recognizer, then read a clean and a motion-
//! blurred plate card through the full reading loop: sharpness gate,
//! conditional deblurring with escalating kernels, contour segmentation,
//! per-character classification, and word mapping.
//!
//! Run with: `cargo run --release --example read_plate`

use blpnet::deblur::{apply_blur, kernel_bank, sharpness};
use blpnet::kit::{train_demo_recognizer, KitOptions, DEMO_WORD_RULES};
use blpnet::ocr::{recognize_plate, CharClassSet, OcrConfig, PlateReading};
use blpnet::synth::{plate_card, standard_labels, CardSpec, GlyphSet};
use blpnet::wordmap::parse_table;
use std::time::Instant;

fn show(tag: &str, reading: &PlateReading) {
    let chars: Vec<String> = reading
        .chars
        .iter()
        .map(|c| format!("{}({:.2})", c.label, c.confidence))
        .collect();
    println!(
        "{tag}: {} -> \"{}\"  [{} retries, local fallback: {}]",
        chars.join(" "),
        reading.plate_string,
        reading.retries,
        reading.used_rsf
    );
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let options = KitOptions::default();
    let started = Instant::now();
    let (net, history) = train_demo_recognizer(&options)?;
    let last = history.last().expect("at least one epoch");
    println!(
        "recognizer trained: {} epochs, val accuracy {:.1}%, {:.1} s",
        history.len(),
        100.0 * last.val_acc,
        started.elapsed().as_secs_f64()
    );

    let classes = CharClassSet::from_labels(standard_labels())?;
    let table = parse_table(DEMO_WORD_RULES)?;

    let set = GlyphSet::standard();
    let labels = vec!["D".to_string(), "4".into(), "7".into(), "2".into()];
    let card = plate_card(&set, &[labels], &CardSpec::default())?;
    let clean = card.image;
    let blurred = apply_blur(&clean, &kernel_bank()[2])?;

    // Gate threshold between the two sharpness scores, so the clean card
    // reads directly and the blurred one goes through the deblurrer.
    let mut config = OcrConfig::default();
    config.sharpness_threshold =
        ((sharpness(&clean) as f64 * sharpness(&blurred) as f64).sqrt()) as f32;

    show("clean  ", &recognize_plate(&clean, &net, &classes, &table, &config)?);
    show("blurred", &recognize_plate(&blurred, &net, &classes, &table, &config)?);
    Ok(())
}
