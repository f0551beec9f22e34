//! Train the character recognizer on a synthetic ten-digit glyph corpus
//! with the full augmentation recipe, then report held-out accuracy.
//!
//! Run with: `cargo run --release --example train_glyphs`

use blpnet::nn::ocr_spec;
use blpnet::synth::{glyph_corpus, GlyphSet};
use blpnet::train::{classifier_metrics, split, train_classifier, AugmentConfig, TrainConfig};
use std::time::Instant;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let set = GlyphSet::standard();
    let digit_classes: Vec<usize> = (0..10).collect();
    let corpus = glyph_corpus(&set, &digit_classes, 40, 64, 11);
    let parts = split(&corpus, &[0.7, 0.15, 0.15], 11)?;
    println!(
        "corpus: {} samples, {} train / {} val / {} test, {} classes",
        corpus.len(),
        parts.train.len(),
        parts.val.len(),
        parts.test.len(),
        parts.encoder.len()
    );

    let config = TrainConfig {
        max_epochs: 50,
        batch_size: 32,
        ..TrainConfig::default()
    };
    let aug = AugmentConfig::ocr_recipe(11);
    let started = Instant::now();
    let outcome = train_classifier(
        ocr_spec(parts.encoder.len()),
        &corpus,
        &parts,
        &config,
        &aug,
    )?;
    for row in &outcome.history {
        println!(
            "epoch {:>2}  lr {:.5}  train {:.4}  val {:.4}  val acc {:.1}%",
            row.epoch,
            row.lr,
            row.train_loss,
            row.val_loss,
            100.0 * row.val_acc
        );
    }

    let (test_loss, test_acc) =
        classifier_metrics(&outcome.network, &corpus, &parts.encoder, &parts.test)?;
    println!(
        "best epoch {} — held-out test loss {:.4}, accuracy {:.1}% — {:.1} s",
        outcome.best_epoch,
        test_loss,
        100.0 * test_acc,
        started.elapsed().as_secs_f64()
    );
    Ok(())
}
