//! Print the structure reports for both networks: the detection head used
//! by each cascade stage and the character recognizer, including the
//! flagged output-layer parameter-count discrepancy.
//!
//! Run with: `cargo run --example param_report`

use blpnet::nn::{head_report, ocr_report};
use blpnet::ocr::NUM_CLASSES;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    println!("{}", head_report()?.render());
    println!("{}", ocr_report(NUM_CLASSES)?.render());
    Ok(())
}
