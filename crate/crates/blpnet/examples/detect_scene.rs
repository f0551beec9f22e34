//! Train the two-stage detection cascade on synthetic street scenes, then
//! run it on frames the training never saw: vehicle box from the full
//! frame, plate box from the padded vehicle crop, both scored against the
//! renderer's ground truth by intersection-over-union.
//!
//! Run with: `cargo run --release --example detect_scene`

use blpnet::detector::{crop, detect, BBox, ToyBackbone};
use blpnet::kit::{train_demo_heads, KitOptions};
use blpnet::pipeline::DetectConfig;
use blpnet::synth::{empty_frame, vehicle_frame, FramePar, GlyphSet};
use std::time::Instant;

fn iou(a: [f32; 4], b: [f32; 4]) -> f32 {
    let ix = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let iy = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = ix * iy;
    let area = |r: [f32; 4]| (r[2] - r[0]).max(0.0) * (r[3] - r[1]).max(0.0);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let options = KitOptions::default();
    let detect_cfg = DetectConfig::default();
    let backbone = ToyBackbone::new(detect_cfg.backbone_seed);

    let started = Instant::now();
    let (vehicle_head, plate_head) = train_demo_heads(&backbone, &options)?;
    println!(
        "trained both heads on {} scenes in {:.1} s",
        options.head_scenes,
        started.elapsed().as_secs_f64()
    );

    let set = GlyphSet::standard();
    let par = FramePar::default();
    let labels = vec!["D".to_string(), "4".into(), "7".into(), "2".into()];
    for seed in 9100..9104u64 {
        let scene = vehicle_frame(&set, &[labels.clone()], &par, seed)?;
        let truth_vehicle = scene.vehicle.expect("rendered scene has a vehicle");
        let truth_plate = scene.plate.expect("rendered scene has a plate");

        let Some(found) = detect(
            &scene.frame,
            &backbone,
            &vehicle_head,
            detect_cfg.vehicle_threshold,
        )?
        else {
            println!("seed {seed}: missed the vehicle");
            continue;
        };
        let vehicle_iou = iou(found.bbox.coords(), truth_vehicle.coords());

        // Second stage sees only the padded vehicle crop; its box comes
        // back in crop coordinates and is mapped to the frame for scoring.
        let padded = found.bbox.padded(detect_cfg.crop_pad_frac);
        let vehicle_crop = crop(&scene.frame, &padded)?;
        let plate_line = match detect(
            &vehicle_crop,
            &backbone,
            &plate_head,
            detect_cfg.plate_threshold,
        )? {
            Some(plate) => {
                let pc = padded.coords();
                let pl = plate.bbox.coords();
                let frame_box = BBox::from_raw([
                    pc[0] + pl[0] * padded.width(),
                    pc[1] + pl[1] * padded.height(),
                    pc[0] + pl[2] * padded.width(),
                    pc[1] + pl[3] * padded.height(),
                ]);
                format!("plate IoU {:.2}", iou(frame_box.coords(), truth_plate.coords()))
            }
            None => "plate missed".to_string(),
        };
        println!(
            "seed {seed}: vehicle score {:.2}, IoU {:.2}; {plate_line}",
            found.class_probs[0], vehicle_iou
        );
    }

    // Empty frames must stay quiet.
    let mut false_alarms = 0;
    for seed in 9200..9210u64 {
        let scene = empty_frame(&par, seed);
        if detect(
            &scene.frame,
            &backbone,
            &vehicle_head,
            detect_cfg.vehicle_threshold,
        )?
        .is_some()
        {
            false_alarms += 1;
        }
    }
    println!("false alarms on 10 empty frames: {false_alarms}");
    Ok(())
}
