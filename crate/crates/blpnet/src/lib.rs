//! Cascaded license-plate reading on grayscale frames, built from scratch:
//!
//! 1. a detection backbone with twin regression/classification heads finds
//!    the vehicle, then the plate *inside* the vehicle crop ([`detector`]);
//! 2. a sharpness gate decides whether the plate crop needs deblurring, with
//!    FIR/frequency-domain Wiener filters, wavelet-thresholded Landweber
//!    iteration, and a monotone FISTA solver for TV-regularized
//!    deconvolution ([`deblur`]);
//! 3. active-contour segmentation (two-phase piecewise-constant and
//!    region-scalable fitting) splits the plate into character crops
//!    ([`segment`]);
//! 4. a five-block CNN classifies each 64x64 crop into one of 60 character
//!    classes ([`ocr`]), and recognized label runs are mapped to display
//!    words ([`wordmap`]);
//! 5. [`pipeline`] chains the stages over frame streams with per-stage
//!    timing, and [`train`] fits the nets with augmentation, early stopping,
//!    and reproducible seeding.
//!
//! Everything numerical — tensors, layers, optimizers, FFTs, level sets —
//! lives in this crate with no framework dependencies; see [`tensor`] and
//! [`nn`] for the primitives.

pub mod deblur;
pub mod detector;
pub mod image;
pub mod kit;
pub mod nn;
pub mod ocr;
pub mod pipeline;
pub mod segment;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod wordmap;

#[cfg(test)]
mod testref;
