//! Core building blocks for segmenting posterior capsular opacification (PCO)
//! in retroillumination images and turning the segmented area into a
//! treatment decision.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`dataset`]: images with their region of interest, ROI cropping, manifests
//!   and cross-validation splits.
//! - [`synth`]: a generator of PCO-like eyes with exact ground truth.
//! - [`groundtruth`]: manual mask ingestion and the automated k-means +
//!   morphology masks.
//! - [`augment`]: paired image/mask affine augmentation and batch streams.
//! - [`metrics`]: pixel-level segmentation metrics and case-level
//!   classification metrics.
//! - [`classify`]: area quantification, cutoff sweeps and operating point
//!   selection.

pub mod augment;
pub mod classify;
pub mod dataset;
mod error;
pub mod groundtruth;
pub mod image;
pub mod metrics;
pub mod synth;

pub use error::{Error, Result};
pub use image::{GrayImage, Mask, MaskSource};
