//! Temporal pseudo supervision for domain adaptive video segmentation,
//! scaled down to a synthetic benchmark that trains on one CPU core.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`], [`optim`], [`gradcheck`]: reverse-mode autodiff, SGD, and a
//!   finite-difference checker.
//! - [`synth`]: a two-domain synthetic video generator with exact labels and
//!   flow, plus the clip file format and dataset manifest.
//! - [`flow`]: flow fields, splatting warps, block matching, composition.
//! - [`augment`]: the photometric/geometric augmentation set and its
//!   cross-frame application to frame pairs.
//! - [`model`]: the two-branch segmentation network with flow-guided fusion.
//! - [`train`]: pseudo labelling, the PixMatch and TPS objectives, training.
//! - [`eval`]: confusion matrices, mIoU, temporal consistency, feature
//!   variance.
//! - [`render`], [`harness`]: PPM rendering, ablation sweeps, summaries.

pub mod augment;
pub mod error;
pub mod eval;
pub mod flow;
pub mod gradcheck;
pub mod harness;
pub mod image;
pub mod model;
pub mod optim;
pub mod render;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use image::{ClassMap, Frame, FramePair, ProbMap, IGNORE};
