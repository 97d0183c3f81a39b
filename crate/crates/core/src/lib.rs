//! Desk-scale adversarial robustness harness.
//!
//! The crate trains small convolutional classifiers on a procedural image
//! corpus, perturbs held-out images with FGSM and PGD, and measures how well
//! adversarial examples crafted against one model transfer to every other
//! model. Results land in a transfer matrix (CSV) plus SVG charts.
//!
//! Everything is computed in `f64` on the CPU. Runs are deterministic: a
//! fixed seed reproduces checkpoints, adversarial sets, and report files
//! bit for bit.
//!
//! Module map:
//!
//! * [`tensor`]  - NCHW tensors, reverse-mode autodiff, conv/pool/norm kernels
//! * [`nn`]      - model families, the eight-model registry, checkpoints
//! * [`data`]    - procedural corpus, resize/augment, dataset variants
//! * [`train`]   - Adam, early stopping, single- and two-phase training
//! * [`attack`]  - FGSM, PGD, adversarial set containers
//! * [`transfer`] - experiment plans and the source x target accuracy matrix
//! * [`report`]  - SVG bar charts, text summaries, run manifests
//! * [`config`]  - run configuration file format

pub mod attack;
pub mod config;
pub mod data;
pub mod error;
pub mod nn;
pub mod report;
pub mod seed;
pub mod tensor;
pub mod train;
pub mod transfer;

pub use error::{Error, Result};
