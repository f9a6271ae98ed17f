//! A small, self-contained anomaly-detection library built around SSPCAB —
//! a self-supervised block combining a masked dilated convolution with
//! squeeze-and-excitation channel attention — hosted inside a convolutional
//! auto-encoder.
//!
//! Everything numeric is written from scratch in `f64` with hand-derived
//! backward passes (no autodiff): tensors and layers in [`numcore`], the
//! block itself in [`sspcab`], the host model in [`model`], deterministic
//! training and binary checkpoints in [`trainer`], ranking metrics in
//! [`metrics`], raster/dataset handling plus a seeded synthetic benchmark in
//! [`dataio`], and whole-library verification sweeps (finite-difference
//! gradient checks, masking invariance, dense-kernel equivalence) in
//! [`verify`].
//!
//! Determinism is load-bearing throughout: every source of randomness is a
//! seeded stream, training resumes bit-exactly from checkpoints, and two
//! runs of the full pipeline with the same seed produce byte-identical
//! artifacts.

pub mod dataio;
pub mod metrics;
pub mod model;
pub mod numcore;
pub mod sspcab;
pub mod trainer;
pub mod verify;
