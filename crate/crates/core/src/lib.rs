//! Physics-compliant false-data-injection (FDI) synthesis and benchmarking
//! against DC state estimation.
//!
//! The crate is organised around the attack pipeline:
//!
//! * [`grid`] — DC measurement models from bus/branch case data, synthetic
//!   measurement/attack corpora, chronological partitioning.
//! * [`estimation`] — WLS state estimation, the weighted-residual bad-data
//!   test, threshold calibration, and the stealthy-subspace projector.
//! * [`physics`] — power-balance/window projection, standard scaling, the
//!   normalised-space leakage diagnostics, and the least-squares harmoniser.
//! * [`autodiff`] — minimal reverse-mode differentiation over dense layers
//!   plus Adam, powering every trainable generator.
//! * [`generators`] — the benchmark pool (WGAN, MMD-VAE, TC-MMD-VAE,
//!   RealNVP, DDPM, GMM, analytic oracle), attacker-knowledge conditioning,
//!   and the physics-informed output modes.
//! * [`detectors`] — Isolation Forest and dense autoencoder probes.
//! * [`metrics`] — MMD, sliced Wasserstein-1, evasion/impact metrics, the
//!   discriminator probe, and Pareto-front selection.
//! * [`stats`] — the statistical test battery and special functions.
//! * [`xai`] — data- and model-level sensor attribution.
//!
//! With the default `parallel` feature the per-sample and per-cell loops run
//! on rayon; disabling it produces a sequential build with identical results
//! (see [`exec`]).

pub mod autodiff;
pub mod detectors;
pub mod error;
pub mod estimation;
pub mod exec;
pub mod generators;
pub mod grid;
pub mod metrics;
pub mod physics;
pub mod special;
pub mod stats;
pub mod xai;

pub use error::{Error, Result};
