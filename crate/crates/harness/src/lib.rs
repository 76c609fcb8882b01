//! Experiment harness for the FDI synthesis benchmark: configuration,
//! block runners, and deterministic report emission. The `fdia` binary is a
//! thin CLI over this library.

pub mod config;
pub mod report;
pub mod runner;

pub use config::{CellConfig, ExperimentConfig, ReportFormat};
pub use runner::{prepare, run_ablation, run_block_a, run_block_b, run_block_c, run_lemma_demo};
