//! Experiment runner for `minattn-core`: configuration files, multi-seed
//! training, ablations, meta-testing, heatmaps and the CSV, JSON and SVG
//! outputs they produce.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod heatmap;
pub mod records;
pub mod runner;
pub mod svg;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
