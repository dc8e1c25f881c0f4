//! CSV rows. Headers follow the field order below and never change within a
//! schema version; floats are written in shortest round-trip form, so reading
//! a file back reproduces every value bitwise.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use minattn_core::attention::EpisodeMetrics;
use minattn_core::meta::EpochReport;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row of `epochs.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub seed: u64,
    pub epoch: usize,
    pub env_steps: u64,
    pub buffer_len: usize,
    pub mean_train_loss: f64,
    pub mean_holdout_loss: f64,
    pub reinitialized_members: usize,
    pub members_used: usize,
    pub meta_objective: f64,
    pub gradient_norm: f64,
    pub step_norm: f64,
    pub mean_return: f64,
    pub std_return: f64,
    pub mean_feedback_sq: f64,
    pub mean_feedforward_sq: f64,
    pub mean_energy: f64,
}

impl EpochRow {
    pub fn from_report(seed: u64, r: &EpochReport) -> Self {
        Self {
            seed,
            epoch: r.epoch,
            env_steps: r.env_steps,
            buffer_len: r.buffer_len,
            mean_train_loss: r.mean_train_loss,
            mean_holdout_loss: r.mean_holdout_loss,
            reinitialized_members: r.reinitialized_members,
            members_used: r.members_used,
            meta_objective: r.meta_objective,
            gradient_norm: r.gradient_norm,
            step_norm: r.step_norm,
            mean_return: r.eval.mean_return,
            std_return: r.eval.std_return,
            mean_feedback_sq: r.eval.mean_feedback_sq,
            mean_feedforward_sq: r.eval.mean_feedforward_sq,
            mean_energy: r.eval.mean_energy,
        }
    }
}

/// One evaluation episode, in `episodes.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub seed: u64,
    pub epoch: usize,
    pub episode: usize,
    pub steps: usize,
    pub total_reward: f64,
    pub mean_feedback_sq: f64,
    pub mean_feedforward_sq: f64,
    pub mean_energy: f64,
}

impl EpisodeRow {
    pub fn new(seed: u64, epoch: usize, episode: usize, m: &EpisodeMetrics) -> Self {
        Self {
            seed,
            epoch,
            episode,
            steps: m.steps,
            total_reward: m.total_reward,
            mean_feedback_sq: m.mean_feedback_sq,
            mean_feedforward_sq: m.mean_feedforward_sq,
            mean_energy: m.mean_energy,
        }
    }
}

/// One step of a time profile, in `time_profile.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub step: usize,
    pub time: f64,
    pub reward: f64,
    pub feedback_sq: f64,
    pub feedforward_sq: f64,
    pub energy: f64,
}

/// One row of `metatest.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaTestRow {
    pub seed: u64,
    pub task: String,
    pub adapt_steps: usize,
    pub pre_return: f64,
    pub post_return: f64,
    pub pre_feedback_sq: f64,
    pub post_feedback_sq: f64,
    pub pre_feedforward_sq: f64,
    pub post_feedforward_sq: f64,
    pub pre_energy: f64,
    pub post_energy: f64,
}

/// One learning-curve point, in `curves.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub arm: String,
    pub epoch: usize,
    pub seeds: usize,
    pub return_mean: f64,
    pub return_std: f64,
    pub feedback_mean: f64,
    pub feedback_std: f64,
    pub feedforward_mean: f64,
    pub feedforward_std: f64,
    pub energy_mean: f64,
    pub energy_std: f64,
}

/// One arm of an ablation, in `comparison.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub axis: String,
    pub value: f64,
    pub seeds_ok: usize,
    pub seeds_failed: usize,
    pub total_reward_mean: f64,
    pub total_reward_std: f64,
    pub feedback_mean: f64,
    pub feedback_std: f64,
    pub feedforward_mean: f64,
    pub feedforward_std: f64,
    pub energy_mean: f64,
    pub energy_std: f64,
    /// Paired seeds whose feedback norm is strictly below the first arm's.
    pub lower_feedback_than_first: usize,
    pub paired_seeds: usize,
}

/// Writes `rows` with a header line, even when `rows` is empty.
pub fn write_csv<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

pub const EPOCH_HEADER: &[&str] = &[
    "seed",
    "epoch",
    "env_steps",
    "buffer_len",
    "mean_train_loss",
    "mean_holdout_loss",
    "reinitialized_members",
    "members_used",
    "meta_objective",
    "gradient_norm",
    "step_norm",
    "mean_return",
    "std_return",
    "mean_feedback_sq",
    "mean_feedforward_sq",
    "mean_energy",
];

pub const EPISODE_HEADER: &[&str] = &[
    "seed",
    "epoch",
    "episode",
    "steps",
    "total_reward",
    "mean_feedback_sq",
    "mean_feedforward_sq",
    "mean_energy",
];

pub const PROFILE_HEADER: &[&str] = &["step", "time", "reward", "feedback_sq", "feedforward_sq", "energy"];

pub const METATEST_HEADER: &[&str] = &[
    "seed",
    "task",
    "adapt_steps",
    "pre_return",
    "post_return",
    "pre_feedback_sq",
    "post_feedback_sq",
    "pre_feedforward_sq",
    "post_feedforward_sq",
    "pre_energy",
    "post_energy",
];

pub const CURVE_HEADER: &[&str] = &[
    "arm",
    "epoch",
    "seeds",
    "return_mean",
    "return_std",
    "feedback_mean",
    "feedback_std",
    "feedforward_mean",
    "feedforward_std",
    "energy_mean",
    "energy_std",
];

pub const COMPARISON_HEADER: &[&str] = &[
    "axis",
    "value",
    "seeds_ok",
    "seeds_failed",
    "total_reward_mean",
    "total_reward_std",
    "feedback_mean",
    "feedback_std",
    "feedforward_mean",
    "feedforward_std",
    "energy_mean",
    "energy_std",
    "lower_feedback_than_first",
    "paired_seeds",
];

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
