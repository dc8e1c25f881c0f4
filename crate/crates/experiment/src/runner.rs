//! Multi-seed experiments. Seeds (and ablation arms) run in parallel, each
//! writing only to its own directory; everything shared is reduced afterwards
//! in seed order, so output bytes never depend on scheduling.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use minattn_core::env::EnvSpec;
use minattn_core::meta::{meta_test, TrainingState};
use minattn_core::policy::Policy;
use minattn_core::stats::{mean, sample_std};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Checkpoint, RunIdentity};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::heatmap::{self, HeatmapGrid};
use crate::records::{
    read_csv, write_csv, write_json, write_text, ComparisonRow, CurveRow, EpisodeRow, EpochRow, MetaTestRow,
    ProfileRow, COMPARISON_HEADER, CURVE_HEADER, EPISODE_HEADER, EPOCH_HEADER, METATEST_HEADER, PROFILE_HEADER,
};
use crate::svg;

pub const SUMMARY_SCHEMA: &str = "minattn.summary.v1";

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Runs `f`, turning a panic into an error so one bad seed cannot take the
/// others down with it.
fn guarded<T>(f: impl FnOnce() -> Result<T>) -> std::result::Result<T, String> {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(v)) => Ok(v),
        Ok(Err(e)) => Err(e.to_string()),
        Err(p) => Err(match p.downcast_ref::<&str>() {
            Some(s) => format!("panic: {s}"),
            None => match p.downcast_ref::<String>() {
                Some(s) => format!("panic: {s}"),
                None => "panic".into(),
            },
        }),
    }
}

/// Trains one seed up to the configured epoch budget, resuming from
/// `seed_{s}/checkpoint.json` when checkpoints are enabled and one exists.
pub fn train_seed(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<TrainingState> {
    let spec = cfg.spec();
    let identity = RunIdentity::new(seed, &spec, &cfg.meta);
    let path = dir.join("checkpoint.json");
    let resumed = if cfg.output.checkpoints { checkpoint::resume(&path, &identity)? } else { None };
    let mut state = match resumed {
        Some(s) => s,
        None => TrainingState::new(&cfg.meta, &spec, seed)?,
    };
    let every = cfg.output.checkpoint_every;
    while state.epoch < cfg.meta.epochs {
        state.run_epoch(&cfg.meta, &spec)?;
        if cfg.output.checkpoints && every > 0 && state.epoch % every == 0 && state.epoch < cfg.meta.epochs {
            checkpoint::save(&path, &Checkpoint::new(identity.clone(), state.clone()))?;
        }
    }
    if cfg.output.checkpoints {
        checkpoint::save(&path, &Checkpoint::new(identity, state.clone()))?;
    }
    Ok(state)
}

pub fn epoch_rows(state: &TrainingState) -> Vec<EpochRow> {
    state.reports.iter().map(|r| EpochRow::from_report(state.seed, r)).collect()
}

pub fn episode_rows(state: &TrainingState) -> Vec<EpisodeRow> {
    state
        .reports
        .iter()
        .flat_map(|r| {
            r.eval
                .episodes
                .iter()
                .enumerate()
                .map(move |(k, m)| EpisodeRow::new(state.seed, r.epoch, k, m))
        })
        .collect()
}

/// Per-step metrics of the first evaluation episode.
pub fn time_profile(spec: &EnvSpec, policy: &Policy, seed: u64) -> Result<Vec<ProfileRow>> {
    let steps = heatmap::visited_steps(spec, policy, 1, seed)?;
    Ok(steps
        .iter()
        .enumerate()
        .map(|(i, s)| ProfileRow {
            step: i,
            time: s.time,
            reward: s.reward,
            feedback_sq: s.metrics.feedback_sq,
            feedforward_sq: s.metrics.feedforward_sq,
            energy: s.metrics.energy,
        })
        .collect())
}

fn write_seed_outputs(cfg: &ExperimentConfig, state: &TrainingState, dir: &Path) -> Result<()> {
    write_csv(&dir.join("epochs.csv"), EPOCH_HEADER, &epoch_rows(state))?;
    write_csv(&dir.join("episodes.csv"), EPISODE_HEADER, &episode_rows(state))?;
    if cfg.output.time_profiles {
        let rows = time_profile(&cfg.spec(), &state.policy, state.seed)?;
        write_csv(&dir.join("time_profile.csv"), PROFILE_HEADER, &rows)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        Self {
            mean: mean(values),
            std: sample_std(values),
        }
    }
}

/// Across-seed statistics of the per-seed episode means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub seeds: usize,
    pub total_reward: Stat,
    pub feedback: Stat,
    pub feedforward: Stat,
    pub energy: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedSeed {
    pub seed: u64,
    pub error: String,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema: String,
    /// Unit of the horizontal axis of every curve.
    pub unit: String,
    pub epochs: usize,
    pub seeds_ok: Vec<u64>,
    pub failed: Vec<FailedSeed>,
    /// Statistics at the last epoch; absent when nothing was trained.
    #[serde(rename = "final")]
    pub final_metrics: Option<MetricSummary>,
}

/// Per-seed means over the episodes of `epoch`, in the order of `per_seed`.
fn seed_means(per_seed: &[&[EpisodeRow]], epoch: usize) -> Vec<[f64; 4]> {
    per_seed
        .iter()
        .filter_map(|rows| {
            let eps: Vec<&EpisodeRow> = rows.iter().filter(|r| r.epoch == epoch).collect();
            if eps.is_empty() {
                return None;
            }
            let col = |f: fn(&EpisodeRow) -> f64| mean(&eps.iter().map(|r| f(r)).collect::<Vec<f64>>());
            Some([
                col(|r| r.total_reward),
                col(|r| r.mean_feedback_sq),
                col(|r| r.mean_feedforward_sq),
                col(|r| r.mean_energy),
            ])
        })
        .collect()
}

/// Statistics at `epoch` of several seeds' `episodes.csv` rows.
pub fn summarize_epoch(per_seed: &[&[EpisodeRow]], epoch: usize) -> Option<MetricSummary> {
    let m = seed_means(per_seed, epoch);
    if m.is_empty() {
        return None;
    }
    let col = |i: usize| Stat::of(&m.iter().map(|v| v[i]).collect::<Vec<f64>>());
    Some(MetricSummary {
        seeds: m.len(),
        total_reward: col(0),
        feedback: col(1),
        feedforward: col(2),
        energy: col(3),
    })
}

/// Learning curves across seeds, one row per epoch.
pub fn curve_rows(arm: &str, per_seed: &[&[EpisodeRow]]) -> Vec<CurveRow> {
    let last = per_seed.iter().flat_map(|r| r.iter().map(|e| e.epoch)).max().unwrap_or(0);
    (1..=last)
        .filter_map(|e| summarize_epoch(per_seed, e).map(|s| (e, s)))
        .map(|(epoch, s)| CurveRow {
            arm: arm.into(),
            epoch,
            seeds: s.seeds,
            return_mean: s.total_reward.mean,
            return_std: s.total_reward.std,
            feedback_mean: s.feedback.mean,
            feedback_std: s.feedback.std,
            feedforward_mean: s.feedforward.mean,
            feedforward_std: s.feedforward.std,
            energy_mean: s.energy.mean,
            energy_std: s.energy.std,
        })
        .collect()
}

/// Outcome of one configuration over all its seeds.
#[derive(Debug)]
pub struct RunSet {
    pub out: PathBuf,
    pub epochs: usize,
    pub runs: Vec<(u64, std::result::Result<TrainingState, String>)>,
}

impl RunSet {
    pub fn states(&self) -> impl Iterator<Item = &TrainingState> {
        self.runs.iter().filter_map(|(_, r)| r.as_ref().ok())
    }

    pub fn episode_rows(&self) -> Vec<Vec<EpisodeRow>> {
        self.states().map(episode_rows).collect()
    }

    pub fn summary(&self) -> Summary {
        let rows = self.episode_rows();
        let refs: Vec<&[EpisodeRow]> = rows.iter().map(|r| r.as_slice()).collect();
        let last = self.states().map(|s| s.epoch).max().unwrap_or(0);
        Summary {
            schema: SUMMARY_SCHEMA.into(),
            unit: "epoch".into(),
            epochs: self.epochs,
            seeds_ok: self.states().map(|s| s.seed).collect(),
            failed: self
                .runs
                .iter()
                .filter_map(|(s, r)| r.as_ref().err().map(|e| FailedSeed { seed: *s, error: e.clone() }))
                .collect(),
            final_metrics: if last == 0 { None } else { summarize_epoch(&refs, last) },
        }
    }

    fn all_failed(&self) -> bool {
        !self.runs.is_empty() && self.runs.iter().all(|(_, r)| r.is_err())
    }
}

fn run_one(cfg: &ExperimentConfig, out: &Path, seed: u64) -> std::result::Result<TrainingState, String> {
    guarded(|| {
        let dir = seed_dir(out, seed);
        create_dir(&dir)?;
        let state = train_seed(cfg, seed, &dir)?;
        write_seed_outputs(cfg, &state, &dir)?;
        Ok(state)
    })
}

/// Trains every `(config, output directory)` pair over its seeds, with all
/// seeds of all pairs sharing one parallel pool.
fn run_sets(jobs: &[(ExperimentConfig, PathBuf)]) -> Result<Vec<RunSet>> {
    for (cfg, out) in jobs {
        cfg.validate()?;
        if cfg.output.checkpoints {
            let spec = cfg.spec();
            for &s in &cfg.seeds {
                let path = seed_dir(out, s).join("checkpoint.json");
                checkpoint::resume(&path, &RunIdentity::new(s, &spec, &cfg.meta))?;
            }
        }
        create_dir(out)?;
        write_text(&out.join("config.toml"), &cfg.to_toml()?)?;
    }
    let flat: Vec<(usize, u64)> = jobs
        .iter()
        .enumerate()
        .flat_map(|(j, (cfg, _))| cfg.seeds.iter().map(move |&s| (j, s)))
        .collect();
    let results: Vec<_> = flat
        .par_iter()
        .map(|&(j, s)| (j, s, run_one(&jobs[j].0, &jobs[j].1, s)))
        .collect();
    let mut sets: Vec<RunSet> = jobs
        .iter()
        .map(|(cfg, out)| RunSet {
            out: out.clone(),
            epochs: cfg.meta.epochs,
            runs: Vec::new(),
        })
        .collect();
    for (j, s, r) in results {
        sets[j].runs.push((s, r));
    }
    for set in &sets {
        write_json(&set.out.join("summary.json"), &set.summary())?;
    }
    Ok(sets)
}

fn write_curves(out: &Path, rows: &[CurveRow], svg_enabled: bool, title: &str) -> Result<()> {
    write_csv(&out.join("curves.csv"), CURVE_HEADER, rows)?;
    if svg_enabled {
        write_text(&out.join("curves.svg"), &svg::curves_svg(rows, title))?;
    }
    Ok(())
}

/// `train`: every seed to `seed_{s}/`, plus `summary.json` and curves.
pub fn train(cfg: &ExperimentConfig) -> Result<RunSet> {
    let out = cfg.output.dir.clone();
    let set = run_sets(&[(cfg.clone(), out.clone())])?.remove(0);
    if set.all_failed() {
        return Err(Error::AllRunsFailed(set.runs.len()));
    }
    let rows = set.episode_rows();
    let refs: Vec<&[EpisodeRow]> = rows.iter().map(|r| r.as_slice()).collect();
    write_curves(&out, &curve_rows("train", &refs), cfg.output.svg, "training")?;
    Ok(set)
}

fn format_value(v: f64) -> String {
    format!("{v}")
}

pub fn arm_dir(out: &Path, axis: &str, value: f64) -> PathBuf {
    out.join(format!("arm_{axis}_{}", format_value(value)))
}

/// Final-epoch feedback of each seed, keyed by seed.
fn final_feedback(set: &RunSet) -> Vec<(u64, f64)> {
    set.states()
        .filter_map(|s| s.reports.last().map(|r| (s.seed, r.eval.mean_feedback_sq)))
        .collect()
}

/// `ablate`: one run set per value of the configured axis, a comparison
/// table with one row per arm and overlaid curves.
pub fn ablate(cfg: &ExperimentConfig) -> Result<Vec<ComparisonRow>> {
    cfg.validate()?;
    let out = cfg.output.dir.clone();
    let axis = cfg.ablation.axis.name();
    let jobs: Vec<(ExperimentConfig, PathBuf)> = cfg
        .ablation
        .values
        .iter()
        .map(|&v| Ok((cfg.ablation_arm(v)?, arm_dir(&out, axis, v))))
        .collect::<Result<_>>()?;
    let sets = run_sets(&jobs)?;
    if sets.iter().all(|s| s.all_failed()) {
        return Err(Error::AllRunsFailed(sets.iter().map(|s| s.runs.len()).sum()));
    }
    let first = final_feedback(&sets[0]);
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for (set, &value) in sets.iter().zip(&cfg.ablation.values) {
        let s = set.summary();
        let m = s.final_metrics.clone();
        let pick = |f: fn(&MetricSummary) -> Stat| m.as_ref().map(f).unwrap_or(Stat { mean: f64::NAN, std: f64::NAN });
        let mine = final_feedback(set);
        let paired: Vec<(f64, f64)> = mine
            .iter()
            .filter_map(|(seed, fb)| first.iter().find(|(s0, _)| s0 == seed).map(|(_, f0)| (*fb, *f0)))
            .collect();
        rows.push(ComparisonRow {
            axis: axis.into(),
            value,
            seeds_ok: s.seeds_ok.len(),
            seeds_failed: s.failed.len(),
            total_reward_mean: pick(|m| m.total_reward).mean,
            total_reward_std: pick(|m| m.total_reward).std,
            feedback_mean: pick(|m| m.feedback).mean,
            feedback_std: pick(|m| m.feedback).std,
            feedforward_mean: pick(|m| m.feedforward).mean,
            feedforward_std: pick(|m| m.feedforward).std,
            energy_mean: pick(|m| m.energy).mean,
            energy_std: pick(|m| m.energy).std,
            lower_feedback_than_first: paired.iter().filter(|(a, b)| a < b).count(),
            paired_seeds: paired.len(),
        });
        let eps = set.episode_rows();
        let refs: Vec<&[EpisodeRow]> = eps.iter().map(|r| r.as_slice()).collect();
        curves.extend(curve_rows(&format!("{axis}={}", format_value(value)), &refs));
    }
    write_csv(&out.join("comparison.csv"), COMPARISON_HEADER, &rows)?;
    write_json(&out.join("comparison.json"), &rows)?;
    write_curves(&out, &curves, cfg.output.svg, &format!("ablation over {axis}"))?;
    Ok(rows)
}

/// `meta-test`: trains (or resumes) every seed, then adapts the meta-policy
/// to each held-out task.
pub fn meta_test_all(cfg: &ExperimentConfig) -> Result<Vec<MetaTestRow>> {
    let out = cfg.output.dir.clone();
    let set = run_sets(&[(cfg.clone(), out.clone())])?.remove(0);
    let spec = cfg.spec();
    let per_seed: Vec<std::result::Result<Vec<MetaTestRow>, String>> = set
        .runs
        .par_iter()
        .map(|(seed, r)| {
            let state = r.as_ref().map_err(Clone::clone)?;
            guarded(|| {
                cfg.meta_test_tasks
                    .iter()
                    .map(|task| {
                        let m = meta_test(&state.policy, &spec, task, &cfg.meta, *seed)?;
                        Ok(MetaTestRow {
                            seed: *seed,
                            task: task.label(),
                            adapt_steps: m.adapt_steps,
                            pre_return: m.pre.mean_return,
                            post_return: m.post.mean_return,
                            pre_feedback_sq: m.pre.mean_feedback_sq,
                            post_feedback_sq: m.post.mean_feedback_sq,
                            pre_feedforward_sq: m.pre.mean_feedforward_sq,
                            post_feedforward_sq: m.post.mean_feedforward_sq,
                            pre_energy: m.pre.mean_energy,
                            post_energy: m.post.mean_energy,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
        })
        .collect();
    if per_seed.iter().all(|r| r.is_err()) && !per_seed.is_empty() {
        return Err(Error::AllRunsFailed(per_seed.len()));
    }
    let rows: Vec<MetaTestRow> = per_seed.into_iter().filter_map(|r| r.ok()).flatten().collect();
    write_csv(&out.join("metatest.csv"), METATEST_HEADER, &rows)?;
    write_json(&out.join("metatest.json"), &rows)?;
    Ok(rows)
}

/// `heatmap`: trains (or resumes) every seed and writes its attention map
/// to `seed_{s}/heatmap.csv` and `.svg`.
pub fn heatmaps(cfg: &ExperimentConfig) -> Result<Vec<(u64, HeatmapGrid)>> {
    let out = cfg.output.dir.clone();
    let set = run_sets(&[(cfg.clone(), out.clone())])?.remove(0);
    let spec = cfg.spec();
    let grids: Vec<std::result::Result<(u64, HeatmapGrid), String>> = set
        .runs
        .par_iter()
        .map(|(seed, r)| {
            let state = r.as_ref().map_err(Clone::clone)?;
            guarded(|| {
                let g = heatmap::emit(&state.policy, &spec, &cfg.heatmap, cfg.meta.eval_episodes, *seed)?;
                let dir = seed_dir(&out, *seed);
                heatmap::write_heatmap_csv(&dir.join("heatmap.csv"), &g)?;
                if cfg.output.svg {
                    write_text(&dir.join("heatmap.svg"), &svg::heatmap_svg(&g, &format!("seed {seed}")))?;
                }
                Ok((*seed, g))
            })
        })
        .collect();
    if grids.iter().all(|r| r.is_err()) && !grids.is_empty() {
        return Err(Error::AllRunsFailed(grids.len()));
    }
    Ok(grids.into_iter().filter_map(|r| r.ok()).collect())
}

/// Seed directories under `dir`, in numeric order.
fn seed_dirs(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let mut found = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        if let Some(seed) = name.to_str().and_then(|n| n.strip_prefix("seed_")).and_then(|n| n.parse().ok()) {
            found.push((seed, entry.path()));
        }
    }
    found.sort();
    Ok(found)
}

/// `curves`: rebuilds `curves.csv` and `.svg` from the `episodes.csv` files
/// of a finished `train` (or of every arm of an `ablate`) in `dir`.
pub fn curves_from_dir(dir: &Path, svg_enabled: bool) -> Result<Vec<CurveRow>> {
    let mut groups: Vec<(String, PathBuf)> = Vec::new();
    let mut arms: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("arm_")))
        .collect();
    arms.sort();
    for a in arms {
        let name = a.file_name().and_then(|n| n.to_str()).unwrap_or_default().trim_start_matches("arm_").to_string();
        groups.push((name, a));
    }
    if groups.is_empty() {
        groups.push(("train".into(), dir.to_path_buf()));
    }
    let mut rows = Vec::new();
    for (arm, path) in &groups {
        let mut eps = Vec::new();
        for (_, sd) in seed_dirs(path)? {
            let f = sd.join("episodes.csv");
            if f.exists() {
                eps.push(read_csv::<EpisodeRow>(&f)?);
            }
        }
        let refs: Vec<&[EpisodeRow]> = eps.iter().map(|r| r.as_slice()).collect();
        rows.extend(curve_rows(arm, &refs));
    }
    write_curves(dir, &rows, svg_enabled, "learning curves")?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ep(seed: u64, epoch: usize, episode: usize, r: f64) -> EpisodeRow {
        EpisodeRow {
            seed,
            epoch,
            episode,
            steps: 10,
            total_reward: r,
            mean_feedback_sq: r / 10.0,
            mean_feedforward_sq: 1.0,
            mean_energy: 2.0,
        }
    }

    #[test]
    fn summary_averages_episodes_then_seeds() {
        let a = vec![ep(0, 1, 0, 1.0), ep(0, 1, 1, 3.0), ep(0, 2, 0, 10.0)];
        let b = vec![ep(1, 1, 0, 6.0), ep(1, 2, 0, 20.0), ep(1, 2, 1, 40.0)];
        let s = summarize_epoch(&[&a, &b], 1).unwrap();
        assert_eq!(s.seeds, 2);
        assert_eq!(s.total_reward.mean, 4.0);
        assert_eq!(s.total_reward.std, 8f64.sqrt());
        let s2 = summarize_epoch(&[&a, &b], 2).unwrap();
        assert_eq!(s2.total_reward.mean, 20.0);
        assert!(summarize_epoch(&[&a, &b], 3).is_none());
    }

    #[test]
    fn curves_skip_epochs_nobody_reached() {
        let a = vec![ep(0, 1, 0, 1.0), ep(0, 2, 0, 2.0)];
        let b = vec![ep(1, 1, 0, 3.0)];
        let c = curve_rows("x", &[&a, &b]);
        assert_eq!(c.len(), 2);
        assert_eq!((c[0].seeds, c[1].seeds), (2, 1));
        assert_eq!(c[1].return_std, 0.0);
    }

    #[test]
    fn panics_become_errors() {
        let r: std::result::Result<(), String> = guarded(|| panic!("boom"));
        assert_eq!(r.unwrap_err(), "panic: boom");
    }

    #[test]
    fn arm_directories() {
        let p = arm_dir(Path::new("o"), "alpha", 0.5);
        assert_eq!(p, Path::new("o").join("arm_alpha_0.5"));
        assert_eq!(arm_dir(Path::new("o"), "alpha", 1.0), Path::new("o").join("arm_alpha_1"));
    }
}
