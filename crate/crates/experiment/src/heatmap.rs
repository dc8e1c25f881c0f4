//! Attention heatmaps over a 2-D projection of the state space.

use std::path::Path;

use minattn_core::attention::feedforward_norm_sq;
use minattn_core::env::{EnvSpec, Environment, StateVec, TaskPerturbation};
use minattn_core::policy::Policy;
use minattn_core::rng::{seeded, stream, tag};
use minattn_core::trajectory::{rollout, ActionMode, FeedforwardSource, RolloutOptions, Step, TrajectorySource};
use serde::{Deserialize, Serialize};

use crate::config::{HeatmapConfig, HeatmapMetric, HeatmapMode};
use crate::error::{Error, Result};
use crate::records::{read_csv, write_csv};

/// Binned metric values. Cells are stored row-major with `x` fastest:
/// `values[iy * bins[0] + ix]`. A cell without samples is `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub dims: [usize; 2],
    pub ranges: [[f64; 2]; 2],
    pub bins: [usize; 2],
    pub metric: HeatmapMetric,
    pub mode: HeatmapMode,
    pub values: Vec<Option<f64>>,
    pub counts: Vec<usize>,
}

impl HeatmapGrid {
    pub fn empty(
        dims: [usize; 2],
        ranges: [[f64; 2]; 2],
        bins: [usize; 2],
        metric: HeatmapMetric,
        mode: HeatmapMode,
    ) -> Self {
        let n = bins[0] * bins[1];
        Self {
            dims,
            ranges,
            bins,
            metric,
            mode,
            values: vec![None; n],
            counts: vec![0; n],
        }
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.bins[0] + ix
    }

    pub fn get(&self, ix: usize, iy: usize) -> Option<f64> {
        self.values[self.index(ix, iy)]
    }

    /// Center of bin `i` along `axis`.
    pub fn center(&self, axis: usize, i: usize) -> f64 {
        let [lo, hi] = self.ranges[axis];
        lo + (hi - lo) * (i as f64 + 0.5) / self.bins[axis] as f64
    }

    /// Bin containing `v` along `axis`; `None` outside the closed range.
    pub fn bin_of(&self, axis: usize, v: f64) -> Option<usize> {
        let [lo, hi] = self.ranges[axis];
        if !(v >= lo && v <= hi) {
            return None;
        }
        let n = self.bins[axis];
        Some((((v - lo) / (hi - lo) * n as f64) as usize).min(n - 1))
    }

    /// Smallest and largest non-empty cell value.
    pub fn value_range(&self) -> Option<(f64, f64)> {
        self.values.iter().flatten().fold(None, |acc, &v| match acc {
            None => Some((v, v)),
            Some((a, b)) => Some((a.min(v), b.max(v))),
        })
    }
}

fn metric_of(step: &Step, metric: HeatmapMetric) -> f64 {
    match metric {
        HeatmapMetric::Feedback => step.metrics.feedback_sq,
        HeatmapMetric::Feedforward => step.metrics.feedforward_sq,
    }
}

/// Steps of `episodes` deterministic episodes on the unperturbed task, on
/// the same evaluation streams as training.
pub fn visited_steps(spec: &EnvSpec, policy: &Policy, episodes: usize, seed: u64) -> Result<Vec<Step>> {
    let env = Environment::new(spec.clone(), &TaskPerturbation::identity())?;
    let opts = RolloutOptions {
        horizon: spec.horizon,
        feedforward: FeedforwardSource::Executed,
        source: TrajectorySource::RealEnv,
    };
    let mut out = Vec::new();
    for k in 0..episodes {
        let mut rng = stream(seed, &[tag::EVAL, k as u64]);
        let x0 = env.reset(&mut rng).values;
        out.extend(rollout(&env, policy, x0, &opts, ActionMode::Deterministic, &mut rng)?.steps);
    }
    Ok(out)
}

/// Mean metric of the visited steps falling in each bin. Steps outside the
/// ranges are ignored; bins nobody visits stay empty.
pub fn from_visited(steps: &[Step], dims: [usize; 2], ranges: [[f64; 2]; 2], bins: [usize; 2], metric: HeatmapMetric) -> HeatmapGrid {
    let mut grid = HeatmapGrid::empty(dims, ranges, bins, metric, HeatmapMode::VisitedStates);
    let mut sums = vec![0.0; grid.values.len()];
    for s in steps {
        let (Some(ix), Some(iy)) = (grid.bin_of(0, s.state[dims[0]]), grid.bin_of(1, s.state[dims[1]])) else {
            continue;
        };
        let i = grid.index(ix, iy);
        sums[i] += metric_of(s, metric);
        grid.counts[i] += 1;
    }
    for (i, sum) in sums.into_iter().enumerate() {
        if grid.counts[i] > 0 {
            grid.values[i] = Some(sum / grid.counts[i] as f64);
        }
    }
    grid
}

/// Metric at every bin center, the other coordinates fixed at `anchor`.
///
/// The feedforward metric is the backward difference over one noise-free
/// environment step taken from the cell state with the policy's action.
pub fn uniform_grid(
    policy: &Policy,
    spec: &EnvSpec,
    anchor: &[f64],
    dims: [usize; 2],
    ranges: [[f64; 2]; 2],
    bins: [usize; 2],
    metric: HeatmapMetric,
    time: f64,
) -> Result<HeatmapGrid> {
    let mut grid = HeatmapGrid::empty(dims, ranges, bins, metric, HeatmapMode::UniformGrid);
    let env = Environment::new(spec.clone().with_diffusion(0.0), &TaskPerturbation::identity())?;
    let mut rng = seeded(0);
    for iy in 0..bins[1] {
        for ix in 0..bins[0] {
            let mut x = anchor.to_vec();
            x[dims[0]] = grid.center(0, ix);
            x[dims[1]] = grid.center(1, iy);
            let v = match metric {
                HeatmapMetric::Feedback => policy.state_jacobian(&x, time)?.frobenius_sq(),
                HeatmapMetric::Feedforward => {
                    let u = policy.act_deterministic(&x, time)?.action;
                    let next = env.step(&StateVec { values: x, time }, &u, &mut rng).state;
                    let u_next = policy.act_deterministic(&next.values, next.time)?.action;
                    feedforward_norm_sq(&u_next, Some(&u), spec.dt)
                }
            };
            let i = grid.index(ix, iy);
            grid.values[i] = Some(v);
            grid.counts[i] = 1;
        }
    }
    Ok(grid)
}

/// Mean visited state, the anchor for `uniform_grid`; the initial-state
/// mean of the environment's reset distribution when nothing was visited.
pub fn visited_mean(steps: &[Step], spec: &EnvSpec) -> Vec<f64> {
    let n = spec.state_dim();
    if steps.is_empty() {
        return vec![0.0; n];
    }
    let mut m = vec![0.0; n];
    for s in steps {
        for (a, v) in m.iter_mut().zip(&s.state) {
            *a += v;
        }
    }
    m.iter_mut().for_each(|a| *a /= steps.len() as f64);
    m
}

/// Builds the configured heatmap for a trained policy.
pub fn emit(policy: &Policy, spec: &EnvSpec, cfg: &HeatmapConfig, episodes: usize, seed: u64) -> Result<HeatmapGrid> {
    let (dims, ranges) = cfg.resolved(spec.kind);
    let steps = visited_steps(spec, policy, episodes, seed)?;
    match cfg.mode {
        HeatmapMode::VisitedStates => Ok(from_visited(&steps, dims, ranges, cfg.bins, cfg.metric)),
        HeatmapMode::UniformGrid => {
            let anchor = visited_mean(&steps, spec);
            uniform_grid(policy, spec, &anchor, dims, ranges, cfg.bins, cfg.metric, cfg.time)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct HeatmapRow {
    dim_x: usize,
    dim_y: usize,
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
    bins_x: usize,
    bins_y: usize,
    metric: HeatmapMetric,
    mode: HeatmapMode,
    ix: usize,
    iy: usize,
    x_center: f64,
    y_center: f64,
    value: Option<f64>,
    count: usize,
}

pub const HEATMAP_HEADER: &[&str] = &[
    "dim_x", "dim_y", "x_min", "x_max", "y_min", "y_max", "bins_x", "bins_y", "metric", "mode", "ix", "iy",
    "x_center", "y_center", "value", "count",
];

/// One row per cell; an empty cell has an empty `value` field.
pub fn write_heatmap_csv(path: &Path, g: &HeatmapGrid) -> Result<()> {
    let mut rows = Vec::with_capacity(g.values.len());
    for iy in 0..g.bins[1] {
        for ix in 0..g.bins[0] {
            let i = g.index(ix, iy);
            rows.push(HeatmapRow {
                dim_x: g.dims[0],
                dim_y: g.dims[1],
                x_min: g.ranges[0][0],
                x_max: g.ranges[0][1],
                y_min: g.ranges[1][0],
                y_max: g.ranges[1][1],
                bins_x: g.bins[0],
                bins_y: g.bins[1],
                metric: g.metric,
                mode: g.mode,
                ix,
                iy,
                x_center: g.center(0, ix),
                y_center: g.center(1, iy),
                value: g.values[i],
                count: g.counts[i],
            });
        }
    }
    write_csv(path, HEATMAP_HEADER, &rows)
}

pub fn read_heatmap_csv(path: &Path) -> Result<HeatmapGrid> {
    let rows: Vec<HeatmapRow> = read_csv(path)?;
    let first = rows.first().ok_or_else(|| Error::format("heatmap csv", "no cells"))?;
    let mut g = HeatmapGrid::empty(
        [first.dim_x, first.dim_y],
        [[first.x_min, first.x_max], [first.y_min, first.y_max]],
        [first.bins_x, first.bins_y],
        first.metric,
        first.mode,
    );
    if rows.len() != g.values.len() {
        return Err(Error::format("heatmap csv", format!("expected {} cells, found {}", g.values.len(), rows.len())));
    }
    for r in &rows {
        let same = r.dim_x == first.dim_x
            && r.dim_y == first.dim_y
            && r.bins_x == first.bins_x
            && r.bins_y == first.bins_y
            && r.metric == first.metric
            && r.mode == first.mode;
        if !same || r.ix >= g.bins[0] || r.iy >= g.bins[1] {
            return Err(Error::format("heatmap csv", format!("inconsistent cell ({}, {})", r.ix, r.iy)));
        }
        let i = g.index(r.ix, r.iy);
        g.values[i] = r.value;
        g.counts[i] = r.count;
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use minattn_core::attention::AttentionMetrics;
    use minattn_core::env::EnvKind;
    use minattn_core::linalg::DenseMatrix;
    use minattn_core::policy::LinearSchedule;

    fn step(x: f64, y: f64, fb: f64) -> Step {
        Step {
            state: vec![x, y],
            time: 0.0,
            action: vec![0.0],
            pre_squash: vec![0.0],
            mean_action: vec![0.0],
            log_prob: 0.0,
            reward: 0.0,
            metrics: AttentionMetrics { feedback_sq: fb, feedforward_sq: 2.0 * fb, energy: 0.0 },
        }
    }

    #[test]
    fn single_bin_is_the_global_mean() {
        let steps = [step(0.1, 0.2, 1.0), step(-0.5, 0.9, 2.0), step(0.7, -0.3, 6.0)];
        let g = from_visited(&steps, [0, 1], [[-1.0, 1.0], [-1.0, 1.0]], [1, 1], HeatmapMetric::Feedback);
        assert_eq!(g.values, vec![Some(3.0)]);
        assert_eq!(g.counts, vec![3]);
        let g = from_visited(&steps, [0, 1], [[-1.0, 1.0], [-1.0, 1.0]], [1, 1], HeatmapMetric::Feedforward);
        assert_eq!(g.values, vec![Some(6.0)]);
    }

    #[test]
    fn unvisited_bins_are_empty_not_zero() {
        let steps = [step(-0.9, -0.9, 4.0)];
        let g = from_visited(&steps, [0, 1], [[-1.0, 1.0], [-1.0, 1.0]], [2, 2], HeatmapMetric::Feedback);
        assert_eq!(g.values, vec![Some(4.0), None, None, None]);
        assert_eq!(g.counts, vec![1, 0, 0, 0]);
    }

    #[test]
    fn edges_and_outliers() {
        let g = HeatmapGrid::empty([0, 1], [[0.0, 1.0], [0.0, 4.0]], [4, 2], HeatmapMetric::Feedback, HeatmapMode::UniformGrid);
        assert_eq!(g.bin_of(0, 0.0), Some(0));
        assert_eq!(g.bin_of(0, 1.0), Some(3));
        assert_eq!(g.bin_of(0, 0.26), Some(1));
        assert_eq!(g.bin_of(0, 1.01), None);
        assert_eq!(g.bin_of(1, f64::NAN), None);
        assert_eq!(g.center(1, 1), 3.0);
    }

    #[test]
    fn linear_policy_grid_is_constant() {
        let k = DenseMatrix::from_rows(&[&[0.5, -1.5]]).unwrap();
        let p = Policy::linear(LinearSchedule::constant(&k, &[0.2]).unwrap(), -1.0, vec![-1.0], vec![1.0]).unwrap();
        let spec = EnvSpec::new(EnvKind::PendulumSwingup);
        let g = uniform_grid(&p, &spec, &[0.0, 0.0], [0, 1], [[-3.0, 3.0], [-8.0, 8.0]], [7, 5], HeatmapMetric::Feedback, 0.0)
            .unwrap();
        assert!(g.values.iter().all(|v| *v == Some(2.5)));
    }

    #[test]
    fn csv_round_trip() {
        let steps = [step(0.1, 0.2, 1.0 / 3.0), step(-0.5, 0.9, 2.0), step(0.7, -0.3, 6.1)];
        let g = from_visited(&steps, [1, 0], [[-1.0, 1.0], [-0.7, 1.3]], [3, 2], HeatmapMetric::Feedback);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        write_heatmap_csv(&p, &g).unwrap();
        assert_eq!(read_heatmap_csv(&p).unwrap(), g);
    }
}
