//! Experiment configuration: one TOML file, versioned by `schema`, every
//! table closed to unknown keys.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use minattn_core::env::{EnvKind, EnvSpec, Physics, TaskPerturbation};
use minattn_core::meta::MetaConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA: &str = "minattn.experiment.v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: String,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub env: EnvConfig,
    #[serde(default)]
    pub meta: MetaConfig,
    /// Out-of-distribution tasks for `meta-test`.
    #[serde(default = "default_meta_test_tasks")]
    pub meta_test_tasks: Vec<TaskPerturbation>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub heatmap: HeatmapConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_meta_test_tasks() -> Vec<TaskPerturbation> {
    vec![TaskPerturbation::mass_scale(1.5)]
}

/// Environment choice plus optional overrides of its documented defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub dt: Option<f64>,
    pub horizon: Option<usize>,
    /// Same diffusion magnitude on every state coordinate.
    pub diffusion: Option<f64>,
    pub reward_scale: Option<f64>,
    pub action_cost: Option<f64>,
    pub state_bound: Option<f64>,
    pub physics: Option<Physics>,
}

impl EnvConfig {
    pub fn new(kind: EnvKind) -> Self {
        Self {
            kind,
            dt: None,
            horizon: None,
            diffusion: None,
            reward_scale: None,
            action_cost: None,
            state_bound: None,
            physics: None,
        }
    }

    pub fn spec(&self) -> EnvSpec {
        let mut s = EnvSpec::new(self.kind);
        if let Some(v) = self.dt {
            s.dt = v;
        }
        if let Some(v) = self.horizon {
            s.horizon = v;
        }
        if let Some(v) = self.diffusion {
            s.diffusion = vec![v; s.state_dim()];
        }
        if let Some(v) = self.reward_scale {
            s.reward_scale = v;
        }
        if let Some(v) = self.action_cost {
            s.action_cost = v;
        }
        if let Some(v) = self.state_bound {
            s.state_bound = v;
        }
        if let Some(p) = &self.physics {
            s.physics = p.clone();
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub svg: bool,
    pub checkpoints: bool,
    /// Write a checkpoint every this many epochs (0: only at the end).
    pub checkpoint_every: usize,
    /// Per-step profile of the first final evaluation episode.
    pub time_profiles: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            svg: true,
            checkpoints: true,
            checkpoint_every: 0,
            time_profiles: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapMode {
    /// Bin centers of a regular grid; other coordinates at their visited means.
    UniformGrid,
    /// States visited by the evaluation episodes.
    VisitedStates,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapMetric {
    Feedback,
    Feedforward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeatmapConfig {
    /// Projected state coordinates; the environment's default projection
    /// when absent.
    pub dims: Option<[usize; 2]>,
    /// `[[x_lo, x_hi], [y_lo, y_hi]]`; environment defaults when absent.
    pub ranges: Option<[[f64; 2]; 2]>,
    pub bins: [usize; 2],
    pub mode: HeatmapMode,
    pub metric: HeatmapMetric,
    /// Policy time used in `uniform_grid` mode.
    pub time: f64,
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        Self {
            dims: None,
            ranges: None,
            bins: [20, 20],
            mode: HeatmapMode::UniformGrid,
            metric: HeatmapMetric::Feedback,
            time: 0.0,
        }
    }
}

/// Default projection per environment: the pendulum's angle against angular
/// velocity, the cart-pole's pole angle against its rate, the point mass's
/// position against velocity.
pub fn default_projection(kind: EnvKind) -> ([usize; 2], [[f64; 2]; 2]) {
    match kind {
        EnvKind::PendulumSwingup => ([0, 1], [[-PI, PI], [-8.0, 8.0]]),
        EnvKind::CartpoleSwingup => ([2, 3], [[0.0, 2.0 * PI], [-10.0, 10.0]]),
        EnvKind::PointMassSlope => ([0, 1], [[-5.0, 5.0], [-3.0, 3.0]]),
    }
}

impl HeatmapConfig {
    pub fn resolved(&self, kind: EnvKind) -> ([usize; 2], [[f64; 2]; 2]) {
        let (d, r) = default_projection(kind);
        (self.dims.unwrap_or(d), self.ranges.unwrap_or(r))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    Alpha,
    EnsembleSize,
    #[serde(rename = "imaginary_n")]
    ImaginaryN,
}

impl AblationAxis {
    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::Alpha => "alpha",
            AblationAxis::EnsembleSize => "ensemble_size",
            AblationAxis::ImaginaryN => "imaginary_n",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub axis: AblationAxis,
    pub values: Vec<f64>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            axis: AblationAxis::Alpha,
            values: vec![0.0, 1.0],
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
    pub alpha: Option<f64>,
}

impl ExperimentConfig {
    /// Minimal valid configuration for `kind` with every default.
    pub fn new(kind: EnvKind) -> Self {
        Self {
            schema: SCHEMA.to_string(),
            seeds: default_seeds(),
            env: EnvConfig::new(kind),
            meta: MetaConfig::default(),
            meta_test_tasks: default_meta_test_tasks(),
            output: OutputConfig::default(),
            heatmap: HeatmapConfig::default(),
            ablation: AblationConfig::default(),
        }
    }

    /// Parses without validating.
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads, applies overrides and validates.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = &o.seeds {
            self.seeds = s.clone();
        }
        if let Some(d) = &o.out {
            self.output.dir = d.clone();
        }
        if let Some(a) = o.alpha {
            self.meta.alpha = a;
        }
    }

    pub fn spec(&self) -> EnvSpec {
        self.env.spec()
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: minattn_core::Error| Error::Config(e.to_string());
        if self.schema != SCHEMA {
            return Err(Error::Config(format!(
                "unsupported schema {:?}, expected {SCHEMA:?}",
                self.schema
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds: need at least one seed".into()));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(Error::Config("seeds: duplicates are not allowed".into()));
        }
        let spec = self.spec();
        spec.validate().map_err(cfg_err)?;
        self.meta.validate(spec.action_dim()).map_err(cfg_err)?;
        for t in &self.meta_test_tasks {
            t.validate(spec.action_dim()).map_err(cfg_err)?;
        }
        let ([dx, dy], [rx, ry]) = self.heatmap.resolved(spec.kind);
        let n = spec.state_dim();
        if dx >= n || dy >= n || dx == dy {
            return Err(Error::Config(format!(
                "heatmap.dims: need two distinct indices below {n}, got [{dx}, {dy}]"
            )));
        }
        for r in [rx, ry] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] < r[1]) {
                return Err(Error::Config(format!("heatmap.ranges: invalid range {r:?}")));
            }
        }
        if self.heatmap.bins.contains(&0) {
            return Err(Error::Config("heatmap.bins: must be at least 1".into()));
        }
        if !self.heatmap.time.is_finite() {
            return Err(Error::Config("heatmap.time: must be finite".into()));
        }
        if self.ablation.values.is_empty() {
            return Err(Error::Config("ablation.values: need at least one value".into()));
        }
        for &v in &self.ablation.values {
            let arm = self.ablation_arm(v)?;
            arm.meta.validate(spec.action_dim()).map_err(cfg_err)?;
        }
        Ok(())
    }

    /// This configuration with the ablation axis set to `value`.
    pub fn ablation_arm(&self, value: f64) -> Result<Self> {
        let mut cfg = self.clone();
        let count = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 && v <= 1e6 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!(
                    "ablation.values: {} needs positive integers, got {v}",
                    self.ablation.axis.name()
                )))
            }
        };
        match self.ablation.axis {
            AblationAxis::Alpha => cfg.meta.alpha = value,
            AblationAxis::EnsembleSize => {
                let m = count(value)?;
                cfg.meta.ensemble.members = m;
                cfg.meta.ensemble.elites = cfg.meta.ensemble.elites.min(m);
            }
            AblationAxis::ImaginaryN => cfg.meta.imaginary_trajectories = count(value)?,
        }
        Ok(cfg)
    }
}

/// Parses a seed list: comma-separated integers and inclusive ranges
/// `a-b`, e.g. `0,3,5-9`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("--seeds: cannot parse {text:?}"));
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
                if a > b {
                    return Err(bad());
                }
                out.extend(a..=b);
            }
            None => out.push(part.parse().map_err(|_| bad())?),
        }
    }
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "schema = \"minattn.experiment.v1\"\n[env]\nkind = \"pendulum_swingup\"\n";

    #[test]
    fn minimal_file_gets_defaults() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg, ExperimentConfig::new(EnvKind::PendulumSwingup));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for extra in ["bogus = 1\n", "[meta]\nalfa = 1.0\n", "[meta.ensemble]\nsize = 3\n", "[output]\nformat = \"x\"\n"] {
            let text = format!("{MINIMAL}{extra}");
            assert!(matches!(ExperimentConfig::from_toml(&text), Err(Error::Config(_))), "{extra}");
        }
    }

    #[test]
    fn wrong_schema_is_rejected() {
        let cfg = ExperimentConfig::from_toml(&MINIMAL.replace("v1", "v0")).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for (k, v) in [("alpha", "-1.0"), ("delta", "0.0"), ("gamma", "1.5"), ("imaginary_trajectories", "0")] {
            let text = format!("{MINIMAL}[meta]\n{k} = {v}\n");
            let cfg = ExperimentConfig::from_toml(&text).unwrap();
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{k}");
        }
        let mut cfg = ExperimentConfig::new(EnvKind::PendulumSwingup);
        cfg.heatmap.dims = Some([0, 0]);
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::new(EnvKind::PendulumSwingup);
        cfg.ablation.axis = AblationAxis::EnsembleSize;
        cfg.ablation.values = vec![2.5];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = ExperimentConfig::new(EnvKind::CartpoleSwingup);
        cfg.seeds = vec![3, 1, 4];
        cfg.env.reward_scale = Some(2.5);
        cfg.meta.alpha = 1.0;
        let text = cfg.to_toml().unwrap();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn overrides() {
        let mut cfg = ExperimentConfig::new(EnvKind::PendulumSwingup);
        cfg.apply(&Overrides { seeds: Some(vec![7, 8]), out: Some("x".into()), alpha: Some(0.5) });
        assert_eq!(cfg.seeds, vec![7, 8]);
        assert_eq!(cfg.output.dir, PathBuf::from("x"));
        assert_eq!(cfg.meta.alpha, 0.5);
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("0,3,5-7").unwrap(), vec![0, 3, 5, 6, 7]);
        assert_eq!(parse_seeds(" 4 ").unwrap(), vec![4]);
        assert!(parse_seeds("").is_err());
        assert!(parse_seeds("3-1").is_err());
        assert!(parse_seeds("a").is_err());
    }

    #[test]
    fn ablation_arms() {
        let mut cfg = ExperimentConfig::new(EnvKind::PendulumSwingup);
        cfg.ablation.axis = AblationAxis::EnsembleSize;
        let arm = cfg.ablation_arm(1.0).unwrap();
        assert_eq!(arm.meta.ensemble.members, 1);
        assert_eq!(arm.meta.ensemble.elites, 1);
        cfg.ablation.axis = AblationAxis::ImaginaryN;
        assert_eq!(cfg.ablation_arm(128.0).unwrap().meta.imaginary_trajectories, 128);
    }
}
