use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::ensemble::EnsembleConfig;
use crate::env::TaskPerturbation;
use crate::error::{invalid, Result};
use crate::mlp::Activation;
use crate::noise::NoiseConfig;
use crate::policy::PolicyKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Across-trajectory mean of the reward-to-go at each step index.
    TimeAvg,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttentionConfig {
    /// Master switch; when off the regularizer contributes nothing,
    /// whatever `alpha` says.
    pub enabled: bool,
    /// Also differentiate the penalty directly through the policy, not only
    /// through the score-function estimator.
    pub pathwise: bool,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            pathwise: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub init_log_std: f64,
    /// Knots of the linear schedule, spread uniformly over the horizon.
    pub knots: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            kind: PolicyKind::MlpGaussian,
            hidden: vec![32, 32],
            activation: Activation::Tanh,
            init_log_std: -0.5,
            knots: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaTestConfig {
    pub adapt_steps: usize,
    /// Real-environment trajectories per adaptation step.
    pub trajectories: usize,
    /// Adaptation step size; the inner `beta` when absent.
    pub beta: Option<f64>,
}

impl Default for MetaTestConfig {
    fn default() -> Self {
        Self {
            adapt_steps: 1,
            trajectories: 16,
            beta: None,
        }
    }
}

/// Hyperparameters of the meta-learning loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaConfig {
    pub alpha: f64,
    /// Inner (adaptation) step size.
    pub beta: f64,
    /// Trust-region radius: `0.5 ||theta' - theta||^2 <= delta`.
    pub delta: f64,
    pub gamma: f64,
    /// Imaginary trajectories per member (`N`).
    pub imaginary_trajectories: usize,
    pub imaginary_horizon: usize,
    pub epochs: usize,
    /// Trust-region meta-steps per epoch.
    pub meta_steps_per_epoch: usize,
    pub env_steps_per_epoch: usize,
    pub baseline: BaselineKind,
    /// Restrict the meta-objective to elite members.
    pub elites_only: bool,
    pub eval_episodes: usize,
    pub buffer_capacity: usize,
    pub attention: AttentionConfig,
    pub noise: NoiseConfig,
    pub ensemble: EnsembleConfig,
    pub policy: PolicyConfig,
    /// Member `i` collects real data on task `i mod len`.
    pub training_tasks: Vec<TaskPerturbation>,
    pub meta_test: MetaTestConfig,
}

impl Default for MetaConfig {
    fn default() -> Self {
        let deg2 = 2.0 * PI / 180.0;
        Self {
            alpha: 0.05,
            beta: 1e-3,
            delta: 0.01,
            gamma: 0.99,
            imaginary_trajectories: 16,
            imaginary_horizon: 100,
            epochs: 30,
            meta_steps_per_epoch: 3,
            env_steps_per_epoch: 1000,
            baseline: BaselineKind::TimeAvg,
            elites_only: false,
            eval_episodes: 10,
            buffer_capacity: 100_000,
            attention: AttentionConfig::default(),
            noise: NoiseConfig::default(),
            ensemble: EnsembleConfig::default(),
            policy: PolicyConfig::default(),
            training_tasks: vec![
                TaskPerturbation::identity(),
                TaskPerturbation::mass_scale(0.9),
                TaskPerturbation::mass_scale(1.1),
                TaskPerturbation::gravity_slope(deg2),
                TaskPerturbation::gravity_slope(-deg2),
            ],
            meta_test: MetaTestConfig::default(),
        }
    }
}

impl MetaConfig {
    /// The regularization weight actually applied.
    pub fn effective_alpha(&self) -> f64 {
        if self.attention.enabled {
            self.alpha
        } else {
            0.0
        }
    }

    pub fn validate(&self, action_dim: usize) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(invalid("alpha", "must be finite and >= 0"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(invalid("beta", "must be finite and >= 0"));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(invalid("delta", "must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(invalid("gamma", "must lie in (0, 1]"));
        }
        if self.imaginary_trajectories == 0 {
            return Err(invalid("imaginary_trajectories", "must be at least 1"));
        }
        if self.imaginary_horizon == 0 {
            return Err(invalid("imaginary_horizon", "must be at least 1"));
        }
        if self.eval_episodes == 0 {
            return Err(invalid("eval_episodes", "must be at least 1"));
        }
        if self.buffer_capacity == 0 {
            return Err(invalid("buffer_capacity", "must be at least 1"));
        }
        if self.training_tasks.is_empty() {
            return Err(invalid("training_tasks", "need at least one task"));
        }
        for t in &self.training_tasks {
            t.validate(action_dim)?;
        }
        if self.policy.knots == 0 {
            return Err(invalid("policy.knots", "must be at least 1"));
        }
        if self.policy.hidden.iter().any(|&h| h == 0) {
            return Err(invalid("policy.hidden", "layer sizes must be positive"));
        }
        if self.meta_test.trajectories == 0 {
            return Err(invalid("meta_test.trajectories", "must be at least 1"));
        }
        if let Some(b) = self.meta_test.beta {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(invalid("meta_test.beta", "must be finite and >= 0"));
            }
        }
        self.ensemble.validate()
    }
}
