//! Rollouts of a policy through any transition function.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::attention::{energy, feedforward_norm_sq, AttentionMetrics, EpisodeMetrics};
use crate::buffer::TransitionRecord;
use crate::env::{Environment, StateVec};
use crate::error::{invalid, Result};
use crate::noise::ExplorationNoise;
use crate::policy::Policy;
use crate::rng::SimRng;

/// A task a policy can be rolled out in: the real environment, a learned
/// model, or a test fixture.
pub trait RolloutTask {
    fn state_dim(&self) -> usize;
    fn dt(&self) -> f64;
    fn sample_initial_state(&self, rng: &mut SimRng) -> Vec<f64>;
    fn reward(&self, x: &[f64], u: &[f64]) -> f64;
    /// Next state and whether the episode failed there.
    fn advance(&self, x: &[f64], t: f64, u: &[f64], rng: &mut SimRng) -> Result<(Vec<f64>, bool)>;
}

impl RolloutTask for Environment {
    fn state_dim(&self) -> usize {
        self.spec().state_dim()
    }

    fn dt(&self) -> f64 {
        self.spec().dt
    }

    fn sample_initial_state(&self, rng: &mut SimRng) -> Vec<f64> {
        self.spec().sample_initial_state(rng)
    }

    fn reward(&self, x: &[f64], u: &[f64]) -> f64 {
        self.spec().reward(x, &self.spec().clamp_action(u))
    }

    fn advance(&self, x: &[f64], t: f64, u: &[f64], rng: &mut SimRng) -> Result<(Vec<f64>, bool)> {
        let out = self.step(
            &StateVec {
                values: x.to_vec(),
                time: t,
            },
            u,
            rng,
        );
        Ok((out.state.values, out.failed))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectorySource {
    RealEnv,
    Model(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: Vec<f64>,
    pub time: f64,
    /// Executed action.
    pub action: Vec<f64>,
    pub pre_squash: Vec<f64>,
    pub mean_action: Vec<f64>,
    pub log_prob: f64,
    /// Task reward `r(x, u)`.
    pub reward: f64,
    pub metrics: AttentionMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub source: TrajectorySource,
    pub steps: Vec<Step>,
    pub final_state: Vec<f64>,
    /// The episode ended early on a failed (diverged) state.
    pub truncated: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn episode_metrics(&self) -> EpisodeMetrics {
        EpisodeMetrics::from_steps(self.steps.iter().map(|s| (s.reward, &s.metrics)))
    }

    /// Transition records `(x_k, u_k, x_{k+1})`; a transition into a
    /// non-finite state is skipped.
    pub fn transitions(&self, dt: f64) -> Vec<TransitionRecord> {
        let mut out = Vec::with_capacity(self.steps.len());
        for (k, s) in self.steps.iter().enumerate() {
            let next = match self.steps.get(k + 1) {
                Some(n) => &n.state,
                None => &self.final_state,
            };
            if let Ok(r) = TransitionRecord::new(s.state.clone(), s.action.clone(), next.clone(), dt) {
                out.push(r);
            }
        }
        out
    }
}

/// How actions are chosen during a rollout.
#[derive(Debug)]
pub enum ActionMode<'a> {
    /// Sample from the policy.
    Stochastic,
    /// Sample from the policy and add exploration noise.
    Explore(&'a mut ExplorationNoise),
    /// Always take the mean action.
    Deterministic,
}

/// Which action sequence the feedforward norm differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedforwardSource {
    MeanAction,
    Executed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutOptions {
    pub horizon: usize,
    pub feedforward: FeedforwardSource,
    pub source: TrajectorySource,
}

/// Rolls `policy` out from `x0` for at most `opts.horizon` steps.
pub fn rollout<T: RolloutTask + ?Sized>(
    task: &T,
    policy: &Policy,
    x0: Vec<f64>,
    opts: &RolloutOptions,
    mut mode: ActionMode<'_>,
    rng: &mut SimRng,
) -> Result<Trajectory> {
    if x0.len() != task.state_dim() || policy.state_dim() != task.state_dim() {
        return Err(invalid("rollout", "policy, task and initial state dimensions differ"));
    }
    let dt = task.dt();
    if let ActionMode::Explore(noise) = &mut mode {
        noise.reset();
    }
    let mut steps: Vec<Step> = Vec::with_capacity(opts.horizon);
    let mut x = x0;
    let mut truncated = false;
    for k in 0..opts.horizon {
        let t = k as f64 * dt;
        let sample = match &mut mode {
            ActionMode::Stochastic => policy.act(&x, t, None, rng)?,
            ActionMode::Explore(noise) => {
                let eps = noise.sample(rng);
                policy.act(&x, t, Some(&eps), rng)?
            }
            ActionMode::Deterministic => policy.act_deterministic(&x, t)?,
        };
        let feedback_sq = policy.state_jacobian(&x, t)?.frobenius_sq();
        let feedforward_sq = {
            let prev = steps.last();
            match opts.feedforward {
                FeedforwardSource::MeanAction => feedforward_norm_sq(
                    &sample.mean_action,
                    prev.map(|p| p.mean_action.as_slice()),
                    dt,
                ),
                FeedforwardSource::Executed => {
                    feedforward_norm_sq(&sample.action, prev.map(|p| p.action.as_slice()), dt)
                }
            }
        };
        let metrics = AttentionMetrics {
            feedback_sq,
            feedforward_sq,
            energy: energy(&sample.action),
        };
        let reward = task.reward(&x, &sample.action);
        let (next, failed) = task.advance(&x, t, &sample.action, rng)?;
        steps.push(Step {
            state: core::mem::replace(&mut x, next),
            time: t,
            action: sample.action,
            pre_squash: sample.pre_squash,
            mean_action: sample.mean_action,
            log_prob: sample.log_prob,
            reward,
            metrics,
        });
        if failed {
            truncated = true;
            break;
        }
    }
    Ok(Trajectory {
        source: opts.source,
        steps,
        final_state: x,
        truncated,
    })
}
