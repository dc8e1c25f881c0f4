//! The meta-learning loop: real-data collection, model learning, per-member
//! inner adaptation, the ensemble-averaged meta-objective and the
//! trust-region outer step, plus evaluation and meta-testing.

mod config;
mod vpg;

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use config::{AttentionConfig, BaselineKind, MetaConfig, MetaTestConfig, PolicyConfig};
pub use vpg::{discounted_reg_return, mean_return, regularized_rewards, rewards_to_go, vpg_gradient, VpgOptions};

use crate::attention::EpisodeMetrics;
use crate::buffer::ReplayBuffer;
use crate::ensemble::{DynamicsEnsemble, ModelTask};
use crate::env::{EnvSpec, Environment, TaskPerturbation};
use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::noise::ExplorationNoise;
use crate::policy::{LinearSchedule, Policy, PolicyKind};
use crate::rng::{stream, tag, SimRng};
use crate::stats::{mean, sample_std};
use crate::trajectory::{rollout, ActionMode, FeedforwardSource, RolloutOptions, RolloutTask, Trajectory, TrajectorySource};

/// `theta + sqrt(2 delta) g / ||g||`, the maximizer of `g . (theta' - theta)`
/// subject to `0.5 ||theta' - theta||^2 <= delta`; `theta` itself when
/// `g = 0`.
pub fn trust_region_step(theta: &[f64], g: &[f64], delta: f64) -> Result<Vec<f64>> {
    crate::error::check_len("trust_region_step", theta.len(), g.len())?;
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(crate::error::invalid("delta", "must be positive"));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("meta-gradient"));
    }
    let gn = norm(g);
    if gn == 0.0 {
        return Ok(theta.to_vec());
    }
    let radius = libm::sqrt(2.0 * delta);
    Ok(theta.iter().zip(g).map(|(t, v)| t + radius * (v / gn)).collect())
}

/// Inner-loop settings shared by adaptation and the outer objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerConfig {
    pub trajectories: usize,
    pub horizon: usize,
    pub beta: f64,
    pub vpg: VpgOptions,
}

impl InnerConfig {
    pub fn from_meta(cfg: &MetaConfig, dt: f64) -> Self {
        Self {
            trajectories: cfg.imaginary_trajectories,
            horizon: cfg.imaginary_horizon,
            beta: cfg.beta,
            vpg: VpgOptions {
                gamma: cfg.gamma,
                alpha: cfg.effective_alpha(),
                baseline: cfg.baseline,
                pathwise: cfg.attention.pathwise,
                dt,
            },
        }
    }
}

/// `trajectories` stochastic rollouts of `policy` in `task`, dropping the
/// diverged ones.
pub fn sample_trajectories<T: RolloutTask + ?Sized>(
    task: &T,
    policy: &Policy,
    trajectories: usize,
    horizon: usize,
    source: TrajectorySource,
    rng: &mut SimRng,
) -> Result<Vec<Trajectory>> {
    let opts = RolloutOptions {
        horizon,
        feedforward: FeedforwardSource::MeanAction,
        source,
    };
    let mut out = Vec::with_capacity(trajectories);
    for _ in 0..trajectories {
        let x0 = task.sample_initial_state(rng);
        let t = rollout(task, policy, x0, &opts, ActionMode::Stochastic, rng)?;
        if !t.truncated {
            out.push(t);
        }
    }
    if out.is_empty() {
        return Err(Error::AllRolloutsDiverged(trajectories));
    }
    Ok(out)
}

/// One gradient-ascent step `theta + beta grad J` estimated from fresh
/// rollouts in `task`.
pub fn inner_adapt<T: RolloutTask + ?Sized>(
    task: &T,
    policy: &Policy,
    cfg: &InnerConfig,
    source: TrajectorySource,
    rng: &mut SimRng,
) -> Result<Vec<f64>> {
    let trajs = sample_trajectories(task, policy, cfg.trajectories, cfg.horizon, source, rng)?;
    let g = vpg_gradient(policy, &trajs, &cfg.vpg)?;
    let mut theta = policy.params();
    if cfg.beta != 0.0 {
        for (t, v) in theta.iter_mut().zip(&g) {
            *t += cfg.beta * v;
        }
    }
    Ok(theta)
}

fn stream_path(purpose: u64, key: &[u64], id: usize) -> Vec<u64> {
    let mut p = Vec::with_capacity(key.len() + 2);
    p.push(purpose);
    p.extend_from_slice(key);
    p.push(id as u64);
    p
}

/// Result of [`meta_objective_grad`].
#[derive(Debug, Clone, PartialEq)]
pub struct MetaGradient {
    /// Mean post-adaptation objective over usable members.
    pub objective: f64,
    pub gradient: Vec<f64>,
    /// `J_i(theta'_i)` per task; `None` for a failed member.
    pub member_objectives: Vec<Option<f64>>,
    /// Adapted parameters per task; `None` for a failed member.
    pub adapted: Vec<Option<Vec<f64>>>,
}

/// First-order meta-gradient: for every task adapt, resample under the
/// adapted parameters and average the post-adaptation gradients. Failed
/// tasks are skipped; at least one must succeed.
///
/// Task `i` draws from the streams `(seed, INNER, key.., i)` and
/// `(seed, OUTER, key.., i)`.
pub fn meta_objective_grad<T: RolloutTask>(
    tasks: &[(usize, T)],
    policy: &Policy,
    cfg: &InnerConfig,
    seed: u64,
    key: &[u64],
) -> Result<MetaGradient> {
    let mut gradient = vec![0.0; policy.param_count()];
    let mut member_objectives = Vec::with_capacity(tasks.len());
    let mut adapted = Vec::with_capacity(tasks.len());
    let mut objectives = Vec::new();
    for (id, task) in tasks {
        let source = TrajectorySource::Model(*id);
        let member = (|| -> Result<(Vec<f64>, f64, Vec<f64>)> {
            let mut rng = stream(seed, &stream_path(tag::INNER, key, *id));
            let theta_i = inner_adapt(task, policy, cfg, source, &mut rng)?;
            let adapted_policy = policy.with_params(&theta_i)?;
            let mut rng = stream(seed, &stream_path(tag::OUTER, key, *id));
            let trajs = sample_trajectories(task, &adapted_policy, cfg.trajectories, cfg.horizon, source, &mut rng)?;
            let j = mean_return(&trajs, cfg.vpg.gamma, cfg.vpg.alpha);
            let g = vpg_gradient(&adapted_policy, &trajs, &cfg.vpg)?;
            Ok((adapted_policy.params(), j, g))
        })();
        match member {
            Ok((theta_i, j, g)) => {
                for (acc, v) in gradient.iter_mut().zip(&g) {
                    *acc += v;
                }
                objectives.push(j);
                member_objectives.push(Some(j));
                adapted.push(Some(theta_i));
            }
            Err(_) => {
                member_objectives.push(None);
                adapted.push(None);
            }
        }
    }
    if objectives.is_empty() {
        return Err(Error::NoUsableMembers);
    }
    let k = objectives.len() as f64;
    gradient.iter_mut().for_each(|g| *g /= k);
    Ok(MetaGradient {
        objective: mean(&objectives),
        gradient,
        member_objectives,
        adapted,
    })
}

/// Per-episode results of a deterministic evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: Vec<EpisodeMetrics>,
    pub mean_return: f64,
    pub std_return: f64,
    pub mean_feedback_sq: f64,
    pub mean_feedforward_sq: f64,
    pub mean_energy: f64,
}

impl EvalSummary {
    pub fn from_episodes(episodes: Vec<EpisodeMetrics>) -> Self {
        let col = |f: fn(&EpisodeMetrics) -> f64| episodes.iter().map(f).collect::<Vec<f64>>();
        let returns = col(|e| e.total_reward);
        Self {
            mean_return: mean(&returns),
            std_return: sample_std(&returns),
            mean_feedback_sq: mean(&col(|e| e.mean_feedback_sq)),
            mean_feedforward_sq: mean(&col(|e| e.mean_feedforward_sq)),
            mean_energy: mean(&col(|e| e.mean_energy)),
            episodes,
        }
    }
}

/// Runs `episodes` mean-action episodes. Episode `k` uses the stream
/// `(seed, EVAL, k)`, so every evaluation of a seed sees the same initial
/// states and process noise.
pub fn evaluate(env: &Environment, policy: &Policy, episodes: usize, seed: u64) -> Result<EvalSummary> {
    let opts = RolloutOptions {
        horizon: env.spec().horizon,
        feedforward: FeedforwardSource::Executed,
        source: TrajectorySource::RealEnv,
    };
    let mut out = Vec::with_capacity(episodes);
    for k in 0..episodes {
        let mut rng = stream(seed, &[tag::EVAL, k as u64]);
        let x0 = env.reset(&mut rng).values;
        let t = rollout(env, policy, x0, &opts, ActionMode::Deterministic, &mut rng)?;
        out.push(t.episode_metrics());
    }
    Ok(EvalSummary::from_episodes(out))
}

/// Everything recorded about one training epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    /// 1-based.
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
    pub eval: EvalSummary,
}

/// Complete state of a training run. Every epoch derives its random streams
/// from `(seed, epoch)`, so a checkpoint of this struct resumes bitwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingState {
    pub seed: u64,
    pub epoch: usize,
    pub policy: Policy,
    pub ensemble: DynamicsEnsemble,
    pub buffer: ReplayBuffer,
    /// Parameters each member's collection runs under.
    pub adapted: Vec<Vec<f64>>,
    pub env_steps: u64,
    pub reports: Vec<EpochReport>,
}

pub fn initial_policy(cfg: &MetaConfig, spec: &EnvSpec, rng: &mut SimRng) -> Result<Policy> {
    let n = spec.state_dim();
    match cfg.policy.kind {
        PolicyKind::MlpGaussian => Policy::mlp(
            n,
            &cfg.policy.hidden,
            cfg.policy.activation,
            spec.action_low.clone(),
            spec.action_high.clone(),
            cfg.policy.init_log_std,
            rng,
        ),
        PolicyKind::LinearTimeVarying => {
            let span = spec.dt * cfg.imaginary_horizon.max(spec.horizon) as f64;
            let s = LinearSchedule::zeros(n, spec.action_dim(), cfg.policy.knots, span)?;
            Policy::linear(s, cfg.policy.init_log_std, spec.action_low.clone(), spec.action_high.clone())
        }
    }
}

impl TrainingState {
    pub fn new(cfg: &MetaConfig, spec: &EnvSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        cfg.validate(spec.action_dim())?;
        let policy = initial_policy(cfg, spec, &mut stream(seed, &[tag::INIT, 0]))?;
        let ensemble = DynamicsEnsemble::new(
            spec.state_dim(),
            spec.action_dim(),
            spec.kind.angle_dims(),
            &cfg.ensemble,
            &mut stream(seed, &[tag::INIT, 1]),
        )?;
        let theta = policy.params();
        Ok(Self {
            seed,
            epoch: 0,
            adapted: vec![theta; cfg.ensemble.members],
            policy,
            ensemble,
            buffer: ReplayBuffer::new(cfg.buffer_capacity)?,
            env_steps: 0,
            reports: Vec::new(),
        })
    }

    /// Collects real data under each member's adapted parameters, trains the
    /// ensemble, takes one trust-region meta-step and evaluates.
    pub fn run_epoch(&mut self, cfg: &MetaConfig, spec: &EnvSpec) -> Result<EpochReport> {
        let e = self.epoch as u64;
        let members = self.ensemble.len();

        let per_member = cfg.env_steps_per_epoch.div_ceil(members);
        for i in 0..members {
            let task = &cfg.training_tasks[i % cfg.training_tasks.len()];
            let env = Environment::new(spec.clone(), task)?;
            let policy = self.policy.with_params(&self.adapted[i])?;
            let mut noise = ExplorationNoise::from_config(&cfg.noise, spec.action_dim(), spec.dt)?;
            let mut rng = stream(self.seed, &[tag::COLLECT, e, i as u64]);
            let mut remaining = per_member;
            while remaining > 0 {
                let opts = RolloutOptions {
                    horizon: spec.horizon.min(remaining),
                    feedforward: FeedforwardSource::Executed,
                    source: TrajectorySource::RealEnv,
                };
                let x0 = env.reset(&mut rng).values;
                let t = rollout(&env, &policy, x0, &opts, ActionMode::Explore(&mut noise), &mut rng)?;
                remaining -= t.len().max(1).min(remaining);
                self.env_steps += t.len() as u64;
                self.buffer.extend(t.transitions(spec.dt));
            }
        }

        let train = self.ensemble.train(&self.buffer, &cfg.ensemble, &mut stream(self.seed, &[tag::MODEL_TRAIN, e]))?;
        let finite_mean = |v: &[f64]| {
            let f: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
            if f.is_empty() { 0.0 } else { mean(&f) }
        };

        let ids: Vec<usize> = if cfg.elites_only {
            self.ensemble.elite_indices()
        } else {
            (0..members).collect()
        };
        let models: Vec<_> = ids
            .iter()
            .map(|&i| self.ensemble.model(i).map(|m| (i, ModelTask { model: m, spec })))
            .collect::<Result<_>>()?;
        let inner = InnerConfig::from_meta(cfg, spec.dt);
        let start = self.policy.params();
        let mut objectives = Vec::with_capacity(cfg.meta_steps_per_epoch);
        let mut grad_norms = Vec::with_capacity(cfg.meta_steps_per_epoch);
        let mut members_used = 0;
        for step in 0..cfg.meta_steps_per_epoch {
            let mg = meta_objective_grad(&models, &self.policy, &inner, self.seed, &[e, step as u64])?;
            let next = trust_region_step(&self.policy.params(), &mg.gradient, cfg.delta)?;
            self.policy.set_params(&next)?;
            for (k, &i) in ids.iter().enumerate() {
                if let Some(a) = &mg.adapted[k] {
                    self.adapted[i] = a.clone();
                }
            }
            objectives.push(mg.objective);
            grad_norms.push(norm(&mg.gradient));
            members_used = mg.member_objectives.iter().filter(|j| j.is_some()).count();
        }
        let step_norm = norm(
            &self.policy.params().iter().zip(&start).map(|(a, b)| a - b).collect::<Vec<f64>>(),
        );

        let base = Environment::new(spec.clone(), &TaskPerturbation::identity())?;
        let eval = evaluate(&base, &self.policy, cfg.eval_episodes, self.seed)?;
        self.epoch += 1;
        let report = EpochReport {
            epoch: self.epoch,
            env_steps: self.env_steps,
            buffer_len: self.buffer.len(),
            mean_train_loss: finite_mean(&train.train_losses),
            mean_holdout_loss: finite_mean(&train.holdout_losses),
            reinitialized_members: train.reinitialized.len(),
            members_used,
            meta_objective: if objectives.is_empty() { 0.0 } else { mean(&objectives) },
            gradient_norm: if grad_norms.is_empty() { 0.0 } else { mean(&grad_norms) },
            step_norm,
            eval,
        };
        self.reports.push(report.clone());
        Ok(report)
    }
}

/// Pre- and post-adaptation evaluation on one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaTestReport {
    pub task: TaskPerturbation,
    pub adapt_steps: usize,
    pub pre: EvalSummary,
    pub post: EvalSummary,
}

/// Evaluates `policy` on the perturbed real environment, adapts it with
/// `adapt_steps` VPG steps on real trajectories (no exploration noise;
/// stream `(seed, ADAPT, step)`) and evaluates again on the same episodes.
pub fn meta_test(
    policy: &Policy,
    spec: &EnvSpec,
    task: &TaskPerturbation,
    cfg: &MetaConfig,
    seed: u64,
) -> Result<MetaTestReport> {
    let env = Environment::new(spec.clone(), task)?;
    let pre = evaluate(&env, policy, cfg.eval_episodes, seed)?;
    let mut adapted = policy.clone();
    let mut inner = InnerConfig::from_meta(cfg, spec.dt);
    inner.trajectories = cfg.meta_test.trajectories;
    inner.horizon = spec.horizon;
    inner.beta = cfg.meta_test.beta.unwrap_or(cfg.beta);
    for s in 0..cfg.meta_test.adapt_steps {
        let mut rng = stream(seed, &[tag::ADAPT, s as u64]);
        let theta = inner_adapt(&env, &adapted, &inner, TrajectorySource::RealEnv, &mut rng)?;
        adapted.set_params(&theta)?;
    }
    let post = if cfg.meta_test.adapt_steps == 0 {
        pre.clone()
    } else {
        evaluate(&env, &adapted, cfg.eval_episodes, seed)?
    };
    Ok(MetaTestReport {
        task: *task,
        adapt_steps: cfg.meta_test.adapt_steps,
        pre,
        post,
    })
}
