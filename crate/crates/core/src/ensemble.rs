//! Learned dynamics: an ensemble of MLPs regressing the finite-difference
//! target `(x_{n+1} - x_n) / dt` on `(x_n, u_n)`.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::adam::AdamState;
use crate::buffer::ReplayBuffer;
use crate::env::{EnvSpec, Environment};
use crate::error::{check_len, invalid, Error, Result};
use crate::mlp::{Activation, MlpNetwork};
use crate::rng::SimRng;
use crate::trajectory::RolloutTask;

const STD_FLOOR: f64 = 1e-8;

/// Per-dimension affine standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        check_len("Normalizer std", mean.len(), std.len())?;
        if mean.iter().chain(&std).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("normalizer"));
        }
        Ok(Self {
            mean,
            std: std.into_iter().map(|s| s.max(STD_FLOOR)).collect(),
        })
    }

    /// Mean and population standard deviation (floored at 1e-8) of `rows`.
    pub fn fit<'a, I>(dim: usize, rows: I) -> Self
    where
        I: IntoIterator<Item = &'a [f64]> + Clone,
    {
        let mut mean = vec![0.0; dim];
        let mut n = 0usize;
        for r in rows.clone() {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
            n += 1;
        }
        if n == 0 {
            return Self::identity(dim);
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| libm::sqrt(s / n as f64).max(STD_FLOOR))
            .collect();
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn denormalize(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| v * s + m)
            .collect()
    }
}

/// A model of the state derivative `f(x, u)`.
pub trait DynamicsModel {
    fn state_dim(&self) -> usize;
    fn derivative(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>>;
}

impl<T: DynamicsModel + ?Sized> DynamicsModel for &T {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }

    fn derivative(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        (**self).derivative(x, u)
    }
}

/// The environment's own discrete drift: a perfect model of its noise-free
/// dynamics.
impl DynamicsModel for Environment {
    fn state_dim(&self) -> usize {
        self.spec().state_dim()
    }

    fn derivative(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        check_len("Environment model state", self.spec().state_dim(), x.len())?;
        let u = self.spec().clamp_action(u);
        Ok(self.dynamics().drift(x, &u, self.spec().dt))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleConfig {
    pub members: usize,
    pub elites: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub holdout_ratio: f64,
    /// Passes over the training split per training call.
    pub epochs: usize,
    /// Upper bound on minibatches per pass; 0 means no bound.
    pub max_batches_per_epoch: usize,
    /// Train each member on its own bootstrap of the training split.
    pub bootstrap: bool,
    /// Records of each split used to report losses; 0 means all.
    pub max_eval_records: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            members: 5,
            elites: 2,
            hidden: vec![64, 64],
            activation: Activation::Swish,
            learning_rate: 1e-3,
            batch_size: 256,
            holdout_ratio: 0.2,
            epochs: 5,
            max_batches_per_epoch: 0,
            bootstrap: true,
            max_eval_records: 2000,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.members == 0 {
            return Err(invalid("ensemble.members", "must be at least 1"));
        }
        if self.elites == 0 {
            return Err(invalid("ensemble.elites", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(invalid("ensemble.batch_size", "must be at least 1"));
        }
        if !(self.holdout_ratio > 0.0 && self.holdout_ratio < 1.0) {
            return Err(invalid("ensemble.holdout_ratio", "must lie in (0, 1)"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("ensemble.learning_rate", "must be positive"));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(invalid("ensemble.hidden", "layer sizes must be positive"));
        }
        Ok(())
    }
}

/// Outcome of one [`DynamicsEnsemble::train`] call; losses are in raw
/// (de-normalized) units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// `loss_history[i][e]`: mean minibatch loss of member `i` in pass `e`.
    pub loss_history: Vec<Vec<f64>>,
    /// Full-pass loss of each member on the training split after training.
    pub train_losses: Vec<f64>,
    pub holdout_losses: Vec<f64>,
    /// Members reinitialized after a non-finite loss.
    pub reinitialized: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsEnsemble {
    state_dim: usize,
    action_dim: usize,
    elite_count: usize,
    /// State coordinates fed to the networks as `(sin, cos)`.
    angle_dims: Vec<usize>,
    members: Vec<MlpNetwork>,
    optimizers: Vec<AdamState>,
    /// `f64::MAX` stands in for an unknown or non-finite loss.
    holdout_losses: Vec<f64>,
    elite_flags: Vec<bool>,
    input_norm: Normalizer,
    output_norm: Normalizer,
}

fn check_angles(state_dim: usize, angle_dims: &[usize]) -> Result<()> {
    for (k, &d) in angle_dims.iter().enumerate() {
        if d >= state_dim || angle_dims[..k].contains(&d) {
            return Err(invalid("angle_dims", "entries must be distinct state indices"));
        }
    }
    Ok(())
}

fn sanitize(loss: f64) -> f64 {
    if loss.is_finite() {
        loss
    } else {
        f64::MAX
    }
}

impl DynamicsEnsemble {
    /// Randomly initialized ensemble. Coordinates in `angle_dims` enter the
    /// networks as `(sin, cos)` pairs so the learned dynamics are periodic in
    /// them.
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        angle_dims: &[usize],
        cfg: &EnsembleConfig,
        rng: &mut SimRng,
    ) -> Result<Self> {
        cfg.validate()?;
        check_angles(state_dim, angle_dims)?;
        let mut sizes = vec![state_dim + angle_dims.len() + action_dim];
        sizes.extend_from_slice(&cfg.hidden);
        sizes.push(state_dim);
        let mut members = Vec::with_capacity(cfg.members);
        let mut optimizers = Vec::with_capacity(cfg.members);
        for _ in 0..cfg.members {
            let net = MlpNetwork::random(&sizes, cfg.activation, Activation::Identity, rng)?;
            optimizers.push(AdamState::new(net.param_count(), cfg.learning_rate)?);
            members.push(net);
        }
        let mut ens = Self {
            state_dim,
            action_dim,
            elite_count: cfg.elites.min(cfg.members),
            angle_dims: angle_dims.to_vec(),
            members,
            optimizers,
            holdout_losses: vec![f64::MAX; cfg.members],
            elite_flags: vec![false; cfg.members],
            input_norm: Normalizer::identity(state_dim + angle_dims.len() + action_dim),
            output_norm: Normalizer::identity(state_dim),
        };
        ens.refresh_elites();
        Ok(ens)
    }

    /// Ensemble from explicit members and normalizers.
    pub fn from_members(
        members: Vec<MlpNetwork>,
        action_dim: usize,
        elites: usize,
        learning_rate: f64,
        input_norm: Normalizer,
        output_norm: Normalizer,
    ) -> Result<Self> {
        let first = members.first().ok_or(Error::NoUsableMembers)?;
        let state_dim = first.output_dim();
        for m in &members {
            check_len("ensemble member input", state_dim + action_dim, m.input_dim())?;
            check_len("ensemble member output", state_dim, m.output_dim())?;
        }
        check_len("input normalizer", state_dim + action_dim, input_norm.dim())?;
        check_len("output normalizer", state_dim, output_norm.dim())?;
        let optimizers = members
            .iter()
            .map(|m| AdamState::new(m.param_count(), learning_rate))
            .collect::<Result<Vec<_>>>()?;
        let n = members.len();
        let mut ens = Self {
            state_dim,
            action_dim,
            elite_count: elites.clamp(1, n),
            angle_dims: Vec::new(),
            members,
            optimizers,
            holdout_losses: vec![f64::MAX; n],
            elite_flags: vec![false; n],
            input_norm,
            output_norm,
        };
        ens.refresh_elites();
        Ok(ens)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn members(&self) -> &[MlpNetwork] {
        &self.members
    }

    pub fn member(&self, index: usize) -> Result<&MlpNetwork> {
        self.members.get(index).ok_or(Error::IndexOutOfRange {
            index,
            len: self.members.len(),
        })
    }

    pub fn holdout_losses(&self) -> &[f64] {
        &self.holdout_losses
    }

    pub fn elite_flags(&self) -> &[bool] {
        &self.elite_flags
    }

    pub fn elite_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.elite_flags[i]).collect()
    }

    pub fn input_normalizer(&self) -> &Normalizer {
        &self.input_norm
    }

    pub fn output_normalizer(&self) -> &Normalizer {
        &self.output_norm
    }

    /// Flags the `min(elites, M)` members with the smallest holdout loss;
    /// ties go to the lower index.
    fn refresh_elites(&mut self) {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| {
            self.holdout_losses[a]
                .total_cmp(&self.holdout_losses[b])
                .then(a.cmp(&b))
        });
        self.elite_flags.iter_mut().for_each(|f| *f = false);
        for &i in order.iter().take(self.elite_count) {
            self.elite_flags[i] = true;
        }
    }

    pub fn angle_dims(&self) -> &[usize] {
        &self.angle_dims
    }

    /// Network input before normalization: non-angle coordinates as they
    /// are, each angle as `(sin, cos)`, then the action.
    fn features(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut f = Vec::with_capacity(x.len() + self.angle_dims.len() + u.len());
        for (d, v) in x.iter().enumerate() {
            if self.angle_dims.contains(&d) {
                f.push(libm::sin(*v));
                f.push(libm::cos(*v));
            } else {
                f.push(*v);
            }
        }
        f.extend_from_slice(u);
        f
    }

    /// De-normalized derivative predicted by member `index`.
    pub fn predict(&self, index: usize, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let net = self.member(index)?;
        check_len("DynamicsEnsemble::predict state", self.state_dim, x.len())?;
        check_len("DynamicsEnsemble::predict action", self.action_dim, u.len())?;
        let input = self.features(x, u);
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model input"));
        }
        let z = net.forward(&self.input_norm.normalize(&input))?;
        Ok(self.output_norm.denormalize(&z))
    }

    pub fn model(&self, index: usize) -> Result<MemberModel<'_>> {
        self.member(index)?;
        Ok(MemberModel {
            ensemble: self,
            index,
        })
    }

    /// Fits normalizers on a fresh training split, trains every member with
    /// Adam on the mean squared finite-difference error and refreshes the
    /// holdout losses and elite flags.
    pub fn train(&mut self, buffer: &ReplayBuffer, cfg: &EnsembleConfig, rng: &mut SimRng) -> Result<TrainReport> {
        cfg.validate()?;
        let n = buffer.len();
        let n_hold = libm::round(n as f64 * cfg.holdout_ratio) as usize;
        let n_hold = n_hold.max(1);
        if n < 2 || n_hold >= n {
            let needed = libm::ceil(2.0 / (1.0 - cfg.holdout_ratio)) as usize;
            return Err(Error::InsufficientData {
                needed: needed.max(2),
                available: n,
            });
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let (hold_idx, train_idx) = order.split_at(n_hold);

        let (sd, ad) = (self.state_dim, self.action_dim);
        let mut inputs = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        for rec in buffer.iter() {
            check_len("transition state", sd, rec.x.len())?;
            check_len("transition action", ad, rec.u.len())?;
            inputs.push(self.features(&rec.x, &rec.u));
            targets.push(rec.finite_diff_target());
        }
        let width = sd + self.angle_dims.len() + ad;
        self.input_norm = Normalizer::fit(width, train_idx.iter().map(|&i| inputs[i].as_slice()));
        self.output_norm = Normalizer::fit(sd, train_idx.iter().map(|&i| targets[i].as_slice()));
        let zin: Vec<Vec<f64>> = inputs.iter().map(|r| self.input_norm.normalize(r)).collect();
        let zout: Vec<Vec<f64>> = targets.iter().map(|r| self.output_norm.normalize(r)).collect();
        let scale: Vec<f64> = self.output_norm.std.iter().map(|s| s * s).collect();

        // Both splits are already in random order, so a prefix is a random
        // subset.
        let limit = if cfg.max_eval_records == 0 { n } else { cfg.max_eval_records };
        let train_eval = &train_idx[..train_idx.len().min(limit)];
        let hold_eval = &hold_idx[..hold_idx.len().min(limit)];
        let member_seeds: Vec<u64> = (0..self.len()).map(|_| rng.next_u64()).collect();
        let mut report = TrainReport {
            loss_history: Vec::with_capacity(self.len()),
            train_losses: Vec::with_capacity(self.len()),
            holdout_losses: Vec::with_capacity(self.len()),
            reinitialized: Vec::new(),
        };
        for i in 0..self.len() {
            let mut mrng = SimRng::seed_from_u64(member_seeds[i]);
            let mut pool: Vec<usize> = if cfg.bootstrap {
                (0..train_idx.len())
                    .map(|_| train_idx[mrng.random_range(0..train_idx.len())])
                    .collect()
            } else {
                train_idx.to_vec()
            };
            let mut history = Vec::with_capacity(cfg.epochs);
            let mut failed = false;
            let batches_per_pass = pool.len().div_ceil(cfg.batch_size);
            let batches = if cfg.max_batches_per_epoch == 0 {
                batches_per_pass
            } else {
                batches_per_pass.min(cfg.max_batches_per_epoch)
            };
            'epochs: for _ in 0..cfg.epochs {
                pool.shuffle(&mut mrng);
                let mut pass_loss = 0.0;
                let mut seen = 0usize;
                for b in 0..batches {
                    let batch = &pool[b * cfg.batch_size..((b + 1) * cfg.batch_size).min(pool.len())];
                    let (loss, grad) = batch_loss_grad(&self.members[i], batch, &zin, &zout, &scale)?;
                    if !loss.is_finite() || self.optimizers[i].step(self.members[i].params_mut(), &grad).is_err() {
                        failed = true;
                        break 'epochs;
                    }
                    pass_loss += loss * batch.len() as f64;
                    seen += batch.len();
                }
                history.push(pass_loss / seen.max(1) as f64);
            }
            let mut train_loss = mean_loss(&self.members[i], train_eval, &zin, &zout, &scale)?;
            let mut hold_loss = mean_loss(&self.members[i], hold_eval, &zin, &zout, &scale)?;
            if failed || !train_loss.is_finite() || !hold_loss.is_finite() {
                self.members[i].reinitialize(&mut mrng);
                self.optimizers[i].reset();
                report.reinitialized.push(i);
                train_loss = f64::INFINITY;
                hold_loss = f64::INFINITY;
            }
            self.holdout_losses[i] = sanitize(hold_loss);
            report.loss_history.push(history);
            report.train_losses.push(train_loss);
            report.holdout_losses.push(hold_loss);
        }
        self.refresh_elites();
        Ok(report)
    }
}

/// Mean raw-unit loss over `batch` and its gradient in normalized units.
fn batch_loss_grad(
    net: &MlpNetwork,
    batch: &[usize],
    zin: &[Vec<f64>],
    zout: &[Vec<f64>],
    scale: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; net.param_count()];
    let mut loss = 0.0;
    let inv = 1.0 / batch.len() as f64;
    let mut upstream = vec![0.0; scale.len()];
    for &k in batch {
        let tape = net.forward_tape(&zin[k])?;
        for (d, (y, t)) in tape.output().iter().zip(&zout[k]).enumerate() {
            let e = y - t;
            loss += e * e * scale[d];
            upstream[d] = 2.0 * e * inv;
        }
        net.backward(&tape, &upstream, Some((&mut grad, 1.0)))?;
    }
    Ok((loss * inv, grad))
}

fn mean_loss(net: &MlpNetwork, idx: &[usize], zin: &[Vec<f64>], zout: &[Vec<f64>], scale: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for &k in idx {
        let y = net.forward(&zin[k])?;
        total += y
            .iter()
            .zip(&zout[k])
            .zip(scale)
            .map(|((a, b), s)| (a - b) * (a - b) * s)
            .sum::<f64>();
    }
    Ok(total / idx.len().max(1) as f64)
}

/// One ensemble member viewed as a [`DynamicsModel`].
#[derive(Debug, Clone, Copy)]
pub struct MemberModel<'a> {
    ensemble: &'a DynamicsEnsemble,
    index: usize,
}

impl DynamicsModel for MemberModel<'_> {
    fn state_dim(&self) -> usize {
        self.ensemble.state_dim
    }

    fn derivative(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.ensemble.predict(self.index, x, u)
    }
}

/// Deterministic rollouts `x' = x + f(x, u) dt` inside a model, with the
/// environment's reward, initial distribution and divergence bound.
#[derive(Debug, Clone, Copy)]
pub struct ModelTask<'a, M> {
    pub model: M,
    pub spec: &'a EnvSpec,
}

impl<M: DynamicsModel> RolloutTask for ModelTask<'_, M> {
    fn state_dim(&self) -> usize {
        self.model.state_dim()
    }

    fn dt(&self) -> f64 {
        self.spec.dt
    }

    fn sample_initial_state(&self, rng: &mut SimRng) -> Vec<f64> {
        self.spec.sample_initial_state(rng)
    }

    fn reward(&self, x: &[f64], u: &[f64]) -> f64 {
        self.spec.reward(x, &self.spec.clamp_action(u))
    }

    fn advance(&self, x: &[f64], _t: f64, u: &[f64], _rng: &mut SimRng) -> Result<(Vec<f64>, bool)> {
        let u = self.spec.clamp_action(u);
        let f = self.model.derivative(x, &u)?;
        let dt = self.spec.dt;
        let next: Vec<f64> = x.iter().zip(&f).map(|(a, b)| a + b * dt).collect();
        let failed = next
            .iter()
            .any(|v| !v.is_finite() || v.abs() > self.spec.state_bound);
        Ok((next, failed))
    }
}
