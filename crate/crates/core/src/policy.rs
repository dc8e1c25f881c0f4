//! Stochastic control policies.
//!
//! Two parameterizations share one interface:
//!
//! * [`PolicyBody::Mlp`]: a tanh-squashed Gaussian. The network outputs the
//!   pre-squash mean `y(x)`; a sample is `z ~ N(y, diag(exp(2 log_std)))`
//!   mapped into the action box by `mid + half * tanh(z)`.
//! * [`PolicyBody::Linear`]: `u = K(t) x + v(t) + eps`, with `K` and `v`
//!   piecewise linear in time over a knot grid and `eps ~ N(0, exp(2 log_std))`
//!   (or an externally supplied noise sample).
//!
//! The flat parameter vector is the body's parameters followed by `log_std`.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{LN_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};
use crate::linalg::DenseMatrix;
use crate::mlp::{Activation, MlpNetwork};
use crate::rng::{normal, SimRng};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    MlpGaussian,
    LinearTimeVarying,
}

/// `K(t)` and `v(t)` as piecewise-linear functions over `knot_times`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSchedule {
    state_dim: usize,
    action_dim: usize,
    knot_times: Vec<f64>,
    /// Per knot an `action_dim x state_dim` row-major gain.
    gains: Vec<f64>,
    /// Per knot an `action_dim` offset.
    offsets: Vec<f64>,
}

impl LinearSchedule {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        knot_times: Vec<f64>,
        gains: Vec<f64>,
        offsets: Vec<f64>,
    ) -> Result<Self> {
        if knot_times.is_empty() {
            return Err(invalid("knot_times", "need at least one knot"));
        }
        if knot_times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid("knot_times", "must be strictly increasing"));
        }
        let k = knot_times.len();
        check_len("LinearSchedule gains", k * action_dim * state_dim, gains.len())?;
        check_len("LinearSchedule offsets", k * action_dim, offsets.len())?;
        if gains.iter().chain(&offsets).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("LinearSchedule"));
        }
        Ok(Self {
            state_dim,
            action_dim,
            knot_times,
            gains,
            offsets,
        })
    }

    /// Time-invariant `u = K x + v`.
    pub fn constant(gain: &DenseMatrix, offset: &[f64]) -> Result<Self> {
        check_len("LinearSchedule offset", gain.rows(), offset.len())?;
        Self::new(
            gain.cols(),
            gain.rows(),
            vec![0.0],
            gain.as_slice().to_vec(),
            offset.to_vec(),
        )
    }

    /// All-zero schedule with `knots` uniform knots over `[0, span]`.
    pub fn zeros(state_dim: usize, action_dim: usize, knots: usize, span: f64) -> Result<Self> {
        if knots == 0 {
            return Err(invalid("knots", "need at least one knot"));
        }
        let times = if knots == 1 {
            vec![0.0]
        } else {
            (0..knots)
                .map(|k| span * k as f64 / (knots - 1) as f64)
                .collect()
        };
        Self::new(
            state_dim,
            action_dim,
            times,
            vec![0.0; knots * action_dim * state_dim],
            vec![0.0; knots * action_dim],
        )
    }

    fn param_count(&self) -> usize {
        self.gains.len() + self.offsets.len()
    }

    /// `(left knot, right knot, weight of right knot)` at time `t`.
    fn bracket(&self, t: f64) -> (usize, usize, f64) {
        let k = self.knot_times.len();
        if k == 1 || t <= self.knot_times[0] {
            return (0, 0, 0.0);
        }
        if t >= self.knot_times[k - 1] {
            return (k - 1, k - 1, 0.0);
        }
        let hi = self.knot_times.partition_point(|&kt| kt <= t);
        let lo = hi - 1;
        let w = (t - self.knot_times[lo]) / (self.knot_times[hi] - self.knot_times[lo]);
        (lo, hi, w)
    }

    pub fn gain(&self, t: f64) -> DenseMatrix {
        let size = self.action_dim * self.state_dim;
        let (lo, hi, w) = self.bracket(t);
        let a = &self.gains[lo * size..(lo + 1) * size];
        let data = if w == 0.0 {
            a.to_vec()
        } else {
            let b = &self.gains[hi * size..(hi + 1) * size];
            a.iter().zip(b).map(|(p, q)| (1.0 - w) * p + w * q).collect()
        };
        DenseMatrix::new(self.action_dim, self.state_dim, data).expect("schedule is finite")
    }

    pub fn offset(&self, t: f64) -> Vec<f64> {
        let m = self.action_dim;
        let (lo, hi, w) = self.bracket(t);
        let a = &self.offsets[lo * m..(lo + 1) * m];
        if w == 0.0 {
            return a.to_vec();
        }
        let b = &self.offsets[hi * m..(hi + 1) * m];
        a.iter().zip(b).map(|(p, q)| (1.0 - w) * p + w * q).collect()
    }

    fn mean(&self, x: &[f64], t: f64) -> Vec<f64> {
        let k = self.gain(t);
        let v = self.offset(t);
        (0..self.action_dim)
            .map(|i| crate::linalg::dot(k.row(i), x) + v[i])
            .collect()
    }

    /// Adds `d/dparams [ mean_cot . (K(t) x + v(t)) + fb_weight ||K(t)||^2 ]`.
    fn accumulate(&self, x: &[f64], t: f64, mean_cot: &[f64], fb_weight: f64, grad: &mut [f64]) {
        let (n, m) = (self.state_dim, self.action_dim);
        let size = m * n;
        let (lo, hi, w) = self.bracket(t);
        let k = if fb_weight != 0.0 { Some(self.gain(t)) } else { None };
        let offsets_at = self.gains.len();
        let knots: &[(usize, f64)] = if w == 0.0 {
            &[(lo, 1.0), (0, 0.0)]
        } else {
            &[(lo, 1.0 - w), (hi, w)]
        };
        for &(knot, kw) in knots {
            if kw == 0.0 {
                continue;
            }
            for i in 0..m {
                for j in 0..n {
                    let mut g = mean_cot[i] * x[j];
                    if let Some(k) = &k {
                        g += fb_weight * 2.0 * k.get(i, j);
                    }
                    grad[knot * size + i * n + j] += kw * g;
                }
                grad[offsets_at + knot * m + i] += kw * mean_cot[i];
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyBody {
    Mlp(MlpNetwork),
    Linear(LinearSchedule),
}

/// One draw from the policy.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySample {
    /// Executed action, inside the action bounds.
    pub action: Vec<f64>,
    pub log_prob: f64,
    /// Pre-squash sample `z` (mlp) or unclamped `u` (linear); the
    /// log-probability and its gradient are taken at this point.
    pub pre_squash: Vec<f64>,
    /// Noise-free action at the same state and time.
    pub mean_action: Vec<f64>,
}

/// Cotangent of one rollout step with respect to the policy outputs.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepCotangent<'a> {
    /// `weight * log pi(pre_squash | x)`.
    pub score: Option<(&'a [f64], f64)>,
    /// `cot . mean_action(x)`.
    pub mean_action: Option<&'a [f64]>,
    /// `weight * ||d mean_action / dx||_F^2`.
    pub feedback_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    body: PolicyBody,
    log_std: Vec<f64>,
    action_low: Vec<f64>,
    action_high: Vec<f64>,
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[inline]
fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else {
        libm::log1p(libm::exp(v))
    }
}

/// `ln(1 - tanh(z)^2)` without cancellation.
#[inline]
fn log_sech2(z: f64) -> f64 {
    2.0 * (LN_2 - z - softplus(-2.0 * z))
}

impl Policy {
    /// Gaussian MLP policy; the output layer is scaled down by 0.1 so initial
    /// actions sit near the middle of the box.
    #[allow(clippy::too_many_arguments)]
    pub fn mlp(
        state_dim: usize,
        hidden: &[usize],
        activation: Activation,
        action_low: Vec<f64>,
        action_high: Vec<f64>,
        init_log_std: f64,
        rng: &mut SimRng,
    ) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(state_dim);
        sizes.extend_from_slice(hidden);
        sizes.push(action_low.len());
        let mut net = MlpNetwork::random(&sizes, activation, Activation::Identity, rng)?;
        let last = net.num_layers() - 1;
        net.scale_layer(last, 0.1);
        Self::from_body(PolicyBody::Mlp(net), init_log_std, action_low, action_high)
    }

    pub fn linear(
        schedule: LinearSchedule,
        init_log_std: f64,
        action_low: Vec<f64>,
        action_high: Vec<f64>,
    ) -> Result<Self> {
        Self::from_body(PolicyBody::Linear(schedule), init_log_std, action_low, action_high)
    }

    pub fn from_body(
        body: PolicyBody,
        init_log_std: f64,
        action_low: Vec<f64>,
        action_high: Vec<f64>,
    ) -> Result<Self> {
        let m = action_low.len();
        check_len("Policy action_high", m, action_high.len())?;
        if action_low
            .iter()
            .zip(&action_high)
            .any(|(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo < hi))
        {
            return Err(invalid("action bounds", "need finite lo < hi"));
        }
        match &body {
            PolicyBody::Mlp(net) => check_len("Policy network output", m, net.output_dim())?,
            PolicyBody::Linear(s) => check_len("Policy schedule actions", m, s.action_dim)?,
        }
        if !init_log_std.is_finite() {
            return Err(Error::NonFinite("init_log_std"));
        }
        Ok(Self {
            body,
            log_std: vec![init_log_std.clamp(LOG_STD_MIN, LOG_STD_MAX); m],
            action_low,
            action_high,
        })
    }

    pub fn kind(&self) -> PolicyKind {
        match self.body {
            PolicyBody::Mlp(_) => PolicyKind::MlpGaussian,
            PolicyBody::Linear(_) => PolicyKind::LinearTimeVarying,
        }
    }

    pub fn body(&self) -> &PolicyBody {
        &self.body
    }

    pub fn body_mut(&mut self) -> &mut PolicyBody {
        &mut self.body
    }

    pub fn state_dim(&self) -> usize {
        match &self.body {
            PolicyBody::Mlp(net) => net.input_dim(),
            PolicyBody::Linear(s) => s.state_dim,
        }
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn action_low(&self) -> &[f64] {
        &self.action_low
    }

    pub fn action_high(&self) -> &[f64] {
        &self.action_high
    }

    fn body_param_count(&self) -> usize {
        match &self.body {
            PolicyBody::Mlp(net) => net.param_count(),
            PolicyBody::Linear(s) => s.param_count(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.body_param_count() + self.log_std.len()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        match &self.body {
            PolicyBody::Mlp(net) => p.extend_from_slice(net.params()),
            PolicyBody::Linear(s) => {
                p.extend_from_slice(&s.gains);
                p.extend_from_slice(&s.offsets);
            }
        }
        p.extend_from_slice(&self.log_std);
        p
    }

    /// Loads a flat parameter vector; `log_std` entries are clamped to
    /// `[-20, 2]`.
    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        check_len("Policy::set_params", self.param_count(), params.len())?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("policy parameters"));
        }
        let nb = self.body_param_count();
        match &mut self.body {
            PolicyBody::Mlp(net) => net.set_params(&params[..nb])?,
            PolicyBody::Linear(s) => {
                let ng = s.gains.len();
                s.gains.copy_from_slice(&params[..ng]);
                s.offsets.copy_from_slice(&params[ng..nb]);
            }
        }
        for (ls, p) in self.log_std.iter_mut().zip(&params[nb..]) {
            *ls = p.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
        Ok(())
    }

    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        let mut p = self.clone();
        p.set_params(params)?;
        Ok(p)
    }

    #[inline]
    fn mid_half(&self, i: usize) -> (f64, f64) {
        let (lo, hi) = (self.action_low[i], self.action_high[i]);
        (0.5 * (lo + hi), 0.5 * (hi - lo))
    }

    fn clamp(&self, u: &mut [f64]) {
        for (i, v) in u.iter_mut().enumerate() {
            *v = v.clamp(self.action_low[i], self.action_high[i]);
        }
    }

    fn check_state(&self, x: &[f64]) -> Result<()> {
        check_len("Policy state", self.state_dim(), x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("policy state"));
        }
        Ok(())
    }

    /// Pre-squash mean (mlp) or `K(t) x + v(t)` (linear).
    fn location(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        match &self.body {
            PolicyBody::Mlp(net) => net.forward(x),
            PolicyBody::Linear(s) => Ok(s.mean(x, t)),
        }
    }

    fn squash(&self, loc: &[f64]) -> Vec<f64> {
        loc.iter()
            .enumerate()
            .map(|(i, y)| {
                let (mid, half) = self.mid_half(i);
                mid + half * libm::tanh(*y)
            })
            .collect()
    }

    /// Noise-free action. For the linear kind this is exactly
    /// `K(t) x + v(t)` (not clamped).
    pub fn mean_action(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        self.check_state(x)?;
        let loc = self.location(x, t)?;
        Ok(match self.body {
            PolicyBody::Mlp(_) => self.squash(&loc),
            PolicyBody::Linear(_) => loc,
        })
    }

    /// Draws an action. `noise` is the exploration sample: it replaces the
    /// Gaussian `eps` for the linear kind and is added after squashing for
    /// the mlp kind (the executed action is then clamped to the bounds; the
    /// reported log-probability is that of the policy's own sample).
    pub fn act(
        &self,
        x: &[f64],
        t: f64,
        noise: Option<&[f64]>,
        rng: &mut SimRng,
    ) -> Result<PolicySample> {
        self.check_state(x)?;
        if let Some(n) = noise {
            check_len("Policy::act noise", self.action_dim(), n.len())?;
        }
        let loc = self.location(x, t)?;
        let m = self.action_dim();
        match self.body {
            PolicyBody::Mlp(_) => {
                let pre: Vec<f64> = (0..m)
                    .map(|i| loc[i] + libm::exp(self.log_std[i]) * normal(rng))
                    .collect();
                let mut action = self.squash(&pre);
                if let Some(n) = noise {
                    for (a, e) in action.iter_mut().zip(n) {
                        *a += e;
                    }
                    self.clamp(&mut action);
                }
                let log_prob = self.log_prob_at(&loc, &pre);
                Ok(PolicySample {
                    action,
                    log_prob,
                    pre_squash: pre,
                    mean_action: self.squash(&loc),
                })
            }
            PolicyBody::Linear(_) => {
                let pre: Vec<f64> = match noise {
                    Some(n) => loc.iter().zip(n).map(|(l, e)| l + e).collect(),
                    None => (0..m)
                        .map(|i| loc[i] + libm::exp(self.log_std[i]) * normal(rng))
                        .collect(),
                };
                let mut action = pre.clone();
                self.clamp(&mut action);
                let log_prob = self.log_prob_at(&loc, &pre);
                Ok(PolicySample {
                    action,
                    log_prob,
                    pre_squash: pre,
                    mean_action: loc,
                })
            }
        }
    }

    /// The noise-free action as a [`PolicySample`]; `pre_squash` is the
    /// distribution's location.
    pub fn act_deterministic(&self, x: &[f64], t: f64) -> Result<PolicySample> {
        self.check_state(x)?;
        let loc = self.location(x, t)?;
        let mean = match self.body {
            PolicyBody::Mlp(_) => self.squash(&loc),
            PolicyBody::Linear(_) => loc.clone(),
        };
        let mut action = mean.clone();
        self.clamp(&mut action);
        Ok(PolicySample {
            action,
            log_prob: self.log_prob_at(&loc, &loc),
            pre_squash: loc,
            mean_action: mean,
        })
    }

    fn log_prob_at(&self, loc: &[f64], pre: &[f64]) -> f64 {
        let mut lp = 0.0;
        for i in 0..self.action_dim() {
            let ls = self.log_std[i];
            let r = (pre[i] - loc[i]) * libm::exp(-ls);
            lp += -0.5 * r * r - ls - HALF_LN_2PI;
            if let PolicyBody::Mlp(_) = self.body {
                let (_, half) = self.mid_half(i);
                lp -= libm::log(half) + log_sech2(pre[i]);
            }
        }
        lp
    }

    /// Maps an executed action back to the pre-squash sample.
    pub fn pre_squash_of(&self, action: &[f64]) -> Result<Vec<f64>> {
        check_len("Policy action", self.action_dim(), action.len())?;
        match self.body {
            PolicyBody::Mlp(_) => action
                .iter()
                .enumerate()
                .map(|(i, a)| {
                    let (mid, half) = self.mid_half(i);
                    let r = (a - mid) / half;
                    if !(r.abs() < 1.0) {
                        Err(Error::BoundaryAction)
                    } else {
                        Ok(libm::atanh(r))
                    }
                })
                .collect(),
            PolicyBody::Linear(_) => Ok(action.to_vec()),
        }
    }

    /// Log-density of `action` at state `x`, time `t`.
    pub fn log_prob(&self, x: &[f64], t: f64, action: &[f64]) -> Result<f64> {
        self.check_state(x)?;
        let pre = self.pre_squash_of(action)?;
        let loc = self.location(x, t)?;
        Ok(self.log_prob_at(&loc, &pre))
    }

    /// Log-density of a pre-squash sample.
    pub fn log_prob_pre(&self, x: &[f64], t: f64, pre: &[f64]) -> Result<f64> {
        self.check_state(x)?;
        check_len("Policy pre-squash", self.action_dim(), pre.len())?;
        let loc = self.location(x, t)?;
        Ok(self.log_prob_at(&loc, pre))
    }

    /// Gradient of `log pi(action | x, t)` with respect to every parameter.
    pub fn log_prob_grad(&self, x: &[f64], t: f64, action: &[f64]) -> Result<Vec<f64>> {
        let pre = self.pre_squash_of(action)?;
        let mut g = vec![0.0; self.param_count()];
        self.accumulate_gradient(
            x,
            t,
            StepCotangent {
                score: Some((&pre, 1.0)),
                ..StepCotangent::default()
            },
            &mut g,
        )?;
        Ok(g)
    }

    /// `d mean_action / dx`, `action_dim x state_dim`. For the linear kind
    /// this is `K(t)` itself.
    pub fn state_jacobian(&self, x: &[f64], t: f64) -> Result<DenseMatrix> {
        self.check_state(x)?;
        match &self.body {
            PolicyBody::Mlp(net) => {
                let tape = net.forward_tape(x)?;
                let mut j = net.input_jacobian_from_tape(&tape)?;
                for (i, y) in tape.output().iter().enumerate() {
                    let th = libm::tanh(*y);
                    let d = self.mid_half(i).1 * (1.0 - th * th);
                    for v in j.row_mut(i) {
                        *v *= d;
                    }
                }
                Ok(j)
            }
            PolicyBody::Linear(s) => Ok(s.gain(t)),
        }
    }

    /// Mean action and its state Jacobian in one pass.
    pub fn mean_and_jacobian(&self, x: &[f64], t: f64) -> Result<(Vec<f64>, DenseMatrix)> {
        self.check_state(x)?;
        match &self.body {
            PolicyBody::Mlp(net) => {
                let tape = net.forward_tape(x)?;
                let mut j = net.input_jacobian_from_tape(&tape)?;
                for (i, y) in tape.output().iter().enumerate() {
                    let th = libm::tanh(*y);
                    let d = self.mid_half(i).1 * (1.0 - th * th);
                    for v in j.row_mut(i) {
                        *v *= d;
                    }
                }
                Ok((self.squash(tape.output()), j))
            }
            PolicyBody::Linear(s) => Ok((s.mean(x, t), s.gain(t))),
        }
    }

    /// Adds the parameter gradient of the scalar described by `cot` into
    /// `grad`.
    pub fn accumulate_gradient(
        &self,
        x: &[f64],
        t: f64,
        cot: StepCotangent<'_>,
        grad: &mut [f64],
    ) -> Result<()> {
        self.check_state(x)?;
        check_len("Policy gradient buffer", self.param_count(), grad.len())?;
        let m = self.action_dim();
        if let Some((pre, _)) = cot.score {
            check_len("Policy pre-squash", m, pre.len())?;
        }
        if let Some(c) = cot.mean_action {
            check_len("Policy mean-action cotangent", m, c.len())?;
        }
        let nb = self.body_param_count();
        match &self.body {
            PolicyBody::Mlp(net) => {
                let fbw = cot.feedback_weight;
                let (y, tangents, tape) = if fbw != 0.0 {
                    let tt = net.forward_tangents(x)?;
                    (tt.output().to_vec(), Some(tt), None)
                } else {
                    let tape = net.forward_tape(x)?;
                    (tape.output().to_vec(), None, Some(tape))
                };
                let mut out_cot = vec![0.0; m];
                for i in 0..m {
                    let (_, half) = self.mid_half(i);
                    let th = libm::tanh(y[i]);
                    let sech2 = 1.0 - th * th;
                    if let Some((pre, w)) = cot.score {
                        let inv_var = libm::exp(-2.0 * self.log_std[i]);
                        let r = pre[i] - y[i];
                        out_cot[i] += w * r * inv_var;
                        grad[nb + i] += w * (r * r * inv_var - 1.0);
                    }
                    if let Some(c) = cot.mean_action {
                        out_cot[i] += c[i] * half * sech2;
                    }
                }
                match (tangents, tape) {
                    (Some(tt), _) => {
                        let jn = tt.jacobian();
                        let n = net.input_dim();
                        let mut jac_cot = DenseMatrix::zeros(m, n);
                        for i in 0..m {
                            let (_, half) = self.mid_half(i);
                            let th = libm::tanh(y[i]);
                            let sech2 = 1.0 - th * th;
                            let d = half * sech2;
                            let dd = half * (-2.0 * th * sech2);
                            let row_sq: f64 = jn.row(i).iter().map(|v| v * v).sum();
                            out_cot[i] += fbw * 2.0 * d * dd * row_sq;
                            for j in 0..n {
                                jac_cot.set(i, j, fbw * 2.0 * d * d * jn.get(i, j));
                            }
                        }
                        net.jacobian_backward(&tt, &out_cot, &jac_cot, &mut grad[..nb], 1.0)?;
                    }
                    (None, Some(tape)) => {
                        if out_cot.iter().any(|c| *c != 0.0) {
                            net.backward(&tape, &out_cot, Some((&mut grad[..nb], 1.0)))?;
                        }
                    }
                    _ => unreachable!(),
                }
            }
            PolicyBody::Linear(s) => {
                let loc = s.mean(x, t);
                let mut mean_cot = vec![0.0; m];
                for i in 0..m {
                    if let Some((pre, w)) = cot.score {
                        let inv_var = libm::exp(-2.0 * self.log_std[i]);
                        let r = pre[i] - loc[i];
                        mean_cot[i] += w * r * inv_var;
                        grad[nb + i] += w * (r * r * inv_var - 1.0);
                    }
                    if let Some(c) = cot.mean_action {
                        mean_cot[i] += c[i];
                    }
                }
                s.accumulate(x, t, &mean_cot, cot.feedback_weight, &mut grad[..nb]);
            }
        }
        Ok(())
    }
}

/// Density of a 1-D tanh-squashed Gaussian at `a`, for quadrature checks.
pub fn squashed_density(mean: f64, log_std: f64, low: f64, high: f64, a: f64) -> f64 {
    let (mid, half) = (0.5 * (low + high), 0.5 * (high - low));
    let r = (a - mid) / half;
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let z = libm::atanh(r);
    let s = libm::exp(log_std);
    let g = libm::exp(-0.5 * ((z - mean) / s) * ((z - mean) / s)) / (s * libm::sqrt(2.0 * PI));
    g / (half * (1.0 - r * r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn linear_policy(k: &[f64], v: &[f64], n: usize, ls: f64) -> Policy {
        let m = v.len();
        let gain = DenseMatrix::new(m, n, k.to_vec()).unwrap();
        let s = LinearSchedule::constant(&gain, v).unwrap();
        Policy::linear(s, ls, vec![-10.0; m], vec![10.0; m]).unwrap()
    }

    #[test]
    fn pure_feedforward_linear_policy() {
        let p = linear_policy(&[0.0, 0.0], &[0.7], 2, -1.0);
        let mut rng = seeded(0);
        for x in [[0.0, 0.0], [3.0, -2.0], [-1.5, 8.0]] {
            let s = p.act(&x, 0.3, Some(&[0.0]), &mut rng).unwrap();
            assert_eq!(s.action, vec![0.7]);
            assert_eq!(p.mean_action(&x, 0.3).unwrap(), vec![0.7]);
        }
    }

    #[test]
    fn linear_jacobian_is_the_gain() {
        let k = [0.3, -1.2, 2.5, 0.01, -0.7, 4.0];
        let p = linear_policy(&k, &[0.1, 0.2], 3, 0.0);
        let j = p.state_jacobian(&[1.0, 2.0, 3.0], 0.0).unwrap();
        assert_eq!(j.as_slice(), &k);
    }

    #[test]
    fn schedule_interpolates_between_knots() {
        let s = LinearSchedule::new(1, 1, vec![0.0, 1.0, 3.0], vec![0.0, 2.0, 6.0], vec![1.0, 1.0, 0.0])
            .unwrap();
        assert_eq!(s.gain(0.5).get(0, 0), 1.0);
        assert_eq!(s.gain(2.0).get(0, 0), 4.0);
        assert_eq!(s.gain(1.0).get(0, 0), 2.0);
        assert_eq!(s.gain(9.0).get(0, 0), 6.0);
        assert_eq!(s.offset(2.0), vec![0.5]);
        assert!(LinearSchedule::new(1, 1, vec![0.0, 0.0], vec![0.0; 2], vec![0.0; 2]).is_err());
        assert!(LinearSchedule::new(1, 1, vec![], vec![], vec![]).is_err());
    }

    #[test]
    fn near_deterministic_mlp_policy() {
        let mut rng = seeded(5);
        let mut p = Policy::mlp(2, &[8, 8], Activation::Tanh, vec![-1.0], vec![1.0], -20.0, &mut rng)
            .unwrap();
        let params = p.params();
        p.set_params(&params).unwrap();
        assert_eq!(p.log_std(), &[-20.0]);
        for k in 0..20 {
            let x = [0.1 * k as f64, -0.05 * k as f64];
            let s = p.act(&x, 0.0, None, &mut rng).unwrap();
            let mean = p.mean_action(&x, 0.0).unwrap();
            assert!((s.action[0] - mean[0]).abs() < 1e-6);
            assert!(s.log_prob.is_finite());
        }
    }

    #[test]
    fn zero_network_acts_at_the_midpoint() {
        let net = MlpNetwork::zeros(&[2, 4, 1], Activation::Tanh, Activation::Identity).unwrap();
        let p = Policy::from_body(PolicyBody::Mlp(net), 0.0, vec![-1.0], vec![3.0]).unwrap();
        assert_eq!(p.mean_action(&[0.4, 9.0], 0.0).unwrap(), vec![1.0]);
    }

    #[test]
    fn saturated_squash_has_flat_jacobian() {
        let mut rng = seeded(8);
        let mut p = Policy::mlp(2, &[6], Activation::Tanh, vec![-1.0], vec![1.0], 0.0, &mut rng).unwrap();
        if let PolicyBody::Mlp(net) = p.body_mut() {
            net.set_bias(1, 0, 40.0);
        }
        let j = p.state_jacobian(&[0.2, -0.3], 0.0).unwrap();
        assert!(j.row(0).iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-6);
    }

    #[test]
    fn log_std_is_clamped() {
        let mut p = linear_policy(&[1.0], &[0.0], 1, 5.0);
        assert_eq!(p.log_std(), &[2.0]);
        let mut params = p.params();
        *params.last_mut().unwrap() = -50.0;
        p.set_params(&params).unwrap();
        assert_eq!(p.log_std(), &[-20.0]);
    }

    #[test]
    fn boundary_action_has_no_gradient() {
        let mut rng = seeded(1);
        let p = Policy::mlp(2, &[4], Activation::Tanh, vec![-1.0], vec![1.0], 0.0, &mut rng).unwrap();
        assert_eq!(p.log_prob_grad(&[0.0, 0.0], 0.0, &[1.0]), Err(Error::BoundaryAction));
        assert_eq!(p.log_prob_grad(&[0.0, 0.0], 0.0, &[-1.0]), Err(Error::BoundaryAction));
    }

    #[test]
    fn score_at_the_mode_vanishes_on_the_location() {
        let mut rng = seeded(2);
        let p = Policy::mlp(2, &[5], Activation::Tanh, vec![-1.0], vec![1.0], -0.5, &mut rng).unwrap();
        let x = [0.3, 0.4];
        let mean = p.mean_action(&x, 0.0).unwrap();
        let g = p.log_prob_grad(&x, 0.0, &mean).unwrap();
        let nb = p.param_count() - 1;
        assert!(g[..nb].iter().all(|v| v.abs() < 1e-12));
        // d/d log_std at the mode is -1.
        assert!((g[nb] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_score_matches_closed_form_at_two_scales() {
        // u = k x + v + eps, eps ~ N(0, s^2); d log p / dv = (u - mu)/s^2,
        // d/dk = x (u - mu)/s^2, d/d log s = (u - mu)^2/s^2 - 1.
        let x = [1.5];
        let u = [0.9];
        for ls in [-0.3, -0.6] {
            let p = linear_policy(&[0.2], &[0.1], 1, ls);
            let g = p.log_prob_grad(&x, 0.0, &u).unwrap();
            let s2 = libm::exp(2.0 * ls);
            let r = u[0] - (0.2 * 1.5 + 0.1);
            assert!((g[0] - x[0] * r / s2).abs() < 1e-12);
            assert!((g[1] - r / s2).abs() < 1e-12);
            assert!((g[2] - (r * r / s2 - 1.0)).abs() < 1e-12);
        }
    }
}
