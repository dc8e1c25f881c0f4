//! Score-function policy gradients on regularized returns.

use alloc::vec;
use alloc::vec::Vec;

use crate::attention::regularized_reward;
use crate::error::{Error, Result};
use crate::policy::{Policy, StepCotangent};
use crate::trajectory::Trajectory;

use super::config::BaselineKind;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VpgOptions {
    pub gamma: f64,
    /// Regularization weight; 0 disables every regularizer contribution.
    pub alpha: f64,
    pub baseline: BaselineKind,
    /// Add the direct gradient of the penalty through the policy.
    pub pathwise: bool,
    /// Step length, for the feedforward term.
    pub dt: f64,
}

/// `r_reg` at every step of `traj`.
pub fn regularized_rewards(traj: &Trajectory, alpha: f64) -> Vec<f64> {
    traj.steps
        .iter()
        .map(|s| regularized_reward(s.reward, s.metrics.feedback_sq, s.metrics.feedforward_sq, alpha))
        .collect()
}

/// `sum_{l >= k} gamma^(l - k) r_reg,l`.
pub fn discounted_reg_return(traj: &Trajectory, k: usize, gamma: f64, alpha: f64) -> f64 {
    let r = regularized_rewards(traj, alpha);
    let mut total = 0.0;
    let mut w = 1.0;
    for v in &r[k..] {
        total += w * v;
        w *= gamma;
    }
    total
}

/// Every tail sum `G_k = r_k + gamma G_{k+1}` at once.
pub fn rewards_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for k in (0..rewards.len()).rev() {
        acc = rewards[k] + gamma * acc;
        out[k] = acc;
    }
    out
}

/// Mean discounted regularized return from the first step.
pub fn mean_return(trajs: &[Trajectory], gamma: f64, alpha: f64) -> f64 {
    if trajs.is_empty() {
        return 0.0;
    }
    let total: f64 = trajs
        .iter()
        .map(|t| rewards_to_go(&regularized_rewards(t, alpha), gamma).first().copied().unwrap_or(0.0))
        .sum();
    total / trajs.len() as f64
}

/// Ascent direction of `J = E[sum_k gamma^k r_reg,k]`:
///
/// `(1/N) sum_traj sum_k grad log pi(u_k | x_k) (G_k - b_k)`
///
/// plus, when `opts.pathwise` is set and `alpha > 0`, the direct gradient
/// `-(alpha/N) sum_traj sum_k grad (fb_k + ff_k)` with the feedforward term
/// taken on mean actions.
pub fn vpg_gradient(policy: &Policy, trajs: &[Trajectory], opts: &VpgOptions) -> Result<Vec<f64>> {
    if trajs.is_empty() {
        return Err(Error::EmptyTrajectories);
    }
    let n = trajs.len() as f64;
    let returns: Vec<Vec<f64>> = trajs
        .iter()
        .map(|t| rewards_to_go(&regularized_rewards(t, opts.alpha), opts.gamma))
        .collect();
    let longest = returns.iter().map(Vec::len).max().unwrap_or(0);
    let baseline: Vec<f64> = match opts.baseline {
        BaselineKind::None => vec![0.0; longest],
        BaselineKind::TimeAvg => (0..longest)
            .map(|k| {
                let (sum, count) = returns
                    .iter()
                    .filter_map(|g| g.get(k))
                    .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
                sum / count as f64
            })
            .collect(),
    };
    let pathwise = opts.pathwise && opts.alpha != 0.0;
    let m = policy.action_dim();
    let mut grad = vec![0.0; policy.param_count()];
    let mut ff_cot = vec![0.0; m];
    let inv_dt2 = 1.0 / (opts.dt * opts.dt);
    for (traj, g) in trajs.iter().zip(&returns) {
        for (k, step) in traj.steps.iter().enumerate() {
            let adv = (g[k] - baseline[k]) / n;
            let mut cot = StepCotangent {
                score: Some((&step.pre_squash, adv)),
                ..StepCotangent::default()
            };
            if pathwise {
                // d/du_k of -alpha/N (||u_k - u_{k-1}||^2 + ||u_{k+1} - u_k||^2) / dt^2
                ff_cot.iter_mut().for_each(|c| *c = 0.0);
                let w = -opts.alpha / n * 2.0 * inv_dt2;
                if k > 0 {
                    let prev = &traj.steps[k - 1].mean_action;
                    for i in 0..m {
                        ff_cot[i] += w * (step.mean_action[i] - prev[i]);
                    }
                }
                if let Some(next) = traj.steps.get(k + 1) {
                    for i in 0..m {
                        ff_cot[i] -= w * (next.mean_action[i] - step.mean_action[i]);
                    }
                }
                cot.mean_action = Some(&ff_cot);
                cot.feedback_weight = -opts.alpha / n;
            }
            policy.accumulate_gradient(&step.state, step.time, cot, &mut grad)?;
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::AttentionMetrics;
    use crate::trajectory::{Step, TrajectorySource};

    fn traj(rewards: &[f64]) -> Trajectory {
        Trajectory {
            source: TrajectorySource::RealEnv,
            steps: rewards
                .iter()
                .map(|&r| Step {
                    state: vec![0.0],
                    time: 0.0,
                    action: vec![0.0],
                    pre_squash: vec![0.0],
                    mean_action: vec![0.0],
                    log_prob: 0.0,
                    reward: r,
                    metrics: AttentionMetrics { feedback_sq: 1.0, feedforward_sq: 0.5, energy: 0.0 },
                })
                .collect(),
            final_state: vec![0.0],
            truncated: false,
        }
    }

    #[test]
    fn undiscounted_constant_tail() {
        let t = traj(&[2.0; 7]);
        assert_eq!(discounted_reg_return(&t, 3, 1.0, 0.0), 8.0);
        assert_eq!(discounted_reg_return(&t, 6, 0.9, 0.0), 2.0);
        // With alpha the penalty (1.0 + 0.5) is subtracted per step.
        assert_eq!(discounted_reg_return(&t, 5, 1.0, 1.0), 1.0);
    }

    #[test]
    fn reward_to_go_matches_direct_sum() {
        let r = [0.3, -1.0, 2.5, 0.7, 0.0, 1.1];
        let g = rewards_to_go(&r, 0.9);
        let t = traj(&r);
        for k in 0..r.len() {
            assert!((g[k] - discounted_reg_return(&t, k, 0.9, 0.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_set_is_an_error() {
        use crate::linalg::DenseMatrix;
        use crate::policy::LinearSchedule;
        let s = LinearSchedule::constant(&DenseMatrix::zeros(1, 1), &[0.0]).unwrap();
        let p = Policy::linear(s, 0.0, vec![-1.0], vec![1.0]).unwrap();
        let opts = VpgOptions { gamma: 1.0, alpha: 0.0, baseline: BaselineKind::None, pathwise: false, dt: 0.1 };
        assert_eq!(vpg_gradient(&p, &[], &opts), Err(Error::EmptyTrajectories));
    }
}
