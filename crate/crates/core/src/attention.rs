//! Minimum-attention terms: feedback norm `||du/dx||^2`, feedforward norm
//! `||du/dt||^2`, the regularized reward and the control energy.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::policy::Policy;

/// Per-step attention metrics. All three are non-negative.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AttentionMetrics {
    pub feedback_sq: f64,
    pub feedforward_sq: f64,
    pub energy: f64,
}

/// `||d mean_action / dx||_F^2` at `(x, t)`.
pub fn feedback_norm_sq(policy: &Policy, x: &[f64], t: f64) -> Result<f64> {
    Ok(policy.state_jacobian(x, t)?.frobenius_sq())
}

/// `||(u - u_prev) / dt||^2`, or 0 on the first step of an episode.
pub fn feedforward_norm_sq(u: &[f64], u_prev: Option<&[f64]>, dt: f64) -> f64 {
    match u_prev {
        None => 0.0,
        Some(prev) => u
            .iter()
            .zip(prev)
            .map(|(a, b)| {
                let d = (a - b) / dt;
                d * d
            })
            .sum(),
    }
}

/// `r - alpha (fb + ff)`; returns `r` unchanged when `alpha == 0`.
#[inline]
pub fn regularized_reward(r: f64, feedback_sq: f64, feedforward_sq: f64, alpha: f64) -> f64 {
    if alpha == 0.0 {
        r
    } else {
        r - alpha * (feedback_sq + feedforward_sq)
    }
}

pub fn energy(u: &[f64]) -> f64 {
    u.iter().map(|v| v * v).sum()
}

/// Per-step means over one episode.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub steps: usize,
    pub total_reward: f64,
    pub mean_feedback_sq: f64,
    pub mean_feedforward_sq: f64,
    pub mean_energy: f64,
}

impl EpisodeMetrics {
    /// Aggregates `(reward, metrics)` pairs in order. An empty episode has
    /// all means equal to zero.
    pub fn from_steps<'a, I>(steps: I) -> Self
    where
        I: IntoIterator<Item = (f64, &'a AttentionMetrics)>,
    {
        let mut out = Self::default();
        for (r, m) in steps {
            out.steps += 1;
            out.total_reward += r;
            out.mean_feedback_sq += m.feedback_sq;
            out.mean_feedforward_sq += m.feedforward_sq;
            out.mean_energy += m.energy;
        }
        if out.steps > 0 {
            let n = out.steps as f64;
            out.mean_feedback_sq /= n;
            out.mean_feedforward_sq /= n;
            out.mean_energy /= n;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;
    use crate::mlp::{Activation, MlpNetwork};
    use crate::policy::{LinearSchedule, PolicyBody};
    use alloc::vec;

    #[test]
    fn identity_gain_has_feedback_n() {
        let s = LinearSchedule::constant(&DenseMatrix::identity(3), &[0.0; 3]).unwrap();
        let p = Policy::linear(s, 0.0, vec![-5.0; 3], vec![5.0; 3]).unwrap();
        assert_eq!(feedback_norm_sq(&p, &[0.3, 0.1, -2.0], 0.0).unwrap(), 3.0);
    }

    #[test]
    fn zero_network_has_no_feedback() {
        let net = MlpNetwork::zeros(&[2, 8, 1], Activation::Tanh, Activation::Identity).unwrap();
        let p = Policy::from_body(PolicyBody::Mlp(net), 0.0, vec![-1.0], vec![1.0]).unwrap();
        assert_eq!(feedback_norm_sq(&p, &[1.0, 2.0], 0.0).unwrap(), 0.0);
    }

    #[test]
    fn feedforward_examples() {
        assert_eq!(feedforward_norm_sq(&[0.4], Some(&[0.4]), 0.02), 0.0);
        assert!((feedforward_norm_sq(&[0.52], Some(&[0.5]), 0.02) - 1.0).abs() < 1e-12);
        assert_eq!(feedforward_norm_sq(&[9.0], None, 0.02), 0.0);
        // A ramp with slope s gives s^2 at every step.
        let (s, dt) = (0.75, 0.125);
        for k in 1..10 {
            let u = [s * k as f64 * dt];
            let prev = [s * (k - 1) as f64 * dt];
            assert_eq!(feedforward_norm_sq(&u, Some(&prev), dt), s * s);
        }
    }

    #[test]
    fn regularized_reward_examples() {
        assert_eq!(regularized_reward(1.0, 2.0, 3.0, 0.05), 0.75);
        let r = 0.123_456_789;
        assert_eq!(regularized_reward(r, 5.0, 7.0, 0.0).to_bits(), r.to_bits());
        assert_eq!(regularized_reward(r, f64::INFINITY, 0.0, 0.0).to_bits(), r.to_bits());
    }

    #[test]
    fn energy_examples() {
        assert_eq!(energy(&[0.0, 0.0]), 0.0);
        assert_eq!(energy(&[3.0, 4.0]), 25.0);
    }

    #[test]
    fn episode_means() {
        let m = [
            AttentionMetrics { feedback_sq: 1.0, feedforward_sq: 0.0, energy: 2.0 },
            AttentionMetrics { feedback_sq: 3.0, feedforward_sq: 4.0, energy: 0.0 },
        ];
        let e = EpisodeMetrics::from_steps([(1.0, &m[0]), (0.5, &m[1])]);
        assert_eq!(e.steps, 2);
        assert_eq!(e.total_reward, 1.5);
        assert_eq!(e.mean_feedback_sq, 2.0);
        assert_eq!(e.mean_feedforward_sq, 2.0);
        assert_eq!(e.mean_energy, 1.0);
        assert_eq!(EpisodeMetrics::from_steps(core::iter::empty()), EpisodeMetrics::default());
    }
}
