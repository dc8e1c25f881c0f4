//! Low-dimensional stochastic control environments.
//!
//! Each environment integrates `dx = f(x, u) dt + sigma dW` with a
//! semi-implicit Euler–Maruyama step: velocities are advanced first and the
//! positions use the updated velocities. Written in the one-step form
//! `x' = x + drift(x, u) dt + sigma sqrt(dt) xi`, the drift is
//! `(v + a dt, a)`, which is exactly what a finite-difference dynamics model
//! regresses onto.
//!
//! | env                | state              | action | reward                          |
//! |--------------------|--------------------|--------|---------------------------------|
//! | `pendulum_swingup` | `(theta, omega)`, theta = 0 hanging | torque | `(1 - cos theta)/2 - c u^2` |
//! | `cartpole_swingup` | `(x, xdot, theta, omega)`, theta = 0 upright | force | `(1 + cos theta)/2 - c u^2` |
//! | `point_mass_slope` | `(p, v)`           | force  | `v - c u^2`                     |

mod dynamics;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use dynamics::{Dynamics, PerturbationKind, TaskPerturbation};

use crate::error::{check_len, invalid, Result};
use crate::rng::{normal, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    PendulumSwingup,
    CartpoleSwingup,
    PointMassSlope,
}

impl EnvKind {
    pub fn state_dim(self) -> usize {
        match self {
            EnvKind::PendulumSwingup | EnvKind::PointMassSlope => 2,
            EnvKind::CartpoleSwingup => 4,
        }
    }

    pub fn action_dim(self) -> usize {
        1
    }

    /// `(position, velocity)` index pairs of the state vector.
    pub fn coordinate_pairs(self) -> &'static [(usize, usize)] {
        match self {
            EnvKind::PendulumSwingup | EnvKind::PointMassSlope => &[(0, 1)],
            EnvKind::CartpoleSwingup => &[(0, 1), (2, 3)],
        }
    }

    pub fn state_labels(self) -> &'static [&'static str] {
        match self {
            EnvKind::PendulumSwingup => &["angle", "angular_velocity"],
            EnvKind::CartpoleSwingup => &[
                "cart_position",
                "cart_velocity",
                "pole_angle",
                "pole_angular_velocity",
            ],
            EnvKind::PointMassSlope => &["position", "velocity"],
        }
    }

    /// State coordinates that are angles.
    pub fn angle_dims(self) -> &'static [usize] {
        match self {
            EnvKind::PendulumSwingup => &[0],
            EnvKind::CartpoleSwingup => &[2],
            EnvKind::PointMassSlope => &[],
        }
    }

    /// Fixed 2-D projections used for attention heatmaps.
    pub fn heatmap_projections(self) -> &'static [(usize, usize)] {
        match self {
            EnvKind::PendulumSwingup | EnvKind::PointMassSlope => &[(0, 1)],
            EnvKind::CartpoleSwingup => &[(2, 3), (0, 2), (1, 3)],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::PendulumSwingup => "pendulum_swingup",
            EnvKind::CartpoleSwingup => "cartpole_swingup",
            EnvKind::PointMassSlope => "point_mass_slope",
        }
    }
}

/// Physical constants of an environment. Fields that a kind does not use are
/// ignored (e.g. `cart_mass` outside the cart-pole).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Physics {
    pub gravity: f64,
    pub mass: f64,
    pub length: f64,
    pub damping: f64,
    pub cart_mass: f64,
    /// Multiplies the (normalized) action to give torque or force.
    pub actuator_gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub dt: f64,
    pub horizon: usize,
    /// Per-dimension diffusion magnitude.
    pub diffusion: Vec<f64>,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub physics: Physics,
    /// Multiplies the task term of the reward (not the action cost).
    pub reward_scale: f64,
    /// Weight of the quadratic action cost in the task reward.
    pub action_cost: f64,
    /// Episodes fail once any state coordinate exceeds this magnitude.
    pub state_bound: f64,
}

impl EnvSpec {
    /// Default spec for `kind`: `dt = 0.02`, 200 steps, actions in `[-1, 1]`.
    pub fn new(kind: EnvKind) -> Self {
        let physics = match kind {
            EnvKind::PendulumSwingup => Physics {
                gravity: 9.81,
                mass: 1.0,
                length: 1.0,
                damping: 0.05,
                cart_mass: 0.0,
                actuator_gain: 5.0,
            },
            EnvKind::CartpoleSwingup => Physics {
                gravity: 9.81,
                mass: 0.1,
                length: 0.5,
                damping: 0.0,
                cart_mass: 1.0,
                actuator_gain: 10.0,
            },
            EnvKind::PointMassSlope => Physics {
                gravity: 9.81,
                mass: 1.0,
                length: 0.0,
                damping: 0.1,
                cart_mass: 0.0,
                actuator_gain: 2.0,
            },
        };
        Self {
            kind,
            dt: 0.02,
            horizon: 200,
            diffusion: vec![0.01; kind.state_dim()],
            action_low: vec![-1.0; kind.action_dim()],
            action_high: vec![1.0; kind.action_dim()],
            physics,
            reward_scale: 1.0,
            action_cost: 0.001,
            state_bound: 1e3,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.kind.state_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.kind.action_dim()
    }

    pub fn with_diffusion(mut self, sigma: f64) -> Self {
        self.diffusion = vec![sigma; self.state_dim()];
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt", "must be positive"));
        }
        if self.horizon == 0 {
            return Err(invalid("horizon", "must be at least 1"));
        }
        check_len("EnvSpec diffusion", self.state_dim(), self.diffusion.len())?;
        check_len("EnvSpec action_low", self.action_dim(), self.action_low.len())?;
        check_len("EnvSpec action_high", self.action_dim(), self.action_high.len())?;
        if self.diffusion.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(invalid("diffusion", "entries must be finite and non-negative"));
        }
        for (lo, hi) in self.action_low.iter().zip(&self.action_high) {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(invalid("action bounds", format!("need finite lo < hi, got [{lo}, {hi}]")));
            }
        }
        let p = &self.physics;
        if !(p.gravity.is_finite() && p.mass > 0.0 && p.damping >= 0.0) {
            return Err(invalid("physics", "need finite gravity, positive mass, non-negative damping"));
        }
        match self.kind {
            EnvKind::PendulumSwingup if !(p.length > 0.0) => {
                return Err(invalid("physics.length", "must be positive"))
            }
            EnvKind::CartpoleSwingup if !(p.length > 0.0 && p.cart_mass > 0.0) => {
                return Err(invalid("physics", "cart-pole needs positive length and cart_mass"))
            }
            _ => {}
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return Err(invalid("reward_scale", "must be positive"));
        }
        if !(self.action_cost >= 0.0 && self.state_bound > 0.0) {
            return Err(invalid("env", "action_cost must be >= 0 and state_bound > 0"));
        }
        Ok(())
    }

    pub fn clamp_action(&self, action: &[f64]) -> Vec<f64> {
        action
            .iter()
            .zip(self.action_low.iter().zip(&self.action_high))
            .map(|(a, (lo, hi))| a.clamp(*lo, *hi))
            .collect()
    }

    /// Task reward `r(x, u)` of the unperturbed task.
    pub fn reward(&self, x: &[f64], u: &[f64]) -> f64 {
        let cost = self.action_cost * u.iter().map(|v| v * v).sum::<f64>();
        match self.kind {
            EnvKind::PendulumSwingup => self.reward_scale * 0.5 * (1.0 - libm::cos(x[0])) - cost,
            EnvKind::CartpoleSwingup => self.reward_scale * 0.5 * (1.0 + libm::cos(x[2])) - cost,
            EnvKind::PointMassSlope => self.reward_scale * x[1] - cost,
        }
    }

    /// Draws an initial state.
    ///
    /// * pendulum: angle `U(-pi, pi)`, angular velocity `U(-1, 1)`;
    /// * cart-pole: hanging pole, every coordinate within `±0.1` of
    ///   `(0, 0, pi, 0)`;
    /// * point mass: position and velocity `U(-0.1, 0.1)`.
    pub fn sample_initial_state(&self, rng: &mut SimRng) -> Vec<f64> {
        match self.kind {
            EnvKind::PendulumSwingup => {
                vec![rng.random_range(-PI..PI), rng.random_range(-1.0..1.0)]
            }
            EnvKind::CartpoleSwingup => {
                let mut x: Vec<f64> = (0..4).map(|_| rng.random_range(-0.1..0.1)).collect();
                x[2] += PI;
                x
            }
            EnvKind::PointMassSlope => {
                vec![rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)]
            }
        }
    }
}

/// A state `x` in R^n at time `time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVec {
    pub values: Vec<f64>,
    pub time: f64,
}

/// A control `u` in R^m at time `time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionVec {
    pub values: Vec<f64>,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: StateVec,
    pub reward: f64,
    /// Set when the new state is non-finite or leaves the state bound; the
    /// episode must end there.
    pub failed: bool,
}

/// An environment spec together with its (possibly perturbed) dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    spec: EnvSpec,
    dynamics: Dynamics,
}

impl Environment {
    pub fn new(spec: EnvSpec, perturbation: &TaskPerturbation) -> Result<Self> {
        spec.validate()?;
        let dynamics = Dynamics::base(&spec).perturbed(perturbation)?;
        Ok(Self { spec, dynamics })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    pub fn reset(&self, rng: &mut SimRng) -> StateVec {
        StateVec {
            values: self.spec.sample_initial_state(rng),
            time: 0.0,
        }
    }

    /// One Euler–Maruyama step. The action is clamped to the bounds first and
    /// the reward is `r(x, u)` at the pre-step state.
    pub fn step(&self, state: &StateVec, action: &[f64], rng: &mut SimRng) -> StepOutcome {
        let dt = self.spec.dt;
        let u = self.spec.clamp_action(action);
        let reward = self.spec.reward(&state.values, &u);
        let drift = self.dynamics.drift(&state.values, &u, dt);
        let sqrt_dt = libm::sqrt(dt);
        let values: Vec<f64> = state
            .values
            .iter()
            .zip(&drift)
            .zip(&self.spec.diffusion)
            .map(|((x, f), s)| {
                let xi = normal(rng);
                x + f * dt + s * sqrt_dt * xi
            })
            .collect();
        let failed = values
            .iter()
            .any(|v| !v.is_finite() || v.abs() > self.spec.state_bound);
        StepOutcome {
            state: StateVec {
                values,
                time: state.time + dt,
            },
            reward,
            failed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn pendulum_energy(p: &Physics, x: &[f64]) -> f64 {
        0.5 * p.mass * p.length * p.length * x[1] * x[1]
            + p.mass * p.gravity * p.length * (1.0 - libm::cos(x[0]))
    }

    #[test]
    fn reset_is_seeded() {
        let env = Environment::new(EnvSpec::new(EnvKind::PendulumSwingup), &TaskPerturbation::identity())
            .unwrap();
        assert_eq!(env.reset(&mut seeded(4)), env.reset(&mut seeded(4)));
        let mass = Environment::new(
            EnvSpec::new(EnvKind::PendulumSwingup),
            &TaskPerturbation::mass_scale(1.3),
        )
        .unwrap();
        assert_eq!(env.reset(&mut seeded(9)), mass.reset(&mut seeded(9)));
    }

    #[test]
    fn initial_angle_mean_matches_distribution() {
        // U(-pi, pi) has mean 0 and standard deviation pi / sqrt(3).
        let env = Environment::new(EnvSpec::new(EnvKind::PendulumSwingup), &TaskPerturbation::identity())
            .unwrap();
        let mut rng = seeded(2024);
        let n = 100_000;
        let sum: f64 = (0..n).map(|_| env.reset(&mut rng).values[0]).sum();
        let se = PI / libm::sqrt(3.0) / libm::sqrt(n as f64);
        assert!((sum / n as f64).abs() < 3.0 * se);
    }

    #[test]
    fn stable_equilibrium_is_a_fixed_point() {
        let spec = EnvSpec::new(EnvKind::PendulumSwingup).with_diffusion(0.0);
        let env = Environment::new(spec, &TaskPerturbation::identity()).unwrap();
        let s = StateVec { values: vec![0.0, 0.0], time: 0.0 };
        let out = env.step(&s, &[0.0], &mut seeded(1));
        assert_eq!(out.state.values, vec![0.0, 0.0]);
        assert!((out.state.time - 0.02).abs() < 1e-15);
        assert!(!out.failed);
    }

    #[test]
    fn zero_diffusion_rollouts_are_bitwise_reproducible() {
        for kind in [EnvKind::PendulumSwingup, EnvKind::CartpoleSwingup, EnvKind::PointMassSlope] {
            let env = Environment::new(EnvSpec::new(kind).with_diffusion(0.0), &TaskPerturbation::identity())
                .unwrap();
            let run = |seed| {
                let mut rng = seeded(seed);
                let mut s = env.reset(&mut seeded(0));
                let mut out = Vec::new();
                for k in 0..100 {
                    let u = [libm::sin(k as f64 * 0.1)];
                    s = env.step(&s, &u, &mut rng).state;
                    out.extend(s.values.iter().map(|v| v.to_bits()));
                }
                out
            };
            assert_eq!(run(1), run(2), "{kind:?}");
        }
    }

    #[test]
    fn slope_acceleration_matches_closed_form() {
        let spec = EnvSpec::new(EnvKind::PointMassSlope).with_diffusion(0.0);
        let g = spec.physics.gravity;
        let angle = 0.3;
        let env = Environment::new(spec, &TaskPerturbation::gravity_slope(angle)).unwrap();
        let mut s = StateVec { values: vec![0.0, 0.0], time: 0.0 };
        let mut rng = seeded(0);
        // Downhill is -p for a positive slope angle; damping acts on v only.
        s = env.step(&s, &[0.0], &mut rng).state;
        let dv = -g * libm::sin(angle) * 0.02;
        assert!((s.values[1] - dv).abs() < 1e-12);
        assert!((s.values[0] - dv * 0.02).abs() < 1e-12);
    }

    #[test]
    fn undamped_pendulum_energy_does_not_drift() {
        let mut spec = EnvSpec::new(EnvKind::PendulumSwingup).with_diffusion(0.0);
        spec.dt = 0.01;
        spec.physics.damping = 0.0;
        let env = Environment::new(spec.clone(), &TaskPerturbation::identity()).unwrap();
        let mut s = StateVec { values: vec![1.0, 0.0], time: 0.0 };
        let mut rng = seeded(0);
        let mut energies = Vec::new();
        for _ in 0..1000 {
            s = env.step(&s, &[0.0], &mut rng).state;
            energies.push(pendulum_energy(&spec.physics, &s.values));
        }
        let e0 = pendulum_energy(&spec.physics, &[1.0, 0.0]);
        // Drift: change of the energy averaged over one oscillation period
        // (~2 s = 200 steps) between the start and the end of the run.
        let head = crate::stats::mean(&energies[..200]);
        let tail = crate::stats::mean(&energies[800..]);
        assert!(((tail - head) / e0).abs() < 1e-3, "drift {}", (tail - head) / e0);
        // Pointwise error stays O(dt).
        let worst = energies.iter().map(|e| ((e - e0) / e0).abs()).fold(0.0, f64::max);
        assert!(worst < 10.0 * spec.dt, "worst {worst}");
    }

    #[test]
    fn actions_are_clamped() {
        let spec = EnvSpec::new(EnvKind::PendulumSwingup);
        assert_eq!(spec.clamp_action(&[3.0]), vec![1.0]);
        assert_eq!(spec.clamp_action(&[-3.0]), vec![-1.0]);
        let env = Environment::new(spec.with_diffusion(0.0), &TaskPerturbation::identity()).unwrap();
        let s = StateVec { values: vec![0.4, 0.2], time: 0.0 };
        assert_eq!(
            env.step(&s, &[7.0], &mut seeded(0)),
            env.step(&s, &[1.0], &mut seeded(0))
        );
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = EnvSpec::new(EnvKind::CartpoleSwingup);
        spec.dt = 0.0;
        assert!(spec.validate().is_err());
        let mut spec = EnvSpec::new(EnvKind::CartpoleSwingup);
        spec.action_low = vec![1.0];
        assert!(spec.validate().is_err());
        let mut spec = EnvSpec::new(EnvKind::PointMassSlope);
        spec.horizon = 0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn divergence_is_flagged() {
        let mut spec = EnvSpec::new(EnvKind::PointMassSlope).with_diffusion(0.0);
        spec.state_bound = 1.0;
        let env = Environment::new(spec, &TaskPerturbation::identity()).unwrap();
        let s = StateVec { values: vec![0.0, 1.5], time: 0.0 };
        assert!(env.step(&s, &[0.0], &mut seeded(0)).failed);
    }
}
