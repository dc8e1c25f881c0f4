use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use super::{EnvKind, EnvSpec, Physics};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    Identity,
    /// Accelerations are divided by `magnitude` (> 0).
    MassScale,
    /// Action channel `channel` is multiplied by `magnitude` in `[0, 1]`.
    ActuatorCripple,
    /// Gravity is rotated by `magnitude` radians.
    GravitySlope,
}

/// A task: one modification of the base dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskPerturbation {
    pub kind: PerturbationKind,
    #[serde(default)]
    pub magnitude: f64,
    #[serde(default)]
    pub channel: usize,
}

impl TaskPerturbation {
    pub fn identity() -> Self {
        Self {
            kind: PerturbationKind::Identity,
            magnitude: 0.0,
            channel: 0,
        }
    }

    pub fn mass_scale(factor: f64) -> Self {
        Self {
            kind: PerturbationKind::MassScale,
            magnitude: factor,
            channel: 0,
        }
    }

    pub fn actuator_cripple(channel: usize, gain: f64) -> Self {
        Self {
            kind: PerturbationKind::ActuatorCripple,
            magnitude: gain,
            channel,
        }
    }

    pub fn gravity_slope(angle: f64) -> Self {
        Self {
            kind: PerturbationKind::GravitySlope,
            magnitude: angle,
            channel: 0,
        }
    }

    pub fn validate(&self, action_dim: usize) -> Result<()> {
        let m = self.magnitude;
        match self.kind {
            PerturbationKind::Identity => Ok(()),
            PerturbationKind::MassScale if !(m > 0.0 && m.is_finite()) => {
                Err(invalid("mass_scale", format!("multiplier must be > 0, got {m}")))
            }
            PerturbationKind::ActuatorCripple if !(0.0..=1.0).contains(&m) => {
                Err(invalid("actuator_cripple", format!("gain must lie in [0, 1], got {m}")))
            }
            PerturbationKind::ActuatorCripple if self.channel >= action_dim => Err(invalid(
                "actuator_cripple",
                format!("channel {} out of range for {action_dim} actions", self.channel),
            )),
            PerturbationKind::GravitySlope if !m.is_finite() => {
                Err(invalid("gravity_slope", "angle must be finite"))
            }
            _ => Ok(()),
        }
    }

    /// Short label such as `mass_scale_1.5`.
    pub fn label(&self) -> alloc::string::String {
        match self.kind {
            PerturbationKind::Identity => "identity".into(),
            PerturbationKind::MassScale => format!("mass_scale_{}", self.magnitude),
            PerturbationKind::ActuatorCripple => {
                format!("actuator_cripple_{}_{}", self.channel, self.magnitude)
            }
            PerturbationKind::GravitySlope => format!("gravity_slope_{}", self.magnitude),
        }
    }
}

/// Continuous-time dynamics `f(x, u)` of one environment under a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dynamics {
    kind: EnvKind,
    physics: Physics,
    mass_multiplier: f64,
    actuator_gains: Vec<f64>,
    gravity_angle: f64,
}

impl Dynamics {
    pub fn base(spec: &EnvSpec) -> Self {
        Self {
            kind: spec.kind,
            physics: spec.physics.clone(),
            mass_multiplier: 1.0,
            actuator_gains: vec![1.0; spec.action_dim()],
            gravity_angle: 0.0,
        }
    }

    /// Composes `perturbation` onto these dynamics.
    pub fn perturbed(&self, perturbation: &TaskPerturbation) -> Result<Self> {
        perturbation.validate(self.actuator_gains.len())?;
        let mut out = self.clone();
        match perturbation.kind {
            PerturbationKind::Identity => {}
            PerturbationKind::MassScale => out.mass_multiplier *= perturbation.magnitude,
            PerturbationKind::ActuatorCripple => {
                out.actuator_gains[perturbation.channel] *= perturbation.magnitude
            }
            PerturbationKind::GravitySlope => out.gravity_angle += perturbation.magnitude,
        }
        Ok(out)
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    /// Accelerations of the velocity coordinates, in
    /// [`EnvKind::coordinate_pairs`] order.
    pub fn accelerations(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let p = &self.physics;
        let force = p.actuator_gain * u[0] * self.actuator_gains[0];
        // Gravity in the track frame: along +x and along the vertical.
        let g_x = -p.gravity * libm::sin(self.gravity_angle);
        let g_y = -p.gravity * libm::cos(self.gravity_angle);
        let mut acc = match self.kind {
            EnvKind::PendulumSwingup => {
                // theta = 0 hangs along -y; bob at (l sin theta, -l cos theta).
                let (th, om) = (x[0], x[1]);
                let inertia = p.mass * p.length * p.length;
                let gravity = (g_x * libm::cos(th) + g_y * libm::sin(th)) / p.length;
                vec![gravity + (force - p.damping * om) / inertia]
            }
            EnvKind::CartpoleSwingup => {
                // theta = 0 upright; point-mass pole on a frictionless cart.
                let (th, om) = (x[2], x[3]);
                let (s, c) = (libm::sin(th), libm::cos(th));
                let (mc, mp, l) = (p.cart_mass, p.mass, p.length);
                let total = mc + mp;
                let rhs_cart = force + total * g_x + mp * l * s * om * om - p.damping * x[1];
                let rhs_pole = -g_y * s + g_x * c;
                let denom = mc + mp * s * s;
                let xdd = (rhs_cart - mp * c * rhs_pole) / denom;
                let thdd = (total * rhs_pole - c * rhs_cart) / (l * denom);
                vec![xdd, thdd]
            }
            EnvKind::PointMassSlope => vec![g_x + (force - p.damping * x[1]) / p.mass],
        };
        for a in &mut acc {
            *a /= self.mass_multiplier;
        }
        acc
    }

    /// Continuous drift `f(x, u) = (v, a)`.
    pub fn continuous_drift(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let acc = self.accelerations(x, u);
        let mut f = vec![0.0; x.len()];
        for (&(q, v), a) in self.kind.coordinate_pairs().iter().zip(&acc) {
            f[q] = x[v];
            f[v] = *a;
        }
        f
    }

    /// Discrete drift of the semi-implicit step: `(v + a dt, a)`.
    pub fn drift(&self, x: &[f64], u: &[f64], dt: f64) -> Vec<f64> {
        let acc = self.accelerations(x, u);
        let mut f = vec![0.0; x.len()];
        for (&(q, v), a) in self.kind.coordinate_pairs().iter().zip(&acc) {
            f[q] = x[v] + a * dt;
            f[v] = *a;
        }
        f
    }
}
