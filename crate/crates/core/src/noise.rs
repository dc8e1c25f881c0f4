//! Exploration noise added to executed actions during real-environment data
//! collection.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, invalid, Error, Result};
use crate::rng::{normal, SimRng};

/// Ornstein–Uhlenbeck process `d eps = theta (mu - eps) dt + sigma dW`,
/// integrated with Euler–Maruyama.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuProcess {
    theta: f64,
    mu: Vec<f64>,
    sigma: Vec<f64>,
    current: Vec<f64>,
    dt: f64,
}

impl OuProcess {
    pub fn new(theta: f64, mu: Vec<f64>, sigma: Vec<f64>, dt: f64) -> Result<Self> {
        if !(theta >= 0.0 && theta.is_finite()) {
            return Err(invalid("ou theta", "must be finite and >= 0"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid("ou dt", "must be positive"));
        }
        check_len("OuProcess sigma", mu.len(), sigma.len())?;
        if sigma.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(invalid("ou sigma", "entries must be finite and >= 0"));
        }
        if mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("ou mu"));
        }
        Ok(Self {
            theta,
            current: mu.clone(),
            mu,
            sigma,
            dt,
        })
    }

    pub fn current(&self) -> &[f64] {
        &self.current
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    /// Overwrites the current value, e.g. to start from a stationary draw.
    pub fn set_current(&mut self, value: &[f64]) -> Result<()> {
        check_len("OuProcess::set_current", self.current.len(), value.len())?;
        self.current.copy_from_slice(value);
        Ok(())
    }

    pub fn step(&mut self, rng: &mut SimRng) -> &[f64] {
        let sqrt_dt = libm::sqrt(self.dt);
        for ((c, m), s) in self.current.iter_mut().zip(&self.mu).zip(&self.sigma) {
            let xi = normal(rng);
            *c += self.theta * (m - *c) * self.dt + s * sqrt_dt * xi;
        }
        &self.current
    }

    pub fn reset(&mut self) {
        self.current.copy_from_slice(&self.mu);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Ou,
    Gaussian,
    None,
}

/// Configuration keys `noise.kind`, `noise.theta`, `noise.sigma`, `noise.mu`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    pub theta: f64,
    pub sigma: f64,
    pub mu: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            kind: NoiseKind::Ou,
            theta: 0.15,
            sigma: 0.2,
            mu: 0.0,
        }
    }
}

/// A noise source of a fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub enum ExplorationNoise {
    Ou(OuProcess),
    /// White noise `mu + sigma * N(0, I)`, resampled every step.
    Gaussian { mu: Vec<f64>, sigma: Vec<f64> },
    None { dim: usize },
}

impl ExplorationNoise {
    pub fn from_config(cfg: &NoiseConfig, dim: usize, dt: f64) -> Result<Self> {
        if !(cfg.sigma >= 0.0 && cfg.sigma.is_finite() && cfg.mu.is_finite()) {
            return Err(invalid("noise", "sigma must be >= 0 and mu finite"));
        }
        Ok(match cfg.kind {
            NoiseKind::Ou => {
                Self::Ou(OuProcess::new(cfg.theta, vec![cfg.mu; dim], vec![cfg.sigma; dim], dt)?)
            }
            NoiseKind::Gaussian => Self::Gaussian {
                mu: vec![cfg.mu; dim],
                sigma: vec![cfg.sigma; dim],
            },
            NoiseKind::None => Self::None { dim },
        })
    }

    pub fn sample(&mut self, rng: &mut SimRng) -> Vec<f64> {
        match self {
            Self::Ou(p) => p.step(rng).to_vec(),
            Self::Gaussian { mu, sigma } => mu
                .iter()
                .zip(sigma.iter())
                .map(|(m, s)| m + s * normal(rng))
                .collect(),
            Self::None { dim } => vec![0.0; *dim],
        }
    }

    /// Episode boundary.
    pub fn reset(&mut self) {
        if let Self::Ou(p) = self {
            p.reset();
        }
    }
}
