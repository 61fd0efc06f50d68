//! Seeded control perturbations.
//!
//! Every rollout draws from its own ChaCha stream selected by the rollout
//! index, so the perturbation of rollout `k` at step `i` depends only on
//! `(seed, k, i)` and never on the order in which rollouts are generated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a master seed and a path of tags.
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(mix(master), |acc, &t| mix(acc ^ mix(t)))
}

/// The generator for stream `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    #[default]
    Gaussian,
    /// Product of a standard normal and a log-normal factor.
    NormalLogNormal,
}

/// Perturbation distribution for sampled controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    /// Per-channel diffusion scale `sigma` (standard deviation of `dW` per
    /// unit time, in control units).
    pub scale: Vec<f64>,
    /// Location of the log-normal factor's underlying normal.
    pub log_normal_mu: f64,
    /// Spread of the log-normal factor's underlying normal.
    pub log_normal_sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            kind: NoiseKind::Gaussian,
            scale: vec![1.0],
            log_normal_mu: 0.0,
            log_normal_sigma: 0.5,
        }
    }
}

impl NoiseConfig {
    pub fn gaussian(scale: Vec<f64>) -> Self {
        NoiseConfig {
            scale,
            ..Default::default()
        }
    }

    pub fn validate(&self, control_dim: usize) -> Result<()> {
        if self.scale.len() != control_dim {
            return Err(Error::config(format!(
                "noise scale has {} entries but the control dimension is {control_dim}",
                self.scale.len()
            )));
        }
        if self.scale.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::config("noise scale entries must be finite and >= 0"));
        }
        if !self.log_normal_mu.is_finite()
            || !(self.log_normal_sigma.is_finite() && self.log_normal_sigma >= 0.0)
        {
            return Err(Error::config("log-normal parameters must be finite, sigma >= 0"));
        }
        Ok(())
    }

    /// One perturbation for channel `j`: `sigma_j * xi / sqrt(dt)`, times
    /// `exp(eta - mu)` with `eta ~ N(mu, s)` for the log-normal mixture, so
    /// that `du * dt` realizes a Brownian increment of variance `sigma^2 dt`.
    fn draw(&self, rng: &mut ChaCha8Rng, j: usize, inv_sqrt_dt: f64) -> f64 {
        let xi: f64 = rng.sample(StandardNormal);
        let base = self.scale[j] * xi * inv_sqrt_dt;
        match self.kind {
            NoiseKind::Gaussian => base,
            NoiseKind::NormalLogNormal => {
                let zeta: f64 = rng.sample(StandardNormal);
                base * (self.log_normal_sigma * zeta).exp()
            }
        }
    }
}

/// Sampled control perturbations `du`, shape `K x N x control_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSequence {
    num_rollouts: usize,
    horizon: usize,
    control_dim: usize,
    kind: NoiseKind,
    samples: Vec<f64>,
}

impl NoiseSequence {
    /// Draws `K x N` perturbations for steps of length `dt`.
    pub fn generate(
        config: &NoiseConfig,
        num_rollouts: usize,
        horizon: usize,
        dt: f64,
        seed: u64,
    ) -> Result<Self> {
        let control_dim = config.scale.len();
        config.validate(control_dim)?;
        if num_rollouts == 0 || horizon == 0 {
            return Err(Error::config("noise needs at least one rollout and one step"));
        }
        if !(dt > 0.0) {
            return Err(Error::config("dt must be positive"));
        }
        let inv_sqrt_dt = 1.0 / dt.sqrt();
        let per = horizon * control_dim;
        let mut samples = vec![0.0; num_rollouts * per];
        samples
            .par_chunks_mut(per)
            .enumerate()
            .for_each(|(k, row)| {
                let mut rng = stream_rng(seed, k as u64);
                for step in row.chunks_mut(control_dim) {
                    for (j, v) in step.iter_mut().enumerate() {
                        *v = config.draw(&mut rng, j, inv_sqrt_dt);
                    }
                }
            });
        Ok(NoiseSequence {
            num_rollouts,
            horizon,
            control_dim,
            kind: config.kind,
            samples,
        })
    }

    /// Builds a noise table from explicit values (row-major `K x N x m`).
    pub fn from_samples(
        num_rollouts: usize,
        horizon: usize,
        control_dim: usize,
        samples: Vec<f64>,
    ) -> Result<Self> {
        if samples.len() != num_rollouts * horizon * control_dim {
            return Err(Error::config(format!(
                "noise table has {} entries, expected {num_rollouts} x {horizon} x {control_dim}",
                samples.len()
            )));
        }
        Ok(NoiseSequence {
            num_rollouts,
            horizon,
            control_dim,
            kind: NoiseKind::Gaussian,
            samples,
        })
    }

    pub fn zeros(num_rollouts: usize, horizon: usize, control_dim: usize) -> Self {
        NoiseSequence {
            num_rollouts,
            horizon,
            control_dim,
            kind: NoiseKind::Gaussian,
            samples: vec![0.0; num_rollouts * horizon * control_dim],
        }
    }

    pub fn num_rollouts(&self) -> usize {
        self.num_rollouts
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// All perturbations of rollout `k`, row-major `N x m`.
    pub fn rollout(&self, k: usize) -> &[f64] {
        let per = self.horizon * self.control_dim;
        &self.samples[k * per..(k + 1) * per]
    }

    pub fn get(&self, k: usize, i: usize) -> &[f64] {
        let m = self.control_dim;
        let start = (k * self.horizon + i) * m;
        &self.samples[start..start + m]
    }
}
