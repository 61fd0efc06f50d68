//! Exponential cost weighting and sampling diagnostics.
//!
//! Weights are `w_k ∝ exp(-G_k / λ)`, always formed in the log domain after
//! subtracting the minimum cost so realistic costs never overflow.

mod estimators;

pub use estimators::{
    importance_weight_path, is_estimate, is_terms, mc_estimate, mis_estimate, mis_terms,
    McEstimate, MisGroup, MisScheme,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalized exponential weights for one batch of costs.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub weights: Vec<f64>,
    pub temperature: f64,
    /// `ln mean_k exp(-G_k / λ)`, the desirability estimate.
    pub log_normalizer: f64,
    /// `-λ ln mean_k exp(-G_k / λ)`, the free-energy estimate of the value.
    pub free_energy: f64,
}

impl WeightVector {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Index of the largest weight; the earliest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, w) in self.weights.iter().enumerate() {
            if *w > self.weights[best] {
                best = k;
            }
        }
        best
    }

    pub fn ess(&self) -> f64 {
        effective_sample_size(self)
    }

    /// Shannon entropy `-Σ w ln w` in nats.
    pub fn entropy(&self) -> f64 {
        -self
            .weights
            .iter()
            .filter(|w| **w > 0.0)
            .map(|w| w * w.ln())
            .sum::<f64>()
    }
}

/// `w_k = exp(-(G_k - min G) / λ) / Σ exp(-(G_κ - min G) / λ)`.
///
/// Non-finite costs receive zero weight. Fails only when no cost is finite.
pub fn softmax_weights(costs: &[f64], temperature: f64) -> Result<WeightVector> {
    if costs.is_empty() {
        return Err(Error::config("cannot weight an empty batch"));
    }
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::config(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    let min = costs
        .iter()
        .copied()
        .filter(|c| c.is_finite())
        .fold(f64::INFINITY, f64::min);
    if !min.is_finite() {
        return Err(Error::DegenerateBatch(costs.len()));
    }
    let mut weights: Vec<f64> = costs
        .iter()
        .map(|c| {
            if c.is_finite() {
                (-(c - min) / temperature).exp()
            } else {
                0.0
            }
        })
        .collect();
    let sum: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= sum;
    }
    let log_normalizer = -min / temperature + (sum / costs.len() as f64).ln();
    let free_energy = min - temperature * (sum / costs.len() as f64).ln();
    Ok(WeightVector {
        weights,
        temperature,
        log_normalizer,
        free_energy,
    })
}

/// Empirical effective sample size `1 / Σ w_k^2` of normalized weights.
pub fn effective_sample_size(w: &WeightVector) -> f64 {
    let s: f64 = w.weights.iter().map(|v| v * v).sum();
    let k = w.weights.len() as f64;
    (1.0 / s).clamp(1.0, k)
}

/// Summary of one weighted batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingDiagnostics {
    pub num_samples: usize,
    pub temperature: f64,
    pub ess: f64,
    pub weight_entropy: f64,
    pub max_weight: f64,
    pub free_energy: f64,
    pub cost_mean: f64,
    pub cost_min: f64,
    pub cost_std: f64,
}

impl SamplingDiagnostics {
    pub fn from_weights(costs: &[f64], w: &WeightVector) -> Self {
        let finite: Vec<f64> = costs.iter().copied().filter(|c| c.is_finite()).collect();
        let n = finite.len().max(1) as f64;
        let mean = finite.iter().sum::<f64>() / n;
        let var = if finite.len() > 1 {
            finite.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        SamplingDiagnostics {
            num_samples: costs.len(),
            temperature: w.temperature,
            ess: w.ess(),
            weight_entropy: w.entropy(),
            max_weight: w.weights.iter().copied().fold(0.0, f64::max),
            free_energy: w.free_energy,
            cost_mean: mean,
            cost_min: finite.iter().copied().fold(f64::INFINITY, f64::min),
            cost_std: var.sqrt(),
        }
    }

    /// Weights the costs at `temperature` and summarizes them.
    pub fn from_costs(costs: &[f64], temperature: f64) -> Result<Self> {
        let w = softmax_weights(costs, temperature)?;
        Ok(Self::from_weights(costs, &w))
    }
}
