//! PI²-CMA: per-timestep path-integral parameter averaging with temporal
//! decay and covariance adaptation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::controllers::policy::{floor_covariance, policy_closed_loop_cost, rollout_policy, PolicyParams};
use crate::controllers::{Controller, StepOutput};
use crate::error::{Error, Result};
use crate::noise::{derive_seed, stream_rng};
use crate::rollout::DEFAULT_DIVERGENCE_COST;
use crate::system::{CostModel, Dynamics};
use crate::weights::{softmax_weights, SamplingDiagnostics};

/// Point around which the per-step covariance is accumulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceCentering {
    /// The parameters before the update.
    #[default]
    PreviousMean,
    /// The per-step weighted mean.
    WeightedMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Pi2Config {
    pub num_samples: usize,
    pub horizon: usize,
    pub dt: f64,
    pub temperature: f64,
    /// When positive, step `i` uses `lambda_i = (max_k G - min_k G) / h`.
    pub cost_sensitivity: f64,
    pub covariance_floor: f64,
    pub centering: CovarianceCentering,
    pub initial_state: Vec<f64>,
    /// Half-width of the uniform initial-state draw, per component.
    pub initial_state_spread: Vec<f64>,
    pub iterations: usize,
    /// Stop when `max |dtheta|` falls below this.
    pub tolerance: f64,
    pub divergence_cost: f64,
}

impl Default for Pi2Config {
    fn default() -> Self {
        Pi2Config {
            num_samples: 20,
            horizon: 40,
            dt: 0.05,
            temperature: 1.0,
            cost_sensitivity: 10.0,
            covariance_floor: 1e-8,
            centering: CovarianceCentering::PreviousMean,
            initial_state: vec![1.0],
            initial_state_spread: vec![0.0],
            iterations: 200,
            tolerance: 0.0,
            divergence_cost: DEFAULT_DIVERGENCE_COST,
        }
    }
}

impl Pi2Config {
    pub fn validate(&self, state_dim: usize) -> Result<()> {
        if self.num_samples == 0 || self.horizon == 0 {
            return Err(Error::config("pi2.num_samples and pi2.horizon must be >= 1"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("pi2.dt must be positive"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("pi2.temperature must be positive"));
        }
        if !(self.cost_sensitivity >= 0.0 && self.cost_sensitivity.is_finite()) {
            return Err(Error::config("pi2.cost_sensitivity must be >= 0"));
        }
        if !(self.covariance_floor > 0.0 && self.covariance_floor.is_finite()) {
            return Err(Error::config("pi2.covariance_floor must be positive"));
        }
        if self.initial_state.len() != state_dim || self.initial_state_spread.len() != state_dim {
            return Err(Error::config(format!(
                "pi2.initial_state and pi2.initial_state_spread need {state_dim} entries"
            )));
        }
        if self.initial_state_spread.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::config("pi2.initial_state_spread must be >= 0"));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::config("pi2.tolerance must be >= 0"));
        }
        Ok(())
    }
}

/// `(N - i) / sum_j (N - j)`, with the last entry set so the sum is 1.
pub fn temporal_weights(horizon: usize) -> Vec<f64> {
    let n = horizon as f64;
    let total = n * (n + 1.0) / 2.0;
    let mut w: Vec<f64> = (0..horizon).map(|i| (n - i as f64) / total).collect();
    if horizon > 1 {
        let head: f64 = w[..horizon - 1].iter().sum();
        w[horizon - 1] = 1.0 - head;
    }
    w
}

#[derive(Debug, Clone)]
pub struct Pi2Iteration {
    pub params: PolicyParams,
    /// Per-step weight vectors, `N x K`.
    pub step_weights: Vec<Vec<f64>>,
    pub diagnostics: SamplingDiagnostics,
    /// The covariance needed eigenvalue flooring.
    pub repaired: bool,
    pub initial_state: Vec<f64>,
}

fn sqrt_factor(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    match sigma.clone().cholesky() {
        Some(c) => c.l(),
        None => {
            let eig = sigma.clone().symmetric_eigen();
            let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
            &eig.eigenvectors * DMatrix::from_diagonal(&d)
        }
    }
}

/// One PI²-CMA iteration: sample per-step parameters, roll out, average per
/// step, then average over time.
pub fn pi2_cma_iterate(
    model: &dyn Dynamics,
    cost: &CostModel,
    params: &PolicyParams,
    config: &Pi2Config,
    seed: u64,
) -> Result<Pi2Iteration> {
    config.validate(model.state_dim())?;
    params.validate(0.0)?;
    let policy = params.policy.as_ref();
    let np = params.num_params();
    let (k_total, n) = (config.num_samples, config.horizon);

    let mut init_rng = stream_rng(derive_seed(seed, &[1]), 0);
    let x_init: Vec<f64> = config
        .initial_state
        .iter()
        .zip(&config.initial_state_spread)
        .map(|(c, s)| {
            if *s > 0.0 {
                c + s * init_rng.random_range(-1.0..1.0)
            } else {
                *c
            }
        })
        .collect();

    let l = sqrt_factor(&params.sigma);
    let sample_seed = derive_seed(seed, &[0]);
    let mut thetas = vec![0.0; k_total * n * np];
    let mut z = DVector::zeros(np);
    for k in 0..k_total {
        let mut rng = stream_rng(sample_seed, k as u64);
        for i in 0..n {
            for zj in z.iter_mut() {
                *zj = rng.sample(StandardNormal);
            }
            let th = &params.theta + &l * &z;
            let off = (k * n + i) * np;
            thetas[off..off + np].copy_from_slice(th.as_slice());
        }
    }

    let batch = rollout_policy(
        model,
        cost,
        policy,
        &thetas,
        k_total,
        n,
        &x_init,
        0.0,
        config.dt,
        config.divergence_cost,
    )?;
    if batch.diverged.iter().all(|d| *d) {
        let diagnostics = SamplingDiagnostics::from_costs(&batch.costs_at_step(0), config.temperature).ok();
        return Err(Error::PlanningFailed {
            step: 0,
            reason: format!("all {k_total} policy rollouts diverged"),
            diagnostics: diagnostics.map(Box::new),
        });
    }

    let tw = temporal_weights(n);
    let mut theta_new = DVector::zeros(np);
    let mut sigma_new = DMatrix::zeros(np, np);
    let mut step_weights = Vec::with_capacity(n);
    let mut diagnostics = None;
    for (i, tw_i) in tw.iter().enumerate() {
        let costs = batch.costs_at_step(i);
        let lambda = step_temperature(&costs, config);
        let w = softmax_weights(&costs, lambda)?;
        if i == 0 {
            diagnostics = Some(SamplingDiagnostics::from_weights(&costs, &w));
        }
        let mut mean_i = DVector::zeros(np);
        for (k, wk) in w.weights.iter().enumerate() {
            let off = (k * n + i) * np;
            mean_i.axpy(*wk, &DVector::from_column_slice(&thetas[off..off + np]), 1.0);
        }
        let center = match config.centering {
            CovarianceCentering::PreviousMean => params.theta.clone(),
            CovarianceCentering::WeightedMean => mean_i.clone(),
        };
        let mut sigma_i = DMatrix::zeros(np, np);
        for (k, wk) in w.weights.iter().enumerate() {
            let off = (k * n + i) * np;
            let d = DVector::from_column_slice(&thetas[off..off + np]) - &center;
            sigma_i.ger(*wk, &d, &d, 1.0);
        }
        theta_new.axpy(*tw_i, &mean_i, 1.0);
        sigma_new += sigma_i * *tw_i;
        step_weights.push(w.weights);
    }
    let (sigma_new, repaired) = floor_covariance(&sigma_new, config.covariance_floor);
    if repaired {
        log::debug!("PI2-CMA covariance floored at {:e}", config.covariance_floor);
    }
    let out = PolicyParams {
        theta: theta_new,
        sigma: sigma_new,
        kind: params.kind,
        policy: params.policy.clone(),
    };
    Ok(Pi2Iteration {
        params: out,
        step_weights,
        diagnostics: diagnostics.expect("horizon >= 1"),
        repaired,
        initial_state: x_init,
    })
}

fn step_temperature(costs: &[f64], config: &Pi2Config) -> f64 {
    if config.cost_sensitivity > 0.0 {
        let (lo, hi) = costs
            .iter()
            .filter(|c| c.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), c| (a.min(*c), b.max(*c)));
        let range = hi - lo;
        if range > 0.0 && range.is_finite() {
            return range / config.cost_sensitivity;
        }
    }
    config.temperature
}

/// Runs up to `config.iterations` iterations from `params`. Returns the
/// final parameters and the deterministic closed-loop cost from
/// `config.initial_state` after each iteration.
pub fn pi2_cma_optimize(
    model: &dyn Dynamics,
    cost: &CostModel,
    params: &PolicyParams,
    config: &Pi2Config,
    seed: u64,
) -> Result<(PolicyParams, Vec<f64>)> {
    let mut current = params.clone();
    let mut history = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        let next = pi2_cma_iterate(model, cost, &current, config, derive_seed(seed, &[it as u64]))
            .map_err(|e| match e {
                Error::PlanningFailed {
                    reason,
                    diagnostics,
                    ..
                } => Error::PlanningFailed {
                    step: it,
                    reason,
                    diagnostics,
                },
                other => other,
            })?;
        let change = (&next.params.theta - &current.theta).amax();
        current = next.params;
        history.push(policy_closed_loop_cost(
            model,
            cost,
            current.policy.as_ref(),
            current.theta.as_slice(),
            config.horizon,
            &config.initial_state,
            0.0,
            config.dt,
            config.divergence_cost,
        ));
        if change < config.tolerance {
            break;
        }
    }
    Ok((current, history))
}

/// Feedback controller whose parameters were trained with PI²-CMA.
pub struct Pi2Controller {
    params: PolicyParams,
    clamp: std::sync::Arc<dyn Dynamics>,
    history: Vec<f64>,
}

impl Pi2Controller {
    /// Trains `initial` on `model` and wraps the result.
    pub fn train(
        model: std::sync::Arc<dyn Dynamics>,
        cost: &CostModel,
        initial: &PolicyParams,
        config: &Pi2Config,
        seed: u64,
    ) -> Result<Self> {
        let (params, history) = pi2_cma_optimize(model.as_ref(), cost, initial, config, seed)?;
        Ok(Pi2Controller {
            params,
            clamp: model,
            history,
        })
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn training_costs(&self) -> &[f64] {
        &self.history
    }
}

impl Controller for Pi2Controller {
    fn name(&self) -> &str {
        "pi2_cma"
    }

    fn step(&mut self, t: f64, x: &[f64]) -> Result<StepOutput> {
        let mut control = self.params.control(t, x);
        self.clamp.clamp_control(&mut control);
        if control.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                rollout: None,
                step: 0,
            });
        }
        Ok(StepOutput {
            control,
            diagnostics: None,
        })
    }
}
