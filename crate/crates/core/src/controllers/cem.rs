//! Cross-entropy trajectory optimization.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controllers::policy::{policy_closed_loop_cost, Policy};
use crate::controllers::{Controller, StepOutput};
use crate::error::{Error, Result};
use crate::noise::{derive_seed, stream_rng};
use crate::rollout::{simulate_sequence_cost, DEFAULT_DIVERGENCE_COST};
use crate::system::{CostModel, Dynamics};
use crate::weights::SamplingDiagnostics;

/// A scalar objective over a parameter vector.
pub trait Objective: Sync {
    fn dim(&self) -> usize;

    fn evaluate(&self, params: &[f64]) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CemConfig {
    pub num_samples: usize,
    pub elite_count: usize,
    pub max_iters: usize,
    /// Stop once `max |mean change|` drops below this.
    pub tolerance: f64,
    pub covariance_floor: f64,
    /// Reuse one set of standard-normal draws in every iteration.
    pub common_random_numbers: bool,
    /// Refit only the variances.
    pub diagonal_covariance: bool,
    /// Receding-horizon use: planning horizon and step.
    pub horizon: usize,
    pub dt: f64,
    /// Receding-horizon use: initial standard deviation per control channel.
    pub initial_std: Vec<f64>,
    /// Temperature used only for the reported weight diagnostics.
    pub temperature: f64,
    pub divergence_cost: f64,
}

impl Default for CemConfig {
    fn default() -> Self {
        CemConfig {
            num_samples: 64,
            elite_count: 8,
            max_iters: 50,
            tolerance: 1e-6,
            covariance_floor: 1e-10,
            common_random_numbers: false,
            diagonal_covariance: false,
            horizon: 50,
            dt: 0.02,
            initial_std: vec![1.0],
            temperature: 1.0,
            divergence_cost: DEFAULT_DIVERGENCE_COST,
        }
    }
}

impl CemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.elite_count == 0 || self.elite_count >= self.num_samples {
            return Err(Error::config(format!(
                "cem.elite_count must satisfy 1 <= K_e < K, got K_e = {}, K = {}",
                self.elite_count, self.num_samples
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::config("cem.max_iters must be >= 1"));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::config("cem.tolerance must be >= 0"));
        }
        if !(self.covariance_floor > 0.0 && self.covariance_floor.is_finite()) {
            return Err(Error::config("cem.covariance_floor must be positive"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("cem.temperature must be positive"));
        }
        Ok(())
    }

    fn validate_receding(&self, control_dim: usize) -> Result<()> {
        self.validate()?;
        if self.horizon == 0 || !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("cem.horizon must be >= 1 and cem.dt positive"));
        }
        if self.initial_std.len() != control_dim || self.initial_std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::config(format!(
                "cem.initial_std needs {control_dim} positive entries"
            )));
        }
        Ok(())
    }
}

/// Gaussian search distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSearch {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianSearch {
    pub fn isotropic(mean: Vec<f64>, std: f64) -> Self {
        let n = mean.len();
        GaussianSearch {
            mean: DVector::from_vec(mean),
            cov: DMatrix::from_diagonal_element(n, n, std * std),
        }
    }

    pub fn diagonal(mean: Vec<f64>, std: &[f64]) -> Self {
        let var = DVector::from_iterator(std.len(), std.iter().map(|s| s * s));
        GaussianSearch {
            mean: DVector::from_vec(mean),
            cov: DMatrix::from_diagonal(&var),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CemIteration {
    pub iteration: usize,
    /// `gamma`: the `K_e`-th smallest cost.
    pub threshold: f64,
    pub elite_count: usize,
    pub best_cost: f64,
    pub mean_cost: f64,
    pub mean_change: f64,
}

#[derive(Debug, Clone)]
pub struct CemResult {
    pub search: GaussianSearch,
    pub best_params: Vec<f64>,
    pub best_cost: f64,
    pub history: Vec<CemIteration>,
    /// Costs of the candidates in the last iteration.
    pub final_costs: Vec<f64>,
    pub converged: bool,
}

/// Threshold `gamma` (the `K_e`-th smallest cost) and the indices with
/// cost `<= gamma`, ascending.
pub fn elite_set(costs: &[f64], elite_count: usize) -> Result<(f64, Vec<usize>)> {
    if elite_count == 0 || elite_count > costs.len() {
        return Err(Error::config(format!(
            "elite count {elite_count} out of range for {} samples",
            costs.len()
        )));
    }
    let mut sorted = costs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let gamma = sorted[elite_count - 1];
    let elites: Vec<usize> = (0..costs.len()).filter(|&k| costs[k] <= gamma).collect();
    if elites.is_empty() {
        return Err(Error::DegenerateBatch(costs.len()));
    }
    Ok((gamma, elites))
}

fn sqrt_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    match cov.clone().cholesky() {
        Some(c) => c.l(),
        None => {
            let eig = cov.clone().symmetric_eigen();
            let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
            &eig.eigenvectors * DMatrix::from_diagonal(&d)
        }
    }
}

fn refit(
    samples: &[DVector<f64>],
    elites: &[usize],
    floor: f64,
    diagonal: bool,
) -> GaussianSearch {
    let n = samples[0].len();
    let count = elites.len() as f64;
    let mut mean = DVector::zeros(n);
    for &k in elites {
        mean += &samples[k];
    }
    mean /= count;
    let mut cov = DMatrix::zeros(n, n);
    for &k in elites {
        let d = &samples[k] - &mean;
        if diagonal {
            for j in 0..n {
                cov[(j, j)] += d[j] * d[j];
            }
        } else {
            cov.ger(1.0, &d, &d, 1.0);
        }
    }
    cov /= count;
    let cov = if diagonal {
        for j in 0..n {
            cov[(j, j)] = cov[(j, j)].max(floor);
        }
        cov
    } else {
        crate::controllers::policy::floor_covariance(&cov, floor).0
    };
    GaussianSearch { mean, cov }
}

/// Cross-entropy minimization of `objective` starting from `init`.
pub fn cem_trajopt(
    objective: &dyn Objective,
    init: &GaussianSearch,
    config: &CemConfig,
    seed: u64,
) -> Result<CemResult> {
    config.validate()?;
    let n = objective.dim();
    if init.mean.len() != n || init.cov.nrows() != n || init.cov.ncols() != n {
        return Err(Error::config(format!(
            "search distribution must have dimension {n}"
        )));
    }
    let mut search = init.clone();
    let mut history = Vec::with_capacity(config.max_iters);
    let mut best_params = search.mean.as_slice().to_vec();
    let mut best_cost = f64::INFINITY;
    let mut final_costs = Vec::new();
    let mut converged = false;

    for it in 0..config.max_iters {
        let iter_seed = if config.common_random_numbers {
            seed
        } else {
            derive_seed(seed, &[it as u64])
        };
        let l = sqrt_factor(&search.cov);
        let samples: Vec<DVector<f64>> = (0..config.num_samples)
            .map(|k| {
                let mut rng = stream_rng(iter_seed, k as u64);
                let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                &search.mean + &l * z
            })
            .collect();
        let costs: Vec<f64> = samples
            .par_iter()
            .map(|s| objective.evaluate(s.as_slice()))
            .collect();
        let (gamma, elites) = elite_set(&costs, config.elite_count)?;
        for (k, c) in costs.iter().enumerate() {
            if *c < best_cost {
                best_cost = *c;
                best_params = samples[k].as_slice().to_vec();
            }
        }
        let next = refit(&samples, &elites, config.covariance_floor, config.diagonal_covariance);
        let change = (&next.mean - &search.mean).amax();
        let finite: Vec<f64> = costs.iter().copied().filter(|c| c.is_finite()).collect();
        history.push(CemIteration {
            iteration: it,
            threshold: gamma,
            elite_count: elites.len(),
            best_cost: finite.iter().copied().fold(f64::INFINITY, f64::min),
            mean_cost: finite.iter().sum::<f64>() / finite.len().max(1) as f64,
            mean_change: change,
        });
        search = next;
        final_costs = costs;
        if change < config.tolerance {
            converged = true;
            break;
        }
    }
    Ok(CemResult {
        search,
        best_params,
        best_cost,
        history,
        final_costs,
        converged,
    })
}

/// Deterministic rollout cost of an open-loop control sequence.
pub struct OpenLoopObjective<'a> {
    pub model: &'a dyn Dynamics,
    pub cost: &'a CostModel,
    pub x0: Vec<f64>,
    pub t0: f64,
    pub dt: f64,
    pub horizon: usize,
    pub divergence_cost: f64,
}

impl Objective for OpenLoopObjective<'_> {
    fn dim(&self) -> usize {
        self.horizon * self.model.control_dim()
    }

    fn evaluate(&self, params: &[f64]) -> f64 {
        simulate_sequence_cost(
            self.model,
            self.cost,
            params,
            &self.x0,
            self.t0,
            self.dt,
            self.divergence_cost,
        )
    }
}

/// Deterministic closed-loop cost of a parameterized policy.
pub struct PolicyRolloutObjective<'a> {
    pub model: &'a dyn Dynamics,
    pub cost: &'a CostModel,
    pub policy: &'a dyn Policy,
    pub x0: Vec<f64>,
    pub t0: f64,
    pub dt: f64,
    pub horizon: usize,
    pub divergence_cost: f64,
}

impl Objective for PolicyRolloutObjective<'_> {
    fn dim(&self) -> usize {
        self.policy.num_params()
    }

    fn evaluate(&self, params: &[f64]) -> f64 {
        policy_closed_loop_cost(
            self.model,
            self.cost,
            self.policy,
            params,
            self.horizon,
            &self.x0,
            self.t0,
            self.dt,
            self.divergence_cost,
        )
    }
}

/// Receding-horizon CEM over open-loop control sequences, warm-started
/// from the shifted previous mean.
pub struct CemController {
    model: Arc<dyn Dynamics>,
    cost: CostModel,
    config: CemConfig,
    mean: Vec<f64>,
    seed: u64,
    plans: u64,
}

impl CemController {
    pub fn new(model: Arc<dyn Dynamics>, cost: CostModel, config: CemConfig, seed: u64) -> Result<Self> {
        let m = model.control_dim();
        config.validate_receding(m)?;
        cost.validate(m)?;
        let mean = vec![0.0; config.horizon * m];
        Ok(CemController {
            model,
            cost,
            config,
            mean,
            seed,
            plans: 0,
        })
    }
}

impl Controller for CemController {
    fn name(&self) -> &str {
        "cem"
    }

    fn step(&mut self, t: f64, x: &[f64]) -> Result<StepOutput> {
        let m = self.model.control_dim();
        let cfg = &self.config;
        let objective = OpenLoopObjective {
            model: self.model.as_ref(),
            cost: &self.cost,
            x0: x.to_vec(),
            t0: t,
            dt: cfg.dt,
            horizon: cfg.horizon,
            divergence_cost: cfg.divergence_cost,
        };
        let std: Vec<f64> = cfg.initial_std.iter().copied().cycle().take(cfg.horizon * m).collect();
        let init = GaussianSearch::diagonal(self.mean.clone(), &std);
        let result = cem_trajopt(&objective, &init, cfg, derive_seed(self.seed, &[self.plans]))?;
        self.plans += 1;
        let mut plan = result.search.mean.as_slice().to_vec();
        for u in plan.chunks_mut(m) {
            self.model.clamp_control(u);
        }
        let control = plan[..m].to_vec();
        let n = cfg.horizon;
        self.mean = (0..n)
            .flat_map(|i| plan[(i + 1).min(n - 1) * m..((i + 1).min(n - 1) + 1) * m].to_vec())
            .collect();
        let diagnostics = SamplingDiagnostics::from_costs(&result.final_costs, cfg.temperature).ok();
        Ok(StepOutput {
            control,
            diagnostics,
        })
    }
}
