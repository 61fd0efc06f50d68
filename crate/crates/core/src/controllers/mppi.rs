//! Model predictive path integral control.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::controllers::{Controller, StepOutput};
use crate::error::{Error, Result};
use crate::harness::log::TrajectoryLog;
use crate::harness::sim::{run_closed_loop, PlantNoise};
use crate::noise::{derive_seed, NoiseConfig, NoiseSequence};
use crate::rollout::{
    rollout_batch, shift_receding_horizon, ControlSequence, RolloutBatch, RolloutOptions,
    DEFAULT_DIVERGENCE_COST,
};
use crate::system::{CostModel, Dynamics};
use crate::weights::{softmax_weights, SamplingDiagnostics};

/// Which costs weight the perturbation applied at step `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightingMode {
    /// Step `i` is weighted by the cost-to-go `G_{i,k}` from that step.
    #[default]
    PerTimestep,
    /// Every step is weighted by the total cost `G_{0,k}`.
    PerTrajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MppiConfig {
    pub num_samples: usize,
    pub horizon: usize,
    pub dt: f64,
    pub temperature: f64,
    pub noise: NoiseConfig,
    pub action_rate_weight: f64,
    pub divergence_cost: f64,
    pub weighting: WeightingMode,
}

impl Default for MppiConfig {
    fn default() -> Self {
        MppiConfig {
            num_samples: 1024,
            horizon: 50,
            dt: 0.02,
            temperature: 1.0,
            noise: NoiseConfig::default(),
            action_rate_weight: 0.0,
            divergence_cost: DEFAULT_DIVERGENCE_COST,
            weighting: WeightingMode::PerTimestep,
        }
    }
}

impl MppiConfig {
    pub fn validate(&self, control_dim: usize) -> Result<()> {
        if self.num_samples == 0 {
            return Err(Error::config("mppi.num_samples must be >= 1"));
        }
        if self.horizon == 0 {
            return Err(Error::config("mppi.horizon must be >= 1"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config("mppi.dt must be positive"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config(format!(
                "mppi.temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.action_rate_weight >= 0.0 && self.action_rate_weight.is_finite()) {
            return Err(Error::config("mppi.action_rate_weight must be >= 0"));
        }
        if !(self.divergence_cost > 0.0 && self.divergence_cost.is_finite()) {
            return Err(Error::config("mppi.divergence_cost must be positive and finite"));
        }
        self.noise.validate(control_dim)
    }
}

/// Result of one MPPI optimization pass.
#[derive(Debug, Clone)]
pub struct MppiPlan {
    pub controls: ControlSequence,
    /// Diagnostics of the weights at step 0.
    pub diagnostics: SamplingDiagnostics,
    /// `G_{0,k}` of every rollout.
    pub initial_costs: Vec<f64>,
}

/// Exponentially weighted update `u_i <- u_i + Σ_k w_{i,k} du_{i,k}`, with
/// the result projected onto the admissible controls.
pub fn mppi_update(
    model: &dyn Dynamics,
    nominal: &ControlSequence,
    batch: &RolloutBatch,
    temperature: f64,
    weighting: WeightingMode,
) -> Result<(ControlSequence, SamplingDiagnostics)> {
    let horizon = nominal.horizon();
    let m = nominal.control_dim();
    let k_total = batch.num_rollouts();
    let initial = batch.costs_at_step(0);
    let w0 = softmax_weights(&initial, temperature)?;
    let diagnostics = SamplingDiagnostics::from_weights(&initial, &w0);

    let mut updated = nominal.clone();
    let mut delta = vec![0.0; m];
    for i in 0..horizon {
        let step_weights;
        let w = match weighting {
            WeightingMode::PerTrajectory => &w0.weights,
            WeightingMode::PerTimestep if i == 0 => &w0.weights,
            WeightingMode::PerTimestep => {
                step_weights = softmax_weights(&batch.costs_at_step(i), temperature)?;
                &step_weights.weights
            }
        };
        delta.fill(0.0);
        for (k, wk) in w.iter().enumerate().take(k_total) {
            for (d, p) in delta.iter_mut().zip(batch.perturbation(k, i)) {
                *d += wk * p;
            }
        }
        let u = &mut updated.as_mut_slice()[i * m..(i + 1) * m];
        for (uj, dj) in u.iter_mut().zip(&delta) {
            *uj += dj;
        }
        model.clamp_control(u);
    }
    Ok((updated, diagnostics))
}

/// One MPPI pass with a caller-supplied perturbation table.
#[allow(clippy::too_many_arguments)]
pub fn mppi_plan_with_noise(
    model: &dyn Dynamics,
    cost: &CostModel,
    nominal: &ControlSequence,
    noise: &NoiseSequence,
    x0: &[f64],
    t0: f64,
    config: &MppiConfig,
    previous_control: Option<&[f64]>,
) -> Result<MppiPlan> {
    let cost = if cost.action_rate_weight == config.action_rate_weight {
        cost.clone()
    } else {
        cost.clone().with_action_rate_weight(config.action_rate_weight)
    };
    let opts = RolloutOptions {
        previous_control: previous_control.map(<[f64]>::to_vec),
        divergence_cost: config.divergence_cost,
    };
    let batch = rollout_batch(model, &cost, nominal, noise, x0, t0, &opts)?;
    let initial_costs = batch.costs_at_step(0);
    if batch.num_diverged() == batch.num_rollouts() {
        let diagnostics = SamplingDiagnostics::from_costs(&initial_costs, config.temperature).ok();
        return Err(Error::PlanningFailed {
            step: 0,
            reason: format!("all {} rollouts diverged", batch.num_rollouts()),
            diagnostics: diagnostics.map(Box::new),
        });
    }
    let (controls, diagnostics) =
        mppi_update(model, nominal, &batch, config.temperature, config.weighting)?;
    Ok(MppiPlan {
        controls,
        diagnostics,
        initial_costs,
    })
}

/// Samples perturbations from `seed`, rolls them out and updates `nominal`.
#[allow(clippy::too_many_arguments)]
pub fn mppi_plan_step(
    model: &dyn Dynamics,
    cost: &CostModel,
    nominal: &ControlSequence,
    x0: &[f64],
    t0: f64,
    config: &MppiConfig,
    seed: u64,
    previous_control: Option<&[f64]>,
) -> Result<MppiPlan> {
    config.validate(model.control_dim())?;
    if nominal.horizon() != config.horizon || nominal.control_dim() != model.control_dim() {
        return Err(Error::config(format!(
            "nominal sequence is {} x {}, config expects {} x {}",
            nominal.horizon(),
            nominal.control_dim(),
            config.horizon,
            model.control_dim()
        )));
    }
    let noise = NoiseSequence::generate(
        &config.noise,
        config.num_samples,
        config.horizon,
        config.dt,
        seed,
    )?;
    mppi_plan_with_noise(model, cost, nominal, &noise, x0, t0, config, previous_control)
}

/// Receding-horizon MPPI: plan, apply the first control, shift.
pub struct MppiController {
    model: Arc<dyn Dynamics>,
    cost: CostModel,
    config: MppiConfig,
    nominal: ControlSequence,
    seed: u64,
    plans: u64,
    previous: Option<Vec<f64>>,
    label: String,
}

impl MppiController {
    pub fn new(
        model: Arc<dyn Dynamics>,
        cost: CostModel,
        config: MppiConfig,
        initial: Option<ControlSequence>,
        seed: u64,
    ) -> Result<Self> {
        let m = model.control_dim();
        config.validate(m)?;
        cost.validate(m)?;
        let nominal = match initial {
            Some(seq) => {
                if seq.horizon() != config.horizon || seq.control_dim() != m {
                    return Err(Error::config("initial control sequence has the wrong shape"));
                }
                seq
            }
            None => ControlSequence::zeros(config.horizon, m, config.dt)?,
        };
        Ok(MppiController {
            model,
            cost,
            config,
            nominal,
            seed,
            plans: 0,
            previous: None,
            label: "mppi".into(),
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn nominal(&self) -> &ControlSequence {
        &self.nominal
    }

    pub fn config(&self) -> &MppiConfig {
        &self.config
    }
}

impl Controller for MppiController {
    fn name(&self) -> &str {
        &self.label
    }

    fn step(&mut self, t: f64, x: &[f64]) -> Result<StepOutput> {
        let seed = derive_seed(self.seed, &[self.plans]);
        let plan = mppi_plan_step(
            self.model.as_ref(),
            &self.cost,
            &self.nominal,
            x,
            t,
            &self.config,
            seed,
            self.previous.as_deref(),
        )
        .map_err(|e| match e {
            Error::PlanningFailed {
                reason,
                diagnostics,
                ..
            } => Error::PlanningFailed {
                step: self.plans as usize,
                reason,
                diagnostics,
            },
            other => other,
        })?;
        self.plans += 1;
        let mut control = plan.controls.first().to_vec();
        self.model.clamp_control(&mut control);
        self.nominal = shift_receding_horizon(&plan.controls);
        self.previous = Some(control.clone());
        Ok(StepOutput {
            control,
            diagnostics: Some(plan.diagnostics),
        })
    }
}

/// Closed-loop MPPI on a simulated plant for `sim_steps` steps of `config.dt`.
pub fn mppi_control_loop(
    model: Arc<dyn Dynamics>,
    cost: CostModel,
    x0: &[f64],
    config: MppiConfig,
    sim_steps: usize,
    seed: u64,
    plant_noise: PlantNoise,
) -> Result<TrajectoryLog> {
    if sim_steps == 0 {
        return Err(Error::config("sim_steps must be >= 1"));
    }
    let dt = config.dt;
    let mut controller = MppiController::new(model.clone(), cost.clone(), config, None, seed)?;
    let run = run_closed_loop(
        &mut controller,
        model.as_ref(),
        &cost,
        x0,
        0.0,
        dt,
        sim_steps,
        &plant_noise,
    );
    match run.error {
        None => Ok(run.log),
        Some(e) => Err(e),
    }
}
