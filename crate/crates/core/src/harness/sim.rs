//! Closed-loop simulation of a controller on a model plant.

use std::time::Instant;

use crate::controllers::Controller;
use crate::error::{Error, Result};
use crate::harness::log::{LogRow, TrajectoryLog};
use crate::noise::{NoiseConfig, NoiseSequence};
use crate::rollout::euler_maruyama_step;
use crate::system::{CostModel, Dynamics};

/// Process noise on the simulated plant.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum PlantNoise {
    #[default]
    Off,
    /// Control-channel noise drawn like the planner's, from its own seed.
    On { config: NoiseConfig, seed: u64 },
}

/// A finished or aborted closed-loop run.
#[derive(Debug)]
pub struct ClosedLoopRun {
    pub log: TrajectoryLog,
    /// State after the last logged step.
    pub final_state: Vec<f64>,
    /// Set when the run stopped early; the log holds the completed steps.
    pub error: Option<Error>,
}

/// Alternates controller steps and plant propagation for `steps` steps.
#[allow(clippy::too_many_arguments)]
pub fn run_closed_loop(
    controller: &mut dyn Controller,
    plant: &dyn Dynamics,
    cost: &CostModel,
    x0: &[f64],
    t0: f64,
    dt: f64,
    steps: usize,
    noise: &PlantNoise,
) -> ClosedLoopRun {
    let n = plant.state_dim();
    let m = plant.control_dim();
    let mut log = TrajectoryLog::new(n, m);
    let mut x = x0.to_vec();
    let plant_noise = match noise {
        PlantNoise::Off => Ok(NoiseSequence::zeros(1, steps.max(1), m)),
        PlantNoise::On { config, seed } => NoiseSequence::generate(config, 1, steps.max(1), dt, *seed),
    };
    let plant_noise = match plant_noise {
        Ok(p) => p,
        Err(e) => {
            return ClosedLoopRun {
                log,
                final_state: x,
                error: Some(e),
            }
        }
    };
    let mut previous: Option<Vec<f64>> = None;
    for j in 0..steps {
        let t = t0 + j as f64 * dt;
        let started = Instant::now();
        let out = match controller.step(t, &x) {
            Ok(o) => o,
            Err(e) => {
                let e = match e {
                    Error::PlanningFailed {
                        reason,
                        diagnostics,
                        ..
                    } => Error::PlanningFailed {
                        step: j,
                        reason,
                        diagnostics,
                    },
                    other => other,
                };
                return ClosedLoopRun {
                    log,
                    final_state: x,
                    error: Some(e),
                };
            }
        };
        let plan_ms = started.elapsed().as_secs_f64() * 1e3;
        let mut u = out.control;
        plant.clamp_control(&mut u);
        let stage_cost = cost.stage_cost(t, &x, &u, &u, previous.as_deref(), dt);
        let cost_to_go = out.diagnostics.as_ref().map_or(f64::NAN, |d| d.free_energy);
        let row = LogRow {
            step: j,
            time: t,
            state: x.clone(),
            control: u.clone(),
            stage_cost,
            cost_to_go,
            diagnostics: out.diagnostics,
            plan_ms,
        };
        if let Err(e) = log.push(row) {
            return ClosedLoopRun {
                log,
                final_state: x,
                error: Some(e),
            };
        }
        match euler_maruyama_step(plant, t, &x, &u, plant_noise.get(0, j), dt) {
            Ok(next) => x = next,
            Err(Error::Diverged { .. }) => {
                return ClosedLoopRun {
                    log,
                    final_state: x,
                    error: Some(Error::Diverged {
                        rollout: None,
                        step: j,
                    }),
                }
            }
            Err(e) => {
                return ClosedLoopRun {
                    log,
                    final_state: x,
                    error: Some(e),
                }
            }
        }
        previous = Some(u);
    }
    ClosedLoopRun {
        log,
        final_state: x,
        error: None,
    }
}

/// Convenience wrapper that turns an aborted run into an error.
#[allow(clippy::too_many_arguments)]
pub fn simulate(
    controller: &mut dyn Controller,
    plant: &dyn Dynamics,
    cost: &CostModel,
    x0: &[f64],
    dt: f64,
    steps: usize,
    noise: &PlantNoise,
) -> Result<TrajectoryLog> {
    let run = run_closed_loop(controller, plant, cost, x0, 0.0, dt, steps, noise);
    match run.error {
        None => Ok(run.log),
        Some(e) => Err(e),
    }
}
