//! Sampling-based optimizers and the receding-horizon step interface.

pub mod cem;
pub mod mppi;
pub mod pi2;
pub mod policy;

use crate::error::Result;
use crate::weights::SamplingDiagnostics;

pub use cem::{
    cem_trajopt, elite_set, CemConfig, CemController, CemIteration, CemResult, GaussianSearch,
    Objective, OpenLoopObjective, PolicyRolloutObjective,
};
pub use mppi::{
    mppi_control_loop, mppi_plan_step, mppi_plan_with_noise, mppi_update, MppiConfig,
    MppiController, MppiPlan, WeightingMode,
};
pub use pi2::{
    pi2_cma_iterate, pi2_cma_optimize, temporal_weights, CovarianceCentering, Pi2Config,
    Pi2Controller, Pi2Iteration,
};
pub use policy::{
    finite_difference_jacobian, floor_covariance, linear_policy_update, nonlinear_policy_update,
    policy_closed_loop_cost, rollout_policy, JacobianSource, LinearFeaturePolicy,
    NonlinearUpdate, Policy, PolicyKind, PolicyParams, PolicyRollouts,
};

/// Output of one controller step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub control: Vec<f64>,
    pub diagnostics: Option<SamplingDiagnostics>,
}

/// A controller maps the current observation and time to a control.
pub trait Controller: Send {
    fn name(&self) -> &str;

    fn step(&mut self, t: f64, x: &[f64]) -> Result<StepOutput>;
}
