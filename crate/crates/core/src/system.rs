//! Control-affine stochastic systems and their costs.
//!
//! A system evolves as `dx = f(t, x) dt + g(t, x) (u dt + dW)`, where the
//! Brownian channel is scaled per control channel by the sampler. Costs are
//! a nonnegative state cost `q(t, x)`, a terminal cost `phi(x)` and a
//! quadratic control cost `1/2 u^T R u`, optionally with an action-rate term.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Drift and input matrix of a control-affine system.
///
/// Implementations must be pure: they are invoked concurrently from
/// independent rollouts.
pub trait Dynamics: Send + Sync {
    fn state_dim(&self) -> usize;

    fn control_dim(&self) -> usize;

    /// Writes `f(t, x)` into `out` (length `state_dim`).
    fn drift(&self, t: f64, x: &[f64], out: &mut [f64]);

    /// Writes `g(t, x)` row-major into `out` (length `state_dim * control_dim`).
    fn input_matrix(&self, t: f64, x: &[f64], out: &mut [f64]);

    /// Projects a control onto the admissible set. Identity by default.
    fn clamp_control(&self, _u: &mut [f64]) {}

    /// Writes `f(t, x) + g(t, x) u` into `out`.
    ///
    /// The control is used as given; callers clamp beforehand. Models
    /// override this to avoid materializing `g`, or when they are not
    /// control-affine.
    fn derivative(&self, t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        let n = self.state_dim();
        let m = self.control_dim();
        let mut g = vec![0.0; n * m];
        self.drift(t, x, out);
        self.input_matrix(t, x, &mut g);
        for (r, o) in out.iter_mut().enumerate() {
            let row = &g[r * m..(r + 1) * m];
            *o += row.iter().zip(u).map(|(a, b)| a * b).sum::<f64>();
        }
    }
}

/// State-dependent part of the cost: running cost `q` and terminal cost `phi`.
pub trait StateCost: Send + Sync {
    /// Running cost rate `q(t, x) >= 0`.
    fn running(&self, t: f64, x: &[f64]) -> f64;

    /// Terminal cost `phi(x) >= 0`.
    fn terminal(&self, x: &[f64]) -> f64;
}

impl<F> StateCost for F
where
    F: Fn(f64, &[f64]) -> f64 + Send + Sync,
{
    fn running(&self, t: f64, x: &[f64]) -> f64 {
        self(t, x)
    }

    fn terminal(&self, _x: &[f64]) -> f64 {
        0.0
    }
}

/// How the quadratic control cost is charged inside a sampled rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ControlCostForm {
    /// `1/2 (u + du)^T R (u + du)`: the cost of the control actually applied.
    #[default]
    Perturbed,
    /// `1/2 u^T R u + u^T R du`: the nominal control cost plus the stochastic
    /// cross term. This is the cost whose exponential weighting recovers the
    /// optimal control when the temperature equals the noise-to-weight ratio.
    PathIntegral,
}

/// Running, terminal, control and action-rate costs of a task.
#[derive(Clone)]
pub struct CostModel {
    pub state_cost: Arc<dyn StateCost>,
    /// Row-major `control_dim x control_dim`, symmetric positive semidefinite.
    pub control_weight: Vec<f64>,
    /// Controls are penalized relative to this reference (zero by default).
    pub control_reference: Vec<f64>,
    /// Weight on `|u_i - u_{i-1}|^2`; zero disables the term.
    pub action_rate_weight: f64,
    pub control_cost_form: ControlCostForm,
}

impl fmt::Debug for CostModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CostModel")
            .field("control_weight", &self.control_weight)
            .field("control_reference", &self.control_reference)
            .field("action_rate_weight", &self.action_rate_weight)
            .field("control_cost_form", &self.control_cost_form)
            .finish_non_exhaustive()
    }
}

impl CostModel {
    /// Identity control weight, no action-rate penalty.
    pub fn new(state_cost: Arc<dyn StateCost>, control_dim: usize) -> Self {
        let mut control_weight = vec![0.0; control_dim * control_dim];
        for i in 0..control_dim {
            control_weight[i * control_dim + i] = 1.0;
        }
        CostModel {
            state_cost,
            control_weight,
            control_reference: vec![0.0; control_dim],
            action_rate_weight: 0.0,
            control_cost_form: ControlCostForm::Perturbed,
        }
    }

    pub fn with_diagonal_weight(mut self, diag: &[f64]) -> Self {
        let m = diag.len();
        self.control_weight = vec![0.0; m * m];
        for (i, d) in diag.iter().enumerate() {
            self.control_weight[i * m + i] = *d;
        }
        self
    }

    pub fn with_control_reference(mut self, reference: Vec<f64>) -> Self {
        self.control_reference = reference;
        self
    }

    pub fn with_action_rate_weight(mut self, weight: f64) -> Self {
        self.action_rate_weight = weight;
        self
    }

    pub fn with_control_cost_form(mut self, form: ControlCostForm) -> Self {
        self.control_cost_form = form;
        self
    }

    pub fn control_dim(&self) -> usize {
        self.control_reference.len()
    }

    pub fn validate(&self, control_dim: usize) -> Result<()> {
        if self.control_reference.len() != control_dim
            || self.control_weight.len() != control_dim * control_dim
        {
            return Err(Error::config(format!(
                "cost model control dimension does not match model control dimension {control_dim}"
            )));
        }
        if !(self.action_rate_weight >= 0.0) || !self.action_rate_weight.is_finite() {
            return Err(Error::config("action_rate_weight must be finite and >= 0"));
        }
        let m = control_dim;
        for i in 0..m {
            if self.control_weight[i * m + i] < 0.0 {
                return Err(Error::config("control_weight has a negative diagonal entry"));
            }
            for j in 0..i {
                let (a, b) = (self.control_weight[i * m + j], self.control_weight[j * m + i]);
                if (a - b).abs() > 1e-12 * (1.0 + a.abs().max(b.abs())) {
                    return Err(Error::config("control_weight is not symmetric"));
                }
            }
        }
        Ok(())
    }

    /// `1/2 a^T R b` with both vectors shifted by the reference.
    fn half_quadratic(&self, a: &[f64], b: &[f64]) -> f64 {
        let m = a.len();
        let r = &self.control_reference;
        let mut acc = 0.0;
        for i in 0..m {
            let ai = a[i] - r[i];
            let row = &self.control_weight[i * m..(i + 1) * m];
            let mut s = 0.0;
            for j in 0..m {
                s += row[j] * (b[j] - r[j]);
            }
            acc += ai * s;
        }
        0.5 * acc
    }

    /// Control-cost rate for nominal `u`, applied `applied = u + du`.
    pub fn control_cost(&self, nominal: &[f64], applied: &[f64]) -> f64 {
        match self.control_cost_form {
            ControlCostForm::Perturbed => self.half_quadratic(applied, applied),
            ControlCostForm::PathIntegral => {
                // 1/2 u'Ru + u'R du, with du = applied - u.
                let m = nominal.len();
                let r = &self.control_reference;
                let mut cross = 0.0;
                for i in 0..m {
                    let ui = nominal[i] - r[i];
                    let row = &self.control_weight[i * m..(i + 1) * m];
                    for j in 0..m {
                        cross += ui * row[j] * (applied[j] - nominal[j]);
                    }
                }
                self.half_quadratic(nominal, nominal) + cross
            }
        }
    }

    /// Left-endpoint stage cost over one interval of length `dt`.
    pub fn stage_cost(
        &self,
        t: f64,
        x: &[f64],
        nominal: &[f64],
        applied: &[f64],
        previous: Option<&[f64]>,
        dt: f64,
    ) -> f64 {
        let mut rate = self.state_cost.running(t, x) + self.control_cost(nominal, applied);
        if self.action_rate_weight > 0.0 {
            if let Some(prev) = previous {
                let d2: f64 = applied.iter().zip(prev).map(|(a, b)| (a - b) * (a - b)).sum();
                rate += self.action_rate_weight * d2;
            }
        }
        rate * dt
    }

    pub fn terminal_cost(&self, x: &[f64]) -> f64 {
        self.state_cost.terminal(x)
    }
}

/// Checks that a model returns finite, correctly sized outputs at a state.
pub fn check_model_output(model: &dyn Dynamics, t: f64, x: &[f64]) -> Result<()> {
    let n = model.state_dim();
    let m = model.control_dim();
    if x.len() != n {
        return Err(Error::config(format!(
            "state has length {} but the model expects {n}",
            x.len()
        )));
    }
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n * m];
    model.drift(t, x, &mut f);
    model.input_matrix(t, x, &mut g);
    if f.iter().chain(&g).any(|v| !v.is_finite()) {
        return Err(Error::Diverged { rollout: None, step: 0 });
    }
    Ok(())
}
