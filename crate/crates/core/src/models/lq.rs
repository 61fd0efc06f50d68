use serde::{Deserialize, Serialize};

use crate::system::{Dynamics, StateCost};

/// Scalar integrator `dx = u dt + dW`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScalarIntegrator;

impl Dynamics for ScalarIntegrator {
    fn state_dim(&self) -> usize {
        1
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn drift(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }

    fn input_matrix(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
    }

    fn derivative(&self, _t: f64, _x: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = u[0];
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LqParams {
    /// Running cost `1/2 q x^2`.
    pub state_weight: f64,
    /// Control cost `1/2 r u^2`.
    pub control_weight: f64,
    /// Terminal cost `1/2 p x^2`.
    pub terminal_weight: f64,
}

impl Default for LqParams {
    fn default() -> Self {
        LqParams {
            state_weight: 1.0,
            control_weight: 1.0,
            terminal_weight: 0.0,
        }
    }
}

/// Quadratic state cost of the scalar problem.
#[derive(Debug, Clone)]
pub struct LqCost {
    pub params: LqParams,
}

impl StateCost for LqCost {
    fn running(&self, _t: f64, x: &[f64]) -> f64 {
        0.5 * self.params.state_weight * x[0] * x[0]
    }

    fn terminal(&self, x: &[f64]) -> f64 {
        0.5 * self.params.terminal_weight * x[0] * x[0]
    }
}

/// Finite-horizon solution of the discretized scalar problem
/// `x' = x + u dt`, stage cost `1/2 (q x^2 + r u^2) dt`, terminal `1/2 p x^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct LqSolution {
    pub dt: f64,
    /// Feedback gains: the optimal control at step `i` is `gains[i] * x`.
    pub gains: Vec<f64>,
    /// Value coefficients: `V_i(x) = 1/2 value[i] x^2`, `i = 0..=N`.
    pub value: Vec<f64>,
}

impl LqSolution {
    pub fn horizon(&self) -> usize {
        self.gains.len()
    }

    pub fn first_control(&self, x0: f64) -> f64 {
        self.gains[0] * x0
    }

    /// Optimal deterministic cost from `x0`.
    pub fn optimal_cost(&self, x0: f64) -> f64 {
        0.5 * self.value[0] * x0 * x0
    }
}

/// Backward discrete Riccati recursion for the scalar problem.
pub fn lq_analytic_oracle(params: &LqParams, horizon: usize, dt: f64) -> LqSolution {
    let (q, r) = (params.state_weight, params.control_weight);
    let mut value = vec![0.0; horizon + 1];
    let mut gains = vec![0.0; horizon];
    value[horizon] = params.terminal_weight;
    for i in (0..horizon).rev() {
        let p = value[i + 1];
        // minimize 1/2 r u^2 dt + 1/2 p (x + u dt)^2 over u
        let k = -(dt * p) / (r * dt + p * dt * dt);
        gains[i] = k;
        let closed = 1.0 + k * dt;
        value[i] = q * dt + r * k * k * dt + p * closed * closed;
    }
    LqSolution { dt, gains, value }
}

/// Stationary gain of the recursion, the fixed point as `N -> inf`.
pub fn lq_stationary_gain(params: &LqParams, dt: f64) -> f64 {
    let (q, r) = (params.state_weight, params.control_weight);
    let p = 0.5 * (q * dt + (q * q * dt * dt + 4.0 * q * r).sqrt());
    -p / (r + p * dt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_step_by_hand() {
        let params = LqParams {
            state_weight: 2.0,
            control_weight: 0.5,
            terminal_weight: 3.0,
        };
        let dt = 0.1;
        let sol = lq_analytic_oracle(&params, 1, dt);
        // d/du [1/2 r u^2 dt + 1/2 p (x + u dt)^2] = 0  =>  u = -p dt x / (r dt + p dt^2)
        let expected = -(dt * 3.0) / (0.5 * dt + 3.0 * dt * dt);
        assert!((sol.gains[0] - expected).abs() < 1e-15);
        // value at x = 1 by direct evaluation of the minimized cost
        let u = expected;
        let direct = 2.0 * dt + 0.5 * u * u * dt + 3.0 * (1.0 + u * dt).powi(2);
        assert!((sol.value[0] - direct).abs() < 1e-12);
    }

    #[test]
    fn no_incentive_means_no_control() {
        let params = LqParams {
            state_weight: 0.0,
            control_weight: 1.0,
            terminal_weight: 0.0,
        };
        let sol = lq_analytic_oracle(&params, 50, 0.05);
        assert!(sol.gains.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn converges_to_stationary_gain() {
        let params = LqParams::default();
        let sol = lq_analytic_oracle(&params, 10_000, 0.01);
        let stationary = lq_stationary_gain(&params, 0.01);
        assert!((sol.gains[0] - stationary).abs() < 1e-6);
    }

    #[test]
    fn value_is_the_rolled_out_cost() {
        let params = LqParams::default();
        let dt = 0.05;
        let sol = lq_analytic_oracle(&params, 40, dt);
        let mut x = 1.0;
        let mut cost = 0.0;
        for k in &sol.gains {
            let u = k * x;
            cost += 0.5 * (x * x + u * u) * dt;
            x += u * dt;
        }
        assert!((cost - sol.optimal_cost(1.0)).abs() < 1e-12);
    }
}
