use serde::{Deserialize, Serialize};

use crate::system::{Dynamics, StateCost};

/// Cart-pole physical parameters. The pole is a uniform rod.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CartPoleParams {
    pub cart_mass: f64,
    pub pole_mass: f64,
    pub pole_half_length: f64,
    pub gravity: f64,
    pub force_limit: f64,
}

impl Default for CartPoleParams {
    fn default() -> Self {
        CartPoleParams {
            cart_mass: 1.0,
            pole_mass: 0.1,
            pole_half_length: 0.5,
            gravity: 9.81,
            force_limit: 10.0,
        }
    }
}

impl CartPoleParams {
    pub fn validate(&self) -> Result<(), String> {
        let fields = [
            ("cart_mass", self.cart_mass),
            ("pole_mass", self.pole_mass),
            ("pole_half_length", self.pole_half_length),
            ("gravity", self.gravity),
            ("force_limit", self.force_limit),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("cartpole.{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }
}

/// Cart-pole with state `(x, x_dot, theta, theta_dot)`, `theta = 0` upright,
/// and a horizontal force on the cart as the only control.
#[derive(Debug, Clone)]
pub struct CartPole {
    pub params: CartPoleParams,
}

impl CartPole {
    pub fn new(params: CartPoleParams) -> Self {
        CartPole { params }
    }

    /// Drift and force coefficients of `(x_ddot, theta_ddot)`:
    /// `x_ddot = a_x + b_x F`, `theta_ddot = a_th + b_th F`.
    fn coefficients(&self, state: &[f64]) -> (f64, f64, f64, f64) {
        let p = &self.params;
        let total = p.cart_mass + p.pole_mass;
        let l = p.pole_half_length;
        let ml = p.pole_mass * l;
        let (s, c) = state[2].sin_cos();
        let w = state[3];
        let denom = l * (4.0 / 3.0 - p.pole_mass * c * c / total);
        let a_th = (p.gravity * s - c * ml * w * w * s / total) / denom;
        let b_th = -c / (total * denom);
        let a_x = (ml * w * w * s - ml * c * a_th) / total;
        let b_x = (1.0 - ml * c * b_th) / total;
        (a_x, b_x, a_th, b_th)
    }

    /// State derivative under `force`, clamped to the force limit.
    pub fn dynamics(&self, state: &[f64], force: f64) -> [f64; 4] {
        let f = force.clamp(-self.params.force_limit, self.params.force_limit);
        let (a_x, b_x, a_th, b_th) = self.coefficients(state);
        [state[1], a_x + b_x * f, state[3], a_th + b_th * f]
    }

    /// Total mechanical energy; conserved when the force is zero.
    pub fn energy(&self, state: &[f64]) -> f64 {
        let p = &self.params;
        let l = p.pole_half_length;
        let (xd, th, thd) = (state[1], state[2], state[3]);
        let kinetic = 0.5 * (p.cart_mass + p.pole_mass) * xd * xd
            + p.pole_mass * l * xd * thd * th.cos()
            + (2.0 / 3.0) * p.pole_mass * l * l * thd * thd;
        kinetic + p.pole_mass * p.gravity * l * th.cos()
    }
}

impl Dynamics for CartPole {
    fn state_dim(&self) -> usize {
        4
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn drift(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        let (a_x, _, a_th, _) = self.coefficients(x);
        out.copy_from_slice(&[x[1], a_x, x[3], a_th]);
    }

    fn input_matrix(&self, _t: f64, x: &[f64], out: &mut [f64]) {
        let (_, b_x, _, b_th) = self.coefficients(x);
        out.copy_from_slice(&[0.0, b_x, 0.0, b_th]);
    }

    fn clamp_control(&self, u: &mut [f64]) {
        u[0] = u[0].clamp(-self.params.force_limit, self.params.force_limit);
    }

    fn derivative(&self, _t: f64, x: &[f64], u: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.dynamics(x, u[0]));
    }
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CartPoleCostWeights {
    pub position: f64,
    pub velocity: f64,
    pub angle: f64,
    pub angular_velocity: f64,
    /// Terminal cost is this multiple of the running cost at the final state.
    pub terminal_scale: f64,
}

impl Default for CartPoleCostWeights {
    fn default() -> Self {
        CartPoleCostWeights {
            position: 1.0,
            velocity: 0.1,
            angle: 10.0,
            angular_velocity: 0.1,
            terminal_scale: 1.0,
        }
    }
}

/// Quadratic swing-up cost on `(x, x_dot, wrap(theta), theta_dot)`.
#[derive(Debug, Clone)]
pub struct CartPoleCost {
    pub weights: CartPoleCostWeights,
}

impl CartPoleCost {
    fn quadratic(&self, x: &[f64]) -> f64 {
        let w = &self.weights;
        let th = wrap_angle(x[2]);
        w.position * x[0] * x[0]
            + w.velocity * x[1] * x[1]
            + w.angle * th * th
            + w.angular_velocity * x[3] * x[3]
    }
}

impl StateCost for CartPoleCost {
    fn running(&self, _t: f64, x: &[f64]) -> f64 {
        self.quadratic(x)
    }

    fn terminal(&self, x: &[f64]) -> f64 {
        self.weights.terminal_scale * self.quadratic(x)
    }
}
