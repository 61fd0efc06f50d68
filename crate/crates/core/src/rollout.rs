//! Euler–Maruyama integration and the batched rollout engine.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::noise::NoiseSequence;
use crate::system::{CostModel, Dynamics};

/// Cost assigned to rollouts whose state becomes non-finite.
pub const DEFAULT_DIVERGENCE_COST: f64 = 1e9;

/// Open-loop control sequence `(u_0, ..., u_{N-1})` with a fixed step.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSequence {
    dt: f64,
    control_dim: usize,
    controls: Vec<f64>,
}

impl ControlSequence {
    pub fn new(horizon: usize, control_dim: usize, dt: f64, controls: Vec<f64>) -> Result<Self> {
        if horizon == 0 || control_dim == 0 {
            return Err(Error::config("control sequence needs horizon >= 1 and control_dim >= 1"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::config("control sequence dt must be positive and finite"));
        }
        if controls.len() != horizon * control_dim {
            return Err(Error::config(format!(
                "control sequence has {} entries, expected {horizon} x {control_dim}",
                controls.len()
            )));
        }
        if controls.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("control sequence entries must be finite"));
        }
        Ok(ControlSequence {
            dt,
            control_dim,
            controls,
        })
    }

    pub fn zeros(horizon: usize, control_dim: usize, dt: f64) -> Result<Self> {
        Self::new(horizon, control_dim, dt, vec![0.0; horizon * control_dim])
    }

    /// A sequence holding `u` at every step.
    pub fn constant(horizon: usize, u: &[f64], dt: f64) -> Result<Self> {
        let controls = u.iter().copied().cycle().take(horizon * u.len()).collect();
        Self::new(horizon, u.len(), dt, controls)
    }

    pub fn horizon(&self) -> usize {
        self.controls.len() / self.control_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.controls
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.controls
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.controls[i * self.control_dim..(i + 1) * self.control_dim]
    }

    pub fn first(&self) -> &[f64] {
        self.get(0)
    }
}

/// Receding-horizon shift: `out[i] = in[min(i + 1, N - 1)]`.
pub fn shift_receding_horizon(seq: &ControlSequence) -> ControlSequence {
    let n = seq.horizon();
    let m = seq.control_dim;
    let mut controls = Vec::with_capacity(seq.controls.len());
    for i in 0..n {
        controls.extend_from_slice(seq.get((i + 1).min(n - 1)));
    }
    debug_assert_eq!(controls.len(), n * m);
    ControlSequence {
        dt: seq.dt,
        control_dim: m,
        controls,
    }
}

/// `x + (f(t, x) + g(t, x) clamp(u + noise)) dt`.
pub fn euler_maruyama_step(
    model: &dyn Dynamics,
    t: f64,
    x: &[f64],
    u: &[f64],
    noise: &[f64],
    dt: f64,
) -> Result<Vec<f64>> {
    let n = model.state_dim();
    let m = model.control_dim();
    if x.len() != n || u.len() != m || noise.len() != m {
        return Err(Error::config(format!(
            "dimension mismatch: state {} (model {n}), control {} / noise {} (model {m})",
            x.len(),
            u.len(),
            noise.len()
        )));
    }
    if !(dt > 0.0) {
        return Err(Error::config("dt must be positive"));
    }
    let mut applied: Vec<f64> = u.iter().zip(noise).map(|(a, b)| a + b).collect();
    model.clamp_control(&mut applied);
    let mut dx = vec![0.0; n];
    model.derivative(t, x, &applied, &mut dx);
    let next: Vec<f64> = x.iter().zip(&dx).map(|(xi, di)| xi + di * dt).collect();
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Diverged {
            rollout: None,
            step: 0,
        });
    }
    Ok(next)
}

/// Knobs for [`rollout_batch`] beyond the plain signature.
#[derive(Debug, Clone)]
pub struct RolloutOptions {
    /// Control applied just before `t0`, for the first action-rate term.
    pub previous_control: Option<Vec<f64>>,
    /// Cost given to a rollout whose state becomes non-finite.
    pub divergence_cost: f64,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        RolloutOptions {
            previous_control: None,
            divergence_cost: DEFAULT_DIVERGENCE_COST,
        }
    }
}

/// Simulated paths and their costs-to-go.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    num_rollouts: usize,
    horizon: usize,
    state_dim: usize,
    control_dim: usize,
    trajectories: Vec<f64>,
    perturbations: Vec<f64>,
    stage_costs: Vec<f64>,
    terminal_costs: Vec<f64>,
    costs_to_go: Vec<f64>,
    diverged: Vec<bool>,
}

impl RolloutBatch {
    pub fn num_rollouts(&self) -> usize {
        self.num_rollouts
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// States of rollout `k`, row-major `(N + 1) x state_dim`.
    pub fn trajectory(&self, k: usize) -> &[f64] {
        let per = (self.horizon + 1) * self.state_dim;
        &self.trajectories[k * per..(k + 1) * per]
    }

    pub fn state(&self, k: usize, i: usize) -> &[f64] {
        let n = self.state_dim;
        &self.trajectory(k)[i * n..(i + 1) * n]
    }

    /// Applied minus nominal control for rollout `k` at step `i`. Equals the
    /// sampled noise unless the model clamped the perturbed control.
    pub fn perturbation(&self, k: usize, i: usize) -> &[f64] {
        let m = self.control_dim;
        let start = (k * self.horizon + i) * m;
        &self.perturbations[start..start + m]
    }

    pub fn stage_cost(&self, k: usize, i: usize) -> f64 {
        self.stage_costs[k * self.horizon + i]
    }

    pub fn terminal_cost(&self, k: usize) -> f64 {
        self.terminal_costs[k]
    }

    /// `G_{i,k}`: cost from step `i` to the end, terminal cost included.
    pub fn cost_to_go(&self, k: usize, i: usize) -> f64 {
        self.costs_to_go[k * self.horizon + i]
    }

    /// `G_{i,k}` for all rollouts at step `i`.
    pub fn costs_at_step(&self, i: usize) -> Vec<f64> {
        (0..self.num_rollouts)
            .map(|k| self.cost_to_go(k, i))
            .collect()
    }

    /// `G_{0,k}` for every rollout.
    pub fn total_costs(&self) -> Vec<f64> {
        self.costs_at_step(0)
    }

    pub fn diverged(&self, k: usize) -> bool {
        self.diverged[k]
    }

    pub fn num_diverged(&self) -> usize {
        self.diverged.iter().filter(|d| **d).count()
    }
}

struct RolloutResult {
    states: Vec<f64>,
    perturbations: Vec<f64>,
    stage: Vec<f64>,
    terminal: f64,
    ctg: Vec<f64>,
    diverged: bool,
}

/// Simulates one perturbed rollout and its backward cost recursion.
#[allow(clippy::too_many_arguments)]
fn simulate_rollout(
    model: &dyn Dynamics,
    cost: &CostModel,
    nominal: &ControlSequence,
    noise: &[f64],
    x0: &[f64],
    t0: f64,
    opts: &RolloutOptions,
) -> RolloutResult {
    let n = model.state_dim();
    let m = model.control_dim();
    let horizon = nominal.horizon();
    let dt = nominal.dt();

    let mut states = Vec::with_capacity((horizon + 1) * n);
    states.extend_from_slice(x0);
    let mut perturbations = vec![0.0; horizon * m];
    let mut stage = vec![0.0; horizon];
    let mut applied = vec![0.0; m];
    let mut prev_applied: Option<Vec<f64>> = opts.previous_control.clone();
    let mut dx = vec![0.0; n];
    let mut x = x0.to_vec();
    let mut diverged = false;

    for i in 0..horizon {
        let t = t0 + i as f64 * dt;
        let u = nominal.get(i);
        let du = &noise[i * m..(i + 1) * m];
        for j in 0..m {
            applied[j] = u[j] + du[j];
        }
        model.clamp_control(&mut applied);
        let eff = &mut perturbations[i * m..(i + 1) * m];
        for j in 0..m {
            let raw = u[j] + du[j];
            eff[j] = if applied[j] == raw { du[j] } else { applied[j] - u[j] };
        }
        stage[i] = cost.stage_cost(t, &x, u, &applied, prev_applied.as_deref(), dt);
        model.derivative(t, &x, &applied, &mut dx);
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += di * dt;
        }
        if x.iter().any(|v| !v.is_finite()) || !stage[i].is_finite() {
            diverged = true;
            break;
        }
        states.extend_from_slice(&x);
        match prev_applied.as_mut() {
            Some(p) => p.copy_from_slice(&applied),
            None => prev_applied = Some(applied.clone()),
        }
    }

    let terminal;
    if diverged {
        states.resize((horizon + 1) * n, f64::NAN);
        stage.iter_mut().for_each(|s| *s = 0.0);
        terminal = opts.divergence_cost;
    } else {
        let phi = cost.terminal_cost(&x);
        terminal = if phi.is_finite() { phi } else { opts.divergence_cost };
    }

    let mut ctg = vec![0.0; horizon];
    let mut acc = terminal;
    for i in (0..horizon).rev() {
        acc += stage[i];
        ctg[i] = acc;
    }
    RolloutResult {
        states,
        perturbations,
        stage,
        terminal,
        ctg,
        diverged,
    }
}

/// Forward-simulates `K` perturbed copies of `nominal` from `x0` and
/// accumulates costs-to-go backward from the terminal cost.
///
/// Rollouts are evaluated in parallel; the result does not depend on the
/// schedule. A rollout that leaves the finite range is charged
/// `opts.divergence_cost` at every step instead of failing the batch.
pub fn rollout_batch(
    model: &dyn Dynamics,
    cost: &CostModel,
    nominal: &ControlSequence,
    noise: &NoiseSequence,
    x0: &[f64],
    t0: f64,
    opts: &RolloutOptions,
) -> Result<RolloutBatch> {
    let n = model.state_dim();
    let m = model.control_dim();
    if x0.len() != n {
        return Err(Error::config(format!(
            "initial state has length {}, model expects {n}",
            x0.len()
        )));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::config("initial state must be finite"));
    }
    if nominal.control_dim() != m || noise.control_dim() != m {
        return Err(Error::config(format!(
            "control dimension mismatch: nominal {}, noise {}, model {m}",
            nominal.control_dim(),
            noise.control_dim()
        )));
    }
    if nominal.horizon() != noise.horizon() {
        return Err(Error::config(format!(
            "nominal horizon {} differs from noise horizon {}",
            nominal.horizon(),
            noise.horizon()
        )));
    }
    if noise.num_rollouts() == 0 {
        return Err(Error::config("at least one rollout is required"));
    }
    if let Some(prev) = &opts.previous_control {
        if prev.len() != m {
            return Err(Error::config("previous control has the wrong dimension"));
        }
    }
    cost.validate(m)?;

    let k_total = noise.num_rollouts();
    let results: Vec<RolloutResult> = (0..k_total)
        .into_par_iter()
        .map(|k| simulate_rollout(model, cost, nominal, noise.rollout(k), x0, t0, opts))
        .collect();

    let horizon = nominal.horizon();
    let mut batch = RolloutBatch {
        num_rollouts: k_total,
        horizon,
        state_dim: n,
        control_dim: m,
        trajectories: Vec::with_capacity(k_total * (horizon + 1) * n),
        perturbations: Vec::with_capacity(k_total * horizon * m),
        stage_costs: Vec::with_capacity(k_total * horizon),
        terminal_costs: Vec::with_capacity(k_total),
        costs_to_go: Vec::with_capacity(k_total * horizon),
        diverged: Vec::with_capacity(k_total),
    };
    for r in results {
        batch.trajectories.extend_from_slice(&r.states);
        batch.perturbations.extend_from_slice(&r.perturbations);
        batch.stage_costs.extend_from_slice(&r.stage);
        batch.terminal_costs.push(r.terminal);
        batch.costs_to_go.extend_from_slice(&r.ctg);
        batch.diverged.push(r.diverged);
    }
    Ok(batch)
}

/// Deterministic cost of an open-loop sequence (no perturbation).
///
/// Returns `divergence_cost` if the state leaves the finite range.
pub fn simulate_sequence_cost(
    model: &dyn Dynamics,
    cost: &CostModel,
    controls: &[f64],
    x0: &[f64],
    t0: f64,
    dt: f64,
    divergence_cost: f64,
) -> f64 {
    let m = model.control_dim();
    let n = model.state_dim();
    let horizon = controls.len() / m;
    let mut x = x0.to_vec();
    let mut dx = vec![0.0; n];
    let mut applied = vec![0.0; m];
    let mut prev: Option<Vec<f64>> = None;
    let mut total = 0.0;
    for i in 0..horizon {
        let t = t0 + i as f64 * dt;
        applied.copy_from_slice(&controls[i * m..(i + 1) * m]);
        model.clamp_control(&mut applied);
        total += cost.stage_cost(t, &x, &applied, &applied, prev.as_deref(), dt);
        model.derivative(t, &x, &applied, &mut dx);
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += di * dt;
        }
        if x.iter().any(|v| !v.is_finite()) || !total.is_finite() {
            return divergence_cost;
        }
        prev = Some(applied.clone());
    }
    let phi = cost.terminal_cost(&x);
    if phi.is_finite() {
        total + phi
    } else {
        divergence_cost
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    /// f = 0, g = 0.
    struct Frozen;

    impl Dynamics for Frozen {
        fn state_dim(&self) -> usize {
            2
        }
        fn control_dim(&self) -> usize {
            1
        }
        fn drift(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
            out.fill(0.0);
        }
        fn input_matrix(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
            out.fill(0.0);
        }
    }

    /// dx = u, scalar.
    struct Integrator;

    impl Dynamics for Integrator {
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
    }

    /// Blows up once the state exceeds 1.
    struct Explosive;

    impl Dynamics for Explosive {
        fn state_dim(&self) -> usize {
            1
        }
        fn control_dim(&self) -> usize {
            1
        }
        fn drift(&self, _t: f64, x: &[f64], out: &mut [f64]) {
            out[0] = if x[0] > 1.0 { f64::INFINITY } else { 0.0 };
        }
        fn input_matrix(&self, _t: f64, _x: &[f64], out: &mut [f64]) {
            out[0] = 1.0;
        }
    }

    fn unit_running_cost() -> CostModel {
        CostModel::new(Arc::new(|_t: f64, _x: &[f64]| 1.0), 1).with_diagonal_weight(&[0.0])
    }

    #[test]
    fn frozen_model_leaves_state_unchanged() {
        let x = euler_maruyama_step(&Frozen, 0.0, &[1.5, -2.0], &[3.0], &[0.7], 0.1).unwrap();
        assert_eq!(x, vec![1.5, -2.0]);
    }

    #[test]
    fn scalar_integrator_step() {
        let x = euler_maruyama_step(&Integrator, 0.0, &[0.0], &[1.0], &[0.0], 0.1).unwrap();
        assert_eq!(x, vec![0.1]);
    }

    #[test]
    fn step_reports_divergence_and_mismatch() {
        let err = euler_maruyama_step(&Explosive, 0.0, &[2.0], &[0.0], &[0.0], 0.1).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
        let err = euler_maruyama_step(&Integrator, 0.0, &[0.0, 1.0], &[0.0], &[0.0], 0.1);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn unit_stage_costs_sum() {
        let nominal = ControlSequence::zeros(2, 1, 1.0).unwrap();
        let noise = NoiseSequence::zeros(1, 2, 1);
        let batch = rollout_batch(
            &Frozen,
            &unit_running_cost(),
            &nominal,
            &noise,
            &[0.0, 0.0],
            0.0,
            &RolloutOptions::default(),
        )
        .unwrap();
        assert_eq!(batch.total_costs(), vec![2.0]);
        assert_eq!(batch.cost_to_go(0, 1), 1.0);
    }

    #[test]
    fn identical_noise_rows_give_identical_costs() {
        let row = [0.3, -0.1, 0.5];
        let samples: Vec<f64> = row.iter().copied().cycle().take(12).collect();
        let noise = NoiseSequence::from_samples(4, 3, 1, samples).unwrap();
        let nominal = ControlSequence::zeros(3, 1, 0.1).unwrap();
        let cost = CostModel::new(Arc::new(|_t: f64, x: &[f64]| x[0] * x[0]), 1);
        let batch = rollout_batch(
            &Integrator,
            &cost,
            &nominal,
            &noise,
            &[1.0],
            0.0,
            &RolloutOptions::default(),
        )
        .unwrap();
        for k in 1..4 {
            for i in 0..3 {
                assert_eq!(batch.cost_to_go(k, i), batch.cost_to_go(0, i));
            }
        }
    }

    #[test]
    fn diverged_rollout_gets_sentinel_cost() {
        let noise = NoiseSequence::from_samples(2, 3, 1, vec![0.0, 0.0, 0.0, 50.0, 50.0, 50.0])
            .unwrap();
        let nominal = ControlSequence::zeros(3, 1, 0.1).unwrap();
        let opts = RolloutOptions {
            divergence_cost: 123.0,
            ..Default::default()
        };
        let batch = rollout_batch(
            &Explosive,
            &unit_running_cost(),
            &nominal,
            &noise,
            &[0.0],
            0.0,
            &opts,
        )
        .unwrap();
        assert!(!batch.diverged(0));
        assert!(batch.diverged(1));
        assert_eq!(batch.num_diverged(), 1);
        for i in 0..3 {
            assert_eq!(batch.cost_to_go(1, i), 123.0);
        }
    }

    #[test]
    fn horizon_mismatch_is_config_error() {
        let nominal = ControlSequence::zeros(3, 1, 0.1).unwrap();
        let noise = NoiseSequence::zeros(2, 4, 1);
        let err = rollout_batch(
            &Integrator,
            &unit_running_cost(),
            &nominal,
            &noise,
            &[0.0],
            0.0,
            &RolloutOptions::default(),
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn shift_rule() {
        let seq = ControlSequence::new(3, 1, 0.1, vec![1.0, 2.0, 3.0]).unwrap();
        let once = shift_receding_horizon(&seq);
        assert_eq!(once.as_slice(), &[2.0, 3.0, 3.0]);
        assert_eq!(shift_receding_horizon(&once).as_slice(), &[3.0, 3.0, 3.0]);
        let single = ControlSequence::new(1, 2, 0.1, vec![4.0, 5.0]).unwrap();
        assert_eq!(shift_receding_horizon(&single), single);
    }

    #[test]
    fn sequence_validation() {
        assert!(ControlSequence::new(2, 1, 0.1, vec![0.0]).is_err());
        assert!(ControlSequence::new(1, 1, 0.0, vec![0.0]).is_err());
        assert!(ControlSequence::new(1, 1, 0.1, vec![f64::NAN]).is_err());
        assert_eq!(
            ControlSequence::constant(3, &[1.0, 2.0], 0.1).unwrap().get(2),
            &[1.0, 2.0]
        );
    }
}
