//! Parameterized feedback policies and their weighted parameter updates.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system::{CostModel, Dynamics};
use crate::weights::softmax_weights;

/// A deterministic feedback law `u = pi(t, x; theta)`.
pub trait Policy: Send + Sync {
    fn num_params(&self) -> usize;

    fn control_dim(&self) -> usize;

    fn control(&self, t: f64, x: &[f64], theta: &[f64], out: &mut [f64]);

    /// `d pi / d theta` as a `control_dim x num_params` matrix, if known.
    fn jacobian(&self, _t: f64, _x: &[f64], _theta: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
}

type FeatureMap = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;

/// `u_j = sum_f h_f(t, x) theta[j * F + f]`.
#[derive(Clone)]
pub struct LinearFeaturePolicy {
    features: Arc<FeatureMap>,
    num_features: usize,
    control_dim: usize,
}

impl LinearFeaturePolicy {
    pub fn new(
        num_features: usize,
        control_dim: usize,
        features: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        LinearFeaturePolicy {
            features: Arc::new(features),
            num_features,
            control_dim,
        }
    }

    /// Plain state feedback, `h(t, x) = x`.
    pub fn state_feedback(state_dim: usize, control_dim: usize) -> Self {
        Self::new(state_dim, control_dim, |_t, x, out| out.copy_from_slice(x))
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn features(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut h = vec![0.0; self.num_features];
        (self.features)(t, x, &mut h);
        h
    }
}

impl fmt::Debug for LinearFeaturePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearFeaturePolicy")
            .field("num_features", &self.num_features)
            .field("control_dim", &self.control_dim)
            .finish()
    }
}

impl Policy for LinearFeaturePolicy {
    fn num_params(&self) -> usize {
        self.num_features * self.control_dim
    }

    fn control_dim(&self) -> usize {
        self.control_dim
    }

    fn control(&self, t: f64, x: &[f64], theta: &[f64], out: &mut [f64]) {
        let h = self.features(t, x);
        let nf = self.num_features;
        for (j, o) in out.iter_mut().enumerate() {
            *o = h.iter().zip(&theta[j * nf..(j + 1) * nf]).map(|(a, b)| a * b).sum();
        }
    }

    fn jacobian(&self, t: f64, x: &[f64], _theta: &[f64]) -> Option<DMatrix<f64>> {
        let h = self.features(t, x);
        let nf = self.num_features;
        let mut jac = DMatrix::zeros(self.control_dim, self.num_params());
        for j in 0..self.control_dim {
            for (f, hf) in h.iter().enumerate() {
                jac[(j, j * nf + f)] = *hf;
            }
        }
        Some(jac)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    LinearFeature,
    Nonlinear,
}

/// Policy parameters `theta` with exploration covariance `sigma`.
#[derive(Clone)]
pub struct PolicyParams {
    pub theta: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub kind: PolicyKind,
    pub policy: Arc<dyn Policy>,
}

impl fmt::Debug for PolicyParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PolicyParams")
            .field("theta", &self.theta.as_slice())
            .field("sigma", &self.sigma)
            .field("kind", &self.kind)
            .finish()
    }
}

impl PolicyParams {
    pub fn new(
        policy: Arc<dyn Policy>,
        kind: PolicyKind,
        theta: DVector<f64>,
        sigma: DMatrix<f64>,
    ) -> Result<Self> {
        let p = PolicyParams {
            theta,
            sigma,
            kind,
            policy,
        };
        p.validate(0.0)?;
        Ok(p)
    }

    /// Isotropic exploration `sigma = std^2 I`.
    pub fn isotropic(
        policy: Arc<dyn Policy>,
        kind: PolicyKind,
        theta: Vec<f64>,
        std: f64,
    ) -> Result<Self> {
        let n = theta.len();
        Self::new(
            policy,
            kind,
            DVector::from_vec(theta),
            DMatrix::from_diagonal_element(n, n, std * std),
        )
    }

    pub fn num_params(&self) -> usize {
        self.theta.len()
    }

    /// Shape, symmetry and `min eig(sigma) > floor` (or `>= floor` when positive).
    pub fn validate(&self, floor: f64) -> Result<()> {
        let n = self.policy.num_params();
        if self.theta.len() != n || self.sigma.nrows() != n || self.sigma.ncols() != n {
            return Err(Error::config(format!(
                "policy has {n} parameters, theta {} and sigma {}x{}",
                self.theta.len(),
                self.sigma.nrows(),
                self.sigma.ncols()
            )));
        }
        if self.theta.iter().chain(self.sigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::config("policy parameters must be finite"));
        }
        let scale = self.sigma.amax().max(1.0);
        if (&self.sigma - self.sigma.transpose()).amax() > 1e-12 * scale {
            return Err(Error::config("policy covariance must be symmetric"));
        }
        let min_eig = self.sigma.clone().symmetric_eigenvalues().min();
        let ok = if floor > 0.0 { min_eig >= floor * (1.0 - 1e-9) } else { min_eig > 0.0 };
        if !ok {
            return Err(Error::config(format!(
                "policy covariance minimum eigenvalue {min_eig:e} is below the floor"
            )));
        }
        Ok(())
    }

    pub fn control(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.policy.control_dim()];
        self.policy.control(t, x, self.theta.as_slice(), &mut u);
        u
    }

    fn with_theta(&self, theta: DVector<f64>) -> Self {
        PolicyParams {
            theta,
            sigma: self.sigma.clone(),
            kind: self.kind,
            policy: self.policy.clone(),
        }
    }
}

/// Symmetrizes `sigma` and raises its eigenvalues to at least `floor`.
/// The flag reports whether any eigenvalue was raised.
pub fn floor_covariance(sigma: &DMatrix<f64>, floor: f64) -> (DMatrix<f64>, bool) {
    let sym = (sigma + sigma.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|v| *v >= floor) {
        return (sym, false);
    }
    let clipped = eig.eigenvalues.map(|v| v.max(floor));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    ((&rebuilt + rebuilt.transpose()) * 0.5, true)
}

fn check_batch(params: &PolicyParams, perturbations: &[DVector<f64>], costs: &[f64]) -> Result<()> {
    if perturbations.len() != costs.len() {
        return Err(Error::config(format!(
            "{} perturbations but {} costs",
            perturbations.len(),
            costs.len()
        )));
    }
    if perturbations.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let n = params.num_params();
    if perturbations.iter().any(|d| d.len() != n) {
        return Err(Error::config(format!("perturbations must have length {n}")));
    }
    Ok(())
}

fn weighted_sum(perturbations: &[DVector<f64>], w: &[f64]) -> DVector<f64> {
    let mut acc = DVector::zeros(perturbations[0].len());
    for (d, wk) in perturbations.iter().zip(w) {
        acc.axpy(*wk, d, 1.0);
    }
    acc
}

/// `theta <- theta + sum_k w_k dtheta_k` with `w = softmax(-G / lambda)`.
pub fn linear_policy_update(
    params: &PolicyParams,
    perturbations: &[DVector<f64>],
    costs: &[f64],
    temperature: f64,
) -> Result<PolicyParams> {
    if params.kind != PolicyKind::LinearFeature {
        return Err(Error::config("linear_policy_update needs a linear_feature policy"));
    }
    check_batch(params, perturbations, costs)?;
    if !(temperature > 0.0) {
        return Err(Error::config("temperature must be positive"));
    }
    let w = softmax_weights(costs, temperature)?;
    Ok(params.with_theta(&params.theta + weighted_sum(perturbations, &w.weights)))
}

/// Where parameter Jacobians come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JacobianSource {
    /// The policy's own [`Policy::jacobian`], falling back to central
    /// differences with step `1e-6` when it has none.
    Analytic,
    FiniteDifference { step: f64 },
}

/// Central-difference `d pi / d theta` at `(t, x, theta)`.
pub fn finite_difference_jacobian(
    policy: &dyn Policy,
    t: f64,
    x: &[f64],
    theta: &[f64],
    step: f64,
) -> DMatrix<f64> {
    let m = policy.control_dim();
    let n = policy.num_params();
    let mut jac = DMatrix::zeros(m, n);
    let mut probe = theta.to_vec();
    let mut up = vec![0.0; m];
    let mut down = vec![0.0; m];
    for p in 0..n {
        let h = step * theta[p].abs().max(1.0);
        probe[p] = theta[p] + h;
        policy.control(t, x, &probe, &mut up);
        probe[p] = theta[p] - h;
        policy.control(t, x, &probe, &mut down);
        probe[p] = theta[p];
        for j in 0..m {
            jac[(j, p)] = (up[j] - down[j]) / (2.0 * h);
        }
    }
    jac
}

fn jacobian_at(policy: &dyn Policy, source: JacobianSource, t: f64, x: &[f64], theta: &[f64]) -> DMatrix<f64> {
    match source {
        JacobianSource::Analytic => policy
            .jacobian(t, x, theta)
            .unwrap_or_else(|| finite_difference_jacobian(policy, t, x, theta, 1e-6)),
        JacobianSource::FiniteDifference { step } => {
            finite_difference_jacobian(policy, t, x, theta, step)
        }
    }
}

#[derive(Debug, Clone)]
pub struct NonlinearUpdate {
    pub params: PolicyParams,
    /// The Jacobian at `theta` vanished and the linear rule was used.
    pub rank_deficient: bool,
}

/// `theta <- theta + sum_k w~_k dtheta_k` with
/// `w~_k = w_k J(theta)^+ J(theta + dtheta_k)` evaluated at `(t, x)`.
#[allow(clippy::too_many_arguments)]
pub fn nonlinear_policy_update(
    params: &PolicyParams,
    perturbations: &[DVector<f64>],
    costs: &[f64],
    temperature: f64,
    source: JacobianSource,
    t: f64,
    x: &[f64],
) -> Result<NonlinearUpdate> {
    if params.kind != PolicyKind::Nonlinear {
        return Err(Error::config("nonlinear_policy_update needs a nonlinear policy"));
    }
    check_batch(params, perturbations, costs)?;
    if !(temperature > 0.0) {
        return Err(Error::config("temperature must be positive"));
    }
    let policy = params.policy.as_ref();
    let w = softmax_weights(costs, temperature)?;
    let j0 = jacobian_at(policy, source, t, x, params.theta.as_slice());
    let (m, n) = (policy.control_dim(), policy.num_params());
    if j0.nrows() != m || j0.ncols() != n {
        return Err(Error::config(format!(
            "policy Jacobian is {}x{}, expected {m}x{n}",
            j0.nrows(),
            j0.ncols()
        )));
    }
    let svd = j0.svd(true, true);
    let sigma_max = svd.singular_values.max();
    if !(sigma_max > 0.0) || !sigma_max.is_finite() {
        log::warn!("policy Jacobian vanishes at theta; using the linear update rule");
        let delta = weighted_sum(perturbations, &w.weights);
        return Ok(NonlinearUpdate {
            params: params.with_theta(&params.theta + delta),
            rank_deficient: true,
        });
    }
    let pinv = svd
        .pseudo_inverse(1e-10 * sigma_max)
        .map_err(|e| Error::config(format!("pseudo-inverse failed: {e}")))?;

    let mut delta = DVector::zeros(n);
    for (d, wk) in perturbations.iter().zip(&w.weights) {
        if *wk == 0.0 {
            continue;
        }
        let shifted = &params.theta + d;
        let jk = jacobian_at(policy, source, t, x, shifted.as_slice());
        let mapped = &pinv * (jk * d);
        delta.axpy(*wk, &mapped, 1.0);
    }
    Ok(NonlinearUpdate {
        params: params.with_theta(&params.theta + delta),
        rank_deficient: false,
    })
}

/// Costs-to-go of `K` closed-loop rollouts whose parameters vary per step.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRollouts {
    pub num_rollouts: usize,
    pub horizon: usize,
    /// Row-major `K x N`.
    pub costs_to_go: Vec<f64>,
    pub diverged: Vec<bool>,
}

impl PolicyRollouts {
    pub fn costs_at_step(&self, i: usize) -> Vec<f64> {
        (0..self.num_rollouts)
            .map(|k| self.costs_to_go[k * self.horizon + i])
            .collect()
    }
}

/// Rolls out `policy` deterministically with parameters `thetas[k][i]`
/// (layout `K x N x n_p`) from `x0`.
#[allow(clippy::too_many_arguments)]
pub fn rollout_policy(
    model: &dyn Dynamics,
    cost: &CostModel,
    policy: &dyn Policy,
    thetas: &[f64],
    num_rollouts: usize,
    horizon: usize,
    x0: &[f64],
    t0: f64,
    dt: f64,
    divergence_cost: f64,
) -> Result<PolicyRollouts> {
    let np = policy.num_params();
    if thetas.len() != num_rollouts * horizon * np {
        return Err(Error::config("parameter table has the wrong shape"));
    }
    if policy.control_dim() != model.control_dim() || x0.len() != model.state_dim() {
        return Err(Error::config("policy and model dimensions disagree"));
    }
    let rows: Vec<(Vec<f64>, bool)> = (0..num_rollouts)
        .into_par_iter()
        .map(|k| {
            let table = &thetas[k * horizon * np..(k + 1) * horizon * np];
            policy_costs_to_go(model, cost, policy, table, horizon, x0, t0, dt, divergence_cost)
        })
        .collect();
    let mut costs_to_go = Vec::with_capacity(num_rollouts * horizon);
    let mut diverged = Vec::with_capacity(num_rollouts);
    for (row, d) in rows {
        costs_to_go.extend_from_slice(&row);
        diverged.push(d);
    }
    Ok(PolicyRollouts {
        num_rollouts,
        horizon,
        costs_to_go,
        diverged,
    })
}

#[allow(clippy::too_many_arguments)]
fn policy_costs_to_go(
    model: &dyn Dynamics,
    cost: &CostModel,
    policy: &dyn Policy,
    table: &[f64],
    horizon: usize,
    x0: &[f64],
    t0: f64,
    dt: f64,
    divergence_cost: f64,
) -> (Vec<f64>, bool) {
    let np = policy.num_params();
    let m = model.control_dim();
    let mut x = x0.to_vec();
    let mut dx = vec![0.0; x.len()];
    let mut u = vec![0.0; m];
    let mut prev: Option<Vec<f64>> = None;
    let mut stage = vec![0.0; horizon];
    for i in 0..horizon {
        let t = t0 + i as f64 * dt;
        policy.control(t, &x, &table[i * np..(i + 1) * np], &mut u);
        model.clamp_control(&mut u);
        stage[i] = cost.stage_cost(t, &x, &u, &u, prev.as_deref(), dt);
        model.derivative(t, &x, &u, &mut dx);
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += di * dt;
        }
        if x.iter().any(|v| !v.is_finite()) || !stage[i].is_finite() || !u.iter().all(|v| v.is_finite()) {
            let mut ctg = vec![0.0; horizon];
            ctg.iter_mut().for_each(|c| *c = divergence_cost);
            return (ctg, true);
        }
        prev = Some(u.clone());
    }
    let terminal = cost.terminal_cost(&x);
    if !terminal.is_finite() {
        return (vec![divergence_cost; horizon], true);
    }
    let mut ctg = vec![0.0; horizon];
    let mut acc = terminal;
    for i in (0..horizon).rev() {
        acc += stage[i];
        ctg[i] = acc;
    }
    (ctg, false)
}

/// Deterministic closed-loop cost of `policy` with fixed `theta`.
#[allow(clippy::too_many_arguments)]
pub fn policy_closed_loop_cost(
    model: &dyn Dynamics,
    cost: &CostModel,
    policy: &dyn Policy,
    theta: &[f64],
    horizon: usize,
    x0: &[f64],
    t0: f64,
    dt: f64,
    divergence_cost: f64,
) -> f64 {
    let table: Vec<f64> = theta.iter().copied().cycle().take(horizon * theta.len()).collect();
    let (ctg, _) = policy_costs_to_go(model, cost, policy, &table, horizon, x0, t0, dt, divergence_cost);
    ctg[0]
}
