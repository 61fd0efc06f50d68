//! Monte-Carlo, importance-sampling and multiple-importance-sampling estimators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for the runtime MIS unbiasedness check.
const REWEIGHTING_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(K)`.
    pub std_error: f64,
}

/// Plain Monte-Carlo mean and standard error.
pub fn mc_estimate(values: &[f64]) -> Result<McEstimate> {
    let k = values.len();
    if k < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: k });
    }
    let n = k as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok(McEstimate {
        mean,
        std_error: (var / n).sqrt(),
    })
}

/// Per-sample terms `l(X_i) dQ/dP(X_i)` of the importance-sampling estimator.
pub fn is_terms(values: &[f64], rn_derivative: &[f64]) -> Result<Vec<f64>> {
    if values.len() != rn_derivative.len() {
        return Err(Error::config(format!(
            "{} values but {} density ratios",
            values.len(),
            rn_derivative.len()
        )));
    }
    if values.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    if rn_derivative.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::config("density ratios must be finite and >= 0"));
    }
    Ok(values
        .iter()
        .zip(rn_derivative)
        .map(|(v, r)| v * r)
        .collect())
}

/// `(1/K) Σ l(X_i) dQ/dP(X_i)` with `X_i ~ P`.
pub fn is_estimate(values: &[f64], rn_derivative: &[f64]) -> Result<f64> {
    let terms = is_terms(values, rn_derivative)?;
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// Reweighting function for pooling samples from several proposals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MisScheme {
    /// `γ^j ≡ 1`.
    Flat,
    /// `γ^j(X) = N / Σ_k N_k (dP^k/dP^j)(X)`.
    BalanceHeuristic,
}

/// Samples drawn from one proposal `P^j`.
#[derive(Debug, Clone, PartialEq)]
pub struct MisGroup {
    /// `l(X_i^j)`.
    pub values: Vec<f64>,
    /// `(dQ/dP^j)(X_i^j)`.
    pub rn_derivatives: Vec<f64>,
    /// Row `i` holds `(dP^k/dP^j)(X_i^j)` for every proposal `k`. Required
    /// for the balance heuristic; entry `j` of each row is 1.
    pub cross_densities: Option<Vec<Vec<f64>>>,
}

impl MisGroup {
    pub fn size(&self) -> usize {
        self.values.len()
    }
}

/// Per-sample terms `l dQ/dP^j γ^j` of the pooled estimator, in group order.
///
/// The reweighting condition `(1/N) Σ_j N_j γ^j(X) = 1` is checked for every
/// sample with `l(X) != 0`.
pub fn mis_terms(groups: &[MisGroup], scheme: MisScheme) -> Result<Vec<f64>> {
    if groups.is_empty() {
        return Err(Error::config("at least one proposal group is required"));
    }
    let sizes: Vec<f64> = groups.iter().map(|g| g.size() as f64).collect();
    let total: f64 = sizes.iter().sum();
    if total == 0.0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let np = groups.len();
    let mut terms = Vec::with_capacity(total as usize);
    for (j, group) in groups.iter().enumerate() {
        let base = is_terms(&group.values, &group.rn_derivatives)?;
        match scheme {
            MisScheme::Flat => {
                // (1/N) Σ_j N_j · 1 = 1 holds by construction of N.
                terms.extend(base);
            }
            MisScheme::BalanceHeuristic => {
                let cross = group.cross_densities.as_ref().ok_or_else(|| {
                    Error::InvalidScheme(format!(
                        "balance heuristic needs cross densities for group {j}"
                    ))
                })?;
                if cross.len() != group.size() {
                    return Err(Error::InvalidScheme(format!(
                        "group {j} has {} cross-density rows for {} samples",
                        cross.len(),
                        group.size()
                    )));
                }
                for (i, (term, row)) in base.iter().zip(cross).enumerate() {
                    if row.len() != np {
                        return Err(Error::InvalidScheme(format!(
                            "cross-density row {i} of group {j} has {} entries, expected {np}",
                            row.len()
                        )));
                    }
                    if row.iter().any(|r| !(r.is_finite() && *r >= 0.0)) || !(row[j] > 0.0) {
                        return Err(Error::InvalidScheme(format!(
                            "cross-density row {i} of group {j} is not a valid density ratio"
                        )));
                    }
                    let mixture: f64 = row.iter().zip(&sizes).map(|(r, n)| n * r).sum();
                    let gamma_own = total * row[j] / mixture;
                    if group.values[i] != 0.0 {
                        // γ^l(X) = N r_l / Σ_k N_k r_k, with r relative to the own proposal.
                        let check: f64 = sizes
                            .iter()
                            .zip(row)
                            .map(|(n_l, r_l)| n_l * total * r_l / mixture)
                            .sum::<f64>()
                            / total;
                        if (check - 1.0).abs() > REWEIGHTING_TOL {
                            return Err(Error::InvalidScheme(format!(
                                "reweighting condition off by {:.3e} at sample {i} of group {j}",
                                check - 1.0
                            )));
                        }
                    }
                    terms.push(term * gamma_own);
                }
            }
        }
    }
    Ok(terms)
}

/// `(1/N) Σ_j Σ_i l(X_i^j) (dQ/dP^j)(X_i^j) γ^j(X_i^j)`.
pub fn mis_estimate(groups: &[MisGroup], scheme: MisScheme) -> Result<f64> {
    let terms = mis_terms(groups, scheme)?;
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// Log importance weight of a sampled path relative to the optimal measure:
/// `-Σ_i (1/2 |u_i|^2 dt + u_i · dW_i) - G0 / λ`.
///
/// `controls` and `brownian_increments` are row-major `N x m`.
pub fn importance_weight_path(
    controls: &[f64],
    brownian_increments: &[f64],
    dt: f64,
    state_cost: f64,
    temperature: f64,
) -> Result<f64> {
    if controls.len() != brownian_increments.len() {
        return Err(Error::config("controls and increments must have the same shape"));
    }
    if !(temperature > 0.0) {
        return Err(Error::config("temperature must be positive"));
    }
    let mut acc = 0.0;
    for (u, dw) in controls.iter().zip(brownian_increments) {
        acc += 0.5 * u * u * dt + u * dw;
    }
    Ok(-acc - state_cost / temperature)
}
