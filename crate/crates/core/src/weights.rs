//! Closed-form mixture weights and the analytic variance functional
//! `V = sum_i m_i / alpha_i - mu^2`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density::{check_simplex, SIMPLEX_TOL};
use crate::quadrature::MomentSet;

/// Roundoff band below zero that is clamped and flagged rather than
/// rejected.
pub const NEGATIVE_VARIANCE_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    L1,
    Optimal,
    Optimizer,
    Custom,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::L1 => "l1",
            Provenance::Optimal => "optimal",
            Provenance::Optimizer => "optimizer",
            Provenance::Custom => "custom",
        }
    }
}

/// Nonnegative coefficients on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightVector {
    provenance: Provenance,
    values: Vec<f64>,
    #[serde(rename = "lambda")]
    lambda_diag: Option<f64>,
}

impl WeightVector {
    pub fn new(values: Vec<f64>, provenance: Provenance) -> Result<Self, WeightError> {
        check_simplex(&values).map_err(|e| WeightError::NotOnSimplex(e.to_string()))?;
        Ok(Self { provenance, values, lambda_diag: None })
    }

    pub fn uniform(n: usize) -> Self {
        Self { provenance: Provenance::Custom, values: vec![1.0 / n as f64; n], lambda_diag: None }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Lagrange multiplier of the normalization constraint at the optimum.
    pub fn lambda_diag(&self) -> Option<f64> {
        self.lambda_diag
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn from_parts(values: Vec<f64>, provenance: Provenance, lambda_diag: Option<f64>) -> Self {
        debug_assert!((values.iter().sum::<f64>() - 1.0).abs() <= 10.0 * SIMPLEX_TOL);
        Self { provenance, values, lambda_diag }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WeightError {
    #[error("degenerate integrand: {0}")]
    Degenerate(String),
    #[error("l1 projection leaves the simplex: cell {cell} has first moment {moment} against mu = {mu}")]
    InvalidForL1 { cell: usize, moment: f64, mu: f64 },
    #[error("infinite variance: component {index} has m2 = {m2} but zero weight")]
    InfiniteVariance { index: usize, m2: f64 },
    #[error("weights are not on the simplex: {0}")]
    NotOnSimplex(String),
    #[error("{weights} weights for {moments} components")]
    LengthMismatch { weights: usize, moments: usize },
}

/// `alpha_i = (1/mu) ∫_{C_i} f`.
pub fn l1_weights(moments: &MomentSet) -> Result<WeightVector, WeightError> {
    let mu = moments.mu;
    if mu == 0.0 || !mu.is_finite() {
        return Err(WeightError::Degenerate(format!("mu = {mu}")));
    }
    if let Some(cell) = moments.first_moments.iter().position(|m| m * mu.signum() < 0.0) {
        return Err(WeightError::InvalidForL1 { cell, moment: moments.first_moments[cell], mu });
    }
    let mut values: Vec<f64> = moments.first_moments.iter().map(|m| m / mu).collect();
    renormalize(&mut values);
    Ok(WeightVector::from_parts(values, Provenance::L1, None))
}

/// `alpha_i = sqrt(m_i) / sum_j sqrt(m_j)`, with `lambda = (sum_j sqrt(m_j))^2`.
pub fn optimal_weights(moments: &MomentSet) -> Result<WeightVector, WeightError> {
    if let Some(i) = moments.second_moments.iter().position(|m| !(m.is_finite() && *m >= 0.0)) {
        return Err(WeightError::Degenerate(format!(
            "second moment {i} = {} is not finite and nonnegative",
            moments.second_moments[i]
        )));
    }
    let roots: Vec<f64> = moments.second_moments.iter().map(|m| m.sqrt()).collect();
    let total: f64 = roots.iter().sum();
    if total == 0.0 {
        return Err(WeightError::Degenerate("all second moments are zero".into()));
    }
    let mut values: Vec<f64> = roots.iter().map(|r| r / total).collect();
    renormalize(&mut values);
    Ok(WeightVector::from_parts(values, Provenance::Optimal, Some(total * total)))
}

/// Sampling frequencies for a mixture; same square-root rule applied to
/// `m_i = alpha_i^2 ∫ f_i^2 / g_i`.
pub fn optimal_mixture_frequencies(moments: &MomentSet) -> Result<WeightVector, WeightError> {
    optimal_weights(moments)
}

/// Pins the sum to 1 by folding the rounding residue into the largest entry.
fn renormalize(values: &mut [f64]) {
    let total: f64 = values.iter().sum();
    if total > 0.0 {
        values.iter_mut().for_each(|v| *v /= total);
    }
    let residue = 1.0 - values.iter().sum::<f64>();
    if let Some(big) = values.iter_mut().max_by(|a, b| a.total_cmp(b)) {
        *big += residue;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceReport {
    pub analytic_variance: f64,
    pub mu: f64,
    pub per_component_terms: Vec<f64>,
    /// Set when a slightly negative roundoff result was clamped to zero.
    pub clamped: bool,
}

/// `V = sum_i m_i / alpha_i - mu^2`; components with `m_i = 0 = alpha_i`
/// contribute nothing.
pub fn analytic_variance(moments: &MomentSet, weights: &WeightVector) -> Result<VarianceReport, WeightError> {
    if weights.len() != moments.len() {
        return Err(WeightError::LengthMismatch { weights: weights.len(), moments: moments.len() });
    }
    let mut terms = Vec::with_capacity(weights.len());
    for (index, (m, a)) in moments.second_moments.iter().zip(weights.values()).enumerate() {
        if *m == 0.0 {
            terms.push(0.0);
        } else if *a == 0.0 {
            return Err(WeightError::InfiniteVariance { index, m2: *m });
        } else {
            terms.push(m / a);
        }
    }
    let raw = terms.iter().sum::<f64>() - moments.mu * moments.mu;
    let scale = moments.mu * moments.mu;
    let (analytic_variance, clamped) = if raw < 0.0 && raw >= -NEGATIVE_VARIANCE_SLACK.max(1e-12 * scale) {
        (0.0, true)
    } else {
        (raw, false)
    };
    Ok(VarianceReport { analytic_variance, mu: moments.mu, per_component_terms: terms, clamped })
}
