//! Sandwich covariance `G = H⁻¹ I H⁻¹` for weighted least squares and
//! quasi-likelihood estimates, standard errors and significance markers.
//!
//! `H` is estimated by `T⁻¹ Σ_t J_t' W_t J_t`: the second-derivative term of
//! `E[-∂²l_t]` is multiplied by `E[e_t | F_{t-1}] = 0` and drops out.
//! `I` is the outer product of the per-observation scores `s_t = J_t' W_t e_t`.

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dgp::normal_cdf;
use crate::error::{Error, Result};
use crate::estimation::objective::{default_lambda_init, validate_weights};
use crate::model::{check_constraints, pack_params, walk_recursion, DenseParams, ModelSpec, Series, Theta};

/// Condition number above which `Ĥ` gets a small ridge before inversion.
const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct SandwichParts {
    /// Hessian proxy ("bread").
    pub h: DMatrix<f64>,
    /// Outer-product information ("meat").
    pub i: DMatrix<f64>,
    /// `H⁻¹ I H⁻¹`, the asymptotic covariance of `√T(θ̂ - θ₀)`.
    pub g: DMatrix<f64>,
    /// Number of observations `T`.
    pub t: usize,
    pub condition_number: f64,
    pub ridge: f64,
}

impl SandwichParts {
    /// `√(G_hh / T)`.
    pub fn standard_errors(&self) -> Vec<f64> {
        (0..self.g.nrows()).map(|h| (self.g[(h, h)].max(0.0) / self.t as f64).sqrt()).collect()
    }

    /// Covariance of `θ̂` itself, `G / T`.
    pub fn parameter_covariance(&self) -> DMatrix<f64> {
        &self.g / self.t as f64
    }
}

/// Sandwich pieces at `θ̂` for the weights used in the final estimation stage.
pub fn sandwich_covariance(spec: &ModelSpec, theta: &Theta, y: &Series, w: &[DMatrix<f64>]) -> Result<SandwichParts> {
    y.validate_for(spec)?;
    let report = check_constraints(spec, theta);
    if !report.satisfied {
        return Err(Error::Constraint(report.summary()));
    }
    validate_weights(w, y.len(), spec.dim())?;
    let flat = pack_params(theta, spec)?;
    sandwich_unchecked(spec, &flat, y, w)
}

pub(crate) fn sandwich_unchecked(spec: &ModelSpec, flat: &[f64], y: &Series, w: &[DMatrix<f64>]) -> Result<SandwichParts> {
    let params = DenseParams::new(spec, flat);
    let (n, m) = (params.n, params.n_params());
    let init = default_lambda_init(spec, y);
    let mut h = DMatrix::<f64>::zeros(m, m);
    let mut info = DMatrix::<f64>::zeros(m, m);
    walk_recursion(&params, y, &init, true, |t, lam, jac| {
        let j = DMatrix::from_row_slice(n, m, jac);
        let e = nalgebra::DVector::from_iterator(n, y.row(t).iter().zip(lam).map(|(a, b)| a - b));
        let wj = &w[t] * &j;
        h += j.transpose() * &wj;
        let s = j.transpose() * (&w[t] * e);
        info += &s * s.transpose();
    })?;
    finish(h, info, y.len())
}

/// Sandwich from explicit per-observation Jacobians, weights and residuals.
pub fn sandwich_from_parts(
    jacobians: &[DMatrix<f64>],
    weights: &[DMatrix<f64>],
    residuals: &[Vec<f64>],
) -> Result<SandwichParts> {
    let t_len = jacobians.len();
    if t_len == 0 || weights.len() != t_len || residuals.len() != t_len {
        return Err(Error::Dimension("jacobians, weights and residuals must have equal length".into()));
    }
    let m = jacobians[0].ncols();
    let mut h = DMatrix::<f64>::zeros(m, m);
    let mut info = DMatrix::<f64>::zeros(m, m);
    for ((j, w), e) in jacobians.iter().zip(weights).zip(residuals) {
        let e = nalgebra::DVector::from_column_slice(e);
        h += j.transpose() * w * j;
        let s = j.transpose() * (w * e);
        info += &s * s.transpose();
    }
    finish(h, info, t_len)
}

fn finish(mut h: DMatrix<f64>, mut info: DMatrix<f64>, t_len: usize) -> Result<SandwichParts> {
    let m = h.nrows();
    let scale = 1.0 / t_len as f64;
    h *= scale;
    info *= scale;
    // symmetrize away accumulated rounding
    h = (&h + h.transpose()) * 0.5;
    info = (&info + info.transpose()) * 0.5;

    let eig = h.clone().symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_ev = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let condition_number = if min_ev > 0.0 { max_ev / min_ev } else { f64::INFINITY };

    let mut ridge = 0.0;
    let mut bread = h.clone();
    if condition_number > MAX_CONDITION {
        ridge = 1e-10 * h.trace() / m as f64;
        warn!("Hessian proxy is near-singular (condition number {condition_number:.3e}); adding ridge {ridge:.3e}");
        for k in 0..m {
            bread[(k, k)] += ridge;
        }
    }
    let h_inv = bread
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Singular(format!("Hessian proxy (condition number {condition_number:.3e})")))?;
    let g = &h_inv * &info * &h_inv;
    let g = (&g + g.transpose()) * 0.5;
    Ok(SandwichParts { h, i: info, g, t: t_len, condition_number, ridge })
}

/// Significance marker of a two-sided normal test of `θ_h = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Significance {
    None,
    /// p < 0.10
    Dagger,
    /// p < 0.05
    Star,
    /// p < 0.01
    DoubleStar,
}

impl Significance {
    pub fn marker(self) -> &'static str {
        match self {
            Significance::None => "",
            Significance::Dagger => "†",
            Significance::Star => "*",
            Significance::DoubleStar => "**",
        }
    }

    pub fn from_p_value(p: f64) -> Self {
        if p < 0.01 {
            Significance::DoubleStar
        } else if p < 0.05 {
            Significance::Star
        } else if p < 0.10 {
            Significance::Dagger
        } else {
            Significance::None
        }
    }
}

/// Two-sided p-value of `z` under the standard normal.
pub fn two_sided_p_value(z: f64) -> f64 {
    2.0 * normal_cdf(-z.abs())
}

pub fn significance_flags(theta: &[f64], se: &[f64]) -> Vec<Significance> {
    theta
        .iter()
        .zip(se)
        .map(|(&est, &s)| {
            if !(s > 0.0) || est == 0.0 {
                Significance::None
            } else {
                Significance::from_p_value(two_sided_p_value(est / s))
            }
        })
        .collect()
}
