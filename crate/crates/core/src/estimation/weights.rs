//! Working covariance and second-stage weights.
//!
//! The weights are `Ŵ_t = D_t^{-1/2} P⁻¹ D_t^{-1/2}` where `D_t` holds the
//! pseudo-variances `ν_{i,t}(τ̂)` and `P` is a working correlation matrix.
//! The equicorrelation structure `P = (1-r)I + rJ` has the closed-form inverse
//!
//! ```text
//! P⁻¹ = (a - b) I + b J,
//! a = [1 + (d-2) r] / {(1 - r)[1 + (d-1) r]},
//! b = -r / {(1 - r)[1 + (d-1) r]}.
//! ```

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Family, MeanPath, ModelSpec, Series, Theta, PROB_CLAMP};

/// Margin kept between an estimated `r` and the edge of the positive-definite range.
pub const R_MARGIN: f64 = 1e-6;

/// Inputs available to a pseudo-variance function.
pub struct VarianceInput<'a> {
    pub spec: &'a ModelSpec,
    pub y: &'a Series,
    /// First-step estimate `θ̂₁`.
    pub theta: &'a Theta,
    /// Conditional means implied by `θ̂₁`.
    pub means: &'a MeanPath,
    /// Externally supplied estimate of any extra parameters.
    pub gamma: Option<&'a [f64]>,
}

type VarianceCallback = dyn Fn(&VarianceInput<'_>) -> Result<Vec<f64>> + Send + Sync;

/// Pseudo-variance `ν_{i,t}(τ)`.
#[derive(Clone)]
pub enum VarianceFn {
    /// `ν = λ` (Poisson).
    Mean,
    /// `ν = p(1-p)` with `p` clamped.
    Bernoulli,
    /// User-supplied; must return a row-major `T×n` matrix of positive variances.
    Custom { name: String, f: Arc<VarianceCallback> },
}

impl VarianceFn {
    pub fn custom<F>(name: impl Into<String>, f: F) -> Self
    where
        F: Fn(&VarianceInput<'_>) -> Result<Vec<f64>> + Send + Sync + 'static,
    {
        VarianceFn::Custom { name: name.into(), f: Arc::new(f) }
    }

    /// The exponential-family variance matching the model family.
    pub fn for_family(family: Family) -> Self {
        match family {
            Family::Count => VarianceFn::Mean,
            _ => VarianceFn::Bernoulli,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            VarianceFn::Mean => "mean",
            VarianceFn::Bernoulli => "bernoulli",
            VarianceFn::Custom { name, .. } => name,
        }
    }

    pub fn evaluate(&self, input: &VarianceInput<'_>) -> Result<Vec<f64>> {
        match self {
            VarianceFn::Mean => Ok(input.means.as_slice().to_vec()),
            VarianceFn::Bernoulli => Ok(bernoulli_variances(input.means)),
            VarianceFn::Custom { f, .. } => {
                let v = f(input)?;
                if v.len() != input.means.as_slice().len() {
                    return Err(Error::Dimension(format!(
                        "custom variance returned {} values, expected {}",
                        v.len(),
                        input.means.as_slice().len()
                    )));
                }
                Ok(v)
            }
        }
    }
}

impl fmt::Debug for VarianceFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub(crate) fn bernoulli_variances(means: &MeanPath) -> Vec<f64> {
    means
        .as_slice()
        .iter()
        .map(|p| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            p * (1.0 - p)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Correlation {
    Identity,
    Eqc,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum REstimator {
    /// Largest pairwise residual correlation.
    MaxPairwise,
    /// Average pairwise residual correlation.
    MeanPairwise,
    Fixed(f64),
}

/// How the second-stage weights are built.
#[derive(Debug, Clone)]
pub struct WeightPlan {
    pub variance: VarianceFn,
    pub correlation: Correlation,
    pub r_estimator: REstimator,
    /// Estimate of extra variance parameters, passed through to custom variance functions.
    pub gamma: Option<Vec<f64>>,
    /// Weights for the first step; identity when absent.
    pub first_step_weights: Option<Vec<DMatrix<f64>>>,
    /// Number of weighted stages after the first step. `1` is the plain
    /// two-stage estimator; larger values rebuild the weights from each
    /// new estimate (iteratively reweighted least squares).
    pub reweight_steps: usize,
}

impl WeightPlan {
    /// Identity correlation with the exponential-family variance; its
    /// score coincides with the QMLE score.
    pub fn diagonal(family: Family) -> Self {
        Self {
            variance: VarianceFn::for_family(family),
            correlation: Correlation::Identity,
            r_estimator: REstimator::Fixed(0.0),
            gamma: None,
            first_step_weights: None,
            reweight_steps: 1,
        }
    }

    /// Equicorrelation with `r̂` = max pairwise residual correlation.
    pub fn eqc_max(family: Family) -> Self {
        Self { correlation: Correlation::Eqc, r_estimator: REstimator::MaxPairwise, ..Self::diagonal(family) }
    }

    /// Equicorrelation with `r̂` = mean pairwise residual correlation.
    pub fn eqc_mean(family: Family) -> Self {
        Self { correlation: Correlation::Eqc, r_estimator: REstimator::MeanPairwise, ..Self::diagonal(family) }
    }

    pub fn with_reweight_steps(mut self, steps: usize) -> Self {
        self.reweight_steps = steps.max(1);
        self
    }

    pub fn summary(&self) -> PlanSummary {
        PlanSummary {
            variance: self.variance.name().to_string(),
            correlation: self.correlation,
            r_estimator: self.r_estimator,
            gamma: self.gamma.clone(),
            prior_first_step_weights: self.first_step_weights.is_some(),
            reweight_steps: self.reweight_steps,
        }
    }
}

/// Serializable description of a [`WeightPlan`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub variance: String,
    pub correlation: Correlation,
    pub r_estimator: REstimator,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Vec<f64>>,
    pub prior_first_step_weights: bool,
    pub reweight_steps: usize,
}

/// Pearson correlations of the raw residuals `Y_{i,t} - λ̂_{i,t}` (not
/// mean-centred), unit diagonal.
pub fn pearson_residual_correlations(y: &Series, means: &MeanPath) -> Result<DMatrix<f64>> {
    let n = y.dim();
    if means.dim() != n || means.len() != y.len() {
        return Err(Error::Dimension("fitted path does not match the panel".into()));
    }
    let t_len = y.len();
    let mut cross = DMatrix::<f64>::zeros(n, n);
    for t in 0..t_len {
        let (yt, lt) = (y.row(t), means.row(t));
        for i in 0..n {
            let ei = yt[i] - lt[i];
            for j in i..n {
                cross[(i, j)] += ei * (yt[j] - lt[j]);
            }
        }
    }
    for i in 0..n {
        if cross[(i, i)] <= 0.0 {
            return Err(Error::InvalidData(format!("series {} has zero residual variance", i + 1)));
        }
    }
    let mut r = DMatrix::identity(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = cross[(i, j)] / (cross[(i, i)].sqrt() * cross[(j, j)].sqrt());
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    Ok(r)
}

/// An estimated correlation parameter and, for the max estimator, the
/// (0-based) pair attaining it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct REstimate {
    pub r: f64,
    pub pair: Option<(usize, usize)>,
}

fn r_bounds(d: usize) -> (f64, f64) {
    let lo = if d >= 2 { -1.0 / (d as f64 - 1.0) } else { f64::NEG_INFINITY };
    (lo, 1.0)
}

/// Reduces the strictly upper triangle of `R̂` to a single `r`, clamped
/// inside the equicorrelation positive-definite range.
pub fn estimate_r(estimator: REstimator, rhat: &DMatrix<f64>) -> Result<REstimate> {
    let d = rhat.nrows();
    if rhat.ncols() != d {
        return Err(Error::Dimension("correlation matrix must be square".into()));
    }
    let (lo, hi) = r_bounds(d);
    if let REstimator::Fixed(r) = estimator {
        if !(r > lo && r < hi) {
            return Err(Error::CorrelationRange { r, d });
        }
        return Ok(REstimate { r, pair: None });
    }
    if d < 2 {
        return Err(Error::Dimension("estimating r needs at least two series".into()));
    }
    let mut pairs = Vec::with_capacity(d * (d - 1) / 2);
    for i in 0..d {
        for j in i + 1..d {
            pairs.push(((i, j), rhat[(i, j)]));
        }
    }
    let (r, pair) = match estimator {
        REstimator::MaxPairwise => {
            // strict comparison keeps the lexicographically smallest pair on ties
            let mut best = pairs[0];
            for &p in &pairs[1..] {
                if p.1 > best.1 {
                    best = p;
                }
            }
            (best.1, Some(best.0))
        }
        REstimator::MeanPairwise => (pairs.iter().map(|p| p.1).sum::<f64>() / pairs.len() as f64, None),
        REstimator::Fixed(_) => unreachable!(),
    };
    Ok(REstimate { r: r.clamp(lo + R_MARGIN, hi - R_MARGIN), pair })
}

/// `P = (1-r) I + r J`.
pub fn eqc_matrix(r: f64, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |i, j| if i == j { 1.0 } else { r })
}

/// Closed-form inverse of the equicorrelation matrix.
pub fn eqc_inverse(r: f64, d: usize) -> Result<DMatrix<f64>> {
    let (lo, hi) = r_bounds(d);
    if d == 0 || !(r > lo && r < hi) {
        return Err(Error::CorrelationRange { r, d });
    }
    let df = d as f64;
    let denom = (1.0 - r) * (1.0 + (df - 1.0) * r);
    let a = (1.0 + (df - 2.0) * r) / denom;
    let b = -r / denom;
    Ok(DMatrix::from_fn(d, d, |i, j| if i == j { a } else { b }))
}

/// Output of [`build_weights`].
#[derive(Debug, Clone)]
pub struct Weights {
    pub matrices: Vec<DMatrix<f64>>,
    pub r: Option<REstimate>,
    /// Residual correlation matrix of the first step, when it was computed.
    pub residual_correlation: Option<DMatrix<f64>>,
}

/// `Ŵ_t = D_t^{-1/2} P(τ̂)⁻¹ D_t^{-1/2}` from a first-step fit.
pub fn build_weights(
    spec: &ModelSpec,
    theta1: &Theta,
    means1: &MeanPath,
    plan: &WeightPlan,
    y: &Series,
) -> Result<Weights> {
    let n = spec.dim();
    if means1.dim() != n || means1.len() != y.len() {
        return Err(Error::Dimension("first-step fitted means do not match the panel".into()));
    }
    let input = VarianceInput { spec, y, theta: theta1, means: means1, gamma: plan.gamma.as_deref() };
    let nu = plan.variance.evaluate(&input)?;

    let (p_inv, r, residual_correlation) = match plan.correlation {
        Correlation::Identity => (DMatrix::identity(n, n), None, None),
        Correlation::Eqc => {
            let (est, rc) = match plan.r_estimator {
                REstimator::Fixed(_) => (estimate_r(plan.r_estimator, &DMatrix::identity(n, n))?, None),
                other => {
                    let rc = pearson_residual_correlations(y, means1)?;
                    (estimate_r(other, &rc)?, Some(rc))
                }
            };
            (eqc_inverse(est.r, n)?, Some(est), rc)
        }
    };

    let mut matrices = Vec::with_capacity(y.len());
    for t in 0..y.len() {
        let row = &nu[t * n..(t + 1) * n];
        if row.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::NotPositiveDefinite { t: t + 1 });
        }
        let s: Vec<f64> = row.iter().map(|v| 1.0 / v.sqrt()).collect();
        matrices.push(DMatrix::from_fn(n, n, |i, j| s[i] * p_inv[(i, j)] * s[j]));
    }
    Ok(Weights { matrices, r, residual_correlation })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eqc_inverse_closed_form_values() {
        let inv = eqc_inverse(0.5, 3).unwrap();
        assert!((inv[(0, 0)] - 1.5).abs() < 1e-15);
        assert!((inv[(0, 1)] + 0.5).abs() < 1e-15);
        let inv2 = eqc_inverse(0.5, 2).unwrap();
        assert!((inv2[(0, 0)] - 4.0 / 3.0).abs() < 1e-15);
        assert!((inv2[(1, 0)] + 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(eqc_inverse(0.0, 4).unwrap(), DMatrix::identity(4, 4));
    }

    #[test]
    fn eqc_inverse_range() {
        assert!(eqc_inverse(1.0, 3).is_err());
        assert!(eqc_inverse(-0.5, 3).is_err());
        assert!(eqc_inverse(-0.49, 3).is_ok());
        assert!(eqc_inverse(-0.3, 5).is_err());
    }

    #[test]
    fn r_estimators() {
        let mut r = DMatrix::identity(3, 3);
        for (i, j, v) in [(0, 1, 0.2), (0, 2, 0.5), (1, 2, 0.3)] {
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
        let max = estimate_r(REstimator::MaxPairwise, &r).unwrap();
        assert_eq!(max.r, 0.5);
        assert_eq!(max.pair, Some((0, 2)));
        let mean = estimate_r(REstimator::MeanPairwise, &r).unwrap();
        assert!((mean.r - 1.0 / 3.0).abs() < 1e-15);
        let id = DMatrix::identity(4, 4);
        assert_eq!(estimate_r(REstimator::MaxPairwise, &id).unwrap().r, 0.0);
        assert_eq!(estimate_r(REstimator::MeanPairwise, &id).unwrap().r, 0.0);
        assert!(estimate_r(REstimator::MeanPairwise, &DMatrix::identity(1, 1)).is_err());
    }

    #[test]
    fn r_ties_pick_first_pair_and_clamp() {
        let r = DMatrix::from_element(3, 3, 1.0);
        let est = estimate_r(REstimator::MaxPairwise, &r).unwrap();
        assert_eq!(est.pair, Some((0, 1)));
        assert_eq!(est.r, 1.0 - R_MARGIN);
    }

    #[test]
    fn residual_correlation_signs() {
        let y = Series::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let means = MeanPath::from_raw(vec![0.5; 8], 2);
        let r = pearson_residual_correlations(&y, &means).unwrap();
        assert_eq!(r[(0, 0)], 1.0);
        assert!((r[(0, 1)] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_residual_variance_is_an_error() {
        let y = Series::from_rows(&[vec![1.0, 0.0], vec![1.0, 1.0]]).unwrap();
        let means = MeanPath::from_raw(vec![1.0, 0.5, 1.0, 0.5], 2);
        assert!(pearson_residual_correlations(&y, &means).is_err());
    }

    #[test]
    fn poisson_diagonal_weights() {
        let spec = ModelSpec::count(2);
        let y = Series::from_rows(&[vec![1.0, 3.0], vec![2.0, 5.0]]).unwrap();
        let means = MeanPath::from_raw(vec![1.0, 4.0, 2.0, 0.5], 2);
        let theta = Theta::from_slices(&[1.0, 1.0], &[&[0.0, 0.0], &[0.0, 0.0]], &[&[0.0, 0.0], &[0.0, 0.0]]);
        let w = build_weights(&spec, &theta, &means, &WeightPlan::diagonal(Family::Count), &y).unwrap();
        let want = [DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.25]), DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 2.0])];
        for (got, want) in w.matrices.iter().zip(&want) {
            assert!((got - want).amax() < 1e-15, "{got} vs {want}");
        }
        assert!(w.r.is_none());
    }

    #[test]
    fn custom_variance_and_gamma() {
        let spec = ModelSpec::count(1);
        let y = Series::new(vec![1.0, 2.0, 3.0], 1).unwrap();
        let means = MeanPath::from_raw(vec![1.0, 2.0, 2.0], 1);
        let theta = Theta::from_slices(&[1.0], &[&[0.0]], &[&[0.5]]);
        let plan = WeightPlan {
            variance: VarianceFn::custom("nb", |inp: &VarianceInput<'_>| {
                let k = inp.gamma.map_or(0.0, |g| g[0]);
                Ok(inp.means.as_slice().iter().map(|l| l + k * l * l).collect())
            }),
            gamma: Some(vec![0.5]),
            ..WeightPlan::diagonal(Family::Count)
        };
        let w = build_weights(&spec, &theta, &means, &plan, &y).unwrap();
        assert!((w.matrices[1][(0, 0)] - 1.0 / 4.0).abs() < 1e-15);
        assert_eq!(plan.summary().variance, "nb");
    }

    #[test]
    fn non_positive_variance_rejected() {
        let spec = ModelSpec::count(1);
        let y = Series::new(vec![1.0, 2.0], 1).unwrap();
        let means = MeanPath::from_raw(vec![1.0, 0.0], 1);
        let theta = Theta::from_slices(&[1.0], &[&[0.0]], &[&[0.0]]);
        let err = build_weights(&spec, &theta, &means, &WeightPlan::diagonal(Family::Count), &y).unwrap_err();
        assert!(matches!(err, Error::NotPositiveDefinite { t: 2 }));
    }
}
