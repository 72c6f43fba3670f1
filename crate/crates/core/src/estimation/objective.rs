//! Weighted least squares and marginal quasi-likelihood criteria.
//!
//! The weighted criterion is `L_T(θ, W) = T⁻¹ Σ_t e_t' W_t e_t` with
//! `e_t = Y_t - λ_t(θ)`. Its score is defined without the factor produced by
//! differentiating the quadratic form,
//!
//! ```text
//! S_T(θ, W) = T⁻¹ Σ_t J_t' W_t e_t,      ∇L_T = -2 S_T,
//! ```
//!
//! so that the QMLE score `T⁻¹ Σ_t J_t' D_t(θ)⁻¹ e_t` is the special case
//! `W_t = D_t(θ)⁻¹`.
//!
//! Every sum runs over `t = 1..T`; `λ_1` is pinned to the initial value, so
//! the first term carries no information about `θ`.

use nalgebra::DMatrix;

use super::optimize::Evaluation;

use crate::error::{Error, Result};
use crate::model::{
    check_constraints, pack_params, walk_recursion, DenseParams, Family, ModelSpec, Series, Theta, PROB_CLAMP,
};

/// Starting value `λ_1`: the per-coordinate sample mean, kept inside the
/// valid range of the family.
pub fn default_lambda_init(spec: &ModelSpec, y: &Series) -> Vec<f64> {
    y.column_means()
        .into_iter()
        .map(|m| match spec.family {
            Family::Count => m.max(1e-8),
            _ => m.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP),
        })
        .collect()
}

/// `W_t = I` for every `t`.
pub fn identity_weights(t: usize, n: usize) -> Vec<DMatrix<f64>> {
    vec![DMatrix::identity(n, n); t]
}

pub(crate) fn validate_weights(w: &[DMatrix<f64>], t: usize, n: usize) -> Result<()> {
    if w.len() != t {
        return Err(Error::Dimension(format!("{} weight matrices for {t} observations", w.len())));
    }
    for (k, wt) in w.iter().enumerate() {
        if wt.shape() != (n, n) {
            return Err(Error::Dimension(format!("weight at t={} has shape {:?}", k + 1, wt.shape())));
        }
        let sym = (0..n).all(|i| (0..i).all(|j| (wt[(i, j)] - wt[(j, i)]).abs() <= 1e-10 * (1.0 + wt[(i, j)].abs())));
        if !sym || wt.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite { t: k + 1 });
        }
    }
    Ok(())
}

fn check_theta(spec: &ModelSpec, theta: &Theta, y: &Series) -> Result<Vec<f64>> {
    y.validate_for(spec)?;
    let report = check_constraints(spec, theta);
    if !report.satisfied {
        return Err(Error::Constraint(report.summary()));
    }
    pack_params(theta, spec)
}

/// The weighted least squares problem for a fixed panel and weight sequence.
pub(crate) struct WlsProblem<'a> {
    pub spec: &'a ModelSpec,
    pub y: &'a Series,
    pub weights: &'a [DMatrix<f64>],
    pub init: Vec<f64>,
}

impl<'a> WlsProblem<'a> {
    pub fn new(spec: &'a ModelSpec, y: &'a Series, weights: &'a [DMatrix<f64>]) -> Self {
        Self { spec, y, weights, init: default_lambda_init(spec, y) }
    }

    /// Returns `(L_T, ∇L_T)`; the gradient is empty unless requested.
    pub fn eval(&self, flat: &[f64], with_grad: bool) -> Result<(f64, Vec<f64>)> {
        let ev = self.evaluate(flat, with_grad, false)?;
        Ok((ev.value, ev.grad))
    }

    /// Value, gradient and (optionally) the Gauss–Newton curvature `2 T⁻¹ Σ_t J_t' W_t J_t`.
    pub fn evaluate(&self, flat: &[f64], with_grad: bool, with_curvature: bool) -> Result<Evaluation> {
        let params = DenseParams::new(self.spec, flat);
        let (n, m) = (params.n, params.n_params());
        let with_grad = with_grad || with_curvature;
        let mut value = 0.0;
        let mut grad = vec![0.0; if with_grad { m } else { 0 }];
        let mut curv = with_curvature.then(|| DMatrix::<f64>::zeros(m, m));
        let mut e = vec![0.0; n];
        let mut we = vec![0.0; n];
        let mut wj = vec![0.0; if with_curvature { n * m } else { 0 }];
        walk_recursion(&params, self.y, &self.init, with_grad, |t, lam, jac| {
            let yt = self.y.row(t);
            let wt = &self.weights[t];
            for i in 0..n {
                e[i] = yt[i] - lam[i];
            }
            for i in 0..n {
                we[i] = (0..n).map(|j| wt[(i, j)] * e[j]).sum();
            }
            value += e.iter().zip(&we).map(|(a, b)| a * b).sum::<f64>();
            if with_grad {
                for (i, &wei) in we.iter().enumerate() {
                    if wei != 0.0 {
                        let row = &jac[i * m..(i + 1) * m];
                        for k in 0..m {
                            grad[k] -= 2.0 * row[k] * wei;
                        }
                    }
                }
            }
            if let Some(c) = curv.as_mut() {
                for i in 0..n {
                    for k in 0..m {
                        wj[i * m + k] = (0..n).map(|j| wt[(i, j)] * jac[j * m + k]).sum();
                    }
                }
                add_cross(c, jac, &wj, n, m, 2.0);
            }
        })?;
        let scale = 1.0 / self.y.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        let value = value * scale;
        if !value.is_finite() {
            return Err(Error::NonFinite("weighted least squares objective".into()));
        }
        Ok(Evaluation { value, grad, curvature: curv.map(|c| symmetrize(c * scale)) })
    }
}

/// Negative average marginal quasi-log-likelihood (Poisson for counts,
/// Bernoulli for binary and stacked categorical indicators).
pub(crate) struct QmleProblem<'a> {
    pub spec: &'a ModelSpec,
    pub y: &'a Series,
    pub init: Vec<f64>,
}

impl<'a> QmleProblem<'a> {
    pub fn new(spec: &'a ModelSpec, y: &'a Series) -> Self {
        Self { spec, y, init: default_lambda_init(spec, y) }
    }

    pub fn eval(&self, flat: &[f64], with_grad: bool) -> Result<(f64, Vec<f64>)> {
        let ev = self.evaluate(flat, with_grad, false)?;
        Ok((ev.value, ev.grad))
    }

    /// Value, gradient and (optionally) the Fisher-scoring curvature
    /// `T⁻¹ Σ_t J_t' D_t(θ)⁻¹ J_t` (clamped cells contribute nothing).
    pub fn evaluate(&self, flat: &[f64], with_grad: bool, with_curvature: bool) -> Result<Evaluation> {
        let params = DenseParams::new(self.spec, flat);
        let (n, m) = (params.n, params.n_params());
        let with_grad = with_grad || with_curvature;
        let poisson = self.spec.family == Family::Count;
        let mut loglik = 0.0;
        let mut grad = vec![0.0; if with_grad { m } else { 0 }];
        let mut curv = with_curvature.then(|| DMatrix::<f64>::zeros(m, m));
        let mut bad = false;
        walk_recursion(&params, self.y, &self.init, with_grad, |t, lam, jac| {
            let yt = self.y.row(t);
            for i in 0..n {
                let (ll, dl, info) = if poisson {
                    let l = lam[i];
                    if l <= 0.0 {
                        bad = true;
                        return;
                    }
                    (yt[i] * l.ln() - l, yt[i] / l - 1.0, 1.0 / l)
                } else {
                    let p = lam[i].clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                    let ll = yt[i] * p.ln() + (1.0 - yt[i]) * (1.0 - p).ln();
                    if p == lam[i] {
                        let v = p * (1.0 - p);
                        (ll, (yt[i] - p) / v, 1.0 / v)
                    } else {
                        (ll, 0.0, 0.0)
                    }
                };
                loglik += ll;
                if with_grad && dl != 0.0 {
                    let row = &jac[i * m..(i + 1) * m];
                    for k in 0..m {
                        grad[k] -= row[k] * dl;
                    }
                }
                if let Some(c) = curv.as_mut() {
                    if info != 0.0 {
                        let row = &jac[i * m..(i + 1) * m];
                        add_cross(c, row, row, 1, m, info);
                    }
                }
            }
        })?;
        if bad {
            return Err(Error::NonFinite("Poisson intensity is not positive".into()));
        }
        let scale = 1.0 / self.y.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        let value = -loglik * scale;
        if !value.is_finite() {
            return Err(Error::NonFinite("quasi-log-likelihood".into()));
        }
        Ok(Evaluation { value, grad, curvature: curv.map(|c| symmetrize(c * scale)) })
    }
}

/// `c += factor · Σ_i a_i' b_i` for row-major `n × m` blocks `a` and `b`.
fn add_cross(c: &mut DMatrix<f64>, a: &[f64], b: &[f64], n: usize, m: usize, factor: f64) {
    for i in 0..n {
        let (ra, rb) = (&a[i * m..(i + 1) * m], &b[i * m..(i + 1) * m]);
        for k in 0..m {
            if ra[k] != 0.0 {
                let f = factor * ra[k];
                for l in 0..m {
                    c[(k, l)] += f * rb[l];
                }
            }
        }
    }
}

fn symmetrize(c: DMatrix<f64>) -> DMatrix<f64> {
    (&c + c.transpose()) * 0.5
}

/// `L_T(θ, W) = T⁻¹ Σ_t (Y_t - λ_t)' W_t (Y_t - λ_t)`.
pub fn wls_objective(spec: &ModelSpec, theta: &Theta, y: &Series, w: &[DMatrix<f64>]) -> Result<f64> {
    let flat = check_theta(spec, theta, y)?;
    validate_weights(w, y.len(), spec.dim())?;
    Ok(WlsProblem::new(spec, y, w).eval(&flat, false)?.0)
}

/// `S_T(θ, W) = T⁻¹ Σ_t J_t' W_t (Y_t - λ_t)`, equal to `-½ ∇L_T`.
pub fn wls_score(spec: &ModelSpec, theta: &Theta, y: &Series, w: &[DMatrix<f64>]) -> Result<Vec<f64>> {
    let flat = check_theta(spec, theta, y)?;
    validate_weights(w, y.len(), spec.dim())?;
    let (_, grad) = WlsProblem::new(spec, y, w).eval(&flat, true)?;
    Ok(grad.into_iter().map(|g| -0.5 * g).collect())
}

/// Average marginal quasi-log-likelihood `T⁻¹ Σ_t Σ_i q(λ_{i,t})`.
pub fn qmle_loglik(spec: &ModelSpec, theta: &Theta, y: &Series) -> Result<f64> {
    let flat = check_theta(spec, theta, y)?;
    Ok(-QmleProblem::new(spec, y).eval(&flat, false)?.0)
}

/// QMLE score `T⁻¹ Σ_t J_t' D_t(θ)⁻¹ (Y_t - λ_t)` with `D_t = diag(ν_{i,t})`.
pub fn qmle_score(spec: &ModelSpec, theta: &Theta, y: &Series) -> Result<Vec<f64>> {
    let flat = check_theta(spec, theta, y)?;
    let (_, grad) = QmleProblem::new(spec, y).eval(&flat, true)?;
    Ok(grad.into_iter().map(|g| -g).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_residual_objective_and_score() {
        // A = B = 0 and a panel sitting exactly on c (and on λ_1 = sample mean).
        let spec = ModelSpec::count(2);
        let theta = Theta::from_slices(&[2.0, 3.0], &[&[0.0, 0.0], &[0.0, 0.0]], &[&[0.0, 0.0], &[0.0, 0.0]]);
        let y = Series::from_rows(&vec![vec![2.0, 3.0]; 5]).unwrap();
        let w = identity_weights(5, 2);
        assert_eq!(wls_objective(&spec, &theta, &y, &w).unwrap(), 0.0);
        assert!(wls_score(&spec, &theta, &y, &w).unwrap().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn objective_arithmetic() {
        // d = 1, A = B = 0, c = 2, λ_1 = mean(Y) = 2: residuals (1, -1, 2).
        let spec = ModelSpec::count(1);
        let theta = Theta::from_slices(&[2.0], &[&[0.0]], &[&[0.0]]);
        let y = Series::new(vec![3.0, 1.0, 4.0], 1).unwrap();
        let got = wls_objective(&spec, &theta, &y, &identity_weights(3, 1)).unwrap();
        let residuals: [f64; 3] = [3.0 - 8.0 / 3.0, -1.0, 2.0];
        let want = residuals.iter().map(|r| r * r).sum::<f64>() / 3.0;
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn intercept_score_vanishes_at_the_mean() {
        let spec = ModelSpec::count(1).with_a_shape(crate::model::MatrixShape::Zero).with_b_shape(crate::model::MatrixShape::Zero);
        let y = Series::new(vec![1.0, 4.0, 0.0, 2.0, 3.0], 1).unwrap();
        let mean_tail = (4.0 + 0.0 + 2.0 + 3.0) / 4.0;
        let theta = Theta::from_slices(&[mean_tail], &[&[0.0]], &[&[0.0]]);
        let s = wls_score(&spec, &theta, &y, &identity_weights(5, 1)).unwrap();
        assert!(s[0].abs() < 1e-15);
        let off = Theta::from_slices(&[1.0], &[&[0.0]], &[&[0.0]]);
        let s = wls_score(&spec, &off, &y, &identity_weights(5, 1)).unwrap();
        assert!((s[0] - (9.0 - 4.0) / 5.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_indefinite_weights() {
        let spec = ModelSpec::count(1);
        let theta = Theta::from_slices(&[1.0], &[&[0.1]], &[&[0.1]]);
        let y = Series::new(vec![1.0, 2.0], 1).unwrap();
        let w = vec![DMatrix::identity(1, 1), DMatrix::from_element(1, 1, -1.0)];
        assert!(matches!(wls_objective(&spec, &theta, &y, &w), Err(Error::NotPositiveDefinite { t: 2 })));
    }
}
