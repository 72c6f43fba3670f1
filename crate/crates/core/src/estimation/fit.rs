//! Estimators: first-step (weighted) least squares, marginal QMLE and the
//! two-stage multivariate weighted least squares estimator.

use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::objective::{default_lambda_init, identity_weights, validate_weights, QmleProblem, WlsProblem};
use super::optimize::{optimize_with_curvature, Constraints, Evaluation, LinearBudget, OptimOptions, OptimResult, Termination};
use super::weights::{bernoulli_variances, build_weights, PlanSummary, WeightPlan};
use crate::error::Result;
use crate::inference::sandwich_unchecked;
use crate::model::{
    check_constraints, mean_path_unchecked, unpack_params, Family, MeanPath, ModelSpec, Series, Theta,
    CONSTRAINT_SLACK,
};

/// A fit counts as converged when the projected score is below this.
pub const SCORE_TOL: f64 = 1e-6;

/// Lower bound on intercepts.
pub const INTERCEPT_FLOOR: f64 = 1e-8;

/// Penalty threshold for the ∞-norm budget of probability models.
pub const BUDGET_LIMIT: f64 = 1.0 - 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// First step with identity weights (conditional least squares).
    Lse,
    /// First step with user-supplied weights.
    Wls,
    Qmle,
    Mwlse,
}

impl Estimator {
    pub fn label(self) -> &'static str {
        match self {
            Estimator::Lse => "LSE",
            Estimator::Wls => "WLSE",
            Estimator::Qmle => "QMLE",
            Estimator::Mwlse => "MWLSE",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    pub estimator: Estimator,
    pub converged: bool,
    pub iterations: usize,
    pub objective: f64,
    pub score_norm: f64,
    pub termination: Termination,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_pair: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub estimator: Estimator,
    pub spec: ModelSpec,
    pub theta: Theta,
    /// `θ̂` in packing order.
    pub params: Vec<f64>,
    pub param_names: Vec<String>,
    pub converged: bool,
    pub iterations: usize,
    /// ∞-norm of the projected score at `θ̂`.
    pub score_norm: f64,
    /// Final criterion value (weighted least squares, or negative average quasi-log-likelihood).
    pub objective: f64,
    pub lambda_init: Vec<f64>,
    pub fitted_means: MeanPath,
    /// Sandwich covariance `G` of `√T(θ̂ - θ₀)`.
    pub covariance: Option<Vec<Vec<f64>>>,
    pub standard_errors: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan: Option<PlanSummary>,
    pub stage_log: Vec<StageSummary>,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn covariance_matrix(&self) -> Option<DMatrix<f64>> {
        self.covariance.as_ref().map(|rows| {
            let m = rows.len();
            DMatrix::from_fn(m, m, |i, j| rows[i][j])
        })
    }
}

/// Box bounds and ∞-norm budgets for the packed parameter vector.
pub(crate) fn constraints_for(spec: &ModelSpec) -> Constraints {
    let n = spec.dim();
    let m = spec.n_params();
    let mut lower = vec![0.0; m];
    lower[..n].iter_mut().for_each(|v| *v = INTERCEPT_FLOOR);
    let mut cons = Constraints::boxed(lower, vec![f64::INFINITY; m]);
    if spec.family.is_probability() {
        let a_entries = spec.a_entries();
        let b_entries = spec.b_entries();
        for rows in spec.budget_rows() {
            let mut indices: Vec<usize> = rows.clone();
            for (k, (i, _)) in a_entries.iter().enumerate() {
                if rows.contains(i) {
                    indices.push(n + k);
                }
            }
            for (k, (i, _)) in b_entries.iter().enumerate() {
                if rows.contains(i) {
                    indices.push(n + a_entries.len() + k);
                }
            }
            cons.budgets.push(LinearBudget { indices, limit: BUDGET_LIMIT, hard_limit: 1.0 - CONSTRAINT_SLACK });
        }
    }
    cons
}

/// Starting value: `c = ½·mean(Y)`, diagonals of `A` and `B` at `0.1/q`, zeros elsewhere.
pub fn initial_params(spec: &ModelSpec, y: &Series) -> Vec<f64> {
    let n = spec.dim();
    let q = spec.blocks() as f64;
    let mut flat: Vec<f64> = y.column_means().iter().map(|m| (0.5 * m).max(INTERCEPT_FLOOR)).collect();
    flat.extend(spec.a_entries().iter().map(|(i, j)| if i == j { 0.1 / q } else { 0.0 }));
    flat.extend(spec.b_entries().iter().map(|(i, j)| if i == j { 0.1 / q } else { 0.0 }));
    debug_assert_eq!(flat.len(), spec.n_params());
    let _ = n;
    flat
}

struct Solved {
    opt: OptimResult,
    score_norm: f64,
    objective: f64,
}

fn solve<F>(spec: &ModelSpec, x0: &[f64], score_scale: f64, mut f: F) -> Result<Solved>
where
    F: FnMut(&[f64]) -> Result<Evaluation>,
{
    let cons = constraints_for(spec);
    let opt = optimize_with_curvature(&mut f, &cons, x0, &OptimOptions::default())?;
    let score_norm = opt.projected_grad_norm * score_scale;
    let objective = f(&opt.x)?.value;
    Ok(Solved { opt, score_norm, objective })
}

fn assemble(
    estimator: Estimator,
    spec: &ModelSpec,
    y: &Series,
    solved: &Solved,
    weights_for_inference: Option<&[DMatrix<f64>]>,
    stage_log: Vec<StageSummary>,
    mut warnings: Vec<String>,
) -> Result<FitResult> {
    let theta = unpack_params(&solved.opt.x, spec)?;
    let lambda_init = default_lambda_init(spec, y);
    let fitted_means = mean_path_unchecked(spec, &solved.opt.x, y, &lambda_init)?;
    let feasible = check_constraints(spec, &theta).satisfied;
    let converged = feasible && solved.score_norm <= SCORE_TOL;
    if !converged {
        warnings.push(format!(
            "{} did not converge (score norm {:.3e}, termination {:?})",
            estimator.label(),
            solved.score_norm,
            solved.opt.termination
        ));
    }

    let inference_weights: Vec<DMatrix<f64>> = match weights_for_inference {
        Some(w) => w.to_vec(),
        None => quasi_likelihood_weights(spec, &fitted_means),
    };
    let (covariance, standard_errors) = match sandwich_unchecked(spec, &solved.opt.x, y, &inference_weights) {
        Ok(parts) => {
            if parts.ridge > 0.0 {
                warnings.push(format!("ridge {:.3e} added to a near-singular Hessian proxy", parts.ridge));
            }
            let se = parts.standard_errors();
            let rows = (0..parts.g.nrows()).map(|i| parts.g.row(i).iter().copied().collect()).collect();
            (Some(rows), Some(se))
        }
        Err(e) => {
            warn!("sandwich covariance unavailable: {e}");
            warnings.push(format!("sandwich covariance unavailable: {e}"));
            (None, None)
        }
    };

    Ok(FitResult {
        estimator,
        spec: spec.clone(),
        params: solved.opt.x.clone(),
        param_names: spec.param_names(),
        theta,
        converged,
        iterations: solved.opt.iterations,
        score_norm: solved.score_norm,
        objective: solved.objective,
        lambda_init,
        fitted_means,
        covariance,
        standard_errors,
        r_hat: None,
        plan: None,
        stage_log,
        warnings,
    })
}

/// `D_t(θ)⁻¹` for the exponential-family variance of the model.
pub(crate) fn quasi_likelihood_weights(spec: &ModelSpec, means: &MeanPath) -> Vec<DMatrix<f64>> {
    let n = spec.dim();
    let nu = match spec.family {
        Family::Count => means.as_slice().iter().map(|l| l.max(f64::MIN_POSITIVE)).collect(),
        _ => bernoulli_variances(means),
    };
    (0..means.len())
        .map(|t| DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 / nu[t * n + i] } else { 0.0 }))
        .collect()
}

fn stage(name: &str, estimator: Estimator, s: &Solved, feasible: bool) -> StageSummary {
    StageSummary {
        stage: name.to_string(),
        estimator,
        converged: feasible && s.score_norm <= SCORE_TOL,
        iterations: s.opt.iterations,
        objective: s.objective,
        score_norm: s.score_norm,
        termination: s.opt.termination,
        r_hat: None,
        r_pair: None,
    }
}

fn first_step_solve(spec: &ModelSpec, y: &Series, w: &[DMatrix<f64>], x0: &[f64]) -> Result<Solved> {
    let problem = WlsProblem::new(spec, y, w);
    solve(spec, x0, 0.5, |x| problem.evaluate(x, true, true))
}

/// `θ̂₁ = argmin L_T(θ, W)`; identity weights (the conditional LSE) when `weights` is `None`.
pub fn fit_first_step(spec: &ModelSpec, y: &Series, weights: Option<&[DMatrix<f64>]>) -> Result<FitResult> {
    y.validate_for(spec)?;
    let owned;
    let (w, estimator) = match weights {
        Some(w) => {
            validate_weights(w, y.len(), spec.dim())?;
            (w, Estimator::Wls)
        }
        None => {
            owned = identity_weights(y.len(), spec.dim());
            (owned.as_slice(), Estimator::Lse)
        }
    };
    let solved = first_step_solve(spec, y, w, &initial_params(spec, y))?;
    let feasible = check_constraints(spec, &unpack_params(&solved.opt.x, spec)?).satisfied;
    let log = vec![stage("first-step", estimator, &solved, feasible)];
    assemble(estimator, spec, y, &solved, Some(w), log, Vec::new())
}

/// Marginal QMLE: Poisson quasi-likelihood for counts, Bernoulli for
/// binary and stacked categorical indicators.
pub fn fit_qmle(spec: &ModelSpec, y: &Series) -> Result<FitResult> {
    y.validate_for(spec)?;
    let problem = QmleProblem::new(spec, y);
    let solved = solve(spec, &initial_params(spec, y), 1.0, |x| problem.evaluate(x, true, true))?;
    let feasible = check_constraints(spec, &unpack_params(&solved.opt.x, spec)?).satisfied;
    let log = vec![stage("qmle", Estimator::Qmle, &solved, feasible)];
    let mut warnings = Vec::new();
    if spec.family.is_probability() {
        let lambda_init = default_lambda_init(spec, y);
        let path = mean_path_unchecked(spec, &solved.opt.x, y, &lambda_init)?;
        let clamped = path
            .as_slice()
            .iter()
            .filter(|p| **p < crate::model::PROB_CLAMP || **p > 1.0 - crate::model::PROB_CLAMP)
            .count();
        if clamped > 0 {
            warn!("{clamped} fitted probabilities hit the clamp");
            warnings.push(format!("{clamped} fitted probabilities hit the clamp"));
        }
    }
    assemble(Estimator::Qmle, spec, y, &solved, None, log, warnings)
}

/// Two-stage estimator:
///
/// 1. first-step fit with the plan's prior weights, or identity weights;
/// 2. the plan fixes the working correlation structure and pseudo-variance;
/// 3. extra parameters `γ̂`, if any, come with the plan;
/// 4. `ν_t(τ̂)` and `P(τ̂)` are evaluated at the first-step estimate;
/// 5. the weighted criterion is minimized with `Ŵ_t = V_t(τ̂)⁻¹`.
///
/// The second stage is warm-started at `θ̂₁`. With `plan.reweight_steps > 1`
/// steps 4–5 repeat from each new estimate.
pub fn fit_two_stage(spec: &ModelSpec, y: &Series, plan: &WeightPlan) -> Result<FitResult> {
    y.validate_for(spec)?;
    let first = fit_first_step(spec, y, plan.first_step_weights.as_deref())?;
    let mut log = first.stage_log.clone();
    let mut warnings = first.warnings.clone();

    let (mut theta, mut means, mut x) = (first.theta.clone(), first.fitted_means.clone(), first.params.clone());
    let steps = plan.reweight_steps.max(1);
    let mut last = None;
    for k in 0..steps {
        let weights = build_weights(spec, &theta, &means, plan, y)?;
        let solved = first_step_solve(spec, y, &weights.matrices, &x)?;
        theta = unpack_params(&solved.opt.x, spec)?;
        let feasible = check_constraints(spec, &theta).satisfied;
        let name = if steps == 1 { "second-stage".to_string() } else { format!("reweight-{}", k + 1) };
        let mut summary = stage(&name, Estimator::Mwlse, &solved, feasible);
        summary.r_hat = weights.r.map(|r| r.r);
        summary.r_pair = weights.r.and_then(|r| r.pair);
        if !summary.converged {
            warnings.push(format!("{name} did not converge (score norm {:.3e})", summary.score_norm));
        }
        log.push(summary);
        if k + 1 < steps {
            means = mean_path_unchecked(spec, &solved.opt.x, y, &default_lambda_init(spec, y))?;
            x = solved.opt.x.clone();
        }
        last = Some((solved, weights));
    }
    let (solved, weights) = last.expect("at least one weighted stage");
    let mut fit = assemble(Estimator::Mwlse, spec, y, &solved, Some(&weights.matrices), log, warnings)?;
    fit.converged = fit.converged && first.converged;
    fit.r_hat = weights.r.map(|r| r.r);
    fit.plan = Some(plan.summary());
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MatrixShape;

    fn intercept_only(spec: ModelSpec) -> ModelSpec {
        spec.with_a_shape(MatrixShape::Zero).with_b_shape(MatrixShape::Zero)
    }

    fn tail_means(y: &Series) -> Vec<f64> {
        (0..y.dim())
            .map(|i| (1..y.len()).map(|t| y.get(t, i)).sum::<f64>() / (y.len() - 1) as f64)
            .collect()
    }

    #[test]
    fn intercept_only_count_closed_forms() {
        let spec = intercept_only(ModelSpec::count(2));
        let y = Series::from_rows(&[
            vec![1.0, 0.0],
            vec![3.0, 2.0],
            vec![0.0, 5.0],
            vec![2.0, 1.0],
            vec![4.0, 0.0],
            vec![1.0, 3.0],
        ])
        .unwrap();
        let want = tail_means(&y);
        for fit in [fit_first_step(&spec, &y, None).unwrap(), fit_qmle(&spec, &y).unwrap()] {
            assert!(fit.converged, "{:?}", fit.warnings);
            for (a, b) in fit.theta.c.iter().zip(&want) {
                assert!((a - b).abs() < 1e-8, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn intercept_only_binary_frequencies() {
        let spec = intercept_only(ModelSpec::binary(2));
        let rows: Vec<Vec<f64>> = (0..40).map(|t| vec![(t % 3 == 0) as u8 as f64, (t % 5 != 0) as u8 as f64]).collect();
        let y = Series::from_rows(&rows).unwrap();
        let want = tail_means(&y);
        for fit in [fit_first_step(&spec, &y, None).unwrap(), fit_qmle(&spec, &y).unwrap()] {
            assert!(fit.converged);
            for (a, b) in fit.theta.c.iter().zip(&want) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn initial_values_are_feasible() {
        let y = Series::from_rows(&[vec![1.0, 0.0, 1.0, 0.0], vec![0.0, 1.0, 0.0, 0.0]]).unwrap();
        for spec in [ModelSpec::binary(4), ModelSpec::categorical(2, 3), ModelSpec::count(4).diagonal_a()] {
            let x0 = initial_params(&spec, &y);
            assert!(constraints_for(&spec).is_feasible(&x0));
        }
    }
}
