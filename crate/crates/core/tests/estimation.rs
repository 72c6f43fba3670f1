//! End-to-end behaviour of the estimators on simulated panels.

use mwlse_core::dgp::{simulate, CopulaSpec, SimConfig};
use mwlse_core::estimation::{identity_weights, Correlation, REstimator, VarianceFn};
use mwlse_core::evaluation::{acf, default_theta0, pearson_residuals, ResidualMode};
use mwlse_core::inference::sandwich_covariance;
use mwlse_core::{fit_first_step, fit_qmle, fit_two_stage, Family, MatrixShape, ModelSpec, Series, Theta, WeightPlan};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn count_panel(t: usize, seed: u64) -> (ModelSpec, Series) {
    let spec = ModelSpec::count(2).diagonal_a();
    let y = simulate(&spec, &default_theta0(2), &CopulaSpec::gaussian(0.5).unwrap(), &SimConfig::new(t, seed)).unwrap();
    (spec, y)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn first_step_with_explicit_identity_equals_lse() {
    let (spec, y) = count_panel(400, 5);
    let lse = fit_first_step(&spec, &y, None).unwrap();
    let w = identity_weights(y.len(), y.dim());
    let first = fit_first_step(&spec, &y, Some(&w)).unwrap();
    assert!(lse.converged && first.converged);
    assert!(max_abs_diff(&lse.params, &first.params) <= 1e-8);
}

#[test]
fn unit_variance_identity_plan_reproduces_lse() {
    let (spec, y) = count_panel(400, 6);
    let lse = fit_first_step(&spec, &y, None).unwrap();
    let plan = WeightPlan {
        variance: VarianceFn::custom("unit", |input| Ok(vec![1.0; input.y.len() * input.spec.dim()])),
        correlation: Correlation::Identity,
        r_estimator: REstimator::Fixed(0.0),
        ..WeightPlan::diagonal(Family::Count)
    };
    let two = fit_two_stage(&spec, &y, &plan).unwrap();
    assert!(two.converged);
    assert!(max_abs_diff(&lse.params, &two.params) <= 1e-6, "{:?} vs {:?}", lse.params, two.params);
}

#[test]
fn iterated_diagonal_plan_approaches_qmle() {
    let (spec, y) = count_panel(1000, 8);
    let qmle = fit_qmle(&spec, &y).unwrap();
    let iterated = fit_two_stage(&spec, &y, &WeightPlan::diagonal(Family::Count).with_reweight_steps(8)).unwrap();
    assert!(qmle.converged && iterated.converged);
    assert!(max_abs_diff(&qmle.params, &iterated.params) <= 1e-5);
}

#[test]
fn intercept_only_sandwich_matches_textbook_variance() {
    let spec = ModelSpec::count(1).with_a_shape(MatrixShape::Zero).with_b_shape(MatrixShape::Zero);
    let y = Series::new(vec![2.0, 4.0, 1.0, 0.0, 3.0, 5.0, 2.0, 2.0, 1.0, 4.0, 3.0], 1).unwrap();
    let fit = fit_first_step(&spec, &y, None).unwrap();
    let tail = &y.as_slice()[1..];
    let n = tail.len() as f64;
    let mean = tail.iter().sum::<f64>() / n;
    assert!((fit.params[0] - mean).abs() <= 1e-8);
    let theta = Theta::from_slices(&[fit.params[0]], &[&[0.0]], &[&[0.0]]);
    let parts = sandwich_covariance(&spec, &theta, &y, &identity_weights(y.len(), 1)).unwrap();
    let expected = tail.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n * n);
    let se = parts.standard_errors()[0];
    assert!((se * se - expected).abs() <= 1e-10 * expected, "{} vs {expected}", se * se);
    assert!((fit.standard_errors.as_ref().unwrap()[0] - se).abs() <= 1e-8);
}

#[test]
fn conventional_pearson_residuals_have_unit_variance() {
    let (spec, y) = count_panel(5000, 9);
    let fit = fit_qmle(&spec, &y).unwrap();
    let resid = pearson_residuals(&y, &fit.fitted_means, false, ResidualMode::Conventional).unwrap();
    for i in 0..2 {
        let col: Vec<f64> = resid.iter().skip(1).map(|r| r[i]).collect();
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((var - 1.0).abs() <= 0.15, "series {i}: variance {var}");
        let rho = acf(&col, 10).unwrap();
        let inside = rho.values.iter().filter(|v| v.abs() <= rho.band).count();
        assert!(inside >= 8, "series {i}: only {inside} of 10 lags inside the band");
    }
}

#[test]
fn white_noise_acf_stays_in_band() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let x: Vec<f64> = (0..2000).map(|_| StandardNormal.sample(&mut rng)).collect();
    let rho = acf(&x, 100).unwrap();
    let inside = rho.values.iter().filter(|v| v.abs() <= rho.band).count();
    assert!(inside >= 93, "{inside} of 100 lags inside the band");
}

#[test]
fn two_stage_binary_fit_converges_and_reports_r() {
    let spec = ModelSpec::binary(3).diagonal_a();
    let theta = Theta::from_slices(
        &[0.2, 0.25, 0.3],
        &[&[0.2, 0.0, 0.0], &[0.0, 0.2, 0.0], &[0.0, 0.0, 0.1]],
        &[&[0.2, 0.05, 0.05], &[0.05, 0.2, 0.05], &[0.05, 0.05, 0.2]],
    );
    let y = simulate(&spec, &theta, &CopulaSpec::gaussian(0.6).unwrap(), &SimConfig::new(800, 12)).unwrap();
    let fit = fit_two_stage(&spec, &y, &WeightPlan::eqc_mean(Family::Binary)).unwrap();
    assert!(fit.converged);
    let r = fit.r_hat.unwrap();
    assert!(r > 0.05 && r < 0.9, "r̂ = {r}");
    assert_eq!(fit.stage_log.len(), 2);
    assert!(fit.standard_errors.unwrap().iter().all(|s| s.is_finite() && *s > 0.0));
}
