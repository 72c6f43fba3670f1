//! Distributional checks of the copula count and binary generators.

use mwlse_core::dgp::{count_from_intensities, gaussian_copula_uniforms, simulate_binary, CopulaSpec, SimConfig};
use mwlse_core::Theta;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Upper 1% point of the chi-square distribution with 9 degrees of freedom.
const CHI2_9_99: f64 = 21.666;

fn poisson_pmf(lambda: f64, k: u64) -> f64 {
    let mut p = (-lambda).exp();
    for j in 1..=k {
        p *= lambda / j as f64;
    }
    p
}

fn draws(rho: f64, n: usize, seed: u64) -> Vec<Vec<u64>> {
    let copula = CopulaSpec::gaussian(rho).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| count_from_intensities(&[3.0, 3.0], &copula, &mut rng, 1000).unwrap()).collect()
}

/// Pearson statistic over the cells `0, 1, …, 8, ≥9`.
fn chi_square_poisson3(sample: &[u64]) -> f64 {
    let n = sample.len() as f64;
    let mut observed = [0.0; 10];
    for &k in sample {
        observed[(k as usize).min(9)] += 1.0;
    }
    let mut probs: Vec<f64> = (0..9).map(|k| poisson_pmf(3.0, k)).collect();
    probs.push(1.0 - probs.iter().sum::<f64>());
    observed.iter().zip(&probs).map(|(o, p)| (o - n * p).powi(2) / (n * p)).sum()
}

fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

fn cross_correlation(sample: &[Vec<u64>]) -> f64 {
    let x: Vec<f64> = sample.iter().map(|r| r[0] as f64).collect();
    let y: Vec<f64> = sample.iter().map(|r| r[1] as f64).collect();
    correlation(&x, &y)
}

#[test]
fn constant_intensity_counts_are_poisson() {
    for rho in [0.0, 0.9] {
        let sample = draws(rho, 100_000, 2024);
        for i in 0..2 {
            let marginal: Vec<u64> = sample.iter().map(|r| r[i]).collect();
            let stat = chi_square_poisson3(&marginal);
            assert!(stat < CHI2_9_99, "rho {rho}, series {i}: chi-square {stat}");
            let mean = marginal.iter().sum::<u64>() as f64 / marginal.len() as f64;
            assert!((mean - 3.0).abs() < 0.03, "rho {rho}: mean {mean}");
        }
    }
}

#[test]
fn cross_correlation_increases_with_rho() {
    let low = cross_correlation(&draws(0.3, 20_000, 7));
    let high = cross_correlation(&draws(0.9, 20_000, 7));
    let none = cross_correlation(&draws(0.0, 20_000, 7));
    assert!(none.abs() < 0.03, "independent copula gave correlation {none}");
    assert!(high > low && low > none, "{none} < {low} < {high} violated");
}

#[test]
fn copula_uniforms_pass_kolmogorov_smirnov() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 20_000;
    let mut u: Vec<f64> =
        (0..n).map(|_| gaussian_copula_uniforms(3, 0.6, &mut rng).unwrap()[1]).collect();
    u.sort_by(f64::total_cmp);
    let d = u
        .iter()
        .enumerate()
        .map(|(k, &v)| ((k + 1) as f64 / n as f64 - v).max(v - k as f64 / n as f64))
        .fold(0.0, f64::max);
    // 1% critical value of the one-sample KS statistic, asymptotic form.
    assert!(d < 1.628 / (n as f64).sqrt(), "KS distance {d}");
}

#[test]
fn binary_panel_matches_stationary_probability() {
    let theta = Theta::from_slices(&[0.2, 0.3], &[&[0.2, 0.0], &[0.0, 0.1]], &[&[0.2, 0.05], &[0.1, 0.1]]);
    let y = simulate_binary(&theta, &CopulaSpec::gaussian(0.5).unwrap(), &SimConfig::new(50_000, 3)).unwrap();
    let pi = mwlse_core::model::stationary_mean(&theta).unwrap();
    for (i, m) in y.column_means().iter().enumerate() {
        assert!((m - pi[i]).abs() < 0.01, "series {i}: {m} vs {}", pi[i]);
    }
}

#[test]
fn identical_seeds_reproduce_panels() {
    let theta = Theta::from_slices(&[0.5, 0.5], &[&[0.3, 0.0], &[0.0, 0.3]], &[&[0.2, 0.1], &[0.1, 0.2]]);
    let cfg = SimConfig::new(200, 42);
    let copula = CopulaSpec::gaussian(0.4).unwrap();
    let a = mwlse_core::dgp::simulate_counts(&theta, &copula, &cfg).unwrap();
    let b = mwlse_core::dgp::simulate_counts(&theta, &copula, &cfg).unwrap();
    assert_eq!(a, b);
}
