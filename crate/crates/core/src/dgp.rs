//! Data generating processes.
//!
//! Counts follow the waiting-times construction: each coordinate counts the
//! unit-rate arrivals falling in `[0, λ_{i,t}]`, and the `l`-th waiting times
//! of all coordinates are coupled through one draw of an exchangeable Gaussian
//! copula. Marginally `Y_{i,t} | F_{t-1} ~ Poisson(λ_{i,t})` exactly, while `ρ`
//! controls the contemporaneous dependence. Binary panels threshold a single
//! copula vector per time step against `p_t`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::error::{Error, Result};
use crate::model::{check_constraints, stationary_mean, Family, ModelSpec, Series, Theta};

pub const DEFAULT_BURN_IN: usize = 500;
pub const DEFAULT_MAX_EVENTS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CopulaFamily {
    GaussianExchangeable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CopulaSpec {
    pub family: CopulaFamily,
    /// Pairwise correlation of the latent normals, in `[0, 1)`.
    pub rho: f64,
}

impl CopulaSpec {
    pub fn gaussian(rho: f64) -> Result<Self> {
        let spec = Self { family: CopulaFamily::GaussianExchangeable, rho };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::InvalidSpec(format!("copula rho={} outside [0, 1)", self.rho)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub t: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub max_events: usize,
}

impl SimConfig {
    pub fn new(t: usize, seed: u64) -> Self {
        Self { t, burn_in: DEFAULT_BURN_IN, seed, max_events: DEFAULT_MAX_EVENTS }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t < 2 {
            return Err(Error::InvalidSpec("simulation length T must be at least 2".into()));
        }
        if self.max_events == 0 {
            return Err(Error::InvalidSpec("max_events must be positive".into()));
        }
        Ok(())
    }
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `-ln Φ(z)`, accurate in both tails.
fn neg_log_normal_cdf(z: f64) -> f64 {
    if z > 0.0 {
        -(-0.5 * erfc(z / std::f64::consts::SQRT_2)).ln_1p()
    } else {
        -normal_cdf(z).ln()
    }
}

fn latent_normals<R: Rng + ?Sized>(d: usize, rho: f64, rng: &mut R) -> Vec<f64> {
    let common: f64 = rng.sample(StandardNormal);
    let (w0, w1) = (rho.sqrt(), (1.0 - rho).sqrt());
    (0..d)
        .map(|_| {
            let e: f64 = rng.sample(StandardNormal);
            w0 * common + w1 * e
        })
        .collect()
}

/// One draw of `d` uniforms coupled by the exchangeable Gaussian copula:
/// `Z_i = √ρ Z_0 + √(1-ρ) ε_i`, `U_i = Φ(Z_i)`.
pub fn gaussian_copula_uniforms<R: Rng + ?Sized>(d: usize, rho: f64, rng: &mut R) -> Result<Vec<f64>> {
    CopulaSpec::gaussian(rho)?;
    Ok(latent_normals(d, rho, rng).into_iter().map(normal_cdf).collect())
}

/// Counts of unit-rate arrivals in `[0, λ_i]` with copula-coupled waiting
/// times `X_{i,l} = -ln U_{i,l}`.
pub fn count_from_intensities<R: Rng + ?Sized>(
    lambda: &[f64],
    copula: &CopulaSpec,
    rng: &mut R,
    max_events: usize,
) -> Result<Vec<u64>> {
    copula.validate()?;
    if let Some(&bad) = lambda.iter().find(|&&l| !(l > 0.0 && l.is_finite())) {
        return Err(Error::InvalidData(format!("intensity {bad} must be positive and finite")));
    }
    let d = lambda.len();
    let mut elapsed = vec![0.0; d];
    let mut counts = vec![0u64; d];
    let mut open = vec![true; d];
    let mut remaining = d;
    while remaining > 0 {
        let z = latent_normals(d, copula.rho, rng);
        for i in 0..d {
            if !open[i] {
                continue;
            }
            elapsed[i] += neg_log_normal_cdf(z[i]);
            if elapsed[i] <= lambda[i] {
                counts[i] += 1;
                if counts[i] as usize > max_events {
                    return Err(Error::RunawayIntensity { max_events, intensity: lambda[i] });
                }
            } else {
                open[i] = false;
                remaining -= 1;
            }
        }
    }
    Ok(counts)
}

fn drive<F>(spec: &ModelSpec, theta: &Theta, cfg: &SimConfig, mut draw: F) -> Result<Series>
where
    F: FnMut(&[f64], &mut ChaCha8Rng) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    let report = check_constraints(spec, theta);
    if !report.satisfied {
        return Err(Error::Constraint(report.summary()));
    }
    let n = spec.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut lambda: Vec<f64> = stationary_mean(theta)?.iter().copied().collect();
    let total = cfg.burn_in + cfg.t;
    let mut out = Vec::with_capacity(cfg.t * n);
    for step in 0..total {
        let y = draw(&lambda, &mut rng)?;
        if step >= cfg.burn_in {
            out.extend_from_slice(&y);
        }
        let next: Vec<f64> = (0..n)
            .map(|i| {
                theta.c[i]
                    + (0..n).map(|j| theta.a[(i, j)] * lambda[j] + theta.b[(i, j)] * y[j]).sum::<f64>()
            })
            .collect();
        lambda = next;
    }
    Series::new(out, n)
}

/// Simulates a count panel from the copula-coupled linear INGARCH recursion,
/// started at the stationary mean.
pub fn simulate_counts(theta: &Theta, copula: &CopulaSpec, cfg: &SimConfig) -> Result<Series> {
    let spec = ModelSpec::count(theta.dim());
    drive(&spec, theta, cfg, |lambda, rng| {
        Ok(count_from_intensities(lambda, copula, rng, cfg.max_events)?.into_iter().map(|k| k as f64).collect())
    })
}

/// Simulates a binary panel: `Y_{i,t} = 1` iff `U_{i,t} <= p_{i,t}`.
pub fn simulate_binary(theta: &Theta, copula: &CopulaSpec, cfg: &SimConfig) -> Result<Series> {
    copula.validate()?;
    let spec = ModelSpec::binary(theta.dim());
    drive(&spec, theta, cfg, |p, rng| {
        let u = gaussian_copula_uniforms(p.len(), copula.rho, rng)?;
        Ok(u.iter().zip(p).map(|(u, p)| if u <= p { 1.0 } else { 0.0 }).collect())
    })
}

/// Dispatches on the model family.
pub fn simulate(spec: &ModelSpec, theta: &Theta, copula: &CopulaSpec, cfg: &SimConfig) -> Result<Series> {
    match spec.family {
        Family::Count => simulate_counts(theta, copula, cfg),
        Family::Binary => simulate_binary(theta, copula, cfg),
        Family::CategoricalStacked => {
            Err(Error::InvalidSpec("simulation of stacked categorical panels is not supported".into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_cdf_tabulated() {
        // Values from standard normal tables.
        let table = [
            (0.0, 0.5),
            (1.0, 0.841_344_746_068_542_9),
            (-1.96, 0.024_997_895_148_220_4),
            (2.5, 0.993_790_334_674_223_8),
            (-3.0, 0.001_349_898_031_630_094_6),
        ];
        for (z, p) in table {
            assert!((normal_cdf(z) - p).abs() < 1e-12, "Φ({z}): {} vs {p}", normal_cdf(z));
        }
        assert!((neg_log_normal_cdf(8.0) - 6.220_960_574_271_785e-16).abs() < 1e-25);
    }

    #[test]
    fn rho_out_of_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(gaussian_copula_uniforms(2, 1.0, &mut rng).is_err());
        assert!(gaussian_copula_uniforms(2, -0.1, &mut rng).is_err());
    }

    #[test]
    fn tiny_intensity_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let copula = CopulaSpec::gaussian(0.5).unwrap();
        for _ in 0..100 {
            assert_eq!(count_from_intensities(&[1e-12, 1e-12], &copula, &mut rng, 10).unwrap(), vec![0, 0]);
        }
    }

    #[test]
    fn runaway_intensity_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let copula = CopulaSpec::gaussian(0.0).unwrap();
        let err = count_from_intensities(&[1000.0], &copula, &mut rng, 10).unwrap_err();
        assert!(matches!(err, Error::RunawayIntensity { .. }));
    }

    #[test]
    fn constraint_violation_rejected() {
        let theta = Theta::from_slices(&[0.5], &[&[0.6]], &[&[0.5]]);
        let copula = CopulaSpec::gaussian(0.0).unwrap();
        let err = simulate_binary(&theta, &copula, &SimConfig::new(10, 1)).unwrap_err();
        assert!(matches!(err, Error::Constraint(_)));
    }

    #[test]
    fn burn_in_and_length() {
        let theta = Theta::from_slices(&[1.0, 1.0], &[&[0.2, 0.0], &[0.0, 0.2]], &[&[0.1, 0.0], &[0.0, 0.1]]);
        let copula = CopulaSpec::gaussian(0.3).unwrap();
        let mut cfg = SimConfig::new(25, 9);
        cfg.burn_in = 0;
        let a = simulate_counts(&theta, &copula, &cfg).unwrap();
        assert_eq!(a.len(), 25);
        assert_eq!(a.dim(), 2);
    }
}
