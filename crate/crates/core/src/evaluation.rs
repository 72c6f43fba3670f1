//! Diagnostics and efficiency comparisons: Pearson residuals, sample ACF,
//! mean absolute error, relative MSE and a seeded Monte Carlo harness.

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{simulate_counts, CopulaSpec, SimConfig, DEFAULT_BURN_IN, DEFAULT_MAX_EVENTS};
use crate::error::{Error, Result};
use crate::estimation::{fit_qmle, fit_two_stage, PlanSummary, WeightPlan};
use crate::model::{check_constraints, pack_params, MeanPath, ModelSpec, Series, Theta, PROB_CLAMP};

/// `e = Σ_s‖A_s − θ₀‖² / Σ_s‖B_s − θ₀‖²` and the per-coordinate ratios.
/// Values above one favour the `B` estimates.
pub fn relative_mse(a: &[Vec<f64>], b: &[Vec<f64>], theta0: &[f64]) -> Result<(f64, Vec<f64>)> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::Dimension(format!("{} vs {} estimate sets", a.len(), b.len())));
    }
    let m = theta0.len();
    if a.iter().chain(b).any(|row| row.len() != m) {
        return Err(Error::Dimension(format!("every estimate must have length {m}")));
    }
    let mut num = vec![0.0; m];
    let mut den = vec![0.0; m];
    for (ra, rb) in a.iter().zip(b) {
        for h in 0..m {
            num[h] += (ra[h] - theta0[h]).powi(2);
            den[h] += (rb[h] - theta0[h]).powi(2);
        }
    }
    let total_den: f64 = den.iter().sum();
    if total_den == 0.0 {
        return Err(Error::Singular("relative MSE denominator is zero".into()));
    }
    let overall = num.iter().sum::<f64>() / total_den;
    let per = num.iter().zip(&den).map(|(n, d)| if *d == 0.0 { f64::NAN } else { n / d }).collect();
    Ok((overall, per))
}

/// One grid point of a Monte Carlo experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub rho: f64,
    pub d: usize,
    pub t: usize,
}

/// Equidistant `ρ` grid `0.3, 0.4, …, 0.9`.
pub fn default_rho_grid() -> Vec<f64> {
    (3..=9).map(|k| k as f64 / 10.0).collect()
}

/// Data-generating parameters used by the Monte Carlo harness:
/// `c = 0.5·1`, `A = 0.3·I`, and `B` with `0.2` on the diagonal and the
/// off-diagonal mass `0.1` spread evenly over each row, so `‖A + B‖∞ = 0.6`.
pub fn default_theta0(d: usize) -> Theta {
    let off = if d > 1 { 0.1 / (d - 1) as f64 } else { 0.0 };
    let c = vec![0.5; d];
    let a: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| if i == j { 0.3 } else { 0.0 }).collect()).collect();
    let b: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| if i == j { 0.2 } else { off }).collect()).collect();
    let a_ref: Vec<&[f64]> = a.iter().map(Vec::as_slice).collect();
    let b_ref: Vec<&[f64]> = b.iter().map(Vec::as_slice).collect();
    Theta::from_slices(&c, &a_ref, &b_ref)
}

#[derive(Debug, Clone)]
pub struct MonteCarloConfig {
    pub grid: Vec<GridPoint>,
    /// Replications per grid point.
    pub s: usize,
    /// Model fitted by both estimators; its dimension must match each grid point's `d`
    /// (only the shapes of `A` and `B` are taken from here).
    pub spec: ModelSpec,
    /// `θ₀` for each dimension appearing in the grid.
    pub theta0: Vec<Theta>,
    pub plan: WeightPlan,
    pub master_seed: u64,
    pub burn_in: usize,
    pub max_events: usize,
}

impl MonteCarloConfig {
    /// Diagonal-`A` count model with [`default_theta0`] for every dimension in `grid`.
    pub fn new(grid: Vec<GridPoint>, s: usize, plan: WeightPlan, master_seed: u64) -> Self {
        let mut dims: Vec<usize> = grid.iter().map(|g| g.d).collect();
        dims.sort_unstable();
        dims.dedup();
        Self {
            grid,
            s,
            spec: ModelSpec::count(1).diagonal_a(),
            theta0: dims.into_iter().map(default_theta0).collect(),
            plan,
            master_seed,
            burn_in: DEFAULT_BURN_IN,
            max_events: DEFAULT_MAX_EVENTS,
        }
    }

    fn theta_for(&self, d: usize) -> Result<&Theta> {
        self.theta0
            .iter()
            .find(|th| th.c.len() == d)
            .ok_or_else(|| Error::InvalidSpec(format!("no θ₀ supplied for d = {d}")))
    }

    fn spec_for(&self, d: usize) -> ModelSpec {
        ModelSpec { d, ..self.spec.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloRow {
    pub rho: f64,
    pub d: usize,
    pub t: usize,
    pub s: usize,
    /// Replications where both estimators converged.
    pub used: usize,
    pub dropped: usize,
    pub e_overall: f64,
    pub e_per_param: Vec<f64>,
    /// Wall-clock seconds; kept out of serialized output so reports are reproducible.
    #[serde(skip)]
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloMeta {
    pub master_seed: u64,
    pub s: usize,
    pub burn_in: usize,
    pub max_events: usize,
    pub spec: ModelSpec,
    pub theta0: Vec<Theta>,
    pub param_names: Vec<Vec<String>>,
    pub plan: PlanSummary,
    pub seed_rule: String,
    pub dropped_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub rows: Vec<MonteCarloRow>,
    pub meta: MonteCarloMeta,
}

impl MonteCarloReport {
    /// One row per grid point; per-parameter ratios joined with `;`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rho,d,t,s,used,dropped,e_overall,e_per_param\n");
        for r in &self.rows {
            let per: Vec<String> = r.e_per_param.iter().map(|v| format!("{v}")).collect();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.rho,
                r.d,
                r.t,
                r.s,
                r.used,
                r.dropped,
                r.e_overall,
                per.join(";")
            ));
        }
        out
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `s` at grid point `g`.
pub fn replication_seed(master: u64, grid_index: usize, s: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ grid_index as u64) ^ s as u64)
}

struct Replication {
    qmle: Vec<f64>,
    mwlse: Vec<f64>,
}

fn replicate(cfg: &MonteCarloConfig, spec: &ModelSpec, theta0: &Theta, gp: &GridPoint, seed: u64) -> Option<Replication> {
    let copula = CopulaSpec::gaussian(gp.rho).ok()?;
    let sim = SimConfig { t: gp.t, burn_in: cfg.burn_in, seed, max_events: cfg.max_events };
    let y = match simulate_counts(theta0, &copula, &sim) {
        Ok(y) => y,
        Err(e) => {
            warn!("replication seed {seed}: simulation failed: {e}");
            return None;
        }
    };
    let q = fit_qmle(spec, &y).ok()?;
    let m = fit_two_stage(spec, &y, &cfg.plan).ok()?;
    (q.converged && m.converged).then_some(Replication { qmle: q.params, mwlse: m.params })
}

/// Runs every grid point, comparing the QMLE (numerator) against the
/// two-stage estimator (denominator). Replications are independent and
/// seeded by [`replication_seed`], so the report does not depend on the
/// thread pool.
pub fn monte_carlo(cfg: &MonteCarloConfig) -> Result<MonteCarloReport> {
    if cfg.s == 0 {
        return Err(Error::InvalidSpec("S must be at least 1".into()));
    }
    let mut rows = Vec::with_capacity(cfg.grid.len());
    let mut param_names = Vec::new();
    for th in &cfg.theta0 {
        let spec = cfg.spec_for(th.c.len());
        spec.validate()?;
        let report = check_constraints(&spec, th);
        if !report.satisfied {
            return Err(Error::Constraint(report.summary()));
        }
        param_names.push(spec.param_names());
    }

    for (g, gp) in cfg.grid.iter().enumerate() {
        let start = std::time::Instant::now();
        let spec = cfg.spec_for(gp.d);
        let theta0 = cfg.theta_for(gp.d)?;
        let truth = pack_params(theta0, &spec)?;
        let reps: Vec<Option<Replication>> = (0..cfg.s)
            .into_par_iter()
            .map(|s| replicate(cfg, &spec, theta0, gp, replication_seed(cfg.master_seed, g, s)))
            .collect();
        let kept: Vec<&Replication> = reps.iter().flatten().collect();
        if kept.is_empty() {
            return Err(Error::Optimizer(format!(
                "all {} replications failed at ρ = {}, d = {}, T = {}",
                cfg.s, gp.rho, gp.d, gp.t
            )));
        }
        let a: Vec<Vec<f64>> = kept.iter().map(|r| r.qmle.clone()).collect();
        let b: Vec<Vec<f64>> = kept.iter().map(|r| r.mwlse.clone()).collect();
        let (e_overall, e_per_param) = relative_mse(&a, &b, &truth)?;
        let wall_time = start.elapsed().as_secs_f64();
        info!("ρ = {} d = {} T = {}: e = {e_overall:.4} ({} of {} kept, {wall_time:.1}s)", gp.rho, gp.d, gp.t, kept.len(), cfg.s);
        rows.push(MonteCarloRow {
            rho: gp.rho,
            d: gp.d,
            t: gp.t,
            s: cfg.s,
            used: kept.len(),
            dropped: cfg.s - kept.len(),
            e_overall,
            e_per_param,
            wall_time,
        });
    }
    let dropped_total = rows.iter().map(|r| r.dropped).sum();
    Ok(MonteCarloReport {
        rows,
        meta: MonteCarloMeta {
            master_seed: cfg.master_seed,
            s: cfg.s,
            burn_in: cfg.burn_in,
            max_events: cfg.max_events,
            spec: cfg.spec.clone(),
            theta0: cfg.theta0.clone(),
            param_names,
            plan: cfg.plan.summary(),
            seed_rule: "splitmix64(splitmix64(splitmix64(master) ^ grid_index) ^ replication)".into(),
            dropped_total,
        },
    })
}

/// Standardization of Pearson residuals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualMode {
    /// `(Y − p̂)/√ν̂`.
    #[default]
    Conventional,
    /// `(Y − p̂)/ν̂`, without the square root.
    Literal,
}

impl ResidualMode {
    pub fn name(self) -> &'static str {
        match self {
            ResidualMode::Conventional => "conventional",
            ResidualMode::Literal => "literal",
        }
    }
}

/// Pearson residuals with `ν̂ = p̂(1 − p̂)` (probability families, after
/// clamping) or `ν̂ = λ̂` (counts). Returned row-major as a `T × n` series.
pub fn pearson_residuals(y: &Series, fitted: &MeanPath, probability: bool, mode: ResidualMode) -> Result<Vec<Vec<f64>>> {
    if y.len() != fitted.len() || y.dim() != fitted.dim() {
        return Err(Error::Dimension("panel and fitted values differ in shape".into()));
    }
    let mut out = Vec::with_capacity(y.len());
    for t in 0..y.len() {
        let mut row = Vec::with_capacity(y.dim());
        for i in 0..y.dim() {
            let (m, nu) = if probability {
                let p = fitted.get(t, i).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                (p, p * (1.0 - p))
            } else {
                let l = fitted.get(t, i);
                (l, l)
            };
            if !(nu > 0.0) {
                return Err(Error::Singular(format!("zero variance at t = {}, series {}", t + 1, i + 1)));
            }
            let scale = match mode {
                ResidualMode::Conventional => nu.sqrt(),
                ResidualMode::Literal => nu,
            };
            row.push((y.get(t, i) - m) / scale);
        }
        out.push(row);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Acf {
    /// Autocorrelations at lags `1..=max_lag`.
    pub values: Vec<f64>,
    /// Half-width `1.96/√T` of the white-noise band.
    pub band: f64,
}

/// Sample autocorrelation `γ̂(k)/γ̂(0)` with `γ̂(k) = T⁻¹ Σ (x_t − x̄)(x_{t+k} − x̄)`.
pub fn acf(x: &[f64], max_lag: usize) -> Result<Acf> {
    let t = x.len();
    if max_lag >= t {
        return Err(Error::InvalidData(format!("max lag {max_lag} must be below the series length {t}")));
    }
    let mean = x.iter().sum::<f64>() / t as f64;
    let centred: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let gamma0: f64 = centred.iter().map(|v| v * v).sum();
    if gamma0 <= 0.0 || !gamma0.is_finite() {
        return Err(Error::InvalidData("autocorrelation of a constant series".into()));
    }
    let values = (1..=max_lag)
        .map(|k| centred[..t - k].iter().zip(&centred[k..]).map(|(a, b)| a * b).sum::<f64>() / gamma0)
        .collect();
    Ok(Acf { values, band: 1.96 / (t as f64).sqrt() })
}

/// Per-series and overall mean absolute error of fitted values.
pub fn mae(y: &Series, fitted: &MeanPath) -> Result<(Vec<f64>, f64)> {
    if y.len() != fitted.len() || y.dim() != fitted.dim() {
        return Err(Error::Dimension("panel and fitted values differ in shape".into()));
    }
    let (t, n) = (y.len(), y.dim());
    let per: Vec<f64> = (0..n)
        .map(|i| (0..t).map(|s| (y.get(s, i) - fitted.get(s, i)).abs()).sum::<f64>() / t as f64)
        .collect();
    let overall = per.iter().sum::<f64>() / n as f64;
    Ok((per, overall))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_mse_arithmetic() {
        let theta0 = [1.0];
        let (e, per) = relative_mse(&[vec![3.0], vec![-1.0]], &[vec![2.0], vec![0.0]], &theta0).unwrap();
        assert_eq!(e, 4.0);
        assert_eq!(per, vec![4.0]);
        let x = vec![vec![1.5, 0.2], vec![0.7, 0.1]];
        assert_eq!(relative_mse(&x, &x, &[1.0, 0.0]).unwrap().0, 1.0);
        assert!(matches!(relative_mse(&[vec![1.0]], &[vec![1.0]], &[1.0]), Err(Error::Singular(_))));
        assert!(relative_mse(&x, &x[..1], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn default_theta0_is_stationary() {
        for d in [2, 4] {
            let th = default_theta0(d);
            let spec = ModelSpec::count(d).diagonal_a();
            assert!(check_constraints(&spec, &th).satisfied);
            let row: f64 = th.a.row(0).sum() + th.b.row(0).sum();
            assert!((row - 0.6).abs() < 1e-15);
        }
        assert_eq!(default_rho_grid(), vec![0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]);
    }

    #[test]
    fn seeds_differ_across_cells() {
        let a = replication_seed(1, 0, 0);
        assert_ne!(a, replication_seed(1, 0, 1));
        assert_ne!(a, replication_seed(1, 1, 0));
        assert_ne!(a, replication_seed(2, 0, 0));
        assert_eq!(a, replication_seed(1, 0, 0));
    }

    #[test]
    fn pearson_modes() {
        let y = Series::new(vec![1.0, 0.0], 1).unwrap();
        let p = MeanPath::from_raw(vec![0.5, 0.5], 1);
        let conv = pearson_residuals(&y, &p, true, ResidualMode::Conventional).unwrap();
        let lit = pearson_residuals(&y, &p, true, ResidualMode::Literal).unwrap();
        assert_eq!(conv[0][0], 1.0);
        assert_eq!(lit[0][0], 2.0);
        assert_eq!(lit[1][0], -2.0);
        let exact = MeanPath::from_raw(vec![1.0, 0.0], 1);
        let r = pearson_residuals(&y, &exact, true, ResidualMode::Conventional).unwrap();
        assert!(r.iter().all(|row| row[0].abs() < 1e-2));
    }

    #[test]
    fn acf_alternating_and_constant() {
        let x: Vec<f64> = (0..1000).map(|t| if t % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let r = acf(&x, 2).unwrap();
        assert!((r.values[0] + 1.0).abs() < 2e-3);
        assert!((r.values[1] - 1.0).abs() < 3e-3);
        assert!(acf(&[2.0; 10], 3).is_err());
        assert!(acf(&x[..3], 3).is_err());
    }

    #[test]
    fn mae_arithmetic() {
        let y = Series::new(vec![1.0, 0.0, 1.0, 0.0], 2).unwrap();
        let p = MeanPath::from_raw(vec![0.6, 0.4, 0.6, 0.4], 2);
        let (per, overall) = mae(&y, &p).unwrap();
        assert!((overall - 0.4).abs() < 1e-15);
        assert!(per.iter().all(|v| (v - 0.4).abs() < 1e-15));
    }
}
