use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use mwlse_core::dgp::{simulate, CopulaSpec, SimConfig, DEFAULT_BURN_IN, DEFAULT_MAX_EVENTS};
use mwlse_core::estimation::{fit_first_step, fit_qmle, fit_two_stage, FitResult, WeightPlan};
use mwlse_core::evaluation::{
    acf, default_rho_grid, default_theta0, monte_carlo, pearson_residuals, GridPoint, MonteCarloConfig, ResidualMode,
};
use mwlse_core::io::{ingest_prices, load_series, write_series};
use mwlse_core::model::{mean_recursion, Family, MatrixShape, ModelSpec, Series, Theta};
use mwlse_core::stocks::{coefficient_rows, run_stocks, sign_panel, CoefficientRow, StocksOptions};

use crate::config::{
    require, FitArgs, ModelKind, MonteCarloArgs, PlanKind, ResidualModeArg, ResidualsArgs, ShapeKind, SimulateArgs,
    StocksArgs,
};
use crate::output::{num, opt_num, Outputs, RunMeta};

/// Default location of the quarterly closing-price snapshot used by `stocks`.
pub const DEFAULT_PRICES: &str = "data/it_quarterly_closes.csv";

fn base_spec(model: ModelKind, d: usize) -> ModelSpec {
    match model {
        ModelKind::Count => ModelSpec::count(d),
        ModelKind::Binary => ModelSpec::binary(d),
    }
}

fn shape(s: ShapeKind) -> MatrixShape {
    match s {
        ShapeKind::Full => MatrixShape::Full,
        ShapeKind::Diagonal => MatrixShape::Diagonal,
        ShapeKind::Zero => MatrixShape::Zero,
    }
}

fn residual_mode(m: ResidualModeArg) -> ResidualMode {
    match m {
        ResidualModeArg::Conventional => ResidualMode::Conventional,
        ResidualModeArg::Literal => ResidualMode::Literal,
    }
}

fn weight_plan(plan: PlanKind, family: Family) -> Option<WeightPlan> {
    match plan {
        PlanKind::Lse | PlanKind::Qmle => None,
        PlanKind::MwlseEqcMax => Some(WeightPlan::eqc_max(family)),
        PlanKind::MwlseEqcMean => Some(WeightPlan::eqc_mean(family)),
        PlanKind::MwlseDiagonal => Some(WeightPlan::diagonal(family)),
    }
}

/// Default binary parameters: `c = 0.2`, `A = 0.2·I`, `B` with `0.2` on the
/// diagonal and `0.1` spread over each row's off-diagonal entries.
fn default_binary_theta(d: usize) -> Theta {
    let mut th = default_theta0(d);
    th.c.fill(0.2);
    th.a.fill_diagonal(0.2);
    th
}

fn read_theta(path: &Path) -> Result<Theta> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing parameters in {}", path.display()))
}

#[derive(Serialize)]
struct SimulateResolved<'a> {
    model: ModelKind,
    d: usize,
    t: usize,
    rho: f64,
    seed: u64,
    burn_in: usize,
    max_events: usize,
    theta: Option<&'a PathBuf>,
}

pub fn simulate_cmd(args: SimulateArgs, out: &mut Outputs) -> Result<()> {
    let model = args.model.unwrap_or(ModelKind::Count);
    let theta = match &args.theta {
        Some(p) => read_theta(p)?,
        None => {
            let d = args.d.unwrap_or(2);
            match model {
                ModelKind::Count => default_theta0(d),
                ModelKind::Binary => default_binary_theta(d),
            }
        }
    };
    let resolved = SimulateResolved {
        model,
        d: theta.c.len(),
        t: args.t.unwrap_or(100),
        rho: args.rho.unwrap_or(0.5),
        seed: args.seed.unwrap_or(1),
        burn_in: args.burn_in.unwrap_or(DEFAULT_BURN_IN),
        max_events: args.max_events.unwrap_or(DEFAULT_MAX_EVENTS),
        theta: args.theta.as_ref(),
    };
    let spec = base_spec(model, resolved.d);
    let copula = CopulaSpec::gaussian(resolved.rho)?;
    let cfg = SimConfig { t: resolved.t, burn_in: resolved.burn_in, seed: resolved.seed, max_events: resolved.max_events };
    let y = simulate(&spec, &theta, &copula, &cfg)?;

    let meta = RunMeta::new("simulate", Some(resolved.seed), &resolved)?;
    let mut lines = meta.csv_lines();
    lines.push(("theta".into(), serde_json::to_string(&theta)?));
    let mut buf = Vec::new();
    write_series(&mut buf, &y, &lines)?;
    out.bytes("panel.csv", &buf)?;
    Ok(())
}

#[derive(Serialize)]
struct FitResolved<'a> {
    panel: &'a PathBuf,
    model: ModelKind,
    plan: PlanKind,
    a_shape: ShapeKind,
    b_shape: ShapeKind,
    reweight_steps: usize,
}

pub fn fit_panel(y: &Series, spec: &ModelSpec, plan: PlanKind, reweight_steps: usize) -> Result<FitResult> {
    Ok(match plan {
        PlanKind::Lse => fit_first_step(spec, y, None)?,
        PlanKind::Qmle => fit_qmle(spec, y)?,
        _ => {
            let plan = weight_plan(plan, spec.family).expect("weighted plan").with_reweight_steps(reweight_steps);
            fit_two_stage(spec, y, &plan)?
        }
    })
}

fn coefficient_csv_rows(rows: &[CoefficientRow]) -> (Vec<String>, Vec<Vec<String>>) {
    let header = ["estimator", "parameter", "estimate", "std_error", "z", "p_value", "significance"]
        .map(String::from)
        .to_vec();
    let body = rows
        .iter()
        .map(|r| {
            vec![
                r.estimator.clone(),
                r.parameter.clone(),
                num(r.estimate),
                opt_num(r.std_error),
                opt_num(r.z),
                opt_num(r.p_value),
                r.significance.marker().to_string(),
            ]
        })
        .collect();
    (header, body)
}

pub fn fit_cmd(args: FitArgs, out: &mut Outputs) -> Result<()> {
    let panel = require(args.panel.as_ref(), "panel")?;
    let resolved = FitResolved {
        panel,
        model: args.model.unwrap_or(ModelKind::Count),
        plan: args.plan.unwrap_or(PlanKind::MwlseEqcMax),
        a_shape: args.a_shape.unwrap_or(ShapeKind::Full),
        b_shape: args.b_shape.unwrap_or(ShapeKind::Full),
        reweight_steps: args.reweight_steps.unwrap_or(1),
    };
    let y = load_series(panel).with_context(|| format!("reading panel {}", panel.display()))?;
    let spec = base_spec(resolved.model, y.dim())
        .with_a_shape(shape(resolved.a_shape))
        .with_b_shape(shape(resolved.b_shape));
    let fit = fit_panel(&y, &spec, resolved.plan, resolved.reweight_steps)?;
    for w in &fit.warnings {
        log::warn!("{w}");
    }

    let meta = RunMeta::new("fit", args.seed, &resolved)?;
    out.json("fit.json", &meta, "fit", &fit)?;
    let fitted = Series::with_names(fit.fitted_means.as_slice().to_vec(), y.dim(), y.names().to_vec())?;
    let mut buf = Vec::new();
    write_series(&mut buf, &fitted, &meta.csv_lines())?;
    out.bytes("fitted_means.csv", &buf)?;
    let (header, rows) = coefficient_csv_rows(&coefficient_rows(&fit));
    out.csv("estimates.csv", &meta, &header, &rows)?;
    Ok(())
}

#[derive(Serialize)]
struct MonteCarloResolved {
    rhos: Vec<f64>,
    ds: Vec<usize>,
    ts: Vec<usize>,
    s: usize,
    seed: u64,
    plan: PlanKind,
    burn_in: usize,
}

pub fn montecarlo_cmd(args: MonteCarloArgs, out: &mut Outputs) -> Result<()> {
    let resolved = MonteCarloResolved {
        rhos: args.rhos.unwrap_or_else(default_rho_grid),
        ds: args.ds.unwrap_or_else(|| vec![2]),
        ts: args.ts.unwrap_or_else(|| vec![100]),
        s: args.s.unwrap_or(100),
        seed: args.seed.unwrap_or(1),
        plan: args.plan.unwrap_or(PlanKind::MwlseEqcMax),
        burn_in: args.burn_in.unwrap_or(DEFAULT_BURN_IN),
    };
    if resolved.ds.len() != resolved.ts.len() {
        bail!("--ds and --ts must list the same number of entries");
    }
    let Some(plan) = weight_plan(resolved.plan, Family::Count) else {
        bail!("montecarlo compares the QMLE with a weighted plan; got {:?}", resolved.plan);
    };
    let mut grid = Vec::new();
    for (&d, &t) in resolved.ds.iter().zip(&resolved.ts) {
        grid.extend(resolved.rhos.iter().map(|&rho| GridPoint { rho, d, t }));
    }
    let mut cfg = MonteCarloConfig::new(grid, resolved.s, plan, resolved.seed);
    cfg.burn_in = resolved.burn_in;
    let report = monte_carlo(&cfg)?;

    let meta = RunMeta::new("montecarlo", Some(resolved.seed), &resolved)?;
    let mut buf = String::new();
    for (k, v) in meta.csv_lines() {
        buf.push_str(&format!("# {k}: {v}\n"));
    }
    buf.push_str(&report.to_csv());
    out.bytes("montecarlo.csv", buf.as_bytes())?;
    out.json("montecarlo.json", &meta, "report", &report)?;
    Ok(())
}

fn acf_rows(estimator: &str, series: &str, values: &[f64], band: f64) -> Vec<Vec<String>> {
    values
        .iter()
        .enumerate()
        .map(|(k, v)| vec![estimator.to_string(), series.to_string(), (k + 1).to_string(), num(*v), num(band)])
        .collect()
}

fn acf_header() -> Vec<String> {
    ["estimator", "series", "lag", "acf", "band"].map(String::from).to_vec()
}

#[derive(Serialize)]
struct StocksResolved {
    prices: PathBuf,
    residual_mode: ResidualModeArg,
    max_lag: usize,
}

pub fn stocks_cmd(args: StocksArgs, out: &mut Outputs) -> Result<()> {
    let resolved = StocksResolved {
        prices: args.prices.unwrap_or_else(|| PathBuf::from(DEFAULT_PRICES)),
        residual_mode: args.residual_mode.unwrap_or(ResidualModeArg::Conventional),
        max_lag: args.max_lag.unwrap_or(20),
    };
    if !resolved.prices.exists() {
        bail!(
            "price snapshot {} not found; supply a CSV with --prices (header `date,<ticker>,...`)",
            resolved.prices.display()
        );
    }
    let panel =
        ingest_prices(&resolved.prices).with_context(|| format!("reading prices {}", resolved.prices.display()))?;
    let opts = StocksOptions { residual_mode: residual_mode(resolved.residual_mode), max_lag: resolved.max_lag };
    let report = run_stocks(&panel, &opts)?;

    let meta = RunMeta::new("stocks", args.seed, &resolved)?;
    out.json("stocks.json", &meta, "report", &report)?;
    let (header, rows) = coefficient_csv_rows(&report.coefficients);
    out.csv("estimates.csv", &meta, &header, &rows)?;

    let mut header = vec!["estimator".to_string()];
    header.extend(report.tickers.iter().cloned());
    header.push("overall".into());
    let rows: Vec<Vec<String>> = report
        .mae
        .iter()
        .map(|r| {
            let mut row = vec![r.estimator.clone()];
            row.extend(r.per_series.iter().map(|v| num(*v)));
            row.push(num(r.overall));
            row
        })
        .collect();
    out.csv("mae.csv", &meta, &header, &rows)?;

    let rows: Vec<Vec<String>> = report
        .residual_acf
        .iter()
        .flat_map(|r| acf_rows(&r.estimator, &r.series, &r.acf.values, r.acf.band))
        .collect();
    out.csv("residual_acf.csv", &meta, &acf_header(), &rows)?;

    let mut buf = Vec::new();
    write_series(&mut buf, &sign_panel(&panel)?, &meta.csv_lines())?;
    out.bytes("signs.csv", &buf)?;
    Ok(())
}

#[derive(Serialize)]
struct ResidualsResolved<'a> {
    fit: &'a PathBuf,
    panel: &'a PathBuf,
    residual_mode: ResidualModeArg,
    max_lag: usize,
}

pub fn residuals_cmd(args: ResidualsArgs, out: &mut Outputs) -> Result<()> {
    let fit_path = require(args.fit.as_ref(), "fit")?;
    let panel = require(args.panel.as_ref(), "panel")?;
    let resolved = ResidualsResolved {
        fit: fit_path,
        panel,
        residual_mode: args.residual_mode.unwrap_or(ResidualModeArg::Conventional),
        max_lag: args.max_lag.unwrap_or(20),
    };
    let text = std::fs::read_to_string(fit_path).with_context(|| format!("reading {}", fit_path.display()))?;
    let doc: serde_json::Value = serde_json::from_str(&text)?;
    let fit: FitResult = serde_json::from_value(doc.get("fit").cloned().unwrap_or(doc))
        .with_context(|| format!("{} does not hold a fit result", fit_path.display()))?;
    let y = load_series(panel).with_context(|| format!("reading panel {}", panel.display()))?;
    y.validate_for(&fit.spec)?;
    let fitted = mean_recursion(&fit.spec, &fit.theta, &y, &fit.lambda_init)?;
    let mode = residual_mode(resolved.residual_mode);
    let resid = pearson_residuals(&y, &fitted, fit.spec.family.is_probability(), mode)?;

    let meta = RunMeta::new("residuals", args.seed, &resolved)?;
    let mut lines = meta.csv_lines();
    lines.push(("residual_mode".into(), mode.name().into()));
    let flat: Vec<f64> = resid.iter().flatten().copied().collect();
    let series = Series::with_names(flat, y.dim(), y.names().to_vec())?;
    let mut buf = Vec::new();
    write_series(&mut buf, &series, &lines)?;
    out.bytes("residuals.csv", &buf)?;

    let label = fit.estimator.label();
    let mut rows = Vec::new();
    for (i, name) in y.names().iter().enumerate() {
        let column: Vec<f64> = resid.iter().map(|r| r[i]).collect();
        let a = acf(&column, resolved.max_lag.min(column.len() - 1))?;
        rows.extend(acf_rows(label, name, &a.values, a.band));
    }
    out.csv("residual_acf.csv", &meta, &acf_header(), &rows)?;
    Ok(())
}
