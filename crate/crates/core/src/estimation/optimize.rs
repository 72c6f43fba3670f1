//! Projected quasi-Newton minimization over box constraints.
//!
//! Bounds are handled by projection (ε-active set, projected Armijo
//! backtracking). The search direction on the free variables comes from a
//! curvature matrix supplied by the objective (Gauss–Newton / Fisher
//! scoring) plus a symmetric rank-one secant correction or, when none is
//! supplied, from a BFGS inverse-Hessian. Linear
//! "budget" constraints `Σ_{k∈S} x_k ≤ limit` are handled with an exterior
//! quadratic penalty whose weight is escalated until the hard limit holds.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimOptions {
    /// Stop when the ∞-norm of the projected gradient falls below this.
    pub gtol: f64,
    /// Stop when the objective changes by less than this on two consecutive iterations.
    pub ftol: f64,
    pub max_iter: usize,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self { gtol: 1e-8, ftol: 1e-12, max_iter: 500 }
    }
}

/// `Σ_{k ∈ indices} x_k ≤ limit`, penalized above `limit` and required to
/// stay strictly below `hard_limit` for a point to count as feasible.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBudget {
    pub indices: Vec<usize>,
    pub limit: f64,
    pub hard_limit: f64,
}

impl LinearBudget {
    fn total(&self, x: &[f64]) -> f64 {
        self.indices.iter().map(|&k| x[k]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraints {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub budgets: Vec<LinearBudget>,
    pub penalty_weight: f64,
}

impl Constraints {
    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Self { lower, upper, budgets: Vec::new(), penalty_weight: 1e4 }
    }

    pub fn unbounded(m: usize) -> Self {
        Self::boxed(vec![f64::NEG_INFINITY; m], vec![f64::INFINITY; m])
    }

    fn project(&self, x: &mut [f64]) {
        for ((v, &lo), &hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(lo, hi);
        }
    }

    fn in_box(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.lower).zip(&self.upper).all(|((&v, &lo), &hi)| v >= lo && v <= hi)
    }

    pub fn is_feasible(&self, x: &[f64]) -> bool {
        self.in_box(x) && self.budgets.iter().all(|b| b.total(x) < b.hard_limit)
    }

    fn penalty(&self, x: &[f64], weight: f64, grad: &mut [f64]) -> f64 {
        let mut value = 0.0;
        for b in &self.budgets {
            let excess = b.total(x) - b.limit;
            if excess > 0.0 {
                value += weight * excess * excess;
                for &k in &b.indices {
                    grad[k] += 2.0 * weight * excess;
                }
            }
        }
        value
    }

    fn penalty_curvature(&self, x: &[f64], weight: f64, h: &mut DMatrix<f64>) {
        for b in &self.budgets {
            if b.total(x) - b.limit > 0.0 {
                for &i in &b.indices {
                    for &j in &b.indices {
                        h[(i, j)] += 2.0 * weight;
                    }
                }
            }
        }
    }

    /// `x - P(x - g)`, the projected-gradient step.
    pub fn projected_gradient(&self, x: &[f64], g: &[f64]) -> Vec<f64> {
        let mut trial: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - b).collect();
        self.project(&mut trial);
        x.iter().zip(&trial).map(|(a, b)| a - b).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Gradient,
    ObjectiveChange,
    MaxIterations,
    LineSearch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub x: Vec<f64>,
    /// Objective including any active penalty.
    pub value: f64,
    pub grad: Vec<f64>,
    pub projected_grad_norm: f64,
    pub iterations: usize,
    pub termination: Termination,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Objective value, gradient and an optional positive semi-definite
/// approximation of the Hessian.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub grad: Vec<f64>,
    pub curvature: Option<DMatrix<f64>>,
}

/// Minimizes `objective` (returning value and gradient) from a feasible start
/// with BFGS directions.
pub fn optimize<F>(mut objective: F, constraints: &Constraints, x0: &[f64], opts: &OptimOptions) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    optimize_with_curvature(
        |x| objective(x).map(|(value, grad)| Evaluation { value, grad, curvature: None }),
        constraints,
        x0,
        opts,
    )
}

/// Minimizes `objective` from a feasible start, using the supplied curvature
/// for Newton-type directions whenever it is present.
pub fn optimize_with_curvature<F>(
    mut objective: F,
    constraints: &Constraints,
    x0: &[f64],
    opts: &OptimOptions,
) -> Result<OptimResult>
where
    F: FnMut(&[f64]) -> Result<Evaluation>,
{
    let m = x0.len();
    if constraints.lower.len() != m || constraints.upper.len() != m {
        return Err(Error::Dimension(format!("bounds do not match {m} parameters")));
    }
    if !constraints.is_feasible(x0) {
        return Err(Error::Optimizer("no feasible point: initial value violates the constraints".into()));
    }
    let f0 = objective(x0)?.value;
    if !f0.is_finite() {
        return Err(Error::Optimizer("objective is not finite at the initial value".into()));
    }

    let mut weight = constraints.penalty_weight;
    let mut x = x0.to_vec();
    let mut total_iter = 0;
    let mut best: Option<OptimResult> = None;
    for _round in 0..4 {
        let run = run_projected(&mut objective, constraints, weight, &x, opts)?;
        total_iter += run.result.iterations;
        if let Some(bf) = run.best_feasible {
            if best.as_ref().is_none_or(|b| bf.value < b.value) {
                best = Some(bf);
            }
        }
        let feasible = constraints.is_feasible(&run.result.x);
        x = run.result.x.clone();
        if feasible {
            let mut out = run.result;
            out.iterations = total_iter;
            return Ok(out);
        }
        weight *= 100.0;
    }
    match best {
        Some(mut b) => {
            b.iterations = total_iter;
            Ok(b)
        }
        None => Err(Error::Optimizer("no feasible iterate found".into())),
    }
}

struct Run {
    result: OptimResult,
    best_feasible: Option<OptimResult>,
}

fn run_projected<F>(
    objective: &mut F,
    cons: &Constraints,
    weight: f64,
    x0: &[f64],
    opts: &OptimOptions,
) -> Result<Run>
where
    F: FnMut(&[f64]) -> Result<Evaluation>,
{
    let m = x0.len();
    let mut eval = |x: &[f64]| -> Result<Evaluation> {
        let mut ev = objective(x)?;
        ev.value += cons.penalty(x, weight, &mut ev.grad);
        if let Some(h) = ev.curvature.as_mut() {
            cons.penalty_curvature(x, weight, h);
        }
        Ok(ev)
    };

    let mut x = x0.to_vec();
    let Evaluation { value: mut f, grad: mut g, curvature: mut curv } = eval(&x)?;
    let mut h = DMatrix::<f64>::identity(m, m);
    let mut h_is_identity = true;
    let mut fresh = true;
    // Secant correction added to the supplied curvature (structured SR1).
    let mut correction = DMatrix::<f64>::zeros(m, m);
    let mut best_feasible: Option<OptimResult> = None;
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    let mut small_changes = 0;

    let snapshot = |x: &[f64], f: f64, g: &[f64], it: usize, term: Termination| OptimResult {
        x: x.to_vec(),
        value: f,
        grad: g.to_vec(),
        projected_grad_norm: inf_norm(&cons.projected_gradient(x, g)),
        iterations: it,
        termination: term,
    };

    while iterations < opts.max_iter {
        let pg = cons.projected_gradient(&x, &g);
        let pg_norm = inf_norm(&pg);
        if cons.is_feasible(&x) && best_feasible.as_ref().is_none_or(|b| f < b.value) {
            best_feasible = Some(snapshot(&x, f, &g, iterations, Termination::MaxIterations));
        }
        if pg_norm <= opts.gtol {
            termination = Termination::Gradient;
            break;
        }
        iterations += 1;

        // ε-active set: variables at (or within ε of) a bound with the gradient pushing outward.
        let eps = pg_norm.min(1e-6);
        let (free, pinned): (Vec<usize>, Vec<usize>) = (0..m).partition(|&k| {
            let at_lo = x[k] <= cons.lower[k] + eps && g[k] > 0.0;
            let at_hi = x[k] >= cons.upper[k] - eps && g[k] < 0.0;
            !(at_lo || at_hi)
        });

        let mut dir = vec![0.0; m];
        let model = curv.as_ref().map(|c| c + &correction);
        let newton = model.as_ref().and_then(|c| newton_direction(c, &g, &free));
        match (&newton, &model) {
            (Some(d), Some(c)) => {
                for (&i, &v) in free.iter().zip(d) {
                    dir[i] = v;
                }
                // Pinned variables take a scaled gradient step; projection sends them to the bound.
                for &k in &pinned {
                    dir[k] = -g[k] / c[(k, k)].max(1e-12);
                }
            }
            _ => {
                for &i in &free {
                    dir[i] = -free.iter().map(|&j| h[(i, j)] * g[j]).sum::<f64>();
                }
                if dot(&dir, &g) >= 0.0 {
                    h = DMatrix::identity(m, m);
                    h_is_identity = true;
                    dir.iter_mut().for_each(|v| *v = 0.0);
                    for &i in &free {
                        dir[i] = -g[i];
                    }
                }
            }
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + step * b).collect();
            cons.project(&mut trial);
            let moved: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            if inf_norm(&moved) == 0.0 {
                break;
            }
            match eval(&trial) {
                Ok(ev) if ev.value.is_finite() && ev.value <= f + 1e-4 * dot(&g, &moved) => {
                    accepted = Some((trial, ev));
                    break;
                }
                Ok(_) | Err(Error::NonFinite(_)) => step *= 0.5,
                Err(e) => return Err(e),
            }
        }

        let Some((xn, ev)) = accepted else {
            if newton.is_none() && !h_is_identity {
                h = DMatrix::identity(m, m);
                h_is_identity = true;
                fresh = true;
                continue;
            }
            termination = Termination::LineSearch;
            break;
        };

        let s = DVector::from_iterator(m, xn.iter().zip(&x).map(|(a, b)| a - b));
        let yv = DVector::from_iterator(m, ev.grad.iter().zip(&g).map(|(a, b)| a - b));
        let sy = s.dot(&yv);
        let df = (f - ev.value).abs();
        x = xn;
        f = ev.value;
        g = ev.grad;
        curv = ev.curvature;

        if let Some(c) = curv.as_ref() {
            // The supplied curvature omits second-order terms of the model;
            // learn them from the observed gradient change.
            let v = &yv - (c + &correction) * &s;
            let vs = v.dot(&s);
            if vs.abs() > 1e-8 * v.norm() * s.norm() {
                correction += (&v * v.transpose()) / vs;
            }
        }

        if curv.is_none() && sy > 1e-12 * s.norm() * yv.norm() {
            if fresh {
                h = DMatrix::identity(m, m) * (sy / yv.dot(&yv));
                fresh = false;
            }
            let rho = 1.0 / sy;
            let hy = &h * &yv;
            let yhy = yv.dot(&hy);
            // H+ = H - ρ(s yᵀH + H y sᵀ) + (ρ² yᵀHy + ρ) s sᵀ
            h -= (&s * hy.transpose() + &hy * s.transpose()) * rho;
            h += (&s * s.transpose()) * (rho * rho * yhy + rho);
            h_is_identity = false;
        }

        // A single tiny decrease can come from a short step far from the
        // optimum; require two in a row.
        small_changes = if df <= opts.ftol { small_changes + 1 } else { 0 };
        if small_changes >= 2 {
            termination = Termination::ObjectiveChange;
            break;
        }
    }

    if cons.is_feasible(&x) && best_feasible.as_ref().is_none_or(|b| f < b.value) {
        best_feasible = Some(snapshot(&x, f, &g, iterations, termination));
    }
    Ok(Run { result: snapshot(&x, f, &g, iterations, termination), best_feasible })
}

/// `-(C_FF + μI)⁻¹ g_F` on the free set, with the smallest damping `μ` that
/// makes the reduced curvature numerically positive definite.
fn newton_direction(curv: &DMatrix<f64>, g: &[f64], free: &[usize]) -> Option<Vec<f64>> {
    if free.is_empty() {
        return Some(Vec::new());
    }
    let k = free.len();
    let reduced = DMatrix::from_fn(k, k, |a, b| curv[(free[a], free[b])]);
    let rhs = DVector::from_iterator(k, free.iter().map(|&i| -g[i]));
    let scale = (0..k).map(|a| reduced[(a, a)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut mu = 0.0;
    for _ in 0..12 {
        let mut damped = reduced.clone();
        for a in 0..k {
            damped[(a, a)] += mu;
        }
        if let Some(chol) = damped.cholesky() {
            let d = chol.solve(&rhs);
            if d.iter().all(|v| v.is_finite()) {
                return Some(d.iter().copied().collect());
            }
        }
        mu = if mu == 0.0 { 1e-10 * scale } else { mu * 100.0 };
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bowl(target: Vec<f64>) -> impl FnMut(&[f64]) -> Result<(f64, Vec<f64>)> {
        move |x: &[f64]| {
            let diff: Vec<f64> = x.iter().zip(&target).map(|(a, b)| a - b).collect();
            Ok((dot(&diff, &diff), diff.iter().map(|d| 2.0 * d).collect()))
        }
    }

    #[test]
    fn quadratic_bowl_interior() {
        let target = vec![0.3, -1.2, 2.5, 0.0];
        let res = optimize(bowl(target.clone()), &Constraints::unbounded(4), &[0.0; 4], &OptimOptions::default()).unwrap();
        for (a, b) in res.x.iter().zip(&target) {
            assert!((a - b).abs() < 1e-8);
        }
        assert_eq!(res.termination, Termination::Gradient);
    }

    #[test]
    fn bound_becomes_active() {
        let cons = Constraints::boxed(vec![0.0, 0.0], vec![f64::INFINITY; 2]);
        let res = optimize(bowl(vec![-1.0, 2.0]), &cons, &[0.5, 0.5], &OptimOptions::default()).unwrap();
        assert_eq!(res.x[0], 0.0);
        assert!((res.x[1] - 2.0).abs() < 1e-8);
        assert!(res.projected_grad_norm <= 1e-8);
    }

    #[test]
    fn anisotropic_quadratic() {
        // f = 100 (x0 - 1)² + (x1 + 2)² + x0 x1
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let v = 100.0 * (x[0] - 1.0).powi(2) + (x[1] + 2.0).powi(2) + x[0] * x[1];
            Ok((v, vec![200.0 * (x[0] - 1.0) + x[1], 2.0 * (x[1] + 2.0) + x[0]]))
        };
        let res = optimize(f, &Constraints::unbounded(2), &[0.0, 0.0], &OptimOptions::default()).unwrap();
        // Stationary point of the quadratic, solved by hand: [200 1; 1 2] x = [200; -4].
        let det = 399.0;
        let x0 = (200.0 * 2.0 + 4.0) / det;
        let x1 = (200.0 * -4.0 - 200.0) / det;
        assert!((res.x[0] - x0).abs() < 1e-8 && (res.x[1] - x1).abs() < 1e-8);
    }

    #[test]
    fn budget_penalty_keeps_feasible() {
        // Pull both coordinates toward 1 while x0 + x1 must stay below 1.
        let mut cons = Constraints::boxed(vec![0.0; 2], vec![f64::INFINITY; 2]);
        cons.budgets.push(LinearBudget { indices: vec![0, 1], limit: 1.0 - 1e-6, hard_limit: 1.0 - 1e-10 });
        let res = optimize(bowl(vec![1.0, 1.0]), &cons, &[0.1, 0.1], &OptimOptions::default()).unwrap();
        assert!(cons.is_feasible(&res.x));
        assert!((res.x[0] - 0.5).abs() < 1e-3 && (res.x[1] - 0.5).abs() < 1e-3);
    }

    #[test]
    fn infeasible_start_rejected() {
        let cons = Constraints::boxed(vec![0.0], vec![1.0]);
        assert!(optimize(bowl(vec![0.5]), &cons, &[2.0], &OptimOptions::default()).is_err());
        let nan = |_: &[f64]| -> Result<(f64, Vec<f64>)> { Ok((f64::NAN, vec![0.0])) };
        assert!(optimize(nan, &Constraints::unbounded(1), &[0.0], &OptimOptions::default()).is_err());
    }
}
