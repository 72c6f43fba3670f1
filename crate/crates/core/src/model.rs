//! Model definitions and the linear conditional-mean recursion
//!
//! ```text
//! λ_t = c + A λ_{t-1} + B Y_{t-1}
//! ```
//!
//! shared by the count (INGARCH-type) and binary (MBAR-type) families, plus
//! the stacked one-hot encoding of categorical panels, where A and B are
//! block diagonal with one `d×d` block per non-reference category.
//!
//! Parameters are packed into a flat vector in a single fixed order used
//! everywhere in the crate: `c` first, then the free entries of `A` in
//! row-major order, then the free entries of `B` in row-major order. Which
//! entries are free is decided by the [`MatrixShape`] flags and, for the
//! categorical family, the block structure.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack used by strict constraint checks.
pub const CONSTRAINT_SLACK: f64 = 1e-10;

/// Binary probabilities are clamped into `[PROB_CLAMP, 1 - PROB_CLAMP]` before any division.
pub const PROB_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Count,
    Binary,
    CategoricalStacked,
}

impl Family {
    /// Families whose conditional mean is a success probability.
    pub fn is_probability(self) -> bool {
        matches!(self, Family::Binary | Family::CategoricalStacked)
    }
}

/// Sparsity pattern of a coefficient matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatrixShape {
    Full,
    Diagonal,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    /// Number of observed series.
    pub d: usize,
    /// Number of categories `M`, only for [`Family::CategoricalStacked`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<usize>,
    pub a_shape: MatrixShape,
    pub b_shape: MatrixShape,
}

impl ModelSpec {
    pub fn count(d: usize) -> Self {
        Self { family: Family::Count, d, categories: None, a_shape: MatrixShape::Full, b_shape: MatrixShape::Full }
    }

    pub fn binary(d: usize) -> Self {
        Self { family: Family::Binary, d, categories: None, a_shape: MatrixShape::Full, b_shape: MatrixShape::Full }
    }

    /// Categorical panel with `m` categories, stacked into `d·(m-1)` binary indicators.
    pub fn categorical(d: usize, m: usize) -> Self {
        Self {
            family: Family::CategoricalStacked,
            d,
            categories: Some(m),
            a_shape: MatrixShape::Full,
            b_shape: MatrixShape::Full,
        }
    }

    pub fn with_a_shape(mut self, shape: MatrixShape) -> Self {
        self.a_shape = shape;
        self
    }

    pub fn with_b_shape(mut self, shape: MatrixShape) -> Self {
        self.b_shape = shape;
        self
    }

    pub fn diagonal_a(self) -> Self {
        self.with_a_shape(MatrixShape::Diagonal)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidSpec("d must be at least 1".into()));
        }
        match (self.family, self.categories) {
            (Family::CategoricalStacked, Some(m)) if m >= 2 => Ok(()),
            (Family::CategoricalStacked, _) => {
                Err(Error::InvalidSpec("categorical family needs M >= 2 categories".into()))
            }
            (_, Some(_)) => Err(Error::InvalidSpec("categories only apply to the categorical family".into())),
            _ => Ok(()),
        }
    }

    /// Number of blocks `q = M - 1` (1 for count and binary).
    pub fn blocks(&self) -> usize {
        match self.family {
            Family::CategoricalStacked => self.categories.unwrap_or(2) - 1,
            _ => 1,
        }
    }

    /// Effective dimension of the observation vector.
    pub fn dim(&self) -> usize {
        self.d * self.blocks()
    }

    fn free_entries(&self, shape: MatrixShape) -> Vec<(usize, usize)> {
        let n = self.dim();
        let d = self.d;
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let same_block = i / d == j / d;
                let free = match shape {
                    MatrixShape::Zero => false,
                    MatrixShape::Diagonal => i == j,
                    MatrixShape::Full => same_block,
                };
                if free {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Free entries of `A`, row-major.
    pub fn a_entries(&self) -> Vec<(usize, usize)> {
        self.free_entries(self.a_shape)
    }

    /// Free entries of `B`, row-major.
    pub fn b_entries(&self) -> Vec<(usize, usize)> {
        self.free_entries(self.b_shape)
    }

    /// Length `m` of the packed parameter vector.
    pub fn n_params(&self) -> usize {
        self.dim() + self.a_entries().len() + self.b_entries().len()
    }

    /// Human-readable names in packing order, 1-based.
    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.dim()).map(|i| format!("c[{}]", i + 1)).collect();
        names.extend(self.a_entries().iter().map(|(i, j)| format!("A[{},{}]", i + 1, j + 1)));
        names.extend(self.b_entries().iter().map(|(i, j)| format!("B[{},{}]", i + 1, j + 1)));
        names
    }

    /// Groups of observation rows whose `c + A + B` row sums are added together
    /// by the ∞-norm condition. One group per original series.
    pub(crate) fn budget_rows(&self) -> Vec<Vec<usize>> {
        (0..self.d).map(|i| (0..self.blocks()).map(|j| j * self.d + i).collect()).collect()
    }
}

/// Parameters `(c, A, B)` of the linear recursion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ThetaRepr", try_from = "ThetaRepr")]
pub struct Theta {
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct ThetaRepr {
    c: Vec<f64>,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], n: usize) -> std::result::Result<DMatrix<f64>, String> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(format!("expected a {n}x{n} matrix"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl From<Theta> for ThetaRepr {
    fn from(t: Theta) -> Self {
        ThetaRepr { c: t.c.iter().copied().collect(), a: rows_of(&t.a), b: rows_of(&t.b) }
    }
}

impl TryFrom<ThetaRepr> for Theta {
    type Error = String;
    fn try_from(r: ThetaRepr) -> std::result::Result<Self, String> {
        let n = r.c.len();
        Ok(Theta { c: DVector::from_vec(r.c), a: from_rows(&r.a, n)?, b: from_rows(&r.b, n)? })
    }
}

impl Theta {
    pub fn new(c: DVector<f64>, a: DMatrix<f64>, b: DMatrix<f64>) -> Self {
        Self { c, a, b }
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    /// Convenience constructor from row slices.
    pub fn from_slices(c: &[f64], a: &[&[f64]], b: &[&[f64]]) -> Self {
        let n = c.len();
        Self {
            c: DVector::from_column_slice(c),
            a: DMatrix::from_fn(n, n, |i, j| a[i][j]),
            b: DMatrix::from_fn(n, n, |i, j| b[i][j]),
        }
    }
}

/// Flattens `θ` in the crate-wide order `(c, free A entries, free B entries)`.
///
/// Entries of `A`/`B` outside the free pattern must be exactly zero.
pub fn pack_params(theta: &Theta, spec: &ModelSpec) -> Result<Vec<f64>> {
    let n = spec.dim();
    if theta.c.len() != n || theta.a.shape() != (n, n) || theta.b.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "theta has c[{}], A{:?}, B{:?} but the model needs dimension {n}",
            theta.c.len(),
            theta.a.shape(),
            theta.b.shape()
        )));
    }
    let check_pattern = |mat: &DMatrix<f64>, entries: &[(usize, usize)], name: &str| -> Result<()> {
        for i in 0..n {
            for j in 0..n {
                if mat[(i, j)] != 0.0 && !entries.contains(&(i, j)) {
                    return Err(Error::Dimension(format!(
                        "{name}[{},{}] is outside the free pattern of the model",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(())
    };
    let a_entries = spec.a_entries();
    let b_entries = spec.b_entries();
    check_pattern(&theta.a, &a_entries, "A")?;
    check_pattern(&theta.b, &b_entries, "B")?;

    let mut flat = Vec::with_capacity(spec.n_params());
    flat.extend(theta.c.iter());
    flat.extend(a_entries.iter().map(|&(i, j)| theta.a[(i, j)]));
    flat.extend(b_entries.iter().map(|&(i, j)| theta.b[(i, j)]));
    Ok(flat)
}

pub fn unpack_params(flat: &[f64], spec: &ModelSpec) -> Result<Theta> {
    let m = spec.n_params();
    if flat.len() != m {
        return Err(Error::Dimension(format!("expected {m} parameters, got {}", flat.len())));
    }
    let n = spec.dim();
    let c = DVector::from_column_slice(&flat[..n]);
    let mut a = DMatrix::zeros(n, n);
    let mut b = DMatrix::zeros(n, n);
    let mut k = n;
    for (i, j) in spec.a_entries() {
        a[(i, j)] = flat[k];
        k += 1;
    }
    for (i, j) in spec.b_entries() {
        b[(i, j)] = flat[k];
        k += 1;
    }
    Ok(Theta { c, a, b })
}

/// A `T×n` observation panel stored row-major (one row per time point).
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    values: Vec<f64>,
    n: usize,
    names: Vec<String>,
}

impl Series {
    pub fn new(values: Vec<f64>, n: usize) -> Result<Self> {
        let names = (1..=n).map(|i| format!("y{i}")).collect();
        Self::with_names(values, n, names)
    }

    pub fn with_names(values: Vec<f64>, n: usize, names: Vec<String>) -> Result<Self> {
        if n == 0 || values.len() % n != 0 {
            return Err(Error::Dimension(format!("{} values do not form rows of width {n}", values.len())));
        }
        if names.len() != n {
            return Err(Error::Dimension(format!("{} names for {n} series", names.len())));
        }
        if values.len() / n < 2 {
            return Err(Error::InvalidData("a series needs at least T = 2 observations".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation panel".into()));
        }
        Ok(Self { values, n, names })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::new(rows.concat(), n)
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n..(t + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, t: usize, i: usize) -> f64 {
        self.values[t * self.n + i]
    }

    /// Column `i` as an owned vector.
    pub fn column(&self, i: usize) -> Vec<f64> {
        (0..self.len()).map(|t| self.get(t, i)).collect()
    }

    /// Per-coordinate sample mean over all rows.
    pub fn column_means(&self) -> Vec<f64> {
        let t = self.len() as f64;
        (0..self.n).map(|i| self.column(i).iter().sum::<f64>() / t).collect()
    }

    /// Checks the observation domain for the model family.
    pub fn validate_for(&self, spec: &ModelSpec) -> Result<()> {
        spec.validate()?;
        if self.n != spec.dim() {
            return Err(Error::Dimension(format!("panel has {} series, spec expects {}", self.n, spec.dim())));
        }
        for (k, &v) in self.values.iter().enumerate() {
            let ok = match spec.family {
                Family::Count => v >= 0.0 && v.fract() == 0.0,
                Family::Binary | Family::CategoricalStacked => v == 0.0 || v == 1.0,
            };
            if !ok {
                return Err(Error::InvalidData(format!(
                    "value {v} at row {}, column {} is outside the {:?} domain",
                    k / self.n + 1,
                    k % self.n + 1,
                    spec.family
                )));
            }
        }
        if spec.family == Family::CategoricalStacked {
            for t in 0..self.len() {
                for group in spec.budget_rows() {
                    let s: f64 = group.iter().map(|&r| self.get(t, r)).sum();
                    if s > 1.0 {
                        return Err(Error::InvalidData(format!(
                            "row {} has more than one active category for a series",
                            t + 1
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Conditional means `λ_t` (or probabilities `p_t`), row-major `T×n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanPath {
    values: Vec<f64>,
    n: usize,
}

impl MeanPath {
    pub fn from_raw(values: Vec<f64>, n: usize) -> Self {
        assert!(n > 0 && values.len() % n == 0);
        Self { values, n }
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.n
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.n..(t + 1) * self.n]
    }

    pub fn get(&self, t: usize, i: usize) -> f64 {
        self.values[t * self.n + i]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Copy with probabilities clamped into `[PROB_CLAMP, 1 - PROB_CLAMP]`.
    pub fn clamped_probabilities(&self) -> MeanPath {
        MeanPath {
            values: self.values.iter().map(|p| p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)).collect(),
            n: self.n,
        }
    }
}

/// Dense row-major view of a packed parameter vector.
pub(crate) struct DenseParams {
    pub n: usize,
    pub c: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub a_entries: Vec<(usize, usize)>,
    pub b_entries: Vec<(usize, usize)>,
}

impl DenseParams {
    pub fn new(spec: &ModelSpec, flat: &[f64]) -> Self {
        let n = spec.dim();
        let a_entries = spec.a_entries();
        let b_entries = spec.b_entries();
        let mut a = vec![0.0; n * n];
        let mut b = vec![0.0; n * n];
        let mut k = n;
        for &(i, j) in &a_entries {
            a[i * n + j] = flat[k];
            k += 1;
        }
        for &(i, j) in &b_entries {
            b[i * n + j] = flat[k];
            k += 1;
        }
        Self { n, c: flat[..n].to_vec(), a, b, a_entries, b_entries }
    }

    pub fn n_params(&self) -> usize {
        self.n + self.a_entries.len() + self.b_entries.len()
    }
}

/// Runs the recursion, calling `visit(t, λ_t, J_t)` for every `t`. `J_t` is the
/// row-major `n×m` Jacobian `∂λ_t/∂θ'` when `with_jacobian` is set and an
/// empty slice otherwise.
pub(crate) fn walk_recursion<F>(
    params: &DenseParams,
    y: &Series,
    lambda_init: &[f64],
    with_jacobian: bool,
    mut visit: F,
) -> Result<()>
where
    F: FnMut(usize, &[f64], &[f64]),
{
    let n = params.n;
    let m = params.n_params();
    let t_len = y.len();
    let mut lambda = lambda_init.to_vec();
    let mut next = vec![0.0; n];
    let jw = if with_jacobian { n * m } else { 0 };
    let mut jac = vec![0.0; jw];
    let mut jac_next = vec![0.0; jw];

    visit(0, &lambda, &jac);
    for t in 1..t_len {
        let y_prev = y.row(t - 1);
        for i in 0..n {
            let mut v = params.c[i];
            let ar = &params.a[i * n..(i + 1) * n];
            let br = &params.b[i * n..(i + 1) * n];
            for j in 0..n {
                v += ar[j] * lambda[j] + br[j] * y_prev[j];
            }
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("conditional mean at t={}", t + 1)));
            }
            next[i] = v;
        }
        if with_jacobian {
            // J_t = A J_{t-1} + direct term
            for i in 0..n {
                let row = &mut jac_next[i * m..(i + 1) * m];
                row.iter_mut().for_each(|x| *x = 0.0);
                for l in 0..n {
                    let a_il = params.a[i * n + l];
                    if a_il != 0.0 {
                        let prev = &jac[l * m..(l + 1) * m];
                        for k in 0..m {
                            row[k] += a_il * prev[k];
                        }
                    }
                }
                row[i] += 1.0;
            }
            let mut k = n;
            for &(i, j) in &params.a_entries {
                jac_next[i * m + k] += lambda[j];
                k += 1;
            }
            for &(i, j) in &params.b_entries {
                jac_next[i * m + k] += y_prev[j];
                k += 1;
            }
            std::mem::swap(&mut jac, &mut jac_next);
        }
        std::mem::swap(&mut lambda, &mut next);
        visit(t, &lambda, &jac);
    }
    Ok(())
}

fn check_init(spec: &ModelSpec, y: &Series, lambda_init: &[f64]) -> Result<()> {
    if y.dim() != spec.dim() || lambda_init.len() != spec.dim() {
        return Err(Error::Dimension(format!(
            "panel width {} / initial mean length {} vs spec dimension {}",
            y.dim(),
            lambda_init.len(),
            spec.dim()
        )));
    }
    let valid = match spec.family {
        Family::Count => lambda_init.iter().all(|&v| v > 0.0 && v.is_finite()),
        _ => lambda_init.iter().all(|&v| v > 0.0 && v < 1.0),
    };
    if !valid {
        return Err(Error::InvalidData(format!("initial mean {lambda_init:?} outside the valid range")));
    }
    Ok(())
}

/// `λ_1 = λ_init`, `λ_t = c + Aλ_{t-1} + BY_{t-1}` for `t = 2..T`.
pub fn mean_recursion(spec: &ModelSpec, theta: &Theta, y: &Series, lambda_init: &[f64]) -> Result<MeanPath> {
    let report = check_constraints(spec, theta);
    if !report.satisfied {
        return Err(Error::Constraint(report.summary()));
    }
    check_init(spec, y, lambda_init)?;
    let flat = pack_params(theta, spec)?;
    mean_path_unchecked(spec, &flat, y, lambda_init)
}

pub(crate) fn mean_path_unchecked(spec: &ModelSpec, flat: &[f64], y: &Series, lambda_init: &[f64]) -> Result<MeanPath> {
    let params = DenseParams::new(spec, flat);
    let n = params.n;
    let mut values = Vec::with_capacity(y.len() * n);
    walk_recursion(&params, y, lambda_init, false, |_, lam, _| values.extend_from_slice(lam))?;
    Ok(MeanPath { values, n })
}

/// Jacobians `∂λ_t/∂θ'` (each `n×m`, columns in packing order), with `J_1 = 0`.
pub fn mean_jacobian(spec: &ModelSpec, theta: &Theta, y: &Series, lambda_init: &[f64]) -> Result<Vec<DMatrix<f64>>> {
    let report = check_constraints(spec, theta);
    if !report.satisfied {
        return Err(Error::Constraint(report.summary()));
    }
    check_init(spec, y, lambda_init)?;
    let flat = pack_params(theta, spec)?;
    jacobians_unchecked(spec, &flat, y, lambda_init)
}

pub(crate) fn jacobians_unchecked(
    spec: &ModelSpec,
    flat: &[f64],
    y: &Series,
    lambda_init: &[f64],
) -> Result<Vec<DMatrix<f64>>> {
    let params = DenseParams::new(spec, flat);
    let (n, m) = (params.n, params.n_params());
    let mut out = Vec::with_capacity(y.len());
    walk_recursion(&params, y, lambda_init, true, |_, _, jac| {
        out.push(DMatrix::from_row_slice(n, m, jac));
    })?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub name: String,
    /// Positive when the constraint holds with room to spare.
    pub slack: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub satisfied: bool,
    pub checks: Vec<ConstraintCheck>,
}

impl ConstraintReport {
    pub fn summary(&self) -> String {
        let failed: Vec<String> = self
            .checks
            .iter()
            .filter(|c| !c.satisfied)
            .map(|c| format!("{} (slack {:.3e})", c.name, c.slack))
            .collect();
        if failed.is_empty() {
            "all constraints satisfied".into()
        } else {
            failed.join("; ")
        }
    }
}

fn min_entry(m: &DMatrix<f64>) -> f64 {
    m.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Evaluates the family-specific parameter constraints.
///
/// * count: `c > 0`, `A ≥ 0`, `B ≥ 0`;
/// * binary / categorical: the same sign conditions plus
///   `‖Σ_j (C_(j) + A_(j) + B_(j))‖_∞ < 1`, which keeps every probability in `(0, 1)`.
///
/// Strict inequalities require a slack above [`CONSTRAINT_SLACK`]; non-strict
/// ones tolerate `-CONSTRAINT_SLACK`.
pub fn check_constraints(spec: &ModelSpec, theta: &Theta) -> ConstraintReport {
    let n = spec.dim();
    let mut checks = Vec::new();
    if theta.c.len() != n || theta.a.shape() != (n, n) || theta.b.shape() != (n, n) {
        checks.push(ConstraintCheck { name: "shape".into(), slack: f64::NEG_INFINITY, satisfied: false });
        return ConstraintReport { satisfied: false, checks };
    }

    let c_min = theta.c.iter().copied().fold(f64::INFINITY, f64::min);
    checks.push(ConstraintCheck { name: "c > 0".into(), slack: c_min, satisfied: c_min > CONSTRAINT_SLACK });
    let a_min = min_entry(&theta.a);
    checks.push(ConstraintCheck { name: "A >= 0".into(), slack: a_min, satisfied: a_min >= -CONSTRAINT_SLACK });
    let b_min = min_entry(&theta.b);
    checks.push(ConstraintCheck { name: "B >= 0".into(), slack: b_min, satisfied: b_min >= -CONSTRAINT_SLACK });

    if spec.family.is_probability() {
        let norm = budget_norm(spec, theta);
        let slack = 1.0 - norm;
        checks.push(ConstraintCheck {
            name: "||C + A + B||_inf < 1".into(),
            slack,
            satisfied: slack > CONSTRAINT_SLACK,
        });
    }
    if pack_params(theta, spec).is_err() {
        checks.push(ConstraintCheck { name: "free pattern".into(), slack: f64::NEG_INFINITY, satisfied: false });
    }
    let satisfied = checks.iter().all(|c| c.satisfied);
    ConstraintReport { satisfied, checks }
}

/// `‖Σ_j (C_(j) + A_(j) + B_(j))‖_∞` summed over category blocks.
pub fn budget_norm(spec: &ModelSpec, theta: &Theta) -> f64 {
    let n = spec.dim();
    let d = spec.d;
    let q = spec.blocks();
    let mut best = 0.0_f64;
    for i in 0..d {
        let mut row = vec![0.0; d];
        row[i] += (0..q).map(|j| theta.c[j * d + i]).sum::<f64>();
        for blk in 0..q {
            let r = blk * d + i;
            for col in 0..n {
                let k = col % d;
                row[k] += theta.a[(r, col)] + theta.b[(r, col)];
            }
        }
        best = best.max(row.iter().map(|v| v.abs()).sum());
    }
    best
}

/// Fixed point `μ = (I - A - B)^{-1} c`.
pub fn stationary_mean(theta: &Theta) -> Result<DVector<f64>> {
    let n = theta.dim();
    let m = DMatrix::identity(n, n) - &theta.a - &theta.b;
    m.lu()
        .solve(&theta.c)
        .filter(|v| v.iter().all(|x| x.is_finite()))
        .ok_or_else(|| Error::Singular("I - A - B is not invertible".into()))
}
