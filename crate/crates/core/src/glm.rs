//! Log-link regression of `lambda1`, `lambda2` and `mu` on epoch-level
//! sensor covariates.
//!
//! The base log-likelihood separates into one component per target, and each
//! component has the same Poisson-like shape
//!
//! ```text
//! g(coef) = sum_i [ c_i * eta_i - w_i * exp(eta_i) ],   eta_i = b0 + sum_k F_ki b_k
//! ```
//!
//! where for `lambda1` the count `c_i` is the number of `RunOk` events and the
//! exposure `w_i` their total duration, for `lambda2` the same over `RunAlert`
//! events, and for `mu` the count is `r_i - 1` with unit exposure. The three
//! components are maximized independently with `p` held fixed.

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{classify_epoch, Dataset, Epoch, EventType};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GlmTarget {
    Lambda1,
    Lambda2,
    Mu,
}

impl GlmTarget {
    pub const ALL: [GlmTarget; 3] = [GlmTarget::Lambda1, GlmTarget::Lambda2, GlmTarget::Mu];

    pub fn name(self) -> &'static str {
        match self {
            GlmTarget::Lambda1 => "lambda1",
            GlmTarget::Lambda2 => "lambda2",
            GlmTarget::Mu => "mu",
        }
    }

    /// Whether readings of an event of this kind feed the target's covariates.
    pub fn uses(self, kind: EventType) -> bool {
        match self {
            GlmTarget::Lambda1 => kind == EventType::RunOk,
            GlmTarget::Lambda2 => kind == EventType::RunAlert,
            GlmTarget::Mu => kind.is_running(),
        }
    }

    /// `(count, exposure)` of one epoch for this target.
    pub fn epoch_counts(self, epoch: &Epoch) -> Result<(f64, f64)> {
        let situation = classify_epoch(epoch)?;
        let r = epoch.event_count();
        let (n1, n2) = situation.kind_counts(r);
        let time = |kind| epoch.running().filter(|e| e.kind == kind).map(|e| e.duration).sum::<f64>();
        Ok(match self {
            GlmTarget::Lambda1 => (n1 as f64, time(EventType::RunOk)),
            GlmTarget::Lambda2 => (n2 as f64, time(EventType::RunAlert)),
            GlmTarget::Mu => ((r - 1) as f64, 1.0),
        })
    }
}

impl fmt::Display for GlmTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for GlmTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lambda1" => Ok(GlmTarget::Lambda1),
            "lambda2" => Ok(GlmTarget::Lambda2),
            "mu" => Ok(GlmTarget::Mu),
            other => Err(Error::InvalidArgument(format!("unknown target `{other}` (lambda1 | lambda2 | mu)"))),
        }
    }
}

/// Epoch-level covariates, one optional row per epoch of the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariateMatrix {
    /// `None` when the epoch has no events feeding the target.
    pub rows: Vec<Option<Vec<f64>>>,
    pub column_names: Vec<String>,
    /// Per-column `(mean, sd)` over present rows.
    pub standardization: Vec<(f64, f64)>,
}

impl CovariateMatrix {
    pub fn from_rows(rows: Vec<Option<Vec<f64>>>, column_names: Vec<String>) -> Result<Self> {
        let m = column_names.len();
        for row in rows.iter().flatten() {
            if row.len() != m {
                return Err(Error::Alignment(format!("row has {} values for {m} columns", row.len())));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::Alignment("covariate values must be finite".into()));
            }
        }
        let standardization = column_stats(&rows, m);
        Ok(Self { rows, column_names, standardization })
    }

    pub fn n_columns(&self) -> usize {
        self.column_names.len()
    }

    pub fn absent_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.is_none()).count()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    /// Column index, or `UnknownCovariate` with the closest existing name.
    pub fn resolve(&self, name: &str) -> Result<usize> {
        self.column_index(name).ok_or_else(|| Error::UnknownCovariate {
            name: name.to_string(),
            suggestion: nearest_name(name, &self.column_names),
        })
    }

    /// Sub-matrix with the named columns in the given order.
    pub fn select<S: AsRef<str>>(&self, names: &[S]) -> Result<CovariateMatrix> {
        let idx: Vec<usize> = names.iter().map(|n| self.resolve(n.as_ref())).collect::<Result<_>>()?;
        Ok(self.select_indices(&idx))
    }

    pub fn select_indices(&self, idx: &[usize]) -> CovariateMatrix {
        CovariateMatrix {
            rows: self.rows.iter().map(|r| r.as_ref().map(|row| idx.iter().map(|&k| row[k]).collect())).collect(),
            column_names: idx.iter().map(|&k| self.column_names[k].clone()).collect(),
            standardization: idx.iter().map(|&k| self.standardization[k]).collect(),
        }
    }
}

fn column_stats(rows: &[Option<Vec<f64>>], m: usize) -> Vec<(f64, f64)> {
    let present: Vec<&Vec<f64>> = rows.iter().flatten().collect();
    let count = present.len() as f64;
    (0..m)
        .map(|k| {
            if present.is_empty() {
                return (0.0, 0.0);
            }
            let mean = present.iter().map(|r| r[k]).sum::<f64>() / count;
            let var = present.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / count;
            (mean, var.sqrt())
        })
        .collect()
}

pub(crate) fn nearest_name(name: &str, candidates: &[String]) -> Option<String> {
    candidates
        .iter()
        .map(|c| (strsim::levenshtein(name, c), c))
        .min_by_key(|(d, _)| *d)
        .filter(|(d, c)| *d <= (c.len().max(name.len()) / 2).max(2))
        .map(|(_, c)| c.clone())
}

/// Mean sensor readings over the events of `epoch` that feed `target`.
pub fn epoch_average(epoch: &Epoch, target: GlmTarget, m: usize) -> Option<Vec<f64>> {
    let mut sum = vec![0.0; m];
    let mut count = 0usize;
    for ev in epoch.running().filter(|e| target.uses(e.kind)) {
        for (s, x) in sum.iter_mut().zip(&ev.sensors) {
            *s += x;
        }
        count += 1;
    }
    (count > 0).then(|| sum.into_iter().map(|s| s / count as f64).collect())
}

/// Mean readings over every qualifying event in the dataset.
pub fn dataset_average(d: &Dataset, target: GlmTarget) -> Option<Vec<f64>> {
    let m = d.sensor_count();
    let mut sum = vec![0.0; m];
    let mut count = 0usize;
    for ev in d.epochs.iter().flat_map(|e| e.running()).filter(|e| target.uses(e.kind)) {
        for (s, x) in sum.iter_mut().zip(&ev.sensors) {
            *s += x;
        }
        count += 1;
    }
    (count > 0).then(|| sum.into_iter().map(|s| s / count as f64).collect())
}

/// Epoch-level covariates for `target`: the average of each sensor over
/// `RunOk` events (`lambda1`), `RunAlert` events (`lambda2`) or all running
/// events (`mu`).
pub fn epoch_covariates(d: &Dataset, target: GlmTarget) -> Result<CovariateMatrix> {
    if d.sensor_count() == 0 {
        return Err(Error::NoSensors);
    }
    let m = d.sensor_count();
    let rows: Vec<Option<Vec<f64>>> = d.epochs.iter().map(|e| epoch_average(e, target, m)).collect();
    let absent = rows.iter().filter(|r| r.is_none()).count();
    if absent > 0 {
        log::info!("{target}: {absent} epochs without qualifying events are excluded");
    }
    CovariateMatrix::from_rows(rows, d.sensor_names.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    pub column: String,
    pub aic: f64,
}

/// A fitted (or hand-specified) log-link model for one target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmModel {
    pub target: GlmTarget,
    pub fixed_p: f64,
    pub intercept: f64,
    /// Slopes on the original covariate scale, keyed by column name.
    pub coefficients: IndexMap<String, f64>,
    pub loglik: f64,
    pub aic: f64,
    #[serde(default)]
    pub trail: Vec<SelectionStep>,
}

impl GlmModel {
    /// Model with the given coefficients; `loglik`/`aic` are left as NaN.
    pub fn new(target: GlmTarget, intercept: f64, coefficients: IndexMap<String, f64>, fixed_p: f64) -> Self {
        Self { target, fixed_p, intercept, coefficients, loglik: f64::NAN, aic: f64::NAN, trail: Vec::new() }
    }

    pub fn intercept_only(target: GlmTarget, intercept: f64, fixed_p: f64) -> Self {
        Self::new(target, intercept, IndexMap::new(), fixed_p)
    }

    pub fn columns(&self) -> impl Iterator<Item = &str> + '_ {
        self.coefficients.keys().map(String::as_str)
    }

    /// Number of free parameters (intercept plus slopes).
    pub fn n_params(&self) -> usize {
        1 + self.coefficients.len()
    }

    /// `exp(intercept + sum coef_k * values_k)` with values in coefficient order.
    pub fn rate(&self, values: &[f64]) -> f64 {
        (self.intercept + self.coefficients.values().zip(values).map(|(b, x)| b * x).sum::<f64>()).exp()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    fn column_indices(&self, x: &CovariateMatrix) -> Result<Vec<usize>> {
        self.columns()
            .map(|c| {
                x.column_index(c).ok_or_else(|| Error::Alignment(format!("model column `{c}` missing from covariates")))
            })
            .collect()
    }
}

/// Per-epoch `(count, exposure, row)` for present rows.
struct TargetData {
    counts: Vec<f64>,
    exposure: Vec<f64>,
    rows: Vec<Vec<f64>>,
}

impl TargetData {
    fn gather(d: &Dataset, x: &CovariateMatrix, target: GlmTarget, idx: &[usize]) -> Result<Self> {
        if x.rows.len() != d.n() {
            return Err(Error::Alignment(format!("{} covariate rows for {} epochs", x.rows.len(), d.n())));
        }
        let mut out = TargetData { counts: Vec::new(), exposure: Vec::new(), rows: Vec::new() };
        for (epoch, row) in d.epochs.iter().zip(&x.rows) {
            let (c, w) = target.epoch_counts(epoch)?;
            match row {
                Some(row) => {
                    out.counts.push(c);
                    out.exposure.push(w);
                    out.rows.push(idx.iter().map(|&k| row[k]).collect());
                }
                None if c > 0.0 => {
                    return Err(Error::Alignment(format!("epoch {} has events but no covariate row", epoch.id)));
                }
                None => {}
            }
        }
        Ok(out)
    }

    fn len(&self) -> usize {
        self.counts.len()
    }
}

fn eta(intercept: f64, coefs: &[f64], row: &[f64]) -> f64 {
    intercept + coefs.iter().zip(row).map(|(b, x)| b * x).sum::<f64>()
}

/// The target's component of the log-likelihood at the model's coefficients.
/// Parameter-free terms (the `-ln((r-1)!)` sum for `mu`) are left out.
pub fn glm_log_likelihood(model: &GlmModel, d: &Dataset, x: &CovariateMatrix) -> Result<f64> {
    let idx = model.column_indices(x)?;
    let data = TargetData::gather(d, x, model.target, &idx)?;
    let coefs: Vec<f64> = model.coefficients.values().copied().collect();
    Ok((0..data.len())
        .map(|i| {
            let e = eta(model.intercept, &coefs, &data.rows[i]);
            data.counts[i] * e - data.exposure[i] * e.exp()
        })
        .sum())
}

/// Analytic gradient in `(intercept, coefficients...)`, original scale.
pub fn glm_gradient(model: &GlmModel, d: &Dataset, x: &CovariateMatrix) -> Result<Vec<f64>> {
    let idx = model.column_indices(x)?;
    let data = TargetData::gather(d, x, model.target, &idx)?;
    let coefs: Vec<f64> = model.coefficients.values().copied().collect();
    let mut grad = vec![0.0; 1 + coefs.len()];
    for i in 0..data.len() {
        let row = &data.rows[i];
        let resid = data.counts[i] - data.exposure[i] * eta(model.intercept, &coefs, row).exp();
        grad[0] += resid;
        for (g, xk) in grad[1..].iter_mut().zip(row) {
            *g += resid * xk;
        }
    }
    Ok(grad)
}

/// Diagonal of the Hessian; every entry is non-positive (concavity check).
pub fn hessian_diagonal(model: &GlmModel, d: &Dataset, x: &CovariateMatrix) -> Result<Vec<f64>> {
    let idx = model.column_indices(x)?;
    let data = TargetData::gather(d, x, model.target, &idx)?;
    let coefs: Vec<f64> = model.coefficients.values().copied().collect();
    let mut diag = vec![0.0; 1 + coefs.len()];
    for i in 0..data.len() {
        let row = &data.rows[i];
        let weight = data.exposure[i] * eta(model.intercept, &coefs, row).exp();
        diag[0] -= weight;
        for (h, xk) in diag[1..].iter_mut().zip(row) {
            *h -= weight * xk * xk;
        }
    }
    Ok(diag)
}

/// Optimizer settings for [`fit_glm_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Max-norm of the gradient in standardized coordinates.
    pub gradient_tol: f64,
    /// Relative loglik change that ends the fit once steps no longer gain
    /// anything beyond rounding.
    pub relative_tol: f64,
    /// Fit on standardized covariates (recommended) or the raw ones.
    pub standardize: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { max_iterations: 500, gradient_tol: 1e-8, relative_tol: 1e-12, standardize: true }
    }
}

/// Maximizes the target component over all columns of `x`.
pub fn fit_glm(d: &Dataset, x: &CovariateMatrix, target: GlmTarget, fixed_p: f64) -> Result<GlmModel> {
    fit_glm_with(d, x, target, fixed_p, FitOptions::default())
}

pub fn fit_glm_with(
    d: &Dataset,
    x: &CovariateMatrix,
    target: GlmTarget,
    fixed_p: f64,
    opts: FitOptions,
) -> Result<GlmModel> {
    if !(0.0..=1.0).contains(&fixed_p) {
        return Err(Error::Domain(format!("fixed p must lie in [0, 1], got {fixed_p}")));
    }
    let all: Vec<usize> = (0..x.n_columns()).collect();
    let data = TargetData::gather(d, x, target, &all)?;

    // Constant columns carry no information once the intercept is free.
    let stats = column_stats(&data.rows.iter().cloned().map(Some).collect::<Vec<_>>(), all.len());
    let mut keep = Vec::new();
    for (k, &(mean, sd)) in stats.iter().enumerate() {
        if sd > 1e-12 * mean.abs().max(1.0) {
            keep.push(k);
        } else {
            log::warn!("{target}: dropping constant covariate `{}`", x.column_names[k]);
        }
    }
    if data.len() <= 1 + keep.len() {
        log::warn!("{target}: {} usable epochs for {} parameters", data.len(), 1 + keep.len());
    }
    let total_count: f64 = data.counts.iter().sum();
    let total_exposure: f64 = data.exposure.iter().sum();
    if total_count <= 0.0 || total_exposure <= 0.0 {
        return Err(Error::DegenerateTarget);
    }

    let (center, scale): (Vec<f64>, Vec<f64>) =
        keep.iter().map(|&k| if opts.standardize { stats[k] } else { (0.0, 1.0) }).unzip();
    let z: Vec<Vec<f64>> = data
        .rows
        .iter()
        .map(|row| keep.iter().enumerate().map(|(j, &k)| (row[k] - center[j]) / scale[j]).collect())
        .collect();

    let collinear = collinear_columns(&z, keep.len());
    if !collinear.is_empty() {
        return Err(Error::RankDeficient(collinear.iter().map(|&j| x.column_names[keep[j]].clone()).collect()));
    }

    let objective = Objective { counts: &data.counts, exposure: &data.exposure, z: &z };
    let mut start = DVector::zeros(1 + keep.len());
    start[0] = (total_count / total_exposure).ln();
    // The convergence test always reads the gradient in standardized units.
    let units: Vec<(f64, f64)> = keep.iter().map(|&k| if opts.standardize { (0.0, 1.0) } else { stats[k] }).collect();
    let solution = maximize_bfgs(&objective, start, total_count, &units, opts)?;

    let slopes: Vec<f64> = (0..keep.len()).map(|j| solution[1 + j] / scale[j]).collect();
    let intercept = solution[0] - slopes.iter().zip(&center).map(|(b, m)| b * m).sum::<f64>();
    let coefficients: IndexMap<String, f64> =
        keep.iter().zip(&slopes).map(|(&k, &b)| (x.column_names[k].clone(), b)).collect();
    let mut model = GlmModel::new(target, intercept, coefficients, fixed_p);
    model.loglik = glm_log_likelihood(&model, d, x)?;
    model.aic = 2.0 * model.n_params() as f64 - 2.0 * model.loglik;
    Ok(model)
}

/// Columns (0-based among the slopes) that are linear combinations of the
/// intercept and earlier columns, by Gram-Schmidt in column order.
fn collinear_columns(z: &[Vec<f64>], m: usize) -> Vec<usize> {
    let n = z.len();
    let mut basis: Vec<Vec<f64>> = vec![vec![1.0 / (n as f64).sqrt(); n]];
    let mut bad = Vec::new();
    for k in 0..m {
        let mut v: Vec<f64> = z.iter().map(|r| r[k]).collect();
        let norm0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for _ in 0..2 {
            for q in &basis {
                let dot: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= 1e-8 * norm0.max(f64::MIN_POSITIVE) {
            bad.push(k);
        } else {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    bad
}

struct Objective<'a> {
    counts: &'a [f64],
    exposure: &'a [f64],
    z: &'a [Vec<f64>],
}

impl Objective<'_> {
    /// Log-likelihood and its gradient.
    fn eval(&self, theta: &DVector<f64>) -> (f64, DVector<f64>) {
        let slopes = &theta.as_slice()[1..];
        let mut value = 0.0;
        let mut grad = DVector::zeros(theta.len());
        for i in 0..self.counts.len() {
            let row = &self.z[i];
            let e = eta(theta[0], slopes, row);
            let mean = self.exposure[i] * e.exp();
            value += self.counts[i] * e - mean;
            let resid = self.counts[i] - mean;
            grad[0] += resid;
            for (k, xk) in row.iter().enumerate() {
                grad[1 + k] += resid * xk;
            }
        }
        (value, grad)
    }
}

/// BFGS ascent with a backtracking sufficient-increase line search.
fn maximize_bfgs(
    obj: &Objective<'_>,
    start: DVector<f64>,
    scale: f64,
    units: &[(f64, f64)],
    opts: FitOptions,
) -> Result<DVector<f64>> {
    let dim = start.len();
    let h0 = DMatrix::identity(dim, dim) / scale;
    let mut h = h0.clone();
    let mut x = start;
    let (mut f, mut g) = obj.eval(&x);
    let grad_norm = |g: &DVector<f64>| {
        let slopes = units.iter().enumerate().map(|(j, (mean, sd))| (sd * (g[1 + j] - mean * g[0])).abs());
        slopes.fold(g[0].abs(), f64::max)
    };
    let mut stalled = 0;
    for _ in 0..opts.max_iterations {
        if grad_norm(&g) < opts.gradient_tol {
            return Ok(x);
        }
        let mut dir = &h * &g;
        let mut slope = g.dot(&dir);
        if slope.is_nan() || slope <= 0.0 {
            h = h0.clone();
            dir = &h * &g;
            slope = g.dot(&dir);
        }
        // Allow for rounding in f when the expected increase is tiny.
        let noise = 8.0 * f64::EPSILON * f.abs();
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &x + &dir * step;
            let (fc, gc) = obj.eval(&cand);
            if fc.is_finite() && fc >= f + 1e-4 * step * slope - noise {
                accepted = Some((cand, fc, gc));
                break;
            }
            step *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            if grad_norm(&g) < opts.gradient_tol.sqrt() {
                return Ok(x);
            }
            return Err(Error::NotConverged { iterations: opts.max_iterations, gradient_norm: grad_norm(&g) });
        };
        // Maximizing f is minimizing -f: s = dx, y = -(g_new - g).
        let s = &x_new - &x;
        let y = &g - &g_new;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let hy = &h * &y;
            let yhy = y.dot(&hy);
            h += (&s * s.transpose()) * ((1.0 + rho * yhy) * rho) - (&hy * s.transpose() + &s * hy.transpose()) * rho;
        }
        let rel_change = (f_new - f).abs() / f.abs().max(1.0);
        stalled = if f_new <= f + noise { stalled + 1 } else { 0 };
        x = x_new;
        f = f_new;
        g = g_new;
        if rel_change < opts.relative_tol && stalled >= 3 {
            return Ok(x);
        }
    }
    if grad_norm(&g) < opts.gradient_tol {
        return Ok(x);
    }
    Err(Error::NotConverged { iterations: opts.max_iterations, gradient_norm: grad_norm(&g) })
}

/// Result of forward selection: the final model (with its trail) and notes
/// on candidate fits that failed.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub model: GlmModel,
    pub notes: Vec<String>,
}

/// Greedy forward selection by AIC, starting from the intercept-only model.
pub fn forward_select(d: &Dataset, x: &CovariateMatrix, target: GlmTarget, fixed_p: f64) -> Result<Selection> {
    let mut chosen: Vec<usize> = Vec::new();
    let mut current = fit_glm(d, &x.select_indices(&[]), target, fixed_p)?;
    let mut trail = Vec::new();
    let mut notes = Vec::new();
    loop {
        let candidates: Vec<usize> = (0..x.n_columns()).filter(|k| !chosen.contains(k)).collect();
        if candidates.is_empty() {
            break;
        }
        let fits: Vec<(usize, Result<GlmModel>)> = candidates
            .par_iter()
            .map(|&k| {
                let mut cols = chosen.clone();
                cols.push(k);
                (k, fit_glm(d, &x.select_indices(&cols), target, fixed_p))
            })
            .collect();
        let mut best: Option<(usize, GlmModel)> = None;
        for (k, fit) in fits {
            match fit {
                Ok(model) => {
                    if best.as_ref().is_none_or(|(_, b)| model.aic < b.aic) {
                        best = Some((k, model));
                    }
                }
                Err(e) => notes.push(format!("candidate `{}` skipped: {e}", x.column_names[k])),
            }
        }
        match best {
            Some((k, model)) if model.aic < current.aic => {
                chosen.push(k);
                trail.push(SelectionStep { column: x.column_names[k].clone(), aic: model.aic });
                current = model;
            }
            _ => break,
        }
    }
    current.trail = trail;
    Ok(Selection { model: current, notes })
}
