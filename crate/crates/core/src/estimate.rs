//! Base-model estimation: log-likelihood, closed-form MLEs, observed
//! information and confidence intervals.
//!
//! Event counts per epoch follow a shifted Poisson `R = 1 + Poisson(mu)`, the
//! first running state is `RunOk` with probability `p`, and dwell times are
//! exponential with rate `lambda1` (`RunOk`) or `lambda2` (`RunAlert`). The
//! log-likelihood separates in the four parameters, so every MLE is a ratio
//! of sufficient statistics collected in [`SufficientStats`].

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::{classify_epoch, Dataset, EventType, Situation, SituationPartition};
use crate::simulate;

/// Base-model parameters `(lambda1, lambda2, mu, p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub lambda1: f64,
    pub lambda2: f64,
    pub mu: f64,
    pub p: f64,
}

impl ParamSet {
    pub fn new(lambda1: f64, lambda2: f64, mu: f64, p: f64) -> Result<Self> {
        let theta = Self { lambda1, lambda2, mu, p };
        theta.check()?;
        Ok(theta)
    }

    pub fn check(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite();
        if !(ok(self.lambda1) && self.lambda1 > 0.0) {
            return Err(Error::Domain(format!("lambda1 must be > 0, got {}", self.lambda1)));
        }
        if !(ok(self.lambda2) && self.lambda2 > 0.0) {
            return Err(Error::Domain(format!("lambda2 must be > 0, got {}", self.lambda2)));
        }
        if !(ok(self.mu) && self.mu >= 0.0) {
            return Err(Error::Domain(format!("mu must be >= 0, got {}", self.mu)));
        }
        if !(ok(self.p) && (0.0..=1.0).contains(&self.p)) {
            return Err(Error::Domain(format!("p must lie in [0, 1], got {}", self.p)));
        }
        Ok(())
    }

    pub fn get(&self, param: Param) -> f64 {
        match param {
            Param::Lambda1 => self.lambda1,
            Param::Lambda2 => self.lambda2,
            Param::P => self.p,
            Param::Mu => self.mu,
        }
    }
}

/// Parameter identifiers, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Param {
    Lambda1,
    Lambda2,
    P,
    Mu,
}

impl Param {
    pub const ALL: [Param; 4] = [Param::Lambda1, Param::Lambda2, Param::P, Param::Mu];

    pub fn name(self) -> &'static str {
        match self {
            Param::Lambda1 => "lambda1",
            Param::Lambda2 => "lambda2",
            Param::P => "p",
            Param::Mu => "mu",
        }
    }

    fn lower_bound(self) -> f64 {
        0.0
    }

    fn upper_bound(self) -> f64 {
        match self {
            Param::P => 1.0,
            _ => f64::INFINITY,
        }
    }
}

impl fmt::Display for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

/// Per-situation sums entering the log-likelihood.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SituationStats {
    pub epochs: usize,
    /// `sum (r_i - 1)`.
    pub excess_events: usize,
    /// `sum ln((r_i - 1)!)`.
    pub log_factorials: f64,
    pub ok_events: usize,
    pub alert_events: usize,
    pub ok_time: f64,
    pub alert_time: f64,
}

/// Sufficient statistics of the base model, grouped by situation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SufficientStats {
    pub by_situation: [SituationStats; 4],
    #[serde(skip)]
    current: Option<Situation>,
}

impl SufficientStats {
    pub fn from_dataset(d: &Dataset) -> Result<Self> {
        let mut stats = Self::default();
        for epoch in &d.epochs {
            let situation = classify_epoch(epoch)?;
            let r = epoch.event_count();
            stats.begin_epoch(situation, r);
            debug_assert_eq!(situation.kind_counts(r), epoch.kind_counts());
            for ev in epoch.running() {
                stats.add_duration(ev.kind, ev.duration);
            }
        }
        Ok(stats)
    }

    /// Opens an epoch with `r` running events; counts follow from the
    /// situation offsets, durations are added with [`Self::add_duration`].
    pub fn begin_epoch(&mut self, situation: Situation, r: usize) {
        let (n1, n2) = situation.kind_counts(r);
        let s = &mut self.by_situation[situation.index()];
        s.epochs += 1;
        s.excess_events += r - 1;
        s.log_factorials += log_factorial(r - 1);
        s.ok_events += n1;
        s.alert_events += n2;
        self.current = Some(situation);
    }

    pub fn add_duration(&mut self, kind: EventType, duration: f64) {
        let s = &mut self.by_situation[self.current.expect("begin_epoch not called").index()];
        match kind {
            EventType::RunOk => s.ok_time += duration,
            EventType::RunAlert => s.alert_time += duration,
            EventType::Fail => {}
        }
    }

    pub fn n(&self) -> usize {
        self.by_situation.iter().map(|s| s.epochs).sum()
    }

    pub fn counts(&self) -> [usize; 4] {
        [0, 1, 2, 3].map(|l| self.by_situation[l].epochs)
    }

    pub fn starts_ok(&self) -> usize {
        self.by_situation[0].epochs + self.by_situation[1].epochs
    }

    pub fn starts_alert(&self) -> usize {
        self.by_situation[2].epochs + self.by_situation[3].epochs
    }

    pub fn excess_events(&self) -> usize {
        self.by_situation.iter().map(|s| s.excess_events).sum()
    }

    pub fn ok_events(&self) -> usize {
        self.by_situation.iter().map(|s| s.ok_events).sum()
    }

    pub fn alert_events(&self) -> usize {
        self.by_situation.iter().map(|s| s.alert_events).sum()
    }

    pub fn ok_time(&self) -> f64 {
        self.by_situation.iter().map(|s| s.ok_time).sum()
    }

    pub fn alert_time(&self) -> f64 {
        self.by_situation.iter().map(|s| s.alert_time).sum()
    }

    pub fn estimates(&self) -> Estimates {
        let n = self.n() as f64;
        let rate = |count: usize, time: f64| (count > 0).then(|| count as f64 / time);
        Estimates {
            lambda1: rate(self.ok_events(), self.ok_time()),
            lambda2: rate(self.alert_events(), self.alert_time()),
            mu: self.excess_events() as f64 / n,
            p: self.starts_ok() as f64 / n,
        }
    }
}

pub(crate) fn log_factorial(k: usize) -> f64 {
    if k < 2 {
        0.0
    } else {
        ln_gamma(k as f64 + 1.0)
    }
}

/// `count * ln(x)` with the `0 * ln(0) = 0` convention.
fn xlogy(count: usize, x: f64) -> f64 {
    if count == 0 {
        0.0
    } else {
        count as f64 * x.ln()
    }
}

/// Log-likelihood of the base model, constants included.
///
/// Evaluated situation by situation and summed. Rate terms for an event kind
/// that never occurs vanish, so their parameter value is irrelevant.
pub fn log_likelihood(theta: &ParamSet, d: &Dataset) -> Result<f64> {
    theta.check()?;
    let stats = SufficientStats::from_dataset(d)?;
    log_likelihood_from_stats(theta, &stats)
}

pub fn log_likelihood_from_stats(theta: &ParamSet, stats: &SufficientStats) -> Result<f64> {
    theta.check()?;
    if theta.p == 0.0 && stats.starts_ok() > 0 {
        return Err(Error::Domain("p = 0 but some epochs start with RUN_OK".into()));
    }
    if theta.p == 1.0 && stats.starts_alert() > 0 {
        return Err(Error::Domain("p = 1 but some epochs start with RUN_ALERT".into()));
    }
    if theta.mu == 0.0 && stats.excess_events() > 0 {
        return Err(Error::Domain("mu = 0 but some epochs have more than one event".into()));
    }
    let mut total = 0.0;
    for situation in Situation::ALL {
        let s = &stats.by_situation[situation.index()];
        if s.epochs == 0 {
            continue;
        }
        let first = if situation.starts_ok() { theta.p } else { 1.0 - theta.p };
        total += -(s.epochs as f64) * theta.mu + xlogy(s.excess_events, theta.mu) - s.log_factorials
            + xlogy(s.epochs, first)
            + xlogy(s.ok_events, theta.lambda1)
            - theta.lambda1 * s.ok_time
            + xlogy(s.alert_events, theta.lambda2)
            - theta.lambda2 * s.alert_time;
    }
    Ok(total)
}

/// Closed-form MLEs. A rate whose event kind never occurs is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimates {
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub mu: f64,
    pub p: f64,
}

impl Estimates {
    pub fn get(&self, param: Param) -> Option<f64> {
        match param {
            Param::Lambda1 => self.lambda1,
            Param::Lambda2 => self.lambda2,
            Param::P => Some(self.p),
            Param::Mu => Some(self.mu),
        }
    }

    pub fn to_params(&self) -> Result<ParamSet> {
        let lambda1 = self.lambda1.ok_or(Error::NoEventsOfKind(EventType::RunOk))?;
        let lambda2 = self.lambda2.ok_or(Error::NoEventsOfKind(EventType::RunAlert))?;
        ParamSet::new(lambda1, lambda2, self.mu, self.p)
    }
}

/// Which observed information to use for `mu`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MuInformation {
    /// `sum (r_i - 1) / mu^2 = n / mu`, the negative second derivative.
    #[default]
    SecondDerivative,
    /// `n / (mu + 1)^2`, kept only to audit the alternative formula.
    ShiftedCount,
}

/// Observed Fisher information per parameter. Degenerate entries (boundary
/// estimates) are `+inf`; a missing rate is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Information {
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub mu: f64,
    pub p: f64,
}

impl Information {
    pub fn get(&self, param: Param) -> Option<f64> {
        match param {
            Param::Lambda1 => self.lambda1,
            Param::Lambda2 => self.lambda2,
            Param::P => Some(self.p),
            Param::Mu => Some(self.mu),
        }
    }

    /// `DegenerateInfo` for the first parameter whose information is not finite.
    pub fn ensure_finite(&self) -> Result<()> {
        for param in Param::ALL {
            if let Some(v) = self.get(param) {
                if !v.is_finite() {
                    return Err(Error::DegenerateInfo(param.name()));
                }
            }
        }
        Ok(())
    }

    pub fn std_error(&self, param: Param) -> Option<f64> {
        self.get(param).map(|i| 1.0 / i.sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub estimates: Estimates,
    pub information: Information,
    pub loglik: f64,
    pub partition: SituationPartition,
    pub stats: SufficientStats,
}

impl FitResult {
    pub fn n(&self) -> usize {
        self.stats.n()
    }
}

/// Fits the base model in closed form.
pub fn fit_mle(d: &Dataset) -> Result<FitResult> {
    let partition = crate::model::partition(d)?;
    let stats = SufficientStats::from_dataset(d)?;
    fit_from_stats(stats, partition)
}

pub(crate) fn fit_from_stats(stats: SufficientStats, partition: SituationPartition) -> Result<FitResult> {
    if stats.n() == 0 {
        return Err(Error::EmptyDataset);
    }
    let estimates = stats.estimates();
    let information = information_from_stats(&stats, &estimates, MuInformation::SecondDerivative);
    // Unobserved kinds drop out of the likelihood; any positive rate stands in.
    let theta = ParamSet {
        lambda1: estimates.lambda1.unwrap_or(1.0),
        lambda2: estimates.lambda2.unwrap_or(1.0),
        mu: estimates.mu,
        p: estimates.p,
    };
    let loglik = log_likelihood_from_stats(&theta, &stats)?;
    Ok(FitResult { estimates, information, loglik, partition, stats })
}

fn information_from_stats(stats: &SufficientStats, est: &Estimates, mode: MuInformation) -> Information {
    let n = stats.n() as f64;
    let rate_info = |count: usize, rate: Option<f64>| rate.map(|r| count as f64 / (r * r));
    let mu = match mode {
        MuInformation::SecondDerivative if est.mu > 0.0 => stats.excess_events() as f64 / (est.mu * est.mu),
        MuInformation::SecondDerivative => f64::INFINITY,
        MuInformation::ShiftedCount => n / ((est.mu + 1.0) * (est.mu + 1.0)),
    };
    let p = if est.p > 0.0 && est.p < 1.0 {
        stats.starts_ok() as f64 / (est.p * est.p) + stats.starts_alert() as f64 / ((1.0 - est.p) * (1.0 - est.p))
    } else {
        f64::INFINITY
    };
    Information {
        lambda1: rate_info(stats.ok_events(), est.lambda1),
        lambda2: rate_info(stats.alert_events(), est.lambda2),
        mu,
        p,
    }
}

/// Observed information at the MLE under the chosen `mu` formula.
pub fn observed_information(fit: &FitResult, mode: MuInformation) -> Information {
    information_from_stats(&fit.stats, &fit.estimates, mode)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntervalMethod {
    Asymptotic,
    Bootstrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    /// Confidence level `1 - alpha`.
    pub level: f64,
    pub method: IntervalMethod,
    /// Point interval caused by a boundary estimate.
    pub degenerate: bool,
}

impl ConfidenceInterval {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// One interval per parameter; rates without data have none.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamIntervals {
    pub lambda1: Option<ConfidenceInterval>,
    pub lambda2: Option<ConfidenceInterval>,
    pub p: Option<ConfidenceInterval>,
    pub mu: Option<ConfidenceInterval>,
}

impl ParamIntervals {
    pub fn get(&self, param: Param) -> Option<&ConfidenceInterval> {
        match param {
            Param::Lambda1 => self.lambda1.as_ref(),
            Param::Lambda2 => self.lambda2.as_ref(),
            Param::P => self.p.as_ref(),
            Param::Mu => self.mu.as_ref(),
        }
    }

    fn from_fn(mut f: impl FnMut(Param) -> Option<ConfidenceInterval>) -> Self {
        Self { lambda1: f(Param::Lambda1), lambda2: f(Param::Lambda2), p: f(Param::P), mu: f(Param::Mu) }
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// Upper `alpha/2` quantile of the standard normal.
pub fn z_quantile(alpha: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - alpha / 2.0)
}

/// Wald intervals `estimate ± z / sqrt(I)` clamped to each parameter's domain.
pub fn asymptotic_ci(fit: &FitResult, alpha: f64) -> Result<ParamIntervals> {
    asymptotic_ci_with(fit, alpha, MuInformation::SecondDerivative)
}

pub fn asymptotic_ci_with(fit: &FitResult, alpha: f64, mode: MuInformation) -> Result<ParamIntervals> {
    check_alpha(alpha)?;
    let info = observed_information(fit, mode);
    let z = z_quantile(alpha);
    Ok(ParamIntervals::from_fn(|param| {
        let est = fit.estimates.get(param)?;
        let i = info.get(param)?;
        let degenerate = !i.is_finite();
        if degenerate {
            log::warn!("{param}: estimate {est} lies on the boundary; asymptotic interval is a point");
        }
        let half = if degenerate { 0.0 } else { z / i.sqrt() };
        Some(ConfidenceInterval {
            lower: (est - half).max(param.lower_bound()),
            upper: (est + half).min(param.upper_bound()),
            level: 1.0 - alpha,
            method: IntervalMethod::Asymptotic,
            degenerate,
        })
    }))
}

/// 1-based order-statistic indices `(floor(M alpha/2), floor(M (1 - alpha/2)))`
/// clamped to `[1, M]`.
pub fn percentile_indices(m: usize, alpha: f64) -> (usize, usize) {
    let idx = |x: f64| ((x + 1e-9).floor() as usize).clamp(1, m.max(1));
    (idx(m as f64 * alpha / 2.0), idx(m as f64 * (1.0 - alpha / 2.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub intervals: ParamIntervals,
    pub replicates: usize,
    /// Replicates without any `RunOk` / `RunAlert` event, per rate.
    pub skipped_lambda1: usize,
    pub skipped_lambda2: usize,
    /// Replicate estimates in replicate order.
    pub estimates: Vec<Estimates>,
}

/// Parametric bootstrap percentile intervals.
///
/// Replicate `m` simulates `n` epochs from the fitted parameters with its own
/// generator ([`simulate::replicate_rng`]`(seed, m)`), refits in closed form and
/// the interval endpoints are order statistics of the replicate estimates.
pub fn bootstrap_ci(fit: &FitResult, n: usize, m: usize, alpha: f64, seed: u64) -> Result<BootstrapResult> {
    check_alpha(alpha)?;
    if m < 2 {
        return Err(Error::InvalidArgument(format!("bootstrap needs at least 2 replicates, got {m}")));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("bootstrap needs n >= 1".into()));
    }
    let theta = fit.estimates.to_params()?;
    let estimates: Vec<Estimates> = (0..m as u64)
        .into_par_iter()
        .map(|idx| {
            let mut rng = simulate::replicate_rng(seed, idx);
            simulate::sample_stats(&theta, n, &mut rng).estimates()
        })
        .collect();
    Ok(summarize_bootstrap(estimates, alpha))
}

pub(crate) fn summarize_bootstrap(estimates: Vec<Estimates>, alpha: f64) -> BootstrapResult {
    let mut skipped = [0usize; 2];
    let intervals = ParamIntervals::from_fn(|param| {
        let mut values: Vec<f64> = estimates.iter().filter_map(|e| e.get(param)).collect();
        match param {
            Param::Lambda1 => skipped[0] = estimates.len() - values.len(),
            Param::Lambda2 => skipped[1] = estimates.len() - values.len(),
            _ => {}
        }
        if values.is_empty() {
            return None;
        }
        values.sort_by(f64::total_cmp);
        let (lo, hi) = percentile_indices(values.len(), alpha);
        Some(ConfidenceInterval {
            lower: values[lo - 1],
            upper: values[hi - 1],
            level: 1.0 - alpha,
            method: IntervalMethod::Bootstrap,
            degenerate: false,
        })
    });
    if skipped.iter().any(|&s| s > 0) {
        log::warn!("bootstrap replicates lacking an event kind: lambda1 {}, lambda2 {}", skipped[0], skipped[1]);
    }
    BootstrapResult {
        intervals,
        replicates: estimates.len(),
        skipped_lambda1: skipped[0],
        skipped_lambda2: skipped[1],
        estimates,
    }
}
