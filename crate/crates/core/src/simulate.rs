//! Seedable samplers for the generative model and the Monte-Carlo
//! sensitivity study (bias, MSE, average intervals, coverage).

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::estimate::{
    asymptotic_ci, bootstrap_ci, fit_from_stats, ConfidenceInterval, Param, ParamSet, SufficientStats,
};
use crate::model::{Dataset, Epoch, Event, EventType, Situation, SituationPartition};

/// Generator for replicate `index` of a run seeded with `seed`.
///
/// ChaCha with the replicate index as stream id: each replicate owns an
/// independent stream, so results do not depend on evaluation order.
pub fn replicate_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for a nested run (e.g. the bootstrap inside study replicate `index`).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index.wrapping_add(0x5eed)))
}

/// Poisson variate: inversion below 30, PTRS (transformed rejection with
/// squeeze) above.
pub fn sample_poisson<R: Rng + ?Sized>(mu: f64, rng: &mut R) -> u64 {
    if mu <= 0.0 {
        0
    } else if mu < 30.0 {
        poisson_inversion(mu, rng)
    } else {
        poisson_ptrs(mu, rng)
    }
}

fn poisson_inversion<R: Rng + ?Sized>(mu: f64, rng: &mut R) -> u64 {
    let mut u: f64 = rng.random();
    let mut k = 0u64;
    let mut prob = (-mu).exp();
    // Cap guards against u landing in the rounding gap of the cdf tail.
    while u > prob && k < 1000 {
        u -= prob;
        k += 1;
        prob *= mu / k as f64;
    }
    k
}

fn poisson_ptrs<R: Rng + ?Sized>(mu: f64, rng: &mut R) -> u64 {
    let log_mu = mu.ln();
    let smu = mu.sqrt();
    let b = 0.931 + 2.53 * smu;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let v_r = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + mu + 0.43).floor();
        if us >= 0.07 && v <= v_r {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        if v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln() <= -mu + k * log_mu - ln_gamma(k + 1.0) {
            return k as u64;
        }
    }
}

fn sample_exponential<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    loop {
        let e: f64 = rng.sample(Exp1);
        if e > 0.0 {
            return e / rate;
        }
    }
}

/// Receives one sampled epoch: header first, then durations in order.
trait EpochSink {
    fn begin(&mut self, first: EventType, r: usize);
    fn event(&mut self, kind: EventType, duration: f64);
}

/// Shared draw order for every sampler: count, first state, durations.
fn draw_epoch<R: Rng + ?Sized, S: EpochSink>(theta: &ParamSet, rng: &mut R, sink: &mut S) {
    let r = 1 + sample_poisson(theta.mu, rng) as usize;
    let first = if rng.random::<f64>() < theta.p { EventType::RunOk } else { EventType::RunAlert };
    sink.begin(first, r);
    let mut kind = first;
    for _ in 0..r {
        let rate = if kind == EventType::RunOk { theta.lambda1 } else { theta.lambda2 };
        sink.event(kind, sample_exponential(rate, rng));
        kind = kind.flip();
    }
}

struct EventsSink(Vec<Event>);

impl EpochSink for EventsSink {
    fn begin(&mut self, _first: EventType, r: usize) {
        self.0.reserve(r + 1);
    }

    fn event(&mut self, kind: EventType, duration: f64) {
        self.0.push(Event::new(kind, duration, Vec::new()));
    }
}

impl EpochSink for SufficientStats {
    fn begin(&mut self, first: EventType, r: usize) {
        self.begin_epoch(Situation::from_parts(first, r), r);
    }

    fn event(&mut self, kind: EventType, duration: f64) {
        self.add_duration(kind, duration);
    }
}

/// One epoch: `r ~ 1 + Poisson(mu)`, first state `RunOk` with probability
/// `p`, alternating exponential dwell times, closed by a failure.
pub fn sample_epoch<R: Rng + ?Sized>(theta: &ParamSet, rng: &mut R) -> Epoch {
    let mut sink = EventsSink(Vec::new());
    draw_epoch(theta, rng, &mut sink);
    let mut events = sink.0;
    events.push(Event::fail());
    Epoch::new(0, events)
}

/// `n` epochs with ids `1..=n`, deterministic in `seed`.
pub fn generate_dataset(theta: &ParamSet, n: usize, seed: u64) -> Result<Dataset> {
    theta.check()?;
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let mut rng = replicate_rng(seed, 0);
    Ok(generate_with(theta, n, &mut rng))
}

pub fn generate_with<R: Rng + ?Sized>(theta: &ParamSet, n: usize, rng: &mut R) -> Dataset {
    let epochs = (1..=n as u64)
        .map(|id| {
            let mut e = sample_epoch(theta, rng);
            e.id = id;
            e
        })
        .collect();
    Dataset { epochs, sensor_names: Vec::new() }
}

/// Known log-link effects for simulating sensor-driven data. Each target is
/// `(intercept, slopes)` with one slope per sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateDesign {
    pub sensor_names: Vec<String>,
    /// Mean and standard deviation of each sensor's per-epoch reading.
    pub sensor_moments: Vec<(f64, f64)>,
    pub lambda1: (f64, Vec<f64>),
    pub lambda2: (f64, Vec<f64>),
    pub mu: (f64, Vec<f64>),
    pub p: f64,
}

impl CovariateDesign {
    /// Sensors without any effect: every epoch follows `theta`.
    pub fn inert(theta: &ParamSet, sensor_names: Vec<String>, sensor_moments: Vec<(f64, f64)>) -> Self {
        let zeros = vec![0.0; sensor_names.len()];
        Self {
            sensor_names,
            sensor_moments,
            lambda1: (theta.lambda1.ln(), zeros.clone()),
            lambda2: (theta.lambda2.ln(), zeros.clone()),
            mu: (theta.mu.ln(), zeros),
            p: theta.p,
        }
    }

    /// Epoch parameters for the given readings.
    pub fn theta_for(&self, readings: &[f64]) -> Result<ParamSet> {
        let rate = |(b0, b): &(f64, Vec<f64>)| (b0 + b.iter().zip(readings).map(|(b, x)| b * x).sum::<f64>()).exp();
        ParamSet::new(rate(&self.lambda1), rate(&self.lambda2), rate(&self.mu), self.p)
    }

    fn check(&self) -> Result<()> {
        let m = self.sensor_names.len();
        let ok = self.sensor_moments.len() == m
            && [&self.lambda1, &self.lambda2, &self.mu].iter().all(|(_, b)| b.len() == m)
            && self.sensor_moments.iter().all(|(mean, sd)| mean.is_finite() && sd.is_finite() && *sd >= 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("covariate design needs {m} finite moments and slopes per target")))
        }
    }
}

/// `n` epochs whose readings are drawn per epoch from independent normals
/// and held constant across the epoch's running events; the epoch's rates
/// follow `design`.
pub fn generate_with_covariates(design: &CovariateDesign, n: usize, seed: u64) -> Result<Dataset> {
    design.check()?;
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let mut rng = replicate_rng(seed, 0);
    let mut epochs = Vec::with_capacity(n);
    for id in 1..=n as u64 {
        let readings: Vec<f64> =
            design.sensor_moments.iter().map(|(mean, sd)| mean + sd * rng.sample::<f64, _>(StandardNormal)).collect();
        let theta = design.theta_for(&readings)?;
        let mut epoch = sample_epoch(&theta, &mut rng);
        epoch.id = id;
        for ev in epoch.events.iter_mut().filter(|e| e.kind.is_running()) {
            ev.sensors = readings.clone();
        }
        epochs.push(epoch);
    }
    Dataset::new(epochs, design.sensor_names.clone())
}

/// Sufficient statistics of `n` simulated epochs, drawing exactly the same
/// variates as [`generate_with`] and accumulating them in the same order.
pub fn sample_stats<R: Rng + ?Sized>(theta: &ParamSet, n: usize, rng: &mut R) -> SufficientStats {
    let mut stats = SufficientStats::default();
    for _ in 0..n {
        draw_epoch(theta, rng, &mut stats);
    }
    stats
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub theta: ParamSet,
    pub n_epochs: usize,
    pub replications: usize,
    /// Bootstrap replicates per dataset; 0 skips the bootstrap columns.
    pub bootstrap_m: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl StudyConfig {
    pub fn new(theta: ParamSet, n_epochs: usize, seed: u64) -> Self {
        Self { theta, n_epochs, replications: 1000, bootstrap_m: 2000, alpha: 0.05, seed }
    }
}

/// Aggregates for one parameter at one epoch count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub parameter: Param,
    pub n: usize,
    /// Mean absolute deviation from the truth.
    pub avg_bias: f64,
    pub mse: f64,
    pub asym: (f64, f64),
    pub boot: Option<(f64, f64)>,
    pub cov_asym: f64,
    pub cov_boot: Option<f64>,
    /// Replicates that contributed (an absent rate estimate is skipped).
    pub used: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub rows: Vec<StudyRow>,
}

impl StudyReport {
    pub fn row(&self, param: Param) -> &StudyRow {
        self.rows.iter().find(|r| r.parameter == param).expect("all parameters reported")
    }
}

struct ReplicateOutcome {
    estimates: [Option<f64>; 4],
    asym: [Option<ConfidenceInterval>; 4],
    boot: [Option<ConfidenceInterval>; 4],
}

fn run_replicate(cfg: &StudyConfig, index: u64) -> Result<ReplicateOutcome> {
    let mut rng = replicate_rng(cfg.seed, index);
    let stats = sample_stats(&cfg.theta, cfg.n_epochs, &mut rng);
    let partition = SituationPartition { assignment: Default::default(), counts: stats.counts() };
    let fit = fit_from_stats(stats, partition)?;
    let asym = asymptotic_ci(&fit, cfg.alpha)?;
    let boot = if cfg.bootstrap_m > 0 && fit.estimates.to_params().is_ok() {
        Some(bootstrap_ci(&fit, cfg.n_epochs, cfg.bootstrap_m, cfg.alpha, derive_seed(cfg.seed, index))?.intervals)
    } else {
        None
    };
    Ok(ReplicateOutcome {
        estimates: Param::ALL.map(|p| fit.estimates.get(p)),
        asym: Param::ALL.map(|p| asym.get(p).copied()),
        boot: Param::ALL.map(|p| boot.as_ref().and_then(|b| b.get(p).copied())),
    })
}

/// Simulates `replications` datasets, fits each and aggregates per parameter.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyReport> {
    cfg.theta.check()?;
    if cfg.replications == 0 || cfg.n_epochs == 0 {
        return Err(Error::InvalidArgument("replications and n_epochs must be >= 1".into()));
    }
    if cfg.bootstrap_m == 1 {
        return Err(Error::InvalidArgument("bootstrap_m must be 0 or >= 2".into()));
    }
    let outcomes: Vec<ReplicateOutcome> =
        (0..cfg.replications as u64).into_par_iter().map(|i| run_replicate(cfg, i)).collect::<Result<_>>()?;

    let rows = Param::ALL
        .iter()
        .enumerate()
        .map(|(k, &param)| {
            let truth = cfg.theta.get(param);
            let (mut abs, mut sq, mut used) = (0.0, 0.0, 0usize);
            let (mut alo, mut ahi, mut acov) = (0.0, 0.0, 0usize);
            let (mut blo, mut bhi, mut bcov, mut bused) = (0.0, 0.0, 0usize, 0usize);
            for o in &outcomes {
                let Some(est) = o.estimates[k] else { continue };
                used += 1;
                abs += (est - truth).abs();
                sq += (est - truth) * (est - truth);
                if let Some(ci) = o.asym[k] {
                    alo += ci.lower;
                    ahi += ci.upper;
                    acov += ci.contains(truth) as usize;
                }
                if let Some(ci) = o.boot[k] {
                    bused += 1;
                    blo += ci.lower;
                    bhi += ci.upper;
                    bcov += ci.contains(truth) as usize;
                }
            }
            let mean = |s: f64, c: usize| if c == 0 { f64::NAN } else { s / c as f64 };
            StudyRow {
                parameter: param,
                n: cfg.n_epochs,
                avg_bias: mean(abs, used),
                mse: mean(sq, used),
                asym: (mean(alo, used), mean(ahi, used)),
                boot: (bused > 0).then(|| (blo / bused as f64, bhi / bused as f64)),
                cov_asym: mean(acov as f64, used),
                cov_boot: (bused > 0).then(|| bcov as f64 / bused as f64),
                used,
                skipped: outcomes.len() - used,
            }
        })
        .collect();
    Ok(StudyReport { config: cfg.clone(), rows })
}

pub const STUDY_CSV_HEADER: [&str; 10] =
    ["parameter", "n", "avg_bias", "mse", "asym_lo", "asym_hi", "boot_lo", "boot_hi", "cov_asym", "cov_boot"];

/// Writes study rows as CSV, one row per parameter per `n`.
pub fn write_study_csv<W: Write>(rows: &[StudyRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(STUDY_CSV_HEADER)?;
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.parameter.name().to_string(),
            r.n.to_string(),
            r.avg_bias.to_string(),
            r.mse.to_string(),
            r.asym.0.to_string(),
            r.asym.1.to_string(),
            opt(r.boot.map(|b| b.0)),
            opt(r.boot.map(|b| b.1)),
            r.cov_asym.to_string(),
            opt(r.cov_boot),
        ])?;
    }
    w.flush()?;
    Ok(())
}
