//! Command-line front end. The `epochttf` binary only calls [`run`].

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimate::{
    asymptotic_ci_with, bootstrap_ci, fit_mle, BootstrapResult, MuInformation, Param, ParamIntervals, ParamSet,
};
use crate::glm::{epoch_covariates, fit_glm, forward_select, GlmModel, GlmTarget};
use crate::io::{ingest, open, write_event_log, CensoredPolicy, Ingested};
use crate::predict::{
    align_actual, predict_all, predict_out_of_sample, prediction_metrics, read_predicted, write_predictions_csv,
    PredictionModels,
};
use crate::simulate::{derive_seed, generate_dataset, run_study, write_study_csv, StudyConfig};

#[derive(Debug, Parser)]
#[command(name = "epochttf", version, about = "Epoch-based time-to-failure estimation and prediction")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Significance level; intervals have level 1 - alpha.
    #[arg(long, global = true, default_value_t = 0.05)]
    pub alpha: f64,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Report format (default: json for models, csv otherwise).
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Accept a final epoch without FAIL and exclude it.
    #[arg(long, global = true)]
    pub allow_censored: bool,
    /// Accept a final epoch without FAIL and treat it as complete.
    #[arg(long, global = true, conflicts_with = "allow_censored")]
    pub include_censored: bool,
}

impl Global {
    fn policy(&self) -> CensoredPolicy {
        if self.include_censored {
            CensoredPolicy::IncludeAsComplete
        } else if self.allow_censored {
            CensoredPolicy::Exclude
        } else {
            CensoredPolicy::Reject
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MuInfoArg {
    SecondDerivative,
    ShiftedCount,
}

impl From<MuInfoArg> for MuInformation {
    fn from(a: MuInfoArg) -> Self {
        match a {
            MuInfoArg::SecondDerivative => MuInformation::SecondDerivative,
            MuInfoArg::ShiftedCount => MuInformation::ShiftedCount,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    Lambda1,
    Lambda2,
    Mu,
}

impl From<TargetArg> for GlmTarget {
    fn from(a: TargetArg) -> Self {
        match a {
            TargetArg::Lambda1 => GlmTarget::Lambda1,
            TargetArg::Lambda2 => GlmTarget::Lambda2,
            TargetArg::Mu => GlmTarget::Mu,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form estimates with asymptotic (and optional bootstrap) intervals.
    Fit {
        #[arg(long)]
        input: PathBuf,
        /// Bootstrap replicates; 0 omits the bootstrap columns.
        #[arg(long, default_value_t = 0)]
        bootstrap: usize,
        #[arg(long, value_enum, default_value_t = MuInfoArg::SecondDerivative)]
        mu_info: MuInfoArg,
    },
    /// Simulate an event log from lambda1,lambda2,p,mu.
    Simulate {
        #[arg(long, value_parser = parse_theta)]
        theta: ParamSet,
        #[arg(long)]
        n: usize,
    },
    /// Monte-Carlo study of bias, MSE, interval averages and coverage.
    Study {
        #[arg(long, value_parser = parse_theta)]
        theta: ParamSet,
        /// Comma-separated epoch counts.
        #[arg(long, value_delimiter = ',', required = true)]
        n: Vec<usize>,
        #[arg(long, default_value_t = 1000)]
        replications: usize,
        /// Bootstrap replicates per dataset; 0 skips the bootstrap columns.
        #[arg(long, default_value_t = 2000)]
        bootstrap_m: usize,
    },
    /// Parametric bootstrap percentile intervals.
    Bootstrap {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 2000)]
        m: usize,
        /// Also write every replicate's estimates as CSV.
        #[arg(long)]
        replicates: Option<PathBuf>,
    },
    /// Fit one log-link model on the named covariates.
    Glm(GlmArgs),
    /// Forward selection by AIC.
    Select(GlmArgs),
    /// Expected time to failure for every epoch, plus an out-of-sample row.
    Predict {
        #[arg(long)]
        input: PathBuf,
        /// Model JSON files; a missing model is replaced by the base-model rate.
        #[arg(long)]
        lambda1_model: Option<PathBuf>,
        #[arg(long)]
        lambda2_model: Option<PathBuf>,
        #[arg(long)]
        mu_model: Option<PathBuf>,
        /// Defaults to the models' fixed p, else the estimate from the input.
        #[arg(long)]
        fixed_p: Option<f64>,
    },
    /// Prediction error of a predictions file against realized durations.
    Metrics {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        predicted: PathBuf,
    },
}

#[derive(Debug, Clone, Args)]
pub struct GlmArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub target: TargetArg,
    /// Comma-separated covariate names (all sensors when omitted).
    #[arg(long)]
    pub covariates: Option<String>,
    #[arg(long, default_value_t = 0.7778)]
    pub fixed_p: f64,
}

fn parse_theta(s: &str) -> std::result::Result<ParamSet, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|_| format!("invalid number `{x}`")))
        .collect::<std::result::Result<_, _>>()?;
    let [l1, l2, p, mu] = parts[..] else {
        return Err("expected lambda1,lambda2,p,mu".into());
    };
    ParamSet::new(l1, l2, mu, p).map_err(|e| e.to_string())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli, &mut io::stdout().lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command, writing the report to `--output` or `stdout`.
pub fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    let mut buf = Vec::new();
    dispatch(cli, &mut buf)?;
    match &cli.global.output {
        Some(path) => File::create(path)?.write_all(&buf)?,
        None => stdout.write_all(&buf)?,
    }
    Ok(())
}

fn load(path: &Path, g: &Global) -> Result<Ingested> {
    let ingested = ingest(path, g.policy())?;
    if !ingested.censored.is_empty() {
        log::warn!("censored epochs: {:?}", ingested.censored);
    }
    Ok(ingested)
}

fn write_json<T: Serialize>(value: &T, out: &mut Vec<u8>) -> Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    out.push(b'\n');
    Ok(())
}

#[derive(Debug, Serialize)]
struct IntervalRow {
    parameter: Param,
    mle: Option<f64>,
    asym_lo: Option<f64>,
    asym_hi: Option<f64>,
    boot_lo: Option<f64>,
    boot_hi: Option<f64>,
    degenerate: bool,
}

#[derive(Debug, Serialize)]
struct BootstrapSummary {
    replicates: usize,
    skipped_lambda1: usize,
    skipped_lambda2: usize,
}

#[derive(Debug, Serialize)]
struct Diagnostics {
    censored_policy: CensoredPolicy,
    censored_epochs: Vec<u64>,
}

#[derive(Debug, Serialize)]
struct FitReport {
    n_epochs: usize,
    total_events: usize,
    situation_counts: [usize; 4],
    loglik: f64,
    alpha: f64,
    mu_information: MuInformation,
    parameters: Vec<IntervalRow>,
    bootstrap: Option<BootstrapSummary>,
    diagnostics: Diagnostics,
}

fn interval_rows(
    estimates: &crate::estimate::Estimates,
    asym: Option<&ParamIntervals>,
    boot: Option<&BootstrapResult>,
) -> Vec<IntervalRow> {
    Param::ALL
        .iter()
        .map(|&param| {
            let a = asym.and_then(|i| i.get(param));
            let b = boot.and_then(|r| r.intervals.get(param));
            IntervalRow {
                parameter: param,
                mle: estimates.get(param),
                asym_lo: a.map(|c| c.lower),
                asym_hi: a.map(|c| c.upper),
                boot_lo: b.map(|c| c.lower),
                boot_hi: b.map(|c| c.upper),
                degenerate: a.is_some_and(|c| c.degenerate),
            }
        })
        .collect()
}

fn cell(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn write_interval_csv(rows: &[IntervalRow], asym: bool, boot: bool, out: &mut Vec<u8>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["parameter", "mle"];
    if asym {
        header.extend(["asym_lo", "asym_hi"]);
    }
    if boot {
        header.extend(["boot_lo", "boot_hi"]);
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.parameter.name().to_string(), cell(r.mle)];
        if asym {
            rec.extend([cell(r.asym_lo), cell(r.asym_hi)]);
        }
        if boot {
            rec.extend([cell(r.boot_lo), cell(r.boot_hi)]);
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn dispatch(cli: &Cli, out: &mut Vec<u8>) -> Result<()> {
    let g = &cli.global;
    let format = |default| g.format.unwrap_or(default);
    match &cli.command {
        Command::Fit { input, bootstrap, mu_info } => {
            let data = load(input, g)?;
            let d = &data.dataset;
            let fit = fit_mle(d)?;
            let mode = MuInformation::from(*mu_info);
            let asym = asymptotic_ci_with(&fit, g.alpha, mode)?;
            let boot = match *bootstrap {
                0 => None,
                m => Some(bootstrap_ci(&fit, d.n(), m, g.alpha, g.seed)?),
            };
            let rows = interval_rows(&fit.estimates, Some(&asym), boot.as_ref());
            match format(Format::Csv) {
                Format::Csv => write_interval_csv(&rows, true, boot.is_some(), out),
                Format::Json => write_json(
                    &FitReport {
                        n_epochs: d.n(),
                        total_events: d.total_events(),
                        situation_counts: fit.partition.counts,
                        loglik: fit.loglik,
                        alpha: g.alpha,
                        mu_information: mode,
                        parameters: rows,
                        bootstrap: boot.as_ref().map(|b| BootstrapSummary {
                            replicates: b.replicates,
                            skipped_lambda1: b.skipped_lambda1,
                            skipped_lambda2: b.skipped_lambda2,
                        }),
                        diagnostics: Diagnostics {
                            censored_policy: g.policy(),
                            censored_epochs: data.censored.clone(),
                        },
                    },
                    out,
                ),
            }
        }
        Command::Simulate { theta, n } => {
            let d = generate_dataset(theta, *n, g.seed)?;
            match format(Format::Csv) {
                Format::Csv => write_event_log(&d, out),
                Format::Json => write_json(&d, out),
            }
        }
        Command::Study { theta, n, replications, bootstrap_m } => {
            let mut rows = Vec::new();
            for (k, &n_epochs) in n.iter().enumerate() {
                let cfg = StudyConfig {
                    theta: *theta,
                    n_epochs,
                    replications: *replications,
                    bootstrap_m: *bootstrap_m,
                    alpha: g.alpha,
                    seed: derive_seed(g.seed, k as u64),
                };
                rows.extend(run_study(&cfg)?.rows);
            }
            match format(Format::Csv) {
                Format::Csv => write_study_csv(&rows, out),
                Format::Json => write_json(&rows, out),
            }
        }
        Command::Bootstrap { input, m, replicates } => {
            let data = load(input, g)?;
            let fit = fit_mle(&data.dataset)?;
            let boot = bootstrap_ci(&fit, data.dataset.n(), *m, g.alpha, g.seed)?;
            if boot.skipped_lambda1 + boot.skipped_lambda2 > 0 {
                log::warn!(
                    "replicates without events: {} for lambda1, {} for lambda2",
                    boot.skipped_lambda1,
                    boot.skipped_lambda2
                );
            }
            if let Some(path) = replicates {
                let mut w = csv::Writer::from_path(path)?;
                w.write_record(["replicate", "lambda1", "lambda2", "p", "mu"])?;
                for (k, e) in boot.estimates.iter().enumerate() {
                    w.write_record([
                        (k + 1).to_string(),
                        cell(e.lambda1),
                        cell(e.lambda2),
                        e.p.to_string(),
                        e.mu.to_string(),
                    ])?;
                }
                w.flush()?;
            }
            let rows = interval_rows(&fit.estimates, None, Some(&boot));
            match format(Format::Csv) {
                Format::Csv => write_interval_csv(&rows, false, true, out),
                Format::Json => write_json(
                    &serde_json::json!({
                        "alpha": g.alpha,
                        "parameters": rows,
                        "bootstrap": BootstrapSummary {
                            replicates: boot.replicates,
                            skipped_lambda1: boot.skipped_lambda1,
                            skipped_lambda2: boot.skipped_lambda2,
                        },
                    }),
                    out,
                ),
            }
        }
        Command::Glm(args) | Command::Select(args) => {
            let select = matches!(cli.command, Command::Select(_));
            let data = load(&args.input, g)?;
            let d = &data.dataset;
            let target = GlmTarget::from(args.target);
            let all = epoch_covariates(d, target)?;
            let x = match args.covariates.as_deref() {
                None => all,
                Some(list) => {
                    let names: Vec<&str> = list.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
                    all.select(&names)?
                }
            };
            let model = if select {
                let sel = forward_select(d, &x, target, args.fixed_p)?;
                for note in &sel.notes {
                    log::warn!("{note}");
                }
                sel.model
            } else {
                fit_glm(d, &x, target, args.fixed_p)?
            };
            match format(Format::Json) {
                Format::Json => {
                    out.extend(model.to_json()?.as_bytes());
                    out.push(b'\n');
                    Ok(())
                }
                Format::Csv => write_model_csv(&model, select, out),
            }
        }
        Command::Predict { input, lambda1_model, lambda2_model, mu_model, fixed_p } => {
            let data = load(input, g)?;
            let d = &data.dataset;
            let base = fit_mle(d)?.estimates;
            let paths = [lambda1_model, lambda2_model, mu_model];
            let mut loaded = Vec::new();
            for (path, target) in paths.into_iter().zip(GlmTarget::ALL) {
                let model = match path {
                    Some(path) => GlmModel::from_json(&io::read_to_string(open(path)?)?)?,
                    None => {
                        let theta = base.to_params()?;
                        let rate = [theta.lambda1, theta.lambda2, theta.mu][target as usize];
                        GlmModel::intercept_only(target, rate.ln(), base.p)
                    }
                };
                if model.target != target {
                    return Err(Error::InvalidArgument(format!("model for {target} has target {}", model.target)));
                }
                loaded.push((path.is_some(), model));
            }
            let p =
                fixed_p.or_else(|| loaded.iter().find(|(given, _)| *given).map(|(_, m)| m.fixed_p)).unwrap_or(base.p);
            let [(_, lambda1), (_, lambda2), (_, mu)]: [(bool, GlmModel); 3] = loaded.try_into().expect("three models");
            let models = PredictionModels { lambda1, lambda2, mu };
            let mut preds = predict_all(&models, d, p)?;
            preds.push(predict_out_of_sample(&preds)?);
            match format(Format::Csv) {
                Format::Csv => write_predictions_csv(&preds, out),
                Format::Json => write_json(&preds, out),
            }
        }
        Command::Metrics { input, predicted } => {
            let data = load(input, g)?;
            let pairs = read_predicted(open(predicted)?)?;
            let (actual, pred) = align_actual(&data.dataset, &pairs)?;
            let m = prediction_metrics(&actual, &pred)?;
            match format(Format::Csv) {
                Format::Json => write_json(&serde_json::json!({ "n": actual.len(), "metrics": m }), out),
                Format::Csv => {
                    let mut w = csv::Writer::from_writer(out);
                    w.write_record(["n", "mse", "mae", "max_error", "correlation"])?;
                    w.write_record([
                        actual.len().to_string(),
                        m.mse.to_string(),
                        m.mae.to_string(),
                        m.max_error.to_string(),
                        cell(m.correlation),
                    ])?;
                    w.flush()?;
                    Ok(())
                }
            }
        }
    }
}

fn write_model_csv(model: &GlmModel, with_trail: bool, out: &mut Vec<u8>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["term", "estimate"])?;
    w.write_record(["(intercept)".to_string(), model.intercept.to_string()])?;
    for (name, b) in &model.coefficients {
        w.write_record([name.clone(), b.to_string()])?;
    }
    w.write_record(["loglik".to_string(), model.loglik.to_string()])?;
    w.write_record(["aic".to_string(), model.aic.to_string()])?;
    if with_trail {
        for (k, step) in model.trail.iter().enumerate() {
            w.write_record([format!("step{}:{}", k + 1, step.column), step.aic.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
