//! Expected time to failure and epoch-wise prediction.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::ParamSet;
use crate::glm::{dataset_average, epoch_average, nearest_name, GlmModel, GlmTarget};
use crate::model::{Dataset, Epoch};

/// Marker written in the `epoch_id` column for the out-of-sample row.
pub const OUT_OF_SAMPLE: &str = "out_of_sample";

/// Mean epoch duration (time to failure) under `theta`.
pub fn expected_time_to_fail(theta: &ParamSet) -> Result<f64> {
    theta.check()?;
    let ParamSet { lambda1, lambda2, mu, p } = *theta;
    let e = (-2.0 * mu).exp();
    Ok((1.0 - e) / 4.0 * (mu + 1.0) * (1.0 / lambda1 + 1.0 / lambda2)
        + (1.0 + e) / 4.0 * ((mu + 2.0 * p) / lambda1 + (mu + 2.0 * (1.0 - p)) / lambda2))
}

/// Contribution of epochs with an odd number of running events.
pub fn odd_term(theta: &ParamSet) -> Result<f64> {
    theta.check()?;
    let ParamSet { lambda1, lambda2, mu, p } = *theta;
    let e = (-2.0 * mu).exp();
    Ok(mu / 4.0 * (1.0 - e) * (1.0 / lambda1 + 1.0 / lambda2) + 0.5 * (1.0 + e) * (p / lambda1 + (1.0 - p) / lambda2))
}

/// Contribution of epochs with an even number of running events.
pub fn even_term(theta: &ParamSet) -> Result<f64> {
    theta.check()?;
    let ParamSet { lambda1, lambda2, mu, .. } = *theta;
    let e = (-2.0 * mu).exp();
    Ok(0.25 * (1.0 / lambda1 + 1.0 / lambda2) * (mu * (1.0 + e) + (1.0 - e)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// `None` for the out-of-sample row.
    pub epoch_id: Option<u64>,
    pub lambda1: Option<f64>,
    pub lambda2: Option<f64>,
    pub mu: Option<f64>,
    pub p: f64,
    pub expected_ttf: f64,
}

/// The three per-target models used for prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionModels {
    pub lambda1: GlmModel,
    pub lambda2: GlmModel,
    pub mu: GlmModel,
}

impl PredictionModels {
    pub fn get(&self, target: GlmTarget) -> &GlmModel {
        match target {
            GlmTarget::Lambda1 => &self.lambda1,
            GlmTarget::Lambda2 => &self.lambda2,
            GlmTarget::Mu => &self.mu,
        }
    }

    /// Intercept-only models reproducing the base-model rates.
    pub fn constant(theta: &ParamSet) -> Self {
        Self {
            lambda1: GlmModel::intercept_only(GlmTarget::Lambda1, theta.lambda1.ln(), theta.p),
            lambda2: GlmModel::intercept_only(GlmTarget::Lambda2, theta.lambda2.ln(), theta.p),
            mu: GlmModel::intercept_only(GlmTarget::Mu, theta.mu.ln(), theta.p),
        }
    }
}

/// Sensor indices of a model's columns within the dataset.
fn sensor_indices(model: &GlmModel, d: &Dataset) -> Result<Vec<usize>> {
    model
        .columns()
        .map(|c| {
            d.sensor_names.iter().position(|s| s == c).ok_or_else(|| Error::UnknownCovariate {
                name: c.to_string(),
                suggestion: nearest_name(c, &d.sensor_names),
            })
        })
        .collect()
}

fn target_rate(model: &GlmModel, d: &Dataset, epoch: &Epoch, idx: &[usize]) -> Result<f64> {
    if idx.is_empty() {
        return Ok(model.rate(&[]));
    }
    let target = model.target;
    let averages = match epoch_average(epoch, target, d.sensor_count()) {
        Some(a) => a,
        None => {
            log::warn!("epoch {}: no events for {target}; using dataset-wide average covariates", epoch.id);
            dataset_average(d, target).ok_or(Error::NoEventsOfKind(match target {
                GlmTarget::Lambda2 => crate::model::EventType::RunAlert,
                _ => crate::model::EventType::RunOk,
            }))?
        }
    };
    let values: Vec<f64> = idx.iter().map(|&k| averages[k]).collect();
    Ok(model.rate(&values))
}

/// Prediction for one epoch of `d`.
pub fn predict_epoch(models: &PredictionModels, d: &Dataset, epoch_id: u64, fixed_p: f64) -> Result<Prediction> {
    let epoch = d.epoch(epoch_id).ok_or(Error::UnknownEpoch(epoch_id))?;
    let mut rates = [0.0; 3];
    for (slot, target) in rates.iter_mut().zip(GlmTarget::ALL) {
        let model = models.get(target);
        *slot = target_rate(model, d, epoch, &sensor_indices(model, d)?)?;
    }
    let theta = ParamSet::new(rates[0], rates[1], rates[2], fixed_p)?;
    Ok(Prediction {
        epoch_id: Some(epoch_id),
        lambda1: Some(theta.lambda1),
        lambda2: Some(theta.lambda2),
        mu: Some(theta.mu),
        p: fixed_p,
        expected_ttf: expected_time_to_fail(&theta)?,
    })
}

/// Predictions for every epoch of `d`, in dataset order.
pub fn predict_all(models: &PredictionModels, d: &Dataset, fixed_p: f64) -> Result<Vec<Prediction>> {
    d.epochs.iter().map(|e| predict_epoch(models, d, e.id, fixed_p)).collect()
}

/// Prediction for an unseen epoch: the mean of the given expected times.
pub fn predict_out_of_sample(predictions: &[Prediction]) -> Result<Prediction> {
    let first = predictions.first().ok_or(Error::EmptyList("out-of-sample prediction"))?;
    let mean = predictions.iter().map(|p| p.expected_ttf).sum::<f64>() / predictions.len() as f64;
    Ok(Prediction { epoch_id: None, lambda1: None, lambda2: None, mu: None, p: first.p, expected_ttf: mean })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionMetrics {
    pub mse: f64,
    pub mae: f64,
    pub max_error: f64,
    /// Pearson correlation; absent when either list is constant.
    pub correlation: Option<f64>,
}

pub fn prediction_metrics(actual: &[f64], predicted: &[f64]) -> Result<PredictionMetrics> {
    if actual.len() != predicted.len() {
        return Err(Error::LengthMismatch(actual.len(), predicted.len()));
    }
    if actual.len() < 2 {
        return Err(Error::InvalidArgument("metrics need at least two pairs".into()));
    }
    let n = actual.len() as f64;
    let diffs = actual.iter().zip(predicted).map(|(a, p)| a - p);
    let mse = diffs.clone().map(|e| e * e).sum::<f64>() / n;
    let mae = diffs.clone().map(f64::abs).sum::<f64>() / n;
    let max_error = diffs.map(f64::abs).fold(0.0, f64::max);
    let ma = actual.iter().sum::<f64>() / n;
    let mp = predicted.iter().sum::<f64>() / n;
    let sxy: f64 = actual.iter().zip(predicted).map(|(a, p)| (a - ma) * (p - mp)).sum();
    let sxx: f64 = actual.iter().map(|a| (a - ma).powi(2)).sum();
    let syy: f64 = predicted.iter().map(|p| (p - mp).powi(2)).sum();
    // Spread at rounding level counts as constant.
    let varies = |ss: f64, mean: f64| (ss / n).sqrt() > 1e-12 * mean.abs().max(f64::MIN_POSITIVE);
    let correlation = (varies(sxx, ma) && varies(syy, mp)).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0));
    Ok(PredictionMetrics { mse, mae, max_error, correlation })
}

pub const PREDICTION_CSV_HEADER: [&str; 6] = ["epoch_id", "lambda1", "lambda2", "mu", "p", "expected_ttf"];

fn cell(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_predictions_csv<W: Write>(predictions: &[Prediction], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PREDICTION_CSV_HEADER)?;
    for p in predictions {
        w.write_record([
            p.epoch_id.map(|id| id.to_string()).unwrap_or_else(|| OUT_OF_SAMPLE.to_string()),
            cell(p.lambda1),
            cell(p.lambda2),
            cell(p.mu),
            p.p.to_string(),
            p.expected_ttf.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `(epoch_id, expected_ttf)` pairs from a predictions file. Only those
/// two columns are required, so external baselines can be compared too.
/// The out-of-sample row is skipped.
pub fn read_predicted<R: Read>(input: R) -> Result<Vec<(u64, f64)>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Parse { line: 1, message: format!("missing `{name}` column") })
    };
    let (id_col, ttf_col) = (col("epoch_id")?, col("expected_ttf")?);
    let mut out = Vec::new();
    for record in r.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let id = record.get(id_col).unwrap_or("").trim();
        if id == OUT_OF_SAMPLE {
            continue;
        }
        let parse_err = |what: &str| Error::Parse { line, message: format!("invalid {what}") };
        let id: u64 = id.parse().map_err(|_| parse_err("epoch_id"))?;
        let ttf: f64 = record.get(ttf_col).unwrap_or("").trim().parse().map_err(|_| parse_err("expected_ttf"))?;
        out.push((id, ttf));
    }
    Ok(out)
}

/// Pairs realized epoch durations with predictions by epoch id.
pub fn align_actual(d: &Dataset, predicted: &[(u64, f64)]) -> Result<(Vec<f64>, Vec<f64>)> {
    predicted
        .iter()
        .map(|&(id, ttf)| Ok((d.epoch(id).ok_or(Error::UnknownEpoch(id))?.total_duration(), ttf)))
        .collect::<Result<Vec<_>>>()
        .map(|pairs| pairs.into_iter().unzip())
}
