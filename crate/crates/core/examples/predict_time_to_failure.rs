//! Epoch-wise expected time to failure from fitted covariate models, the
//! out-of-sample average and the error metrics against realized durations.

use epochttf::estimate::{fit_mle, ParamSet};
use epochttf::glm::{epoch_covariates, fit_glm, GlmTarget};
use epochttf::predict::{
    expected_time_to_fail, predict_all, predict_out_of_sample, prediction_metrics, PredictionModels,
};
use epochttf::simulate::{generate_with_covariates, CovariateDesign};

fn main() -> epochttf::error::Result<()> {
    let base = ParamSet::new(0.03, 0.08, 70.0, 0.7)?;
    println!("base-model expected time to failure: {:.3}", expected_time_to_fail(&base)?);

    let mut design = CovariateDesign::inert(&base, vec!["temp".into(), "pressure".into()], vec![(0.0, 1.0); 2]);
    design.lambda1.1[0] = 0.3;
    design.mu.1[1] = 0.3;
    let d = generate_with_covariates(&design, 120, 17)?;

    let p = fit_mle(&d)?.estimates.p;
    let fit = |target| -> epochttf::error::Result<_> { fit_glm(&d, &epoch_covariates(&d, target)?, target, p) };
    let models = PredictionModels {
        lambda1: fit(GlmTarget::Lambda1)?,
        lambda2: fit(GlmTarget::Lambda2)?,
        mu: fit(GlmTarget::Mu)?,
    };

    let preds = predict_all(&models, &d, p)?;
    for pr in preds.iter().take(5) {
        println!("epoch {:>3}: expected {:>9.2}", pr.epoch_id.unwrap_or_default(), pr.expected_ttf);
    }
    println!("out-of-sample: {:.2}", predict_out_of_sample(&preds)?.expected_ttf);

    let actual: Vec<f64> = d.epochs.iter().map(|e| e.total_duration()).collect();
    let predicted: Vec<f64> = preds.iter().map(|p| p.expected_ttf).collect();
    let m = prediction_metrics(&actual, &predicted)?;
    println!("MSE {:.1}  MAE {:.2}  MaxE {:.2}  corr {:?}", m.mse, m.mae, m.max_error, m.correlation);
    Ok(())
}
