//! Fits log-link models for lambda1, lambda2 and mu on simulated sensor data
//! with known effects and prints the recovered coefficients.

use epochttf::glm::{epoch_covariates, fit_glm, GlmTarget};
use epochttf::simulate::{generate_with_covariates, CovariateDesign};

fn main() -> epochttf::error::Result<()> {
    let design = CovariateDesign {
        sensor_names: vec!["cavity_temp".into(), "fill_time".into(), "noise".into()],
        sensor_moments: vec![(100.0, 2.0), (5.0, 0.5), (0.0, 1.0)],
        lambda1: ((0.03f64).ln() - 0.1 * 100.0, vec![0.1, 0.0, 0.0]),
        lambda2: ((0.08f64).ln() + 0.4 * 5.0, vec![0.0, -0.4, 0.0]),
        mu: ((70.0f64).ln() - 0.05 * 100.0, vec![0.05, 0.0, 0.0]),
        p: 0.7,
    };
    let d = generate_with_covariates(&design, 400, 11)?;
    println!("{} epochs, {} running events", d.n(), d.total_events());

    for (target, truth) in
        [(GlmTarget::Lambda1, &design.lambda1), (GlmTarget::Lambda2, &design.lambda2), (GlmTarget::Mu, &design.mu)]
    {
        let x = epoch_covariates(&d, target)?;
        let model = fit_glm(&d, &x, target, design.p)?;
        println!("\n{target}: intercept {:.4} (true {:.4}), AIC {:.2}", model.intercept, truth.0, model.aic);
        for ((name, b), true_b) in model.coefficients.iter().zip(&truth.1) {
            println!("  {name:<12} {b:>9.5}  (true {true_b})");
        }
    }

    let x = epoch_covariates(&d, GlmTarget::Lambda1)?.select(&["cavity_temp"])?;
    println!("\n{}", fit_glm(&d, &x, GlmTarget::Lambda1, design.p)?.to_json()?);
    Ok(())
}
