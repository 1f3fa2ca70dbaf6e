//! Greedy AIC forward selection over six candidate sensors, only one of which
//! drives mu.

use epochttf::estimate::ParamSet;
use epochttf::glm::{epoch_covariates, forward_select, GlmTarget};
use epochttf::simulate::{generate_with_covariates, CovariateDesign};

fn main() -> epochttf::error::Result<()> {
    let theta = ParamSet::new(0.03, 0.08, 70.0, 0.7)?;
    let names: Vec<String> = (1..=6).map(|k| format!("sensor{k}")).collect();
    let mut design = CovariateDesign::inert(&theta, names, vec![(0.0, 1.0); 6]);
    design.mu.1[3] = 0.15;

    let d = generate_with_covariates(&design, 200, 3)?;
    let x = epoch_covariates(&d, GlmTarget::Mu)?;
    let selection = forward_select(&d, &x, GlmTarget::Mu, theta.p)?;

    println!("selection trail:");
    for (k, step) in selection.model.trail.iter().enumerate() {
        println!("  step {}: + {:<8} AIC {:.3}", k + 1, step.column, step.aic);
    }
    for note in &selection.notes {
        println!("  note: {note}");
    }
    println!("\nfinal model:\n{}", selection.model.to_json()?);
    Ok(())
}
