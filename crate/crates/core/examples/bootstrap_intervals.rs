//! Parametric bootstrap percentile intervals next to the asymptotic ones.

use epochttf::estimate::{asymptotic_ci, bootstrap_ci, fit_mle, Param, ParamSet};
use epochttf::simulate::generate_dataset;

fn main() -> epochttf::error::Result<()> {
    let d = generate_dataset(&ParamSet::new(0.03, 0.02, 72.0, 0.73)?, 60, 5)?;
    let fit = fit_mle(&d)?;
    let asym = asymptotic_ci(&fit, 0.05)?;
    let boot = bootstrap_ci(&fit, d.n(), 2000, 0.05, 99)?;

    println!(
        "{} replicates, {} / {} skipped for lambda1 / lambda2",
        boot.replicates, boot.skipped_lambda1, boot.skipped_lambda2
    );
    println!("{:<8} {:>10} {:>24} {:>24}", "param", "mle", "asymptotic", "bootstrap");
    for param in Param::ALL {
        let show = |c: Option<&epochttf::estimate::ConfidenceInterval>| {
            c.map(|c| format!("({:.4}, {:.4})", c.lower, c.upper)).unwrap_or_default()
        };
        println!(
            "{param:<8} {:>10.4} {:>24} {:>24}",
            fit.estimates.get(param).unwrap_or(f64::NAN),
            show(asym.get(param)),
            show(boot.intervals.get(param)),
        );
    }
    Ok(())
}
