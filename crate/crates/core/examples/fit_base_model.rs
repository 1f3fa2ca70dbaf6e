//! Closed-form estimates and asymptotic intervals for a simulated log of 45
//! epochs.

use epochttf::estimate::{asymptotic_ci_with, fit_mle, MuInformation, Param, ParamSet};
use epochttf::model::Situation;
use epochttf::simulate::generate_dataset;

fn main() -> epochttf::error::Result<()> {
    let truth = ParamSet::new(0.03, 0.08, 70.0, 0.7)?;
    let d = generate_dataset(&truth, 45, 2024)?;
    let fit = fit_mle(&d)?;

    println!("epochs {}, running events {}, loglik {:.4}", d.n(), d.total_events(), fit.loglik);
    for s in Situation::ALL {
        println!("  {s}: {} epochs", fit.partition.counts[s.index()]);
    }

    for mode in [MuInformation::SecondDerivative, MuInformation::ShiftedCount] {
        let ci = asymptotic_ci_with(&fit, 0.05, mode)?;
        println!("\n95% asymptotic intervals ({mode:?} information for mu)");
        for param in Param::ALL {
            let est = fit.estimates.get(param).unwrap_or(f64::NAN);
            match ci.get(param) {
                Some(c) => println!("  {param:<8} {est:>10.4}  ({:.4}, {:.4})", c.lower, c.upper),
                None => println!("  {param:<8} {est:>10.4}  (none)"),
            }
        }
    }
    Ok(())
}
