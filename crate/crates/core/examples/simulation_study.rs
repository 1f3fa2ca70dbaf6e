//! A small Monte-Carlo study: bias, MSE, average interval endpoints and
//! coverage at three sample sizes, written as CSV.

use epochttf::estimate::ParamSet;
use epochttf::simulate::{run_study, write_study_csv, StudyConfig};

fn main() -> epochttf::error::Result<()> {
    let theta = ParamSet::new(0.03, 0.08, 70.0, 0.7)?;
    let mut rows = Vec::new();
    for n in [50, 100, 150] {
        let mut cfg = StudyConfig::new(theta, n, 7);
        cfg.replications = 200;
        cfg.bootstrap_m = 200;
        rows.extend(run_study(&cfg)?.rows);
    }
    write_study_csv(&rows, std::io::stdout().lock())
}
