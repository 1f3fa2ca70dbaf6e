//! Writes a simulated log as CSV, reads it back, and shows how a truncated
//! final epoch is handled.

use epochttf::estimate::ParamSet;
use epochttf::io::{read_event_log, write_event_log, CensoredPolicy};
use epochttf::simulate::generate_dataset;

fn main() -> epochttf::error::Result<()> {
    let d = generate_dataset(&ParamSet::new(0.5, 1.5, 2.0, 0.6)?, 3, 1)?;
    let mut csv = Vec::new();
    write_event_log(&d, &mut csv)?;
    let text = String::from_utf8(csv).expect("utf-8");
    print!("{text}");

    let back = read_event_log(text.as_bytes(), CensoredPolicy::Reject)?;
    println!("round trip identical: {}", back.dataset == d);

    let truncated = format!("{text}4,1,RUN_OK,0.75\n");
    match read_event_log(truncated.as_bytes(), CensoredPolicy::Reject) {
        Err(e) => println!("default policy: {e}"),
        Ok(_) => unreachable!(),
    }
    let kept = read_event_log(truncated.as_bytes(), CensoredPolicy::Exclude)?;
    println!("--allow-censored: {} epochs used, censored {:?}", kept.dataset.n(), kept.censored);
    Ok(())
}
