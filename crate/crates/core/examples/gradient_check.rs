//! Finite-difference check of every differentiable operation and of the
//! end-to-end losses, followed by a deliberately wrong operation that the
//! checker has to catch.
//!
//! cargo run --release --example gradient_check -- [small|medium]

use urgency::verify::{run_suite, SuiteSize};

fn main() -> urgency::Result<()> {
    let size: SuiteSize = std::env::args().nth(1).as_deref().unwrap_or("small").parse()?;
    let report = run_suite(size, true)?;
    print!("{}", report.table());
    let genuine = report
        .checks
        .iter()
        .filter(|c| !report.negative_controls.contains(&c.name));
    println!("genuine checks passed: {}", genuine.clone().all(|c| c.passed()));
    for c in report.failed() {
        let expected = report.negative_controls.contains(&c.name);
        println!("{} failed{}", c.name, if expected { " as intended" } else { "" });
    }
    Ok(())
}
