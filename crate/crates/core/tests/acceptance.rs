//! Runs the full acceptance suite on the default configuration, one criterion
//! after another so that each runtime is measured on an otherwise idle
//! machine. Takes on the order of an hour on a single core.

use std::io::Write;

use rdthreshold::verify::{run, CRITERIA};
use rdthreshold::Config;

/// Writes straight to stderr so the verdicts show up even though the test
/// harness captures `println!` output of passing tests.
fn report(line: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
    let _ = err.flush();
}

#[test]
fn acceptance_criteria() {
    let config = Config::default();
    let mut failed = Vec::new();
    for c in CRITERIA {
        let v = run(c.id, &config).expect("known criterion");
        report(&v.to_string());
        if !v.passed {
            failed.push(c.id);
        }
    }
    report(&format!(
        "acceptance: {} of {} criteria passed",
        CRITERIA.len() - failed.len(),
        CRITERIA.len()
    ));
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
