//! Runs every property suite (gradients, propagation, reservoir, losses)
//! and prints one line per check. Exits non-zero if any check fails.
//!
//! cargo run --release --example property_checks

use coca::checks::{run_suite, Suite};

fn main() {
    let mut failures = 0;
    for suite in Suite::ALL {
        println!("[{}]", suite.name());
        for r in run_suite(suite) {
            println!("  {r}");
            failures += usize::from(!r.passed());
        }
    }
    if failures > 0 {
        eprintln!("{failures} check(s) failed");
        std::process::exit(1);
    }
}
