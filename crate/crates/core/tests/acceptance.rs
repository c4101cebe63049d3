//! Criteria 1 to 12 at their stated tolerances, one PASS/FAIL line each.

use std::process::ExitCode;

use superlab::mc_harness::KAPPA;
use superlab::selftest::{run_selftest, SelftestOptions};

fn main() -> ExitCode {
    let opts = SelftestOptions::new(20_240_601, KAPPA, "acceptance");
    let summary = run_selftest(&opts);
    for r in &summary.results {
        println!("{}", r.line());
    }
    println!("{}", summary.csv());
    let failed: Vec<u32> = summary.results.iter().filter(|r| !r.pass()).map(|r| r.id).collect();
    if summary.results.len() == 12 && failed.is_empty() {
        println!("acceptance: all 12 criteria PASS");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
