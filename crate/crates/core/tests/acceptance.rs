//! One line per acceptance criterion; exits nonzero if any criterion fails.
use std::process::ExitCode;

use trolleybot::selftest::{run_criterion, CRITERIA};

fn main() -> ExitCode {
    let seed = 1;
    let mut failed = Vec::new();
    for &id in &CRITERIA {
        let report = run_criterion(id, seed);
        println!("{report}");
        if !report.passed {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", CRITERIA.len());
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
