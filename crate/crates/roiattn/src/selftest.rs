//! The `selftest` table: every verification suite with its verdict.

use std::time::{Duration, Instant};

use roiattn_core::checks::{suite_plan, SuiteResult};

pub struct Entry {
    pub result: SuiteResult,
    pub elapsed: Duration,
}

/// Runs the suites in order, reporting each through `on_entry` as it ends.
pub fn run(seed: u64, full: bool, on_entry: &mut dyn FnMut(&Entry)) -> Vec<Entry> {
    let mut out = Vec::new();
    for (_, runner) in suite_plan(seed, full) {
        let start = Instant::now();
        let result = runner();
        let e = Entry {
            result,
            elapsed: start.elapsed(),
        };
        on_entry(&e);
        out.push(e);
    }
    out
}

pub fn table_row(e: &Entry) -> String {
    format!(
        "{:<26} {:<4} {:>7.1}s  {}",
        e.result.name,
        if e.result.passed { "PASS" } else { "FAIL" },
        e.elapsed.as_secs_f64(),
        e.result.summary
    )
}

pub fn table_header() -> String {
    format!("{:<26} {:<4} {:>8}  {}", "suite", "", "time", "details")
}
