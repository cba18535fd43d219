//! A small runner for long-running acceptance checks.
//!
//! Each check is timed against its own budget and reported on one line:
//!
//! ```text
//! criterion 4 [youden cutoff tracks prevalence]: PASS  max gap 0.005 <= 0.02 (37.2 s, budget 600 s)
//! ```
//!
//! A check that panics is reported as FAIL with the panic message. The
//! runner keeps going after failures so every line is printed.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

/// Verdict and a one-line explanation with the measured numbers.
#[derive(Debug, Clone)]
pub struct Check {
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Default)]
pub struct Gate {
    filters: Vec<String>,
    list_only: bool,
    /// Print result lines; off for gates built in unit tests.
    echo: bool,
    outcomes: Vec<(String, bool)>,
}

impl Gate {
    /// Positional command-line arguments select checks by id. `--list`
    /// prints the ids in the format libtest uses; other flags are ignored.
    pub fn from_args() -> Self {
        let args: Vec<String> = std::env::args().skip(1).collect();
        Self {
            filters: args.iter().filter(|a| !a.starts_with('-')).cloned().collect(),
            list_only: args.iter().any(|a| a == "--list"),
            echo: true,
            outcomes: Vec::new(),
        }
    }

    fn selected(&self, id: &str) -> bool {
        self.filters.is_empty() || self.filters.iter().any(|f| f == id)
    }

    /// Runs `check` unless filtered out. Exceeding `budget` turns a pass
    /// into a failure.
    pub fn run<F>(&mut self, id: &str, title: &str, budget: Duration, check: F)
    where
        F: FnOnce() -> Check,
    {
        if !self.selected(id) {
            return;
        }
        if self.list_only {
            println!("{id}: test");
            return;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let message = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Check::new(false, format!("panicked: {message}"))
        });
        let elapsed = start.elapsed();
        let passed = result.passed && elapsed <= budget;
        let mut detail = result.detail;
        if result.passed && !passed {
            detail.push_str("; over the runtime budget");
        }
        let line = format!(
            "criterion {id} [{title}]: {}  {detail} ({:.1} s, budget {} s)",
            if passed { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs(),
        );
        if self.echo {
            let mut out = std::io::stdout().lock();
            let _ = writeln!(out, "{line}");
            let _ = out.flush();
        }
        self.outcomes.push((id.to_string(), passed));
    }

    pub fn finish(self) -> ExitCode {
        if self.list_only {
            return ExitCode::SUCCESS;
        }
        let failed: Vec<&str> = self.outcomes.iter().filter(|(_, ok)| !ok).map(|(id, _)| id.as_str()).collect();
        println!(
            "acceptance: {} passed, {} failed{}",
            self.outcomes.len() - failed.len(),
            failed.len(),
            if failed.is_empty() {
                String::new()
            } else {
                format!(" ({})", failed.join(", "))
            }
        );
        if failed.is_empty() {
            ExitCode::SUCCESS
        } else {
            ExitCode::FAILURE
        }
    }
}
