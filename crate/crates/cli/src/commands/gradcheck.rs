use std::io::Write;

use kd_core::grad_suite::{run_suite, CaseSummary, GradCase, SuiteOptions};

use crate::error::{CliError, Result};

pub fn format_table(summaries: &[CaseSummary]) -> String {
    let mut out = format!(
        "{:<16} {:>9} {:>8} {:>15} {:>10}  {}\n",
        "case", "instances", "failures", "max_rel_error", "worst_seed", "status"
    );
    for s in summaries {
        out += &format!(
            "{:<16} {:>9} {:>8} {:>15.8e} {:>10}  {}\n",
            s.case.name(),
            s.instances,
            s.failures,
            s.max_rel_error,
            s.worst_seed,
            if s.passed() { "PASS" } else { "FAIL" }
        );
    }
    out
}

/// Runs the gradient suite over `seeds` instances per case and prints the
/// table. Fails (exit 1) naming every failing case. `sign_flip` negates one
/// case's analytic gradient to show the suite catches it.
pub fn cmd_gradcheck(seeds: u64, sign_flip: Option<&str>, out: &mut dyn Write) -> Result<()> {
    if seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let sign_flip = sign_flip
        .map(|name| {
            GradCase::from_name(name).ok_or_else(|| {
                let known: Vec<&str> = GradCase::ALL.iter().map(|c| c.name()).collect();
                CliError::Usage(format!("unknown case `{name}`; expected one of {}", known.join(", ")))
            })
        })
        .transpose()?;
    let summaries = run_suite(
        seeds,
        &SuiteOptions {
            sign_flip,
            ..SuiteOptions::default()
        },
    )?;
    let _ = write!(out, "{}", format_table(&summaries));
    let failed: Vec<&str> = summaries.iter().filter(|s| !s.passed()).map(|s| s.case.name()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::CheckFailed(format!("gradient check failed for: {}", failed.join(", "))))
    }
}
