use std::io::Write;

use kd_core::identities::{fc_forms, triplet_forms, IdentityReport};

use crate::error::{CliError, Result};

pub const FC_TOLERANCE: f64 = 1e-10;
pub const TRIPLET_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryReport {
    pub fc: IdentityReport,
    pub triplet: IdentityReport,
}

impl GeometryReport {
    pub fn passed(&self) -> bool {
        self.fc.max_deviation <= FC_TOLERANCE && self.triplet.max_deviation <= TRIPLET_TOLERANCE
    }
}

pub fn verify(trials: usize, seed: u64, inject_every: usize) -> Result<GeometryReport> {
    if trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".into()));
    }
    Ok(GeometryReport {
        fc: fc_forms(trials, seed)?,
        triplet: triplet_forms(trials, seed, inject_every)?,
    })
}

pub fn cmd_verify_geometry(trials: usize, seed: u64, inject_every: usize, out: &mut dyn Write) -> Result<()> {
    let r = verify(trials, seed, inject_every)?;
    let status = |ok: bool| if ok { "PASS" } else { "FAIL" };
    let _ = writeln!(
        out,
        "fc distance vs cosine form: trials {} max_deviation {:.8e} (tol {FC_TOLERANCE:e}) {}",
        r.fc.trials,
        r.fc.max_deviation,
        status(r.fc.max_deviation <= FC_TOLERANCE)
    );
    let _ = writeln!(
        out,
        "triplet angle direct vs pairwise: trials {} max_deviation {:.8e} (tol {TRIPLET_TOLERANCE:e}) {}",
        r.triplet.trials,
        r.triplet.max_deviation,
        status(r.triplet.max_deviation <= TRIPLET_TOLERANCE)
    );
    let _ = writeln!(out, "degenerate triplets skipped: {}", r.triplet.degenerate);
    if r.passed() {
        Ok(())
    } else {
        Err(CliError::CheckFailed("geometry identity deviation above tolerance".into()))
    }
}
