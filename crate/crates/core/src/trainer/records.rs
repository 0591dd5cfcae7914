use std::io::{self, Write};

use serde::Serialize;

pub const CSV_HEADER: &str = "iter,lr,loss_fr,loss_iled,loss_rpsd,loss_total,mean_cos,delta_norm";

/// Metrics logged for one distillation iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub lr: f64,
    pub loss_fr: f64,
    pub loss_iled: f64,
    pub loss_rpsd: f64,
    pub loss_total: f64,
    pub mean_cos: f64,
    pub delta_norm: f64,
}

/// Nine significant digits in exponent form.
pub fn fmt_sig(x: f64) -> String {
    format!("{x:.8e}")
}

pub fn write_metrics_csv<W: Write>(mut out: W, records: &[IterationRecord]) -> io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.iter,
            fmt_sig(r.lr),
            fmt_sig(r.loss_fr),
            fmt_sig(r.loss_iled),
            fmt_sig(r.loss_rpsd),
            fmt_sig(r.loss_total),
            fmt_sig(r.mean_cos),
            fmt_sig(r.delta_norm)
        )?;
    }
    Ok(())
}
