use std::io::Write;
use std::path::Path;

use kd_core::checkpoint::load_model;
use kd_core::evaluator::{evaluate, EvalReport};
use kd_core::toy_models::generate_dataset;
use kd_core::trainer::Model;

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::output::{ensure_dir, json_string, roc_csv, to_json, write_json, write_text};

/// Evaluates a checkpoint on the evaluation pairs of the configured dataset.
/// Prints the JSON report and writes it, plus the ROC, under `<output>/eval`.
pub fn cmd_eval(checkpoint: &Path, config: &Path, out: &mut dyn Write) -> Result<EvalReport> {
    let cfg = RunConfig::load(config, &[])?;
    let model: Model<f64> = load_model(checkpoint)?;
    if model.encoder.spec().input_dim() != cfg.dataset.input_dim {
        return Err(CliError::Config(format!(
            "checkpoint expects {}-dim inputs but dataset.input_dim = {}",
            model.encoder.spec().input_dim(),
            cfg.dataset.input_dim
        )));
    }
    let data = generate_dataset::<f64>(&cfg.dataset)?;
    let (report, roc) = evaluate(model.encoder.embed(data.eval_x.view())?.view(), &data.pairs, &cfg.eval)?;
    let dir = cfg.output_dir().join("eval");
    ensure_dir(&dir)?;
    let json = to_json(&report);
    write_json(&dir.join("summary.json"), &json)?;
    write_text(&dir.join("roc.csv"), &roc_csv(&roc))?;
    let _ = write!(out, "{}", json_string(&json));
    Ok(report)
}
