//! File writers shared by the subcommands. Every float goes out with nine
//! significant digits so that reruns diff cleanly.

use std::fs;
use std::path::Path;

use kd_core::evaluator::RocPoint;
use kd_core::trainer::{fmt_sig, write_metrics_csv, IterationRecord};
use serde::Serialize;
use serde_json::Value;

use crate::error::{CliError, Result};

/// `x` rounded to nine significant digits.
pub fn sig(x: f64) -> f64 {
    if x.is_finite() {
        fmt_sig(x).parse().expect("formatted float parses")
    } else {
        x
    }
}

fn round_floats(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => n.as_f64().map(|x| Value::from(sig(x))).unwrap_or(Value::Number(n)),
        Value::Array(a) => Value::Array(a.into_iter().map(round_floats).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round_floats(v))).collect()),
        other => other,
    }
}

pub fn to_json<S: Serialize>(value: &S) -> Value {
    round_floats(serde_json::to_value(value).expect("report types serialize"))
}

pub fn json_string(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("json values serialize");
    s.push('\n');
    s
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn write_json(path: &Path, value: &Value) -> Result<()> {
    write_text(path, &json_string(value))
}

pub fn roc_csv(roc: &[RocPoint]) -> String {
    let mut out = String::from("threshold,tar,far\n");
    for p in roc {
        out += &format!("{},{},{}\n", fmt_sig(p.threshold), fmt_sig(p.tar), fmt_sig(p.far));
    }
    out
}

pub fn metrics_csv(records: &[IterationRecord]) -> String {
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, records).expect("writing to memory");
    String::from_utf8(buf).expect("ascii csv")
}
