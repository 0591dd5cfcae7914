//! Run configuration: a line-oriented file of `section.key = value`
//! assignments (TOML dotted keys). Every key has a default, so a file only
//! lists what it changes; unknown keys are an error naming the key and line.

use std::path::{Path, PathBuf};

use kd_core::evaluator::EvalOptions;
use kd_core::toy_models::{FrHeadParams, SyntheticDatasetSpec};
use kd_core::trainer::{ExperimentConfig, KdMode, NetConfig, PretrainConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::{CliError, Result};

/// Overrides `run.output_dir` when set.
pub const OUTPUT_DIR_ENV: &str = "KD_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub output_dir: PathBuf,
    /// Distillation modes to run, each on every seed.
    pub modes: Vec<KdMode>,
    pub seeds: Vec<u64>,
    /// Load the teacher from this checkpoint instead of pretraining one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub teacher_checkpoint: Option<PathBuf>,
    pub save_checkpoints: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("kd_output"),
            modes: vec![KdMode::None, KdMode::Unified],
            seeds: vec![0, 1, 2, 3, 4],
            teacher_checkpoint: None,
            save_checkpoints: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub dataset: SyntheticDatasetSpec,
    pub teacher: NetConfig,
    pub student: NetConfig,
    pub head: FrHeadParams,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
    pub eval: EvalOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        Self {
            run: RunSection::default(),
            dataset: e.dataset,
            teacher: e.teacher,
            student: e.student,
            head: e.head,
            pretrain: e.pretrain,
            train: e.train,
            eval: e.eval,
        }
    }
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// 1-based line on which `key` (a dotted path) is assigned, if it can be found.
fn line_of(text: &str, key: &str) -> Option<usize> {
    let mut header = String::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        let related = |full: &str| full == key || full.starts_with(&format!("{key}.")) || key.starts_with(&format!("{full}."));
        if let Some(h) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            header = h.trim().to_string();
            if header == key || header.starts_with(&format!("{key}.")) {
                return Some(n + 1);
            }
            continue;
        }
        let Some((lhs, _)) = line.split_once('=') else { continue };
        let lhs: String = lhs.split('.').map(|p| p.trim().trim_matches('"')).collect::<Vec<_>>().join(".");
        let full = if header.is_empty() { lhs } else { format!("{header}.{lhs}") };
        if related(&full) {
            return Some(n + 1);
        }
    }
    None
}

fn located(text: &str, key: &str, msg: String) -> CliError {
    match line_of(text, key) {
        Some(line) => CliError::Config(format!("line {line}: key `{key}`: {msg}")),
        None => CliError::Config(format!("key `{key}`: {msg}")),
    }
}

/// Parses a single override value the way it would be written in the file,
/// falling back to a bare string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_dotted(table: &mut Table, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let (last, path) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for p in path {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("`{key}`: `{p}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Parses config text, applying `overrides` (dotted key, raw value) on top.
    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut user: Table = text.parse().map_err(|e: toml::de::Error| {
            let line = e.span().map(|s| text[..s.start].matches('\n').count() + 1);
            let msg = e.message().to_string();
            CliError::Config(match line {
                Some(l) => format!("line {l}: {msg}"),
                None => msg,
            })
        })?;
        for (k, v) in overrides {
            set_dotted(&mut user, k, parse_value(v))?;
        }
        let mut merged = Table::try_from(RunConfig::default()).expect("defaults serialize");
        merge(&mut merged, user);
        let cfg: RunConfig = serde_path_to_error::deserialize(Value::Table(merged)).map_err(|e| {
            let path = e.path().to_string();
            let msg = e.inner().to_string().lines().next().unwrap_or_default().to_string();
            // make sure an unknown field is named in full, whatever the path ends at
            let key = match msg.strip_prefix("unknown field `").and_then(|m| m.split('`').next()) {
                Some(field) if path == field || path.ends_with(&format!(".{field}")) => path,
                Some(field) if path == "." => field.to_string(),
                Some(field) => format!("{path}.{field}"),
                None => path,
            };
            located(text, &key, msg)
        })?;
        cfg.experiment()
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        if cfg.run.modes.is_empty() || cfg.run.seeds.is_empty() {
            return Err(CliError::Config("run.modes and run.seeds must be non-empty".into()));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, overrides).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            dataset: self.dataset.clone(),
            teacher: self.teacher.clone(),
            student: self.student.clone(),
            head: self.head,
            pretrain: self.pretrain.clone(),
            train: self.train.clone(),
            eval: self.eval.clone(),
        }
    }

    /// `run.output_dir`, unless the environment overrides it.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.run.output_dir.clone(),
        }
    }
}

/// Splits `key=v1,v2,...` into the key and its values.
pub fn parse_sweep(spec: &str) -> Result<(String, Vec<String>)> {
    let (key, values) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("--sweep expects key=v1,v2,..., got `{spec}`")))?;
    let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if key.trim().is_empty() || values.is_empty() {
        return Err(CliError::Usage(format!("--sweep expects key=v1,v2,..., got `{spec}`")));
    }
    Ok((key.trim().to_string(), values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::parse("", &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn dotted_keys_and_sections_both_work() {
        let a = RunConfig::parse("train.schedule.iterations = 7\ntrain.mode = \"fc_only\"\n", &[]).unwrap();
        let b = RunConfig::parse("[train]\nmode = \"fc_only\"\nschedule.iterations = 7\n", &[]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train.schedule.iterations, 7);
        assert_eq!(a.train.mode, KdMode::FcOnly);
        // untouched siblings keep their defaults
        assert_eq!(a.train.schedule.batch_size, 64);
    }

    #[test]
    fn unknown_key_names_key_and_line() {
        let err = RunConfig::parse("# comment\ntrain.iled.lambda = 2\ntrain.iled.lamda = 3\n", &[]).unwrap_err();
        let msg = err.to_string();
        assert_eq!(err.exit_code(), 2);
        assert!(msg.contains("key `train.iled.lamda`:"), "{msg}");
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn unknown_section_is_rejected() {
        let msg = RunConfig::parse("trian.seed = 1\n", &[]).unwrap_err().to_string();
        assert!(msg.contains("key `trian`:") && msg.contains("line 1"), "{msg}");
    }

    #[test]
    fn wrong_type_names_key() {
        let msg = RunConfig::parse("dataset.identities = \"many\"\n", &[]).unwrap_err().to_string();
        assert!(msg.contains("dataset.identities") && msg.contains("line 1"), "{msg}");
    }

    #[test]
    fn syntax_error_has_line() {
        let msg = RunConfig::parse("a = 1\nb = = 2\n", &[]).unwrap_err().to_string();
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn inconsistent_values_are_config_errors() {
        let err = RunConfig::parse("head.classes = 7\n", &[]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn overrides_apply_on_top() {
        let cfg = RunConfig::parse(
            "train.iled.lambda = 2\n",
            &[("train.iled.lambda".into(), "9".into()), ("train.mode".into(), "kl".into())],
        )
        .unwrap();
        assert_eq!(cfg.train.iled.lambda, 9.0);
        assert_eq!(cfg.train.mode, KdMode::Kl);
    }

    #[test]
    fn sweep_spec_parses() {
        assert_eq!(
            parse_sweep("train.rpsd.lambda=20, 40,60").unwrap(),
            ("train.rpsd.lambda".into(), vec!["20".into(), "40".into(), "60".into()])
        );
        assert!(parse_sweep("novalues=").is_err());
        assert!(parse_sweep("noequals").is_err());
    }
}
