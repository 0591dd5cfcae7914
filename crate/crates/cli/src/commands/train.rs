use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use kd_core::checkpoint::{load_model, save_model};
use kd_core::evaluator::{evaluate, EvalReport};
use kd_core::toy_models::generate_dataset;
use kd_core::trainer::{distill_modes, fmt_sig, pretrain_teacher, KdMode, Model};
use serde::Serialize;

use crate::config::{parse_sweep, RunConfig};
use crate::error::{CliError, Result};
use crate::output::{ensure_dir, metrics_csv, roc_csv, to_json, write_json, write_text};

#[derive(Debug, Clone, Serialize)]
pub struct ModeSummary {
    pub mean_pair_accuracy: f64,
    /// Final evaluator report per seed.
    pub seeds: BTreeMap<u64, EvalReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub teacher: EvalReport,
    pub modes: BTreeMap<String, ModeSummary>,
}

impl TrainSummary {
    pub fn mean_accuracy(&self, mode: KdMode) -> Option<f64> {
        self.modes.get(mode.name()).map(|m| m.mean_pair_accuracy)
    }
}

/// Directory holding the artifacts of one `(mode, seed)` run.
pub fn run_dir(out: &Path, mode: KdMode, seed: u64) -> PathBuf {
    out.join(mode.name()).join(format!("seed{seed}"))
}

/// Pretrains (or loads) the teacher, distills every configured mode on every
/// seed, and writes all artifacts under `out`. Progress goes to `log`.
pub fn run(cfg: &RunConfig, out: &Path, log: &mut dyn Write) -> Result<TrainSummary> {
    let start = Instant::now();
    let mut timings = String::new();
    ensure_dir(out)?;
    let exp = cfg.experiment();
    let data = generate_dataset::<f64>(&exp.dataset)?;

    let teacher = match &cfg.run.teacher_checkpoint {
        Some(path) => {
            let t: Model<f64> = load_model(path)?;
            if t.encoder.spec().widths != exp.teacher.widths || t.head.params != exp.head {
                return Err(CliError::Config(format!(
                    "teacher checkpoint {} does not match the teacher/head sections",
                    path.display()
                )));
            }
            let _ = writeln!(log, "loaded teacher from {}", path.display());
            t
        }
        None => {
            let mut t = Model::init(exp.teacher.spec(0), exp.head)?;
            let losses = pretrain_teacher(&mut t, &exp.pretrain.schedule, exp.pretrain.seed, &data)?;
            let mut csv = String::from("iter,loss_fr\n");
            for (i, l) in losses.iter().enumerate() {
                let _ = writeln!(csv, "{i},{}", fmt_sig(*l));
            }
            write_text(&out.join("pretrain.csv"), &csv)?;
            if cfg.run.save_checkpoints {
                save_model(&out.join("teacher.ckpt"), &t)?;
            }
            let _ = writeln!(log, "pretrained teacher for {} iterations", losses.len());
            t
        }
    };
    let (teacher_report, teacher_roc) = evaluate(teacher.encoder.embed(data.eval_x.view())?.view(), &data.pairs, &exp.eval)?;
    write_json(&out.join("teacher_eval.json"), &to_json(&teacher_report))?;
    write_text(&out.join("teacher_roc.csv"), &roc_csv(&teacher_roc))?;
    let _ = writeln!(log, "teacher pair accuracy {:.4}", teacher_report.pair_accuracy);
    let _ = writeln!(timings, "teacher ready after {:.3} s", start.elapsed().as_secs_f64());

    let mut write_err = None;
    let mut last = Instant::now();
    let outcomes = distill_modes(&exp, &data, &teacher, &cfg.run.modes, &cfg.run.seeds, |o| {
        let dir = run_dir(out, o.mode, o.seed);
        let res = (|| -> Result<()> {
            ensure_dir(&dir)?;
            write_text(&dir.join("metrics.csv"), &metrics_csv(&o.records))?;
            write_text(&dir.join("roc.csv"), &roc_csv(&o.roc))?;
            write_json(&dir.join("summary.json"), &to_json(&o.report))?;
            if cfg.run.save_checkpoints {
                save_model(&dir.join("student.ckpt"), &o.student)?;
            }
            Ok(())
        })();
        if let Err(e) = res {
            write_err.get_or_insert(e);
        }
        let _ = writeln!(log, "{} seed {}: pair accuracy {:.4}", o.mode.name(), o.seed, o.report.pair_accuracy);
        let _ = writeln!(timings, "{} seed {}: {:.3} s", o.mode.name(), o.seed, last.elapsed().as_secs_f64());
        last = Instant::now();
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }

    let mut modes = BTreeMap::new();
    for &mode in &cfg.run.modes {
        let seeds: BTreeMap<u64, EvalReport> = outcomes
            .iter()
            .filter(|o| o.mode == mode)
            .map(|o| (o.seed, o.report.clone()))
            .collect();
        let mean = seeds.values().map(|r| r.pair_accuracy).sum::<f64>() / seeds.len() as f64;
        modes.insert(
            mode.name().to_string(),
            ModeSummary {
                mean_pair_accuracy: mean,
                seeds,
            },
        );
    }
    let summary = TrainSummary {
        teacher: teacher_report,
        modes,
    };
    write_json(&out.join("summary.json"), &to_json(&summary))?;
    let _ = writeln!(timings, "total {:.3} s", start.elapsed().as_secs_f64());
    write_text(&out.join("run.log"), &timings)?;
    Ok(summary)
}

/// The `train` subcommand: one run, or one per value of `sweep`, each in its
/// own subdirectory named `key=value`.
pub fn cmd_train(config: &Path, sweep: Option<&str>, log: &mut dyn Write) -> Result<()> {
    match sweep {
        None => {
            let cfg = RunConfig::load(config, &[])?;
            let summary = run(&cfg, &cfg.output_dir(), log)?;
            print_means(&summary, log);
        }
        Some(spec) => {
            let (key, values) = parse_sweep(spec)?;
            // validate every point before spending time on any of them
            let cfgs = values
                .iter()
                .map(|v| RunConfig::load(config, &[(key.clone(), v.clone())]).map(|c| (v, c)))
                .collect::<Result<Vec<_>>>()?;
            for (v, cfg) in cfgs {
                let _ = writeln!(log, "== {key} = {v}");
                let summary = run(&cfg, &cfg.output_dir().join(format!("{key}={v}")), log)?;
                print_means(&summary, log);
            }
        }
    }
    Ok(())
}

fn print_means(summary: &TrainSummary, log: &mut dyn Write) {
    for (mode, s) in &summary.modes {
        let _ = writeln!(log, "mean pair accuracy {mode}: {:.4}", s.mean_pair_accuracy);
    }
}
