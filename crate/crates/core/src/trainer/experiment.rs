//! Dataset generation, teacher pretraining, distillation and evaluation wired
//! together, with the teacher shared across modes and seeds.

use serde::{Deserialize, Serialize};

use super::{distill_student, pretrain_teacher, IterationRecord, KdMode, Model, Schedule, TrainConfig};
use crate::error::{KdError, Result};
use crate::evaluator::{evaluate, EvalOptions, EvalReport, RocPoint};
use crate::scalar::Scalar;
use crate::toy_models::{generate_dataset, Activation, Dataset, DenseNetSpec, FrHeadParams, SyntheticDatasetSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub seed: u64,
}

impl NetConfig {
    pub fn spec(&self, seed_offset: u64) -> DenseNetSpec {
        DenseNetSpec::new(self.widths.clone(), self.activation, self.seed.wrapping_add(seed_offset))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub schedule: Schedule,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            schedule: Schedule {
                iterations: 5000,
                milestones: vec![2500, 4000],
                ..Schedule::default()
            },
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: SyntheticDatasetSpec,
    pub teacher: NetConfig,
    pub student: NetConfig,
    pub head: FrHeadParams,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
    pub eval: EvalOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: SyntheticDatasetSpec::default(),
            teacher: NetConfig {
                widths: vec![64, 256, 256, 32],
                activation: Activation::Relu,
                seed: 100,
            },
            student: NetConfig {
                widths: vec![64, 32, 32],
                activation: Activation::Relu,
                seed: 200,
            },
            head: FrHeadParams::default(),
            pretrain: PretrainConfig::default(),
            train: TrainConfig::default(),
            eval: EvalOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.head.validate()?;
        self.pretrain.schedule.validate()?;
        self.train.validate()?;
        let (t, s) = (self.teacher.spec(0), self.student.spec(0));
        t.validate()?;
        s.validate()?;
        if t.input_dim() != self.dataset.input_dim || s.input_dim() != self.dataset.input_dim {
            return Err(KdError::InvalidParam(format!(
                "network input width must equal dataset input_dim {}",
                self.dataset.input_dim
            )));
        }
        if t.output_dim() != s.output_dim() {
            return Err(KdError::InvalidParam(format!(
                "teacher and student embedding widths differ ({} vs {})",
                t.output_dim(),
                s.output_dim()
            )));
        }
        if self.head.classes != self.dataset.train_classes() {
            return Err(KdError::InvalidParam(format!(
                "head.classes = {} but the dataset trains on {} identities",
                self.head.classes,
                self.dataset.train_classes()
            )));
        }
        if self.eval.far_targets.iter().any(|&f| !(f > 0.0 && f <= 1.0)) {
            return Err(KdError::InvalidParam("far targets must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ModeOutcome<T> {
    pub mode: KdMode,
    pub seed: u64,
    pub report: EvalReport,
    pub roc: Vec<RocPoint>,
    pub records: Vec<IterationRecord>,
    pub student: Model<T>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult<T> {
    pub dataset: Dataset<T>,
    pub teacher: Model<T>,
    pub teacher_report: EvalReport,
    pub pretrain_losses: Vec<f64>,
    pub outcomes: Vec<ModeOutcome<T>>,
}

impl<T> ExperimentResult<T> {
    /// Mean pair accuracy of one mode over all seeds that ran.
    pub fn mean_accuracy(&self, mode: KdMode) -> Option<f64> {
        let accs: Vec<f64> = self
            .outcomes
            .iter()
            .filter(|o| o.mode == mode)
            .map(|o| o.report.pair_accuracy)
            .collect();
        (!accs.is_empty()).then(|| accs.iter().sum::<f64>() / accs.len() as f64)
    }
}

/// Pretrains one teacher, then distills a fresh student for every
/// `(mode, seed)` combination. A seed offsets both the student initialization
/// and the sampler seed.
pub fn run_experiment<T: Scalar>(
    cfg: &ExperimentConfig,
    modes: &[KdMode],
    seeds: &[u64],
) -> Result<ExperimentResult<T>> {
    cfg.validate()?;
    let dataset = generate_dataset::<T>(&cfg.dataset)?;
    let mut teacher = Model::init(cfg.teacher.spec(0), cfg.head)?;
    let pretrain_losses = pretrain_teacher(&mut teacher, &cfg.pretrain.schedule, cfg.pretrain.seed, &dataset)?;
    let (teacher_report, _) = evaluate(teacher.encoder.embed(dataset.eval_x.view())?.view(), &dataset.pairs, &cfg.eval)?;
    let outcomes = distill_modes(cfg, &dataset, &teacher, modes, seeds, |_| {})?;
    Ok(ExperimentResult {
        dataset,
        teacher,
        teacher_report,
        pretrain_losses,
        outcomes,
    })
}

/// The distillation half of [`run_experiment`], for an already trained
/// teacher. `done` is called after each `(mode, seed)` run.
pub fn distill_modes<T: Scalar, F>(
    cfg: &ExperimentConfig,
    dataset: &Dataset<T>,
    teacher: &Model<T>,
    modes: &[KdMode],
    seeds: &[u64],
    mut done: F,
) -> Result<Vec<ModeOutcome<T>>>
where
    F: FnMut(&ModeOutcome<T>),
{
    cfg.validate()?;
    if teacher.encoder.spec().widths != cfg.teacher.widths {
        return Err(KdError::InvalidParam(format!(
            "teacher widths {:?} do not match the configured {:?}",
            teacher.encoder.spec().widths,
            cfg.teacher.widths
        )));
    }
    let mut outcomes = Vec::new();
    for &seed in seeds {
        for &mode in modes {
            let train = TrainConfig {
                mode,
                seed: cfg.train.seed.wrapping_add(seed),
                ..cfg.train.clone()
            };
            let student = Model::init(cfg.student.spec(seed), cfg.head)?;
            let out = distill_student(&train, teacher, student, dataset)?;
            let emb = out.student.encoder.embed(dataset.eval_x.view())?;
            let (report, roc) = evaluate(emb.view(), &dataset.pairs, &cfg.eval)?;
            let outcome = ModeOutcome {
                mode,
                seed,
                report,
                roc,
                records: out.records,
                student: out.student,
            };
            done(&outcome);
            outcomes.push(outcome);
        }
    }
    Ok(outcomes)
}
