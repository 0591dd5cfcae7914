//! Teacher pretraining and the student distillation loop.
//!
//! One distillation iteration: sample a mini-batch, embed it with both
//! networks, compute the recognition loss, the instance-level term and (once
//! the banks are full) the relational term, combine, update the student, and
//! only then push the batch's embeddings into both memory banks.

mod experiment;
mod records;
mod sampler;

pub use experiment::{distill_modes, run_experiment, ExperimentConfig, ExperimentResult, ModeOutcome, NetConfig, PretrainConfig};
pub use records::{fmt_sig, write_metrics_csv, IterationRecord, CSV_HEADER};
pub use sampler::EpochSampler;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{KdError, Result};
use crate::geometry::diag_cosines;
use crate::losses::{
    fc_loss, iled_loss, kl_soft_logits_loss, raw_l2_loss, rpsd_loss, unified_loss, IledParams, KlParams,
    LossOutput, RpsdParams,
};
use crate::memory_bank::BankPair;
use crate::scalar::Scalar;
use crate::toy_models::{step_decay_lr, Dataset, DenseNetSpec, FrHeadParams, MarginHead, NetworkState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KdMode {
    /// Recognition loss only.
    None,
    FcOnly,
    RawL2,
    Kl,
    IledOnly,
    RpsdOnly,
    #[default]
    Unified,
}

impl KdMode {
    pub const ALL: [KdMode; 7] = [
        KdMode::None,
        KdMode::FcOnly,
        KdMode::RawL2,
        KdMode::Kl,
        KdMode::IledOnly,
        KdMode::RpsdOnly,
        KdMode::Unified,
    ];

    pub fn name(self) -> &'static str {
        match self {
            KdMode::None => "none",
            KdMode::FcOnly => "fc_only",
            KdMode::RawL2 => "raw_l2",
            KdMode::Kl => "kl",
            KdMode::IledOnly => "iled_only",
            KdMode::RpsdOnly => "rpsd_only",
            KdMode::Unified => "unified",
        }
    }

    fn uses_iled(self) -> bool {
        matches!(self, KdMode::IledOnly | KdMode::Unified)
    }

    fn uses_rpsd(self) -> bool {
        matches!(self, KdMode::RpsdOnly | KdMode::Unified)
    }
}

/// Weights of the single-term baselines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineWeights {
    pub fc: f64,
    pub raw_l2: f64,
    pub kl: f64,
}

impl Default for BaselineWeights {
    fn default() -> Self {
        Self {
            fc: 3.0,
            raw_l2: 0.1,
            kl: 1.0,
        }
    }
}

/// Step-decay SGD schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub iterations: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub milestones: Vec<usize>,
    pub lr_factor: f64,
    pub momentum: f64,
    /// L2 penalty folded into the gradient before the momentum update.
    pub weight_decay: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            iterations: 1400,
            batch_size: 64,
            base_lr: 0.1,
            milestones: vec![500, 1000, 1200, 1400],
            lr_factor: 0.1,
            momentum: crate::toy_models::DEFAULT_MOMENTUM,
            weight_decay: 5e-4,
        }
    }
}

impl Schedule {
    pub fn lr(&self, iteration: usize) -> f64 {
        step_decay_lr(self.base_lr, iteration, &self.milestones, self.lr_factor)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.base_lr > 0.0) || !(self.lr_factor > 0.0 && self.lr_factor < 1.0) {
            return Err(KdError::InvalidParam(format!("invalid schedule {self:?}")));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(KdError::InvalidParam("weight_decay must be >= 0".into()));
        }
        if self.milestones.windows(2).any(|w| w[0] > w[1]) {
            return Err(KdError::InvalidParam("milestones must be sorted".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub schedule: Schedule,
    pub mode: KdMode,
    pub iled: IledParams,
    pub rpsd: RpsdParams,
    pub kl: KlParams,
    pub baseline: BaselineWeights,
    /// Bank capacity as a multiple of the batch size.
    pub bank_ratio: usize,
    /// Seeds the mini-batch sampler.
    pub seed: u64,
    /// Record every n-th iteration (the first and last are always recorded).
    pub log_every: usize,
    /// Embed the whole training set with the teacher once instead of every iteration.
    pub cache_teacher: bool,
    /// Before the first step, rescale the student's output layer so its mean
    /// embedding norm on the training set equals the teacher's.
    pub match_teacher_norm: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            schedule: Schedule::default(),
            mode: KdMode::Unified,
            iled: IledParams::default(),
            rpsd: RpsdParams::default(),
            kl: KlParams::default(),
            baseline: BaselineWeights::default(),
            bank_ratio: 3,
            seed: 0,
            log_every: 1,
            cache_teacher: false,
            match_teacher_norm: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.iled.validate()?;
        self.rpsd.validate()?;
        if self.bank_ratio == 0 || self.log_every == 0 {
            return Err(KdError::InvalidParam("bank_ratio and log_every must be >= 1".into()));
        }
        if self.schedule.iterations == 0 {
            return Err(KdError::InvalidParam("iterations must be >= 1".into()));
        }
        Ok(())
    }

    pub fn bank_capacity(&self) -> usize {
        self.bank_ratio * self.schedule.batch_size
    }
}

/// Encoder plus its classification head.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub encoder: NetworkState<T>,
    pub head: MarginHead<T>,
}

impl<T: Scalar> Model<T> {
    pub fn init(spec: DenseNetSpec, head: FrHeadParams) -> Result<Self> {
        let head_seed = spec.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1);
        let dim = spec.output_dim();
        Ok(Self {
            encoder: NetworkState::init(spec)?,
            head: MarginHead::init(head, dim, head_seed)?,
        })
    }

    pub fn fingerprint(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.encoder.param_fingerprint().hash(&mut h);
        for v in self.head.weights.iter() {
            v.as_f64().to_bits().hash(&mut h);
        }
        h.finish()
    }
}

fn mean_row_norm<T: Scalar>(e: &Array2<T>) -> T {
    let total = e.outer_iter().fold(T::zero(), |acc, r| acc + r.dot(&r).sqrt());
    total / T::from_count(e.nrows().max(1))
}

/// Scales the student's last layer (weight and bias) so that its mean
/// embedding norm over `x` equals the teacher's. The normalized losses take
/// steps inversely proportional to that norm, so this puts the student on the
/// same effective step size as the network it imitates. Returns the factor.
pub fn match_teacher_norm<T: Scalar>(student: &mut Model<T>, teacher: &Model<T>, x: ArrayView2<'_, T>) -> Result<T> {
    let target = mean_row_norm(&teacher.encoder.embed(x)?);
    let current = mean_row_norm(&student.encoder.embed(x)?);
    if !(current > T::zero()) || !target.is_finite() {
        return Err(KdError::InvalidParam("cannot match norms of zero or non-finite embeddings".into()));
    }
    let factor = target / current;
    let last = student.encoder.layers_mut().last_mut().expect("networks have a layer");
    last.weight.mapv_inplace(|w| w * factor);
    last.bias.mapv_inplace(|b| b * factor);
    Ok(factor)
}

fn gather<T: Scalar>(x: &Array2<T>, idx: &[usize]) -> Array2<T> {
    x.select(Axis(0), idx)
}

fn sgd_update<T: Scalar>(
    model: &mut Model<T>,
    mut grads: crate::toy_models::NetworkGrads<T>,
    mut head_grad: Array2<T>,
    schedule: &Schedule,
    iteration: usize,
) -> Result<()> {
    let wd = T::lit(schedule.weight_decay);
    model.encoder.add_weight_decay(&mut grads, wd);
    if wd != T::zero() {
        head_grad.scaled_add(wd, &model.head.weights);
    }
    let lr = T::lit(schedule.lr(iteration));
    let momentum = T::lit(schedule.momentum);
    model.encoder.apply_sgd(&grads, lr, momentum)?;
    model.head.apply_sgd(&head_grad, lr, momentum)
}

fn ensure_finite<T: Scalar>(iteration: usize, what: &'static str, values: impl IntoIterator<Item = T>) -> Result<()> {
    if values.into_iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(KdError::Divergence { iteration, what })
    }
}

/// Trains a model with the recognition loss alone. Zero iterations return the
/// initialization unchanged. Returns the per-iteration losses.
pub fn pretrain_teacher<T: Scalar>(
    model: &mut Model<T>,
    schedule: &Schedule,
    seed: u64,
    data: &Dataset<T>,
) -> Result<Vec<f64>> {
    schedule.validate()?;
    let mut sampler = EpochSampler::new(data.train_x.nrows(), seed)?;
    let mut losses = Vec::with_capacity(schedule.iterations);
    for it in 0..schedule.iterations {
        let idx = sampler.next_batch(schedule.batch_size);
        let x = gather(&data.train_x, &idx);
        let labels: Vec<usize> = idx.iter().map(|&i| data.train_labels[i]).collect();
        let (emb, cache) = model.encoder.forward(x.view())?;
        ensure_finite(it, "teacher embeddings", emb.iter().copied())?;
        let fr = model.head.loss(emb.view(), &labels)?;
        ensure_finite(it, "teacher loss", [fr.loss.value])?;
        let (grads, _) = model.encoder.backward(&cache, fr.loss.grad.view())?;
        sgd_update(model, grads, fr.weight_grad, schedule, it)?;
        losses.push(fr.loss.value.as_f64());
    }
    Ok(losses)
}

/// Everything computed in one distillation step, exposed to observers.
#[derive(Debug)]
pub struct StepTrace<'a, T> {
    pub iteration: usize,
    pub sample_ids: &'a [usize],
    pub teacher_embeddings: ArrayView2<'a, T>,
    pub student_embeddings: ArrayView2<'a, T>,
    /// Present in KL mode.
    pub teacher_logits: Option<ArrayView2<'a, T>>,
    pub student_logits: Option<ArrayView2<'a, T>>,
    /// Weighted distillation term added to the recognition loss.
    pub kd_value: f64,
    pub bank_fill_before: usize,
    pub banks: Option<&'a BankPair<T>>,
    pub record: &'a IterationRecord,
}

#[derive(Debug, Clone)]
pub struct DistillOutcome<T> {
    pub student: Model<T>,
    pub records: Vec<IterationRecord>,
    pub banks: Option<BankPair<T>>,
}

/// Distills `teacher` into `student`. The teacher is borrowed immutably and
/// never updated.
pub fn distill_student<T: Scalar>(
    cfg: &TrainConfig,
    teacher: &Model<T>,
    student: Model<T>,
    data: &Dataset<T>,
) -> Result<DistillOutcome<T>> {
    distill_student_observed(cfg, teacher, student, data, |_| {})
}

pub fn distill_student_observed<T: Scalar, F>(
    cfg: &TrainConfig,
    teacher: &Model<T>,
    mut student: Model<T>,
    data: &Dataset<T>,
    mut observe: F,
) -> Result<DistillOutcome<T>>
where
    F: FnMut(&StepTrace<'_, T>),
{
    cfg.validate()?;
    let d = student.encoder.spec().output_dim();
    if teacher.encoder.spec().output_dim() != d {
        return Err(KdError::InvalidParam(format!(
            "teacher embeds into {} dims, student into {d}",
            teacher.encoder.spec().output_dim()
        )));
    }
    if teacher.encoder.spec().input_dim() != student.encoder.spec().input_dim() {
        return Err(KdError::InvalidParam("teacher and student input widths differ".into()));
    }
    if cfg.match_teacher_norm {
        match_teacher_norm(&mut student, teacher, data.train_x.view())?;
    }
    let m = cfg.schedule.batch_size;
    let mut banks = if cfg.mode.uses_rpsd() {
        Some(BankPair::new(cfg.bank_capacity(), d)?)
    } else {
        None
    };
    let teacher_cache = if cfg.cache_teacher {
        Some(teacher.encoder.embed(data.train_x.view())?)
    } else {
        None
    };
    let mut sampler = EpochSampler::new(data.train_x.nrows(), cfg.seed)?;
    let zero_iled = IledParams { lambda: 0.0, ..cfg.iled };
    let zero_rpsd = RpsdParams { lambda: 0.0, ..cfg.rpsd };
    let (p_iled, p_rpsd) = (
        if cfg.mode.uses_iled() { cfg.iled } else { zero_iled },
        if cfg.mode.uses_rpsd() { cfg.rpsd } else { zero_rpsd },
    );
    let mut records = Vec::new();

    for it in 0..cfg.schedule.iterations {
        let idx = sampler.next_batch(m);
        let x = gather(&data.train_x, &idx);
        let labels: Vec<usize> = idx.iter().map(|&i| data.train_labels[i]).collect();

        let (e_s, cache) = student.encoder.forward(x.view())?;
        let e_t = match &teacher_cache {
            Some(all) => gather(all, &idx),
            None => teacher.encoder.embed(x.view())?,
        };
        ensure_finite(it, "student embeddings", e_s.iter().copied())?;
        ensure_finite(it, "teacher embeddings", e_t.iter().copied())?;

        let fr = student.head.loss(e_s.view(), &labels)?;
        let mean_cos = diag_cosines(e_t.view(), e_s.view())?.mean().unwrap_or_else(T::zero);

        let iled = if cfg.mode.uses_iled() {
            iled_loss(e_t.view(), e_s.view(), &cfg.iled)?
        } else {
            LossOutput::zeros(m, d)
        };
        let bank_fill_before = banks.as_ref().map_or(0, BankPair::fill);
        let rpsd = match &banks {
            Some(b) if b.is_ready() => rpsd_loss(
                e_t.view(),
                e_s.view(),
                b.teacher.snapshot()?.view(),
                b.student.snapshot()?.view(),
                &cfg.rpsd,
            )?,
            _ => LossOutput::zeros(m, d),
        };
        let delta_norm = rpsd.aux("delta_norm").unwrap_or_else(T::zero);
        let mut total = unified_loss(&iled, &rpsd, &fr.loss, &p_iled, &p_rpsd)?;
        let mut head_grad = fr.weight_grad;

        let mut logits = None;
        let baseline = match cfg.mode {
            KdMode::FcOnly => Some((cfg.baseline.fc, fc_loss(e_t.view(), e_s.view())?)),
            KdMode::RawL2 => Some((cfg.baseline.raw_l2, raw_l2_loss(e_t.view(), e_s.view())?)),
            KdMode::Kl => {
                let t_logits = teacher.head.logits(e_t.view())?;
                let s_logits = student.head.logits(e_s.view())?;
                let kl = kl_soft_logits_loss(t_logits.view(), s_logits.view(), &cfg.kl)?;
                let (ge, gw) = student.head.logits_backward(e_s.view(), kl.grad.view())?;
                let w = T::lit(cfg.baseline.kl);
                head_grad.scaled_add(w, &gw);
                let value = kl.value;
                logits = Some((t_logits, s_logits));
                Some((cfg.baseline.kl, LossOutput::new(value, ge)))
            }
            _ => None,
        };
        let mut kd_value = (total.value - fr.loss.value).as_f64();
        if let Some((weight, term)) = &baseline {
            let w = T::lit(*weight);
            total.value = total.value + w * term.value;
            total.grad.scaled_add(w, &term.grad);
            kd_value = (w * term.value).as_f64();
        }
        ensure_finite(it, "total loss", [total.value])?;
        ensure_finite(it, "embedding gradient", total.grad.iter().copied())?;

        let (grads, _) = student.encoder.backward(&cache, total.grad.view())?;
        let lr_f = cfg.schedule.lr(it);
        sgd_update(&mut student, grads, head_grad, &cfg.schedule, it)?;
        if !student.encoder.is_finite() {
            return Err(KdError::Divergence {
                iteration: it,
                what: "student parameters",
            });
        }

        // the bank update follows the parameter update
        if let Some(b) = banks.as_mut() {
            let ids: Vec<u64> = idx.iter().map(|&i| i as u64).collect();
            b.enqueue(e_t.view(), e_s.view(), &ids)?;
        }

        let record = IterationRecord {
            iter: it,
            lr: lr_f,
            loss_fr: fr.loss.value.as_f64(),
            loss_iled: iled.value.as_f64(),
            loss_rpsd: rpsd.value.as_f64(),
            loss_total: total.value.as_f64(),
            mean_cos: mean_cos.as_f64(),
            delta_norm: delta_norm.as_f64(),
        };
        observe(&StepTrace {
            iteration: it,
            sample_ids: &idx,
            teacher_embeddings: e_t.view(),
            student_embeddings: e_s.view(),
            teacher_logits: logits.as_ref().map(|(t, _)| t.view()),
            student_logits: logits.as_ref().map(|(_, s)| s.view()),
            kd_value,
            bank_fill_before,
            banks: banks.as_ref(),
            record: &record,
        });
        if it % cfg.log_every == 0 || it + 1 == cfg.schedule.iterations {
            records.push(record);
        }
    }
    Ok(DistillOutcome {
        student,
        records,
        banks,
    })
}
