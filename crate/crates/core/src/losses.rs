//! Distillation objectives. Every loss returns its scalar value together with
//! the analytic gradient with respect to the student's raw batch (or logits,
//! for the soft-logit KL baseline). Teacher inputs are constants throughout.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{shape_mismatch, KdError, Result};
use crate::geometry::{backprop_normalize, clamp_unit, normalize_rows};
use crate::scalar::{sigmoid, softplus, Scalar};

/// Scalar loss paired with its gradient and a few named diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput<T> {
    pub value: T,
    pub grad: Array2<T>,
    pub aux: Vec<(&'static str, T)>,
}

impl<T: Scalar> LossOutput<T> {
    pub fn new(value: T, grad: Array2<T>) -> Self {
        Self {
            value,
            grad,
            aux: Vec::new(),
        }
    }

    /// A zero contribution with a zero gradient of the given shape.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(T::zero(), Array2::zeros((rows, cols)))
    }

    pub fn with_aux(mut self, name: &'static str, value: T) -> Self {
        self.aux.push((name, value));
        self
    }

    pub fn aux(&self, name: &str) -> Option<T> {
        self.aux.iter().find(|(k, _)| *k == name).map(|&(_, v)| v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IledVariant {
    /// Core applied to the batch-mean cosine.
    BatchMean,
    /// Core applied per sample, then averaged.
    #[default]
    PerSample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IledParams {
    /// Steepness around the soft margin.
    pub r: f64,
    /// Soft margin (target cosine).
    pub s: f64,
    /// Smoothness constant.
    pub b: f64,
    pub lambda: f64,
    pub variant: IledVariant,
}

impl Default for IledParams {
    fn default() -> Self {
        Self {
            r: 40.0,
            s: 0.9,
            b: 0.1,
            lambda: 3.0,
            variant: IledVariant::PerSample,
        }
    }
}

impl IledParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.b > 0.0 && self.s > -1.0 && self.s < 1.0 && self.lambda >= 0.0)
        {
            return Err(KdError::InvalidParam(format!(
                "iled requires r > 0, b > 0, -1 < s < 1, lambda >= 0; got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RpsdParams {
    pub r_prime: f64,
    /// Transition threshold on the normalized dissimilarity.
    pub t: f64,
    pub b_prime: f64,
    pub lambda: f64,
}

impl Default for RpsdParams {
    fn default() -> Self {
        Self {
            r_prime: 60.0,
            t: 0.05,
            b_prime: 1.0,
            lambda: 40.0,
        }
    }
}

impl RpsdParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_prime > 0.0
            && self.b_prime > 0.0
            && self.t >= 0.0
            && self.t < 2.0
            && self.lambda >= 0.0)
        {
            return Err(KdError::InvalidParam(format!(
                "rpsd requires r' > 0, b' > 0, 0 <= t < 2, lambda >= 0; got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KlParams {
    pub temperature: f64,
}

impl Default for KlParams {
    fn default() -> Self {
        Self { temperature: 3.0 }
    }
}

fn check_same_shape<T>(
    context: &'static str,
    a: &ArrayView2<'_, T>,
    b: &ArrayView2<'_, T>,
) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(shape_mismatch(context, a.dim(), b.dim()));
    }
    if a.nrows() == 0 {
        return Err(KdError::EmptyBatch);
    }
    Ok(())
}

/// Mean squared distance between unit-normalized teacher and student rows.
pub fn fc_loss<T: Scalar>(teacher: ArrayView2<'_, T>, student: ArrayView2<'_, T>) -> Result<LossOutput<T>> {
    check_same_shape("fc_loss", &teacher, &student)?;
    let (t_hat, _) = normalize_rows(teacher)?;
    let (s_hat, s_norm) = normalize_rows(student)?;
    let m = T::from_count(teacher.nrows());
    let diff = &s_hat - &t_hat;
    let value = diff.iter().fold(T::zero(), |acc, &v| acc + v * v) / m;
    let grad_unit = diff.mapv(|v| T::two() * v / m);
    let grad = backprop_normalize(s_hat.view(), s_norm.view(), grad_unit.view());
    let mean_cos = (&t_hat * &s_hat).sum() / m;
    Ok(LossOutput::new(value, grad).with_aux("mean_cos", mean_cos))
}

/// The cosine form of the FC loss: `(2/m) * sum(1 - x_i)`.
pub fn fc_loss_cosform<T: Scalar>(cosines: &[T]) -> Result<T> {
    if cosines.is_empty() {
        return Err(KdError::EmptyBatch);
    }
    let total = cosines.iter().fold(T::zero(), |acc, &x| acc + (T::one() - x));
    Ok(T::two() * total / T::from_count(cosines.len()))
}

/// Mean squared Euclidean distance on raw embeddings.
pub fn raw_l2_loss<T: Scalar>(teacher: ArrayView2<'_, T>, student: ArrayView2<'_, T>) -> Result<LossOutput<T>> {
    check_same_shape("raw_l2_loss", &teacher, &student)?;
    let m = T::from_count(teacher.nrows());
    let diff = &student - &teacher;
    let value = diff.iter().fold(T::zero(), |acc, &v| acc + v * v) / m;
    let grad = diff.mapv(|v| T::two() * v / m);
    Ok(LossOutput::new(value, grad))
}

fn log_softmax_rows<T: Scalar>(logits: ArrayView2<'_, T>, temperature: T) -> Array2<T> {
    let mut out = logits.mapv(|v| v / temperature);
    for mut row in out.outer_iter_mut() {
        let max = row.fold(T::neg_infinity(), |a, &b| a.max(b));
        let lse = max + row.fold(T::zero(), |acc, &v| acc + (v - max).exp()).ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Temperature-scaled KL divergence from teacher to student soft labels,
/// `T^2 * mean_i KL(softmax(t_i / T) || softmax(s_i / T))`, with gradient
/// with respect to the student logits.
pub fn kl_soft_logits_loss<T: Scalar>(
    teacher_logits: ArrayView2<'_, T>,
    student_logits: ArrayView2<'_, T>,
    params: &KlParams,
) -> Result<LossOutput<T>> {
    check_same_shape("kl_soft_logits_loss", &teacher_logits, &student_logits)?;
    if teacher_logits.ncols() < 2 {
        return Err(shape_mismatch("kl_soft_logits_loss classes", ">= 2", teacher_logits.ncols()));
    }
    if !(params.temperature > 0.0) {
        return Err(KdError::InvalidParam(format!(
            "temperature must be positive, got {}",
            params.temperature
        )));
    }
    let temp = T::lit(params.temperature);
    let m = T::from_count(teacher_logits.nrows());
    let log_p = log_softmax_rows(teacher_logits, temp);
    let log_q = log_softmax_rows(student_logits, temp);
    let p = log_p.mapv(T::exp);
    let q = log_q.mapv(T::exp);
    let mut total = T::zero();
    Zip::from(&p).and(&log_p).and(&log_q).for_each(|&pv, &lp, &lq| {
        if pv > T::zero() {
            total = total + pv * (lp - lq);
        }
    });
    let value = temp * temp * total / m;
    let grad = (&q - &p).mapv(|v| temp * v / m);
    Ok(LossOutput::new(value, grad))
}

/// Rescaled-softplus hard-mining core for instance alignment:
/// `(1/r) ln(1 + exp(-r (x - s))) * sqrt((x - s)^2 + b)`.
pub fn iled_core<T: Scalar>(x: T, p: &IledParams) -> T {
    let (r, u) = (T::lit(p.r), x - T::lit(p.s));
    softplus(-r * u) / r * (u * u + T::lit(p.b)).sqrt()
}

/// Derivative of [`iled_core`] with respect to `x`.
pub fn iled_core_grad<T: Scalar>(x: T, p: &IledParams) -> T {
    let (r, u) = (T::lit(p.r), x - T::lit(p.s));
    let w = (u * u + T::lit(p.b)).sqrt();
    let z = -r * u;
    -sigmoid(z) * w + softplus(z) * u / (r * w)
}

/// Rescaled-softplus core for relational alignment:
/// `(1/r') ln(1 + exp(r' (d - t))) * sqrt((d - t)^2 + b')`.
pub fn rpsd_core<T: Scalar>(delta: T, p: &RpsdParams) -> T {
    let (r, u) = (T::lit(p.r_prime), delta - T::lit(p.t));
    softplus(r * u) / r * (u * u + T::lit(p.b_prime)).sqrt()
}

/// Derivative of [`rpsd_core`] with respect to the normalized dissimilarity.
pub fn rpsd_core_grad<T: Scalar>(delta: T, p: &RpsdParams) -> T {
    let (r, u) = (T::lit(p.r_prime), delta - T::lit(p.t));
    let w = (u * u + T::lit(p.b_prime)).sqrt();
    let z = r * u;
    sigmoid(z) * w + softplus(z) * u / (r * w)
}

/// Instance-level embedding distillation loss and its gradient.
pub fn iled_loss<T: Scalar>(
    teacher: ArrayView2<'_, T>,
    student: ArrayView2<'_, T>,
    p: &IledParams,
) -> Result<LossOutput<T>> {
    check_same_shape("iled_loss", &teacher, &student)?;
    let (t_hat, _) = normalize_rows(teacher)?;
    let (s_hat, s_norm) = normalize_rows(student)?;
    let m = T::from_count(teacher.nrows());
    let cos: Array1<T> = (&t_hat * &s_hat).sum_axis(Axis(1)).mapv(clamp_unit);
    let mean_cos = cos.sum() / m;

    let (value, dcos): (T, Array1<T>) = match p.variant {
        IledVariant::PerSample => {
            let value = cos.iter().fold(T::zero(), |acc, &x| acc + iled_core(x, p)) / m;
            (value, cos.mapv(|x| iled_core_grad(x, p) / m))
        }
        IledVariant::BatchMean => {
            let g = iled_core_grad(mean_cos, p) / m;
            (iled_core(mean_cos, p), Array1::from_elem(cos.len(), g))
        }
    };

    let grad_unit = &t_hat * &dcos.insert_axis(Axis(1));
    let grad = backprop_normalize(s_hat.view(), s_norm.view(), grad_unit.view());
    Ok(LossOutput::new(value, grad).with_aux("mean_cos", mean_cos))
}

/// Element-wise `|S_t - S_s|`.
pub fn dissimilarity_matrix<T: Scalar>(
    teacher_sim: ArrayView2<'_, T>,
    student_sim: ArrayView2<'_, T>,
) -> Result<Array2<T>> {
    if teacher_sim.dim() != student_sim.dim() {
        return Err(shape_mismatch(
            "dissimilarity_matrix",
            teacher_sim.dim(),
            student_sim.dim(),
        ));
    }
    Ok(Zip::from(&teacher_sim)
        .and(&student_sim)
        .map_collect(|&a, &b| (a - b).abs()))
}

/// Mean over all entries of a dissimilarity matrix.
pub fn normalized_dissimilarity<T: Scalar>(d: ArrayView2<'_, T>) -> Result<T> {
    if d.is_empty() {
        return Err(KdError::EmptyMatrix);
    }
    Ok(d.sum() / T::from_count(d.len()))
}

/// Relation-based pairwise similarity distillation against a memory bank.
///
/// Bank rows are constants: the gradient flows only into `student_batch`.
pub fn rpsd_loss<T: Scalar>(
    teacher_batch: ArrayView2<'_, T>,
    student_batch: ArrayView2<'_, T>,
    teacher_bank: ArrayView2<'_, T>,
    student_bank: ArrayView2<'_, T>,
    p: &RpsdParams,
) -> Result<LossOutput<T>> {
    check_same_shape("rpsd_loss batch", &teacher_batch, &student_batch)?;
    if teacher_bank.nrows() == 0 || student_bank.nrows() == 0 {
        return Err(KdError::BankNotReady {
            fill: 0,
            capacity: teacher_bank.nrows().max(student_bank.nrows()),
        });
    }
    if teacher_bank.dim() != student_bank.dim() {
        return Err(shape_mismatch("rpsd_loss bank", teacher_bank.dim(), student_bank.dim()));
    }
    if teacher_bank.ncols() != teacher_batch.ncols() {
        return Err(shape_mismatch("rpsd_loss width", teacher_batch.ncols(), teacher_bank.ncols()));
    }

    let (et_hat, _) = normalize_rows(teacher_batch)?;
    let (ft_hat, _) = normalize_rows(teacher_bank)?;
    let (es_hat, es_norm) = normalize_rows(student_batch)?;
    let (fs_hat, _) = normalize_rows(student_bank)?;
    let s_t = et_hat.dot(&ft_hat.t()).mapv(clamp_unit);
    let s_s = es_hat.dot(&fs_hat.t()).mapv(clamp_unit);

    let d = dissimilarity_matrix(s_t.view(), s_s.view())?;
    let delta = normalized_dissimilarity(d.view())?;
    let value = rpsd_core(delta, p);

    // d|a - b|/db = sign(b - a), with the subgradient 0 at a == b
    let scale = rpsd_core_grad(delta, p) / T::from_count(d.len());
    let g_sim = Zip::from(&s_t).and(&s_s).map_collect(|&a, &b| {
        if b > a {
            scale
        } else if b < a {
            -scale
        } else {
            T::zero()
        }
    });
    let grad_unit = g_sim.dot(&fs_hat);
    let grad = backprop_normalize(es_hat.view(), es_norm.view(), grad_unit.view());
    Ok(LossOutput::new(value, grad).with_aux("delta_norm", delta))
}

/// `lambda_iled * L_iled + lambda_rpsd * L_rpsd + L_fr`, value and gradient alike.
pub fn unified_loss<T: Scalar>(
    iled: &LossOutput<T>,
    rpsd: &LossOutput<T>,
    fr: &LossOutput<T>,
    p_iled: &IledParams,
    p_rpsd: &RpsdParams,
) -> Result<LossOutput<T>> {
    for other in [&iled.grad, &rpsd.grad] {
        if other.dim() != fr.grad.dim() {
            return Err(shape_mismatch("unified_loss", fr.grad.dim(), other.dim()));
        }
    }
    let (li, lr) = (T::lit(p_iled.lambda), T::lit(p_rpsd.lambda));
    let value = li * iled.value + lr * rpsd.value + fr.value;
    let mut grad = fr.grad.clone();
    Zip::from(&mut grad)
        .and(&iled.grad)
        .and(&rpsd.grad)
        .for_each(|g, &a, &b| *g = li * a + lr * b + *g);
    Ok(LossOutput::new(value, grad)
        .with_aux("loss_iled", iled.value)
        .with_aux("loss_rpsd", rpsd.value)
        .with_aux("loss_fr", fr.value))
}
