use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_mismatch, KdError, Result};
use crate::geometry::{backprop_normalize, clamp_unit, normalize_rows};
use crate::losses::LossOutput;
use crate::scalar::Scalar;

/// Cosine additive-margin softmax head settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrHeadParams {
    pub classes: usize,
    pub scale: f64,
    /// Subtracted from the target-class cosine.
    pub margin: f64,
}

impl Default for FrHeadParams {
    fn default() -> Self {
        Self {
            classes: 50,
            scale: 30.0,
            margin: 0.4,
        }
    }
}

impl FrHeadParams {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || !(self.scale > 0.0) || !(0.0..1.0).contains(&self.margin) {
            return Err(KdError::InvalidParam(format!(
                "head requires classes >= 2, scale > 0, 0 <= margin < 1; got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrLoss<T> {
    /// Value and gradient with respect to the embeddings.
    pub loss: LossOutput<T>,
    pub weight_grad: Array2<T>,
}

/// Cross-entropy over `scale * (cos(e_i, w_k) - margin * [k == y_i])`, with
/// embeddings and class weights both normalized.
pub fn fr_margin_loss<T: Scalar>(
    embeddings: ArrayView2<'_, T>,
    labels: &[usize],
    head: &FrHeadParams,
    class_weights: ArrayView2<'_, T>,
) -> Result<FrLoss<T>> {
    let (m, d) = embeddings.dim();
    if labels.len() != m {
        return Err(shape_mismatch("fr_margin_loss labels", m, labels.len()));
    }
    if class_weights.dim() != (head.classes, d) {
        return Err(shape_mismatch("fr_margin_loss weights", (head.classes, d), class_weights.dim()));
    }
    if m == 0 {
        return Err(KdError::EmptyBatch);
    }
    if let Some(&label) = labels.iter().find(|&&y| y >= head.classes) {
        return Err(KdError::LabelOutOfRange {
            label,
            classes: head.classes,
        });
    }
    let (e_hat, e_norm) = normalize_rows(embeddings)?;
    let (w_hat, w_norm) = normalize_rows(class_weights)?;
    let scale = T::lit(head.scale);
    let margin = T::lit(head.margin);
    let mf = T::from_count(m);

    let mut logits = e_hat.dot(&w_hat.t()).mapv(|c| scale * clamp_unit(c));
    for (mut row, &y) in logits.outer_iter_mut().zip(labels) {
        row[y] = row[y] - scale * margin;
    }

    // dL/dcos = scale * (softmax - onehot) / m. The argmax term is split off
    // so that confidently classified rows keep full relative precision.
    let mut value = T::zero();
    let mut g_cos = Array2::zeros(logits.dim());
    for ((row, mut g), &y) in logits.outer_iter().zip(g_cos.outer_iter_mut()).zip(labels) {
        let (top, max) = row
            .indexed_iter()
            .fold((0, T::neg_infinity()), |(ia, a), (i, &b)| if b > a { (i, b) } else { (ia, a) });
        let rest = row
            .indexed_iter()
            .filter(|&(k, _)| k != top)
            .fold(T::zero(), |acc, (_, &z)| acc + (z - max).exp());
        let denom = T::one() + rest;
        value = value + (max - row[y]) + rest.ln_1p();
        for (k, (gv, &z)) in g.iter_mut().zip(row.iter()).enumerate() {
            let d = match (k == y, k == top) {
                (true, true) => -rest / denom,
                (true, false) => (z - max).exp() / denom - T::one(),
                (false, true) => T::one() / denom,
                (false, false) => (z - max).exp() / denom,
            };
            *gv = scale * d / mf;
        }
    }
    value = value / mf;

    let grad_e_hat = g_cos.dot(&w_hat);
    let grad_w_hat = g_cos.t().dot(&e_hat);
    let grad = backprop_normalize(e_hat.view(), e_norm.view(), grad_e_hat.view());
    let weight_grad = backprop_normalize(w_hat.view(), w_norm.view(), grad_w_hat.view());
    Ok(FrLoss {
        loss: LossOutput::new(value, grad),
        weight_grad,
    })
}

/// Trainable class-weight matrix for [`fr_margin_loss`] with its momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginHead<T> {
    pub params: FrHeadParams,
    pub weights: Array2<T>,
    pub velocity: Array2<T>,
}

impl<T: Scalar> MarginHead<T> {
    pub fn init(params: FrHeadParams, dim: usize, seed: u64) -> Result<Self> {
        params.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let weights = Array2::from_shape_simple_fn((params.classes, dim), || T::lit(normal.sample(&mut rng)));
        Ok(Self {
            params,
            velocity: Array2::zeros(weights.dim()),
            weights,
        })
    }

    pub fn loss(&self, embeddings: ArrayView2<'_, T>, labels: &[usize]) -> Result<FrLoss<T>> {
        fr_margin_loss(embeddings, labels, &self.params, self.weights.view())
    }

    /// Margin-free scaled cosine logits, used as soft labels for the KL baseline.
    pub fn logits(&self, embeddings: ArrayView2<'_, T>) -> Result<Array2<T>> {
        let (e_hat, _) = normalize_rows(embeddings)?;
        let (w_hat, _) = normalize_rows(self.weights.view())?;
        let scale = T::lit(self.params.scale);
        Ok(e_hat.dot(&w_hat.t()).mapv(|c| scale * clamp_unit(c)))
    }

    /// Backpropagates a gradient on [`MarginHead::logits`] to the embeddings
    /// and the class weights.
    pub fn logits_backward(
        &self,
        embeddings: ArrayView2<'_, T>,
        grad_logits: ArrayView2<'_, T>,
    ) -> Result<(Array2<T>, Array2<T>)> {
        let (e_hat, e_norm) = normalize_rows(embeddings)?;
        let (w_hat, w_norm) = normalize_rows(self.weights.view())?;
        let g = grad_logits.mapv(|v| v * T::lit(self.params.scale));
        let ge = backprop_normalize(e_hat.view(), e_norm.view(), g.dot(&w_hat).view());
        let gw = backprop_normalize(w_hat.view(), w_norm.view(), g.t().dot(&e_hat).view());
        Ok((ge, gw))
    }

    pub fn apply_sgd(&mut self, grad: &Array2<T>, lr: T, momentum: T) -> Result<()> {
        super::optim::sgd_momentum_step(&mut self.weights, &mut self.velocity, grad, lr, momentum)
    }

    /// Index of the nearest class weight by cosine, per row.
    pub fn predict(&self, embeddings: ArrayView2<'_, T>) -> Result<Vec<usize>> {
        let logits = self.logits(embeddings)?;
        Ok(logits
            .outer_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, T::neg_infinity()), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
                    .0
            })
            .collect())
    }
}
