//! Verification metrics on embedding pairs: best-threshold pair accuracy and
//! true-accept rate at fixed false-accept rates.

use std::collections::{BTreeMap, HashSet};

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{KdError, Result};
use crate::geometry::cosine_sim;
use crate::scalar::Scalar;

/// Genuine and impostor pairs of sample indices.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PairSet {
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
}

impl PairSet {
    /// Rejects repeated pairs (in either orientation) across both lists.
    pub fn new(positives: Vec<(usize, usize)>, negatives: Vec<(usize, usize)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for &(a, b) in positives.iter().chain(&negatives) {
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(KdError::InvalidParam(format!("pair ({a}, {b}) repeated")));
            }
        }
        Ok(Self {
            positives,
            negatives,
        })
    }

    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    #[default]
    Cosine,
    /// Negated Euclidean distance.
    Euclidean,
}

/// Similarity scores for the positive and negative pairs.
pub fn pair_scores<T: Scalar>(
    embeddings: ArrayView2<'_, T>,
    pairs: &PairSet,
    kind: ScoreKind,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = embeddings.nrows();
    let score = |&(a, b): &(usize, usize)| -> Result<f64> {
        for idx in [a, b] {
            if idx >= n {
                return Err(KdError::Index { index: idx, len: n });
            }
        }
        let (x, y) = (embeddings.row(a), embeddings.row(b));
        match kind {
            ScoreKind::Cosine => cosine_sim(x, y).map(Scalar::as_f64),
            ScoreKind::Euclidean => {
                let d = (&x - &y).mapv(|v| v * v).sum().sqrt();
                Ok(-d.as_f64())
            }
        }
    };
    let pos = pairs.positives.iter().map(score).collect::<Result<Vec<_>>>()?;
    let neg = pairs.negatives.iter().map(score).collect::<Result<Vec<_>>>()?;
    Ok((pos, neg))
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Number of entries of an ascending slice strictly greater than `t`.
fn count_above(sorted: &[f64], t: f64) -> usize {
    sorted.len() - sorted.partition_point(|&v| v <= t)
}

/// Candidate thresholds: below every score, midpoints of consecutive distinct
/// scores, and above every score. Ascending.
pub fn candidate_thresholds(pos: &[f64], neg: &[f64]) -> Vec<f64> {
    let mut all: Vec<f64> = pos.iter().chain(neg).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    let mut out = Vec::with_capacity(all.len() + 1);
    if let (Some(&lo), Some(&hi)) = (all.first(), all.last()) {
        out.push(lo - 1.0);
        out.extend(all.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        out.push(hi + 1.0);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AccuracyResult {
    pub accuracy: f64,
    pub threshold: f64,
}

/// Accuracy of the rule `score > threshold => same identity` at the best
/// candidate threshold; ties go to the lowest threshold.
pub fn best_threshold_accuracy(pos: &[f64], neg: &[f64]) -> Result<AccuracyResult> {
    let total = pos.len() + neg.len();
    if total == 0 {
        return Err(KdError::EmptyBatch);
    }
    let (sp, sn) = (sorted(pos), sorted(neg));
    let mut best = AccuracyResult {
        accuracy: -1.0,
        threshold: f64::NAN,
    };
    let mut best_correct = 0usize;
    for t in candidate_thresholds(pos, neg) {
        let correct = count_above(&sp, t) + (sn.len() - count_above(&sn, t));
        if best.accuracy < 0.0 || correct > best_correct {
            best_correct = correct;
            best = AccuracyResult {
                accuracy: correct as f64 / total as f64,
                threshold: t,
            };
        }
    }
    Ok(best)
}

pub fn pair_accuracy<T: Scalar>(embeddings: ArrayView2<'_, T>, pairs: &PairSet) -> Result<AccuracyResult> {
    let (pos, neg) = pair_scores(embeddings, pairs, ScoreKind::Cosine)?;
    best_threshold_accuracy(&pos, &neg)
}

/// For each FAR target, the TAR at the lowest observed score used as
/// threshold whose empirical FAR (`#neg > t / #neg`) does not exceed the target.
pub fn tar_at_far_scores(pos: &[f64], neg: &[f64], far_targets: &[f64]) -> Result<Vec<f64>> {
    if pos.is_empty() {
        return Err(KdError::EmptyBatch);
    }
    let (sp, sn) = (sorted(pos), sorted(neg));
    let mut thresholds: Vec<f64> = pos.iter().chain(neg).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let n_neg = sn.len() as f64;

    far_targets
        .iter()
        .map(|&target| {
            if !(target > 0.0 && target <= 1.0) {
                return Err(KdError::Range(format!("FAR target {target} outside (0, 1]")));
            }
            let needed = (1.0 / target).ceil() as usize;
            if sn.len() < needed {
                return Err(KdError::InsufficientNegatives {
                    target,
                    negatives: sn.len(),
                    needed,
                });
            }
            // FAR is non-increasing in the threshold, and zero at the maximum score
            let idx = thresholds.partition_point(|&t| count_above(&sn, t) as f64 / n_neg > target);
            let t = thresholds[idx];
            Ok(count_above(&sp, t) as f64 / sp.len() as f64)
        })
        .collect()
}

pub fn tar_at_far<T: Scalar>(
    embeddings: ArrayView2<'_, T>,
    pairs: &PairSet,
    far_targets: &[f64],
) -> Result<Vec<f64>> {
    let (pos, neg) = pair_scores(embeddings, pairs, ScoreKind::Cosine)?;
    tar_at_far_scores(&pos, &neg, far_targets)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub tar: f64,
    pub far: f64,
}

/// ROC over every distinct observed score as threshold, ascending.
pub fn roc_curve(pos: &[f64], neg: &[f64]) -> Vec<RocPoint> {
    let (sp, sn) = (sorted(pos), sorted(neg));
    let mut thresholds: Vec<f64> = pos.iter().chain(neg).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let frac = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    thresholds
        .into_iter()
        .map(|t| RocPoint {
            threshold: t,
            tar: frac(count_above(&sp, t), sp.len()),
            far: frac(count_above(&sn, t), sn.len()),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub far_targets: Vec<f64>,
    pub score: ScoreKind,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            far_targets: vec![1e-2, 1e-3],
            score: ScoreKind::Cosine,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub pair_accuracy: f64,
    pub best_threshold: f64,
    /// Keyed by the FAR target written in exponent form, e.g. `1e-3`.
    pub tar: BTreeMap<String, f64>,
}

pub fn evaluate<T: Scalar>(
    embeddings: ArrayView2<'_, T>,
    pairs: &PairSet,
    options: &EvalOptions,
) -> Result<(EvalReport, Vec<RocPoint>)> {
    let (pos, neg) = pair_scores(embeddings, pairs, options.score)?;
    let acc = best_threshold_accuracy(&pos, &neg)?;
    let tars = tar_at_far_scores(&pos, &neg, &options.far_targets)?;
    let tar = options
        .far_targets
        .iter()
        .zip(tars)
        .map(|(f, t)| (format!("{f:e}"), t))
        .collect();
    Ok((
        EvalReport {
            pair_accuracy: acc.accuracy,
            best_threshold: acc.threshold,
            tar,
        },
        roc_curve(&pos, &neg),
    ))
}
