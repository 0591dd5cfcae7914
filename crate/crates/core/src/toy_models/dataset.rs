use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{KdError, Result};
use crate::evaluator::PairSet;
use crate::scalar::Scalar;

/// Identities as random directions on the unit sphere; samples are noisy,
/// re-normalized copies of their identity direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticDatasetSpec {
    pub identities: usize,
    pub input_dim: usize,
    pub samples_per_identity: usize,
    /// Per-coordinate Gaussian noise added before re-normalization.
    pub noise: f64,
    /// Fraction of each training identity's samples used for training.
    pub train_fraction: f64,
    /// Identities withheld from training entirely; they only appear in evaluation pairs.
    pub heldout_identities: usize,
    pub positive_pairs: usize,
    pub negative_pairs: usize,
    pub seed: u64,
}

impl Default for SyntheticDatasetSpec {
    fn default() -> Self {
        Self {
            identities: 50,
            input_dim: 64,
            samples_per_identity: 400,
            noise: 0.3,
            train_fraction: 0.75,
            heldout_identities: 0,
            positive_pairs: 2000,
            negative_pairs: 2000,
            seed: 0,
        }
    }
}

impl SyntheticDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.identities >= 2
            && self.samples_per_identity >= 2
            && self.input_dim >= 2
            && self.noise >= 0.0
            && self.train_fraction > 0.0
            && self.train_fraction <= 1.0
            && self.identities - self.heldout_identities.min(self.identities) >= 2;
        if !ok {
            return Err(KdError::InvalidParam(format!("invalid dataset spec {self:?}")));
        }
        Ok(())
    }

    /// Number of classes the training labels range over.
    pub fn train_classes(&self) -> usize {
        self.identities - self.heldout_identities
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub directions: Array2<T>,
    pub train_x: Array2<T>,
    pub train_labels: Vec<usize>,
    pub eval_x: Array2<T>,
    pub eval_labels: Vec<usize>,
    /// Index pairs into `eval_x`.
    pub pairs: PairSet,
}

fn unit_gaussian(rng: &mut ChaCha8Rng, d: usize) -> Array1<f64> {
    loop {
        let v: Array1<f64> = Array1::from_shape_simple_fn(d, || StandardNormal.sample(rng));
        let n = v.dot(&v).sqrt();
        if n > 1e-12 {
            return v / n;
        }
    }
}

pub fn generate_dataset<T: Scalar>(spec: &SyntheticDatasetSpec) -> Result<Dataset<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.input_dim;
    let directions: Vec<Array1<f64>> = (0..spec.identities).map(|_| unit_gaussian(&mut rng, d)).collect();

    let n_train = ((spec.samples_per_identity as f64 * spec.train_fraction).round() as usize)
        .clamp(1, spec.samples_per_identity);
    let mut train = Vec::new();
    let mut train_labels = Vec::new();
    let mut eval = Vec::new();
    let mut eval_labels = Vec::new();
    for (id, dir) in directions.iter().enumerate() {
        let heldout = id >= spec.train_classes();
        for k in 0..spec.samples_per_identity {
            let mut x = dir.clone();
            if spec.noise > 0.0 {
                x.mapv_inplace(|v| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    v + spec.noise * z
                });
                let n = x.dot(&x).sqrt();
                x /= n;
            }
            if !heldout && k < n_train {
                train.push(x);
                train_labels.push(id);
            } else {
                eval.push(x);
                eval_labels.push(id);
            }
        }
    }

    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for i in 0..eval.len() {
        for j in i + 1..eval.len() {
            if eval_labels[i] == eval_labels[j] {
                positives.push((i, j));
            } else {
                negatives.push((i, j));
            }
        }
    }
    positives.shuffle(&mut rng);
    negatives.shuffle(&mut rng);
    positives.truncate(spec.positive_pairs);
    negatives.truncate(spec.negative_pairs);
    positives.sort_unstable();
    negatives.sort_unstable();

    let to_matrix = |rows: &[Array1<f64>]| {
        Array2::from_shape_fn((rows.len(), d), |(i, j)| T::lit(rows[i][j]))
    };
    Ok(Dataset {
        directions: to_matrix(&directions),
        train_x: to_matrix(&train),
        train_labels,
        eval_x: to_matrix(&eval),
        eval_labels,
        pairs: PairSet::new(positives, negatives)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticDatasetSpec {
        SyntheticDatasetSpec {
            identities: 5,
            input_dim: 8,
            samples_per_identity: 6,
            positive_pairs: 20,
            negative_pairs: 40,
            ..Default::default()
        }
    }

    #[test]
    fn noiseless_samples_equal_their_direction() {
        let spec = SyntheticDatasetSpec { noise: 0.0, ..small() };
        let ds = generate_dataset::<f64>(&spec).unwrap();
        for (row, &y) in ds.train_x.outer_iter().zip(&ds.train_labels) {
            assert_eq!(row, ds.directions.row(y));
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = generate_dataset::<f64>(&small()).unwrap();
        let b = generate_dataset::<f64>(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset::<f64>(&SyntheticDatasetSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(a.train_x, c.train_x);
    }

    #[test]
    fn split_and_pairs_are_consistent() {
        let ds = generate_dataset::<f64>(&small()).unwrap();
        assert_eq!(ds.train_x.nrows(), 5 * 5);
        assert_eq!(ds.eval_x.nrows(), 5);
        for &(i, j) in &ds.pairs.positives {
            assert_eq!(ds.eval_labels[i], ds.eval_labels[j]);
        }
        for &(i, j) in &ds.pairs.negatives {
            assert_ne!(ds.eval_labels[i], ds.eval_labels[j]);
        }
        assert!(ds.train_x.outer_iter().all(|r| (r.dot(&r) - 1.0).abs() < 1e-12));
    }

    #[test]
    fn heldout_identities_never_train() {
        let spec = SyntheticDatasetSpec { heldout_identities: 2, ..small() };
        let ds = generate_dataset::<f64>(&spec).unwrap();
        assert!(ds.train_labels.iter().all(|&y| y < 3));
        assert!(ds.eval_labels.iter().any(|&y| y >= 3));
        assert_eq!(spec.train_classes(), 3);
    }

    #[test]
    fn class_structure_at_default_scale() {
        let spec = SyntheticDatasetSpec::default();
        let ds = generate_dataset::<f64>(&spec).unwrap();
        let x = &ds.train_x;
        let (mut within, mut nw, mut cross, mut nc) = (0.0, 0usize, 0.0, 0usize);
        for i in 0..x.nrows() {
            for j in i + 1..x.nrows() {
                let c = x.row(i).dot(&x.row(j));
                if ds.train_labels[i] == ds.train_labels[j] {
                    within += c;
                    nw += 1;
                } else {
                    cross += c;
                    nc += 1;
                }
            }
        }
        assert!(within / nw as f64 > cross / nc as f64 + 0.05);
    }
}
