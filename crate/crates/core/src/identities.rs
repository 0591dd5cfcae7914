//! Randomized checks of the two algebraic identities the losses rely on: the
//! distance and cosine forms of the feature-consistency loss, and the vertex
//! angle of a triplet written through its three pairwise cosines.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{KdError, Result};
use crate::geometry::{l2_normalize, triplet_angle_direct, triplet_angle_from_pairwise};
use crate::losses::{fc_loss, fc_loss_cosform};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityReport {
    pub trials: usize,
    pub max_deviation: f64,
    /// Instances skipped as degenerate; not part of `trials`.
    pub degenerate: usize,
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample::<f64, _>(StandardNormal))
}

/// Distance form against cosine form over random batches with m <= 32, d <= 128.
pub fn fc_forms(trials: usize, seed: u64) -> Result<IdentityReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_deviation = 0.0f64;
    for _ in 0..trials {
        let m = rng.random_range(1..=32);
        let d = rng.random_range(1..=128);
        let (t, s) = (gaussian(&mut rng, m, d), gaussian(&mut rng, m, d));
        let cosines: Vec<f64> = t
            .outer_iter()
            .zip(s.outer_iter())
            .map(|(a, b)| a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt()))
            .collect();
        let dev = (fc_loss(t.view(), s.view())?.value - fc_loss_cosform(&cosines)?).abs();
        max_deviation = max_deviation.max(dev);
    }
    Ok(IdentityReport {
        trials,
        max_deviation,
        degenerate: 0,
    })
}

/// Vertex angle computed directly against its pairwise-cosine form, over
/// `trials` non-degenerate random unit triplets. Every `inject_every`-th draw
/// (when non-zero) reuses the vertex as an endpoint, which must be detected
/// and skipped.
pub fn triplet_forms(trials: usize, seed: u64, inject_every: usize) -> Result<IdentityReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut done, mut degenerate, mut draws) = (0, 0, 0usize);
    let mut max_deviation = 0.0f64;
    while done < trials {
        draws += 1;
        let d = rng.random_range(2..=64);
        let mut unit = || -> Result<Array1<f64>> { l2_normalize(gaussian(&mut rng, 1, d).row(0)) };
        let (a, b) = (unit()?, unit()?);
        let c = if inject_every > 0 && draws % inject_every == 0 { b.clone() } else { unit()? };
        let direct = match triplet_angle_direct(a.view(), b.view(), c.view()) {
            Ok(v) => v,
            Err(KdError::DegenerateTriplet { .. }) => {
                degenerate += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let pairwise = triplet_angle_from_pairwise(a.dot(&b), b.dot(&c), a.dot(&c))?;
        max_deviation = max_deviation.max((direct - pairwise).abs());
        done += 1;
    }
    Ok(IdentityReport {
        trials,
        max_deviation,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_report() {
        assert_eq!(triplet_forms(1, 4, 0).unwrap(), triplet_forms(1, 4, 0).unwrap());
        assert_eq!(fc_forms(3, 4).unwrap(), fc_forms(3, 4).unwrap());
    }

    #[test]
    fn injected_triplets_are_counted() {
        let r = triplet_forms(100, 1, 5).unwrap();
        assert_eq!(r.trials, 100);
        assert_eq!(r.degenerate, 24);
        assert!(r.max_deviation <= 1e-9);
    }
}
