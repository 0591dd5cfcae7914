//! Embedding geometry: normalization, cosine similarities and the triplet
//! angle relations on the unit hypersphere.
//!
//! Every operation accepts raw (unnormalized) embeddings and normalizes
//! internally. Cosines are clamped to `[-1, 1]` after computation.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use crate::error::{shape_mismatch, KdError, Result};
use crate::scalar::Scalar;

/// Norms below this are treated as zero.
pub const ZERO_NORM_EPS: f64 = 1e-30;

/// Minimum admissible difference between two triplet members, measured as
/// `1 - cos` (pairwise form) or as the difference norm (direct form).
pub const DEGENERACY_EPS: f64 = 1e-6;

pub fn l2_norm<T: Scalar>(v: ArrayView1<'_, T>) -> T {
    v.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt()
}

#[inline]
pub(crate) fn clamp_unit<T: Scalar>(c: T) -> T {
    c.max(-T::one()).min(T::one())
}

fn checked_norm<T: Scalar>(v: ArrayView1<'_, T>, row: Option<usize>) -> Result<T> {
    let n = l2_norm(v);
    if !(n >= T::lit(ZERO_NORM_EPS)) {
        return Err(KdError::ZeroNorm { row });
    }
    Ok(n)
}

pub fn l2_normalize<T: Scalar>(v: ArrayView1<'_, T>) -> Result<Array1<T>> {
    let n = checked_norm(v, None)?;
    Ok(v.mapv(|x| x / n))
}

/// Unit-normalizes every row, returning the normalized batch and the original norms.
pub fn normalize_rows<T: Scalar>(batch: ArrayView2<'_, T>) -> Result<(Array2<T>, Array1<T>)> {
    let mut out = batch.to_owned();
    let mut norms = Array1::zeros(batch.nrows());
    for (i, (mut row, n)) in out.outer_iter_mut().zip(norms.iter_mut()).enumerate() {
        let norm = checked_norm(row.view(), Some(i))?;
        row.mapv_inplace(|x| x / norm);
        *n = norm;
    }
    Ok((out, norms))
}

pub fn cosine_sim<T: Scalar>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> Result<T> {
    if a.len() != b.len() {
        return Err(shape_mismatch("cosine_sim", a.len(), b.len()));
    }
    let na = checked_norm(a, None)?;
    let nb = checked_norm(b, None)?;
    Ok(clamp_unit(a.dot(&b) / (na * nb)))
}

/// Row-wise cosine between matching teacher and student rows.
pub fn diag_cosines<T: Scalar>(
    teacher: ArrayView2<'_, T>,
    student: ArrayView2<'_, T>,
) -> Result<Array1<T>> {
    if teacher.dim() != student.dim() {
        return Err(shape_mismatch("diag_cosines", teacher.dim(), student.dim()));
    }
    let mut out = Array1::zeros(teacher.nrows());
    for (i, ((t, s), o)) in teacher
        .outer_iter()
        .zip(student.outer_iter())
        .zip(out.iter_mut())
        .enumerate()
    {
        let nt = checked_norm(t, Some(i))?;
        let ns = checked_norm(s, Some(i))?;
        *o = clamp_unit(t.dot(&s) / (nt * ns));
    }
    Ok(out)
}

pub fn mean_cosine<T: Scalar>(x: ArrayView1<'_, T>) -> Result<T> {
    if x.is_empty() {
        return Err(KdError::EmptyBatch);
    }
    Ok(x.sum() / T::from_count(x.len()))
}

/// Cosine similarity of every query row against every key row (`m x q`).
pub fn pairwise_cosine_matrix<T: Scalar>(
    queries: ArrayView2<'_, T>,
    keys: ArrayView2<'_, T>,
) -> Result<Array2<T>> {
    if queries.ncols() != keys.ncols() {
        return Err(shape_mismatch(
            "pairwise_cosine_matrix",
            queries.ncols(),
            keys.ncols(),
        ));
    }
    let (qn, _) = normalize_rows(queries)?;
    let (kn, _) = normalize_rows(keys).map_err(|e| match e {
        // key rows are reported after the query rows
        KdError::ZeroNorm { row: Some(r) } => KdError::ZeroNorm {
            row: Some(queries.nrows() + r),
        },
        other => other,
    })?;
    let mut sim = qn.dot(&kn.t());
    sim.mapv_inplace(clamp_unit);
    Ok(sim)
}

/// Cosine of the angle at vertex `fj` between `fi - fj` and `fk - fj`,
/// evaluated directly from the difference vectors of the unit-normalized inputs.
pub fn triplet_angle_direct<T: Scalar>(
    fi: ArrayView1<'_, T>,
    fj: ArrayView1<'_, T>,
    fk: ArrayView1<'_, T>,
) -> Result<T> {
    if fi.len() != fj.len() || fk.len() != fj.len() {
        return Err(shape_mismatch(
            "triplet_angle_direct",
            fj.len(),
            (fi.len(), fk.len()),
        ));
    }
    let ui = l2_normalize(fi)?;
    let uj = l2_normalize(fj)?;
    let uk = l2_normalize(fk)?;
    let a = &ui - &uj;
    let b = &uk - &uj;
    let (na, nb) = (l2_norm(a.view()), l2_norm(b.view()));
    let eps = T::lit(DEGENERACY_EPS);
    if na < eps || nb < eps {
        return Err(KdError::DegenerateTriplet {
            threshold: DEGENERACY_EPS,
        });
    }
    Ok(clamp_unit(a.dot(&b) / (na * nb)))
}

/// The same vertex angle expressed purely through the three pairwise cosines:
/// `(c_ik - c_ij - c_jk + 1) / (sqrt(2(1 - c_ij)) sqrt(2(1 - c_jk)))`.
pub fn triplet_angle_from_pairwise<T: Scalar>(cos_ij: T, cos_jk: T, cos_ik: T) -> Result<T> {
    let one = T::one();
    for c in [cos_ij, cos_jk, cos_ik] {
        if !(c >= -one - T::lit(1e-9) && c <= one + T::lit(1e-9)) {
            return Err(KdError::Range(format!("cosine {c} outside [-1, 1]")));
        }
    }
    let eps = T::lit(DEGENERACY_EPS);
    let (gap_ij, gap_jk) = (one - cos_ij, one - cos_jk);
    if gap_ij <= eps || gap_jk <= eps {
        return Err(KdError::DegenerateTriplet {
            threshold: DEGENERACY_EPS,
        });
    }
    let two = T::two();
    let num = cos_ik - cos_ij - cos_jk + one;
    Ok(clamp_unit(num / ((two * gap_ij).sqrt() * (two * gap_jk).sqrt())))
}

/// Backpropagates a gradient with respect to unit rows `u = x / |x|` onto the raw rows `x`.
///
/// `grad_x = (g - u (u . g)) / |x|`, row by row.
pub(crate) fn backprop_normalize<T: Scalar>(
    unit: ArrayView2<'_, T>,
    norms: ArrayView1<'_, T>,
    grad_unit: ArrayView2<'_, T>,
) -> Array2<T> {
    let mut out = grad_unit.to_owned();
    Zip::from(out.axis_iter_mut(Axis(0)))
        .and(unit.axis_iter(Axis(0)))
        .and(norms)
        .for_each(|mut g, u, &n| {
            let proj = u.dot(&g);
            Zip::from(&mut g).and(u).for_each(|gv, &uv| *gv = (*gv - uv * proj) / n);
        });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> Array1<f64> {
        Array1::from_iter((0..d).map(|_| rng.random_range(-1.0..1.0)))
    }

    fn random_mat(rng: &mut ChaCha8Rng, m: usize, d: usize) -> Array2<f64> {
        Array2::from_shape_fn((m, d), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn normalize_three_four_five() {
        let v = l2_normalize(arr1(&[3.0f64, 4.0]).view()).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
        let e = l2_normalize(arr1(&[1.0, 0.0, 0.0]).view()).unwrap();
        assert_eq!(e, arr1(&[1.0, 0.0, 0.0]));
    }

    #[test]
    fn normalize_random_512_has_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let v = random_vec(&mut rng, 512);
        let u = l2_normalize(v.view()).unwrap();
        let norm: f64 = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn zero_vector_is_rejected() {
        let err = l2_normalize(arr1(&[0.0f64, 0.0]).view()).unwrap_err();
        assert_eq!(err, KdError::ZeroNorm { row: None });
        assert!(l2_normalize(arr1(&[1e-31f64, 0.0]).view()).is_err());
    }

    #[test]
    fn cosine_basic_cases() {
        let a = arr1(&[0.3f64, -1.2, 2.0]);
        assert!((cosine_sim(a.view(), a.view()).unwrap() - 1.0).abs() < 1e-15);
        let x = arr1(&[1.0, 0.0]);
        let y = arr1(&[0.0, 1.0]);
        assert_eq!(cosine_sim(x.view(), y.view()).unwrap(), 0.0);
        let scaled = a.mapv(|v| 7.5 * v);
        assert!((cosine_sim(a.view(), scaled.view()).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            cosine_sim(x.view(), a.view()),
            Err(KdError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn cosine_is_clamped() {
        // nearly parallel vectors whose raw quotient can exceed one
        let a = arr1(&[0.1f64, 0.2, 0.3]);
        for k in 1..50 {
            let b = a.mapv(|v| v * k as f64 * 1.1);
            let c = cosine_sim(a.view(), b.view()).unwrap();
            assert!(c <= 1.0 && c >= -1.0);
        }
    }

    #[test]
    fn diag_cosines_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = random_mat(&mut rng, 8, 16);
        assert!(diag_cosines(t.view(), t.view())
            .unwrap()
            .iter()
            .all(|&c| (c - 1.0).abs() < 1e-15));
        let neg = t.mapv(|v| -v);
        assert!(diag_cosines(t.view(), neg.view())
            .unwrap()
            .iter()
            .all(|&c| (c + 1.0).abs() < 1e-15));

        let s = random_mat(&mut rng, 8, 16);
        let got = diag_cosines(t.view(), s.view()).unwrap();
        for i in 0..8 {
            let (mut dot, mut nt, mut ns) = (0.0, 0.0, 0.0);
            for j in 0..16 {
                dot += t[[i, j]] * s[[i, j]];
                nt += t[[i, j]] * t[[i, j]];
                ns += s[[i, j]] * s[[i, j]];
            }
            assert!((got[i] - dot / (nt.sqrt() * ns.sqrt())).abs() <= 1e-12);
        }
        let short = random_mat(&mut rng, 7, 16);
        assert!(diag_cosines(t.view(), short.view()).is_err());
    }

    #[test]
    fn mean_cosine_cases() {
        assert_eq!(mean_cosine(arr1(&[1.0, 1.0, 1.0]).view()).unwrap(), 1.0);
        assert!((mean_cosine(arr1(&[0.8f64, 1.0]).view()).unwrap() - 0.9).abs() < 1e-15);
        assert_eq!(
            mean_cosine(Array1::<f64>::zeros(0).view()),
            Err(KdError::EmptyBatch)
        );

        // Neumaier-compensated summation as the reference
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for &x in &xs {
            let t = sum + x;
            comp += if sum.abs() >= x.abs() {
                (sum - t) + x
            } else {
                (x - t) + sum
            };
            sum = t;
        }
        let oracle = (sum + comp) / 64.0;
        let got = mean_cosine(Array1::from(xs).view()).unwrap();
        assert!((got - oracle).abs() <= 1e-14);
    }

    #[test]
    fn pairwise_matrix_cases() {
        let basis = Array2::<f64>::eye(4);
        let sim = pairwise_cosine_matrix(basis.view(), basis.view()).unwrap();
        assert_eq!(sim, Array2::eye(4));

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let q = random_mat(&mut rng, 4, 16);
        let k = random_mat(&mut rng, 12, 16);
        let sim = pairwise_cosine_matrix(q.view(), k.view()).unwrap();
        assert_eq!(sim.dim(), (4, 12));
        for i in 0..4 {
            for j in 0..12 {
                let (mut dot, mut nq, mut nk) = (0.0, 0.0, 0.0);
                for c in 0..16 {
                    dot += q[[i, c]] * k[[j, c]];
                    nq += q[[i, c]] * q[[i, c]];
                    nk += k[[j, c]] * k[[j, c]];
                }
                let oracle = dot / (nq.sqrt() * nk.sqrt());
                assert!((sim[[i, j]] - oracle).abs() <= 1e-12);
                assert!(sim[[i, j]].abs() <= 1.0);
            }
        }
    }

    #[test]
    fn pairwise_reports_zero_row() {
        let mut q = Array2::<f64>::ones((3, 4));
        q.row_mut(1).fill(0.0);
        let k = Array2::<f64>::ones((2, 4));
        assert_eq!(
            pairwise_cosine_matrix(q.view(), k.view()).unwrap_err(),
            KdError::ZeroNorm { row: Some(1) }
        );
        let mut k2 = k.clone();
        k2.row_mut(1).fill(0.0);
        let q2 = Array2::<f64>::ones((3, 4));
        assert_eq!(
            pairwise_cosine_matrix(q2.view(), k2.view()).unwrap_err(),
            KdError::ZeroNorm { row: Some(4) }
        );
    }

    #[test]
    fn triplet_angle_cases() {
        let e = Array2::<f64>::eye(3);
        let c = triplet_angle_direct(e.row(0), e.row(1), e.row(2)).unwrap();
        assert!((c - 0.5).abs() < 1e-15);
        let same = triplet_angle_direct(e.row(0), e.row(1), e.row(0)).unwrap();
        assert!((same - 1.0).abs() < 1e-15);
        assert!(matches!(
            triplet_angle_direct(e.row(1), e.row(1), e.row(0)),
            Err(KdError::DegenerateTriplet { .. })
        ));

        assert!((triplet_angle_from_pairwise(0.0f64, 0.0, 0.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(
            triplet_angle_from_pairwise(1.0, 0.2, 0.1),
            Err(KdError::DegenerateTriplet { .. })
        ));
        assert!(triplet_angle_from_pairwise(1.5, 0.2, 0.1).is_err());
    }

    #[test]
    fn triplet_paths_agree_on_random_triplets() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let fi = l2_normalize(random_vec(&mut rng, 8).view()).unwrap();
            let fj = l2_normalize(random_vec(&mut rng, 8).view()).unwrap();
            let fk = l2_normalize(random_vec(&mut rng, 8).view()).unwrap();
            let direct = triplet_angle_direct(fi.view(), fj.view(), fk.view()).unwrap();
            let pairwise =
                triplet_angle_from_pairwise(fi.dot(&fj), fj.dot(&fk), fi.dot(&fk)).unwrap();
            assert!((direct - pairwise).abs() <= 1e-9);
        }
    }

    #[test]
    fn backprop_normalize_matches_projection() {
        let x = arr2(&[[3.0f64, 4.0]]);
        let (u, n) = normalize_rows(x.view()).unwrap();
        let g = arr2(&[[0.6, 0.8]]);
        // gradient parallel to the unit vector vanishes
        let out = backprop_normalize(u.view(), n.view(), g.view());
        assert!(out.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn works_for_f32() {
        let v = l2_normalize(arr1(&[3.0f32, 4.0]).view()).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-6);
    }
}
