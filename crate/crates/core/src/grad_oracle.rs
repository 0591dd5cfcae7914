//! Central finite-difference oracle for validating analytic gradients.

use ndarray::{Array2, ArrayView2};

use crate::error::{shape_mismatch, KdError, Result};
use crate::scalar::Scalar;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_REL_TOL: f64 = 1e-5;
pub const DEFAULT_ABS_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Entry with the largest relative error.
    pub worst_coordinate: (usize, usize),
    pub passed: bool,
}

/// Central-difference gradient of a scalar function of a matrix.
///
/// Entry `(i, j)` is `(f(x + h e_ij) - f(x - h e_ij)) / (x_ij+ - x_ij-)`,
/// where the denominator is the representable step actually taken (`2h` up
/// to rounding of `x_ij +- h`).
pub fn central_difference_grad<T, F>(mut f: F, point: ArrayView2<'_, T>, h: T) -> Result<Array2<T>>
where
    T: Scalar,
    F: FnMut(ArrayView2<'_, T>) -> T,
{
    if !(h > T::zero()) {
        return Err(KdError::InvalidParam(format!("step must be positive, got {h}")));
    }
    let mut probe = point.to_owned();
    let mut grad = Array2::zeros(point.dim());
    for ((i, j), g) in grad.indexed_iter_mut() {
        let x = point[[i, j]];
        let (xp, xm) = (x + h, x - h);
        probe[[i, j]] = xp;
        let fp = f(probe.view());
        probe[[i, j]] = xm;
        let fm = f(probe.view());
        probe[[i, j]] = x;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(KdError::NonFinite(format!("f evaluation near ({i}, {j})")));
        }
        *g = (fp - fm) / (xp - xm);
    }
    Ok(grad)
}

/// Compares two gradients entry by entry with
/// `|a - n| / max(|a|, |n|, abs_floor)`.
pub fn grad_check<T: Scalar>(
    analytic: ArrayView2<'_, T>,
    numeric: ArrayView2<'_, T>,
    rel_tol: f64,
    abs_floor: f64,
) -> Result<GradCheckReport> {
    if analytic.dim() != numeric.dim() {
        return Err(shape_mismatch("grad_check", analytic.dim(), numeric.dim()));
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_coordinate: (0, 0),
        passed: true,
    };
    for ((idx, &a), &n) in analytic.indexed_iter().zip(numeric.iter()) {
        let (a, n) = (a.as_f64(), n.as_f64());
        let abs = (a - n).abs();
        let rel = abs / a.abs().max(n.abs()).max(abs_floor);
        // NaN counts as a failure
        if !(rel <= report.max_rel_error) {
            report.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
            report.worst_coordinate = idx;
        }
        if !(abs <= report.max_abs_error) {
            report.max_abs_error = if abs.is_nan() { f64::INFINITY } else { abs };
        }
    }
    report.passed = report.max_rel_error <= rel_tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn quadratic_gradient_is_exact() {
        let point = Array2::<f64>::ones((3, 4));
        let g = central_difference_grad(|x| x.iter().map(|v| v * v).sum(), point.view(), 1e-5).unwrap();
        assert!(g.iter().all(|&v| (v - 2.0).abs() <= 1e-8));
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let point = Array2::<f64>::from_elem((2, 2), 0.3);
        let g = central_difference_grad(|_| 4.2, point.view(), 1e-5).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_finite_evaluation_is_an_error() {
        let point = Array2::<f64>::zeros((1, 1));
        let err = central_difference_grad(|x| 1.0 / x[[0, 0]].abs().sqrt().min(0.0), point.view(), 1e-5);
        assert!(matches!(err, Err(KdError::NonFinite(_))));
        assert!(central_difference_grad(|_| 0.0, point.view(), 0.0).is_err());
    }

    #[test]
    fn identical_gradients_pass() {
        let a = Array2::from_shape_fn((3, 3), |(i, j)| i as f64 - 0.5 * j as f64);
        let r = grad_check(a.view(), a.view(), 1e-5, 1e-8).unwrap();
        assert!(r.passed);
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn one_percent_error_is_located() {
        let a = Array2::from_shape_fn((3, 4), |(i, j)| 1.0 + i as f64 + j as f64);
        let mut n = a.clone();
        n[[2, 1]] *= 1.01;
        let r = grad_check(a.view(), n.view(), 1e-5, 1e-8).unwrap();
        assert!(!r.passed);
        assert_eq!(r.worst_coordinate, (2, 1));
        assert!((r.max_rel_error - 0.01 / 1.01).abs() < 1e-12);
        assert!(grad_check(a.view(), Array2::zeros((1, 1)).view(), 1e-5, 1e-8).is_err());
    }

    #[test]
    fn nan_fails() {
        let a = Array2::from_elem((1, 2), 1.0);
        let mut n = a.clone();
        n[[0, 1]] = f64::NAN;
        let r = grad_check(a.view(), n.view(), 1e-5, 1e-8).unwrap();
        assert!(!r.passed);
        assert_eq!(r.worst_coordinate, (0, 1));
    }

    #[test]
    fn smaller_step_converges_on_smooth_function() {
        // second-order truncation: error ~ h^2 f''' / 6
        let point = Array2::from_elem((1, 1), 0.7f64);
        let exact = 3.0 * 0.7f64.powi(2) + 0.7f64.cos();
        let f = |x: ArrayView2<'_, f64>| x[[0, 0]].powi(3) + x[[0, 0]].sin();
        let coarse = central_difference_grad(f, point.view(), 1e-2).unwrap()[[0, 0]];
        let fine = central_difference_grad(f, point.view(), 1e-3).unwrap()[[0, 0]];
        let (ec, ef) = ((coarse - exact).abs(), (fine - exact).abs());
        assert!(ef < ec / 50.0, "coarse {ec:e} fine {ef:e}");
    }
}
