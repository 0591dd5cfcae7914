use std::fmt::Write as _;

use clap::ValueEnum;
use kd_core::losses::{iled_core, rpsd_core, IledParams, RpsdParams};
use kd_core::trainer::fmt_sig;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CurveLoss {
    Iled,
    Rpsd,
    Fc,
}

/// One loss curve, sampled on an even grid, with a column per weight.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRequest {
    pub loss: CurveLoss,
    /// Steepness; defaults to 40 (iled) or 60 (rpsd).
    pub r: Option<f64>,
    /// Soft margin s (iled) or transition t (rpsd); defaults 0.9 / 0.05.
    pub shift: Option<f64>,
    /// Smoothness; defaults to 0.1 (iled) or 1 (rpsd).
    pub b: Option<f64>,
    pub lambdas: Vec<f64>,
    /// Range defaults to the loss's whole domain.
    pub from: Option<f64>,
    pub to: Option<f64>,
    pub points: usize,
    /// Append an unweighted `fc` column, `2(1 - x)`.
    pub with_fc: bool,
}

impl Default for CurveRequest {
    fn default() -> Self {
        Self {
            loss: CurveLoss::Iled,
            r: None,
            shift: None,
            b: None,
            lambdas: vec![1.0],
            from: None,
            to: None,
            points: 201,
            with_fc: false,
        }
    }
}

fn fc_core(x: f64) -> f64 {
    2.0 * (1.0 - x)
}

/// Renders the request as CSV: `x`, one column per weight, then `fc` if asked.
pub fn curve_csv(req: &CurveRequest) -> Result<String> {
    let domain = match req.loss {
        CurveLoss::Iled | CurveLoss::Fc => (-1.0, 1.0),
        CurveLoss::Rpsd => (0.0, 2.0),
    };
    let (from, to) = (req.from.unwrap_or(domain.0), req.to.unwrap_or(domain.1));
    if !(domain.0 <= from && from < to && to <= domain.1) {
        return Err(CliError::Usage(format!(
            "range [{from}, {to}] must be increasing and inside [{}, {}]",
            domain.0, domain.1
        )));
    }
    if req.points < 2 || req.lambdas.is_empty() {
        return Err(CliError::Usage("need at least 2 points and one lambda".into()));
    }
    let core: Box<dyn Fn(f64) -> f64> = match req.loss {
        CurveLoss::Iled => {
            let p = IledParams {
                r: req.r.unwrap_or(IledParams::default().r),
                s: req.shift.unwrap_or(IledParams::default().s),
                b: req.b.unwrap_or(IledParams::default().b),
                ..IledParams::default()
            };
            p.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            Box::new(move |x| iled_core(x, &p))
        }
        CurveLoss::Rpsd => {
            let p = RpsdParams {
                r_prime: req.r.unwrap_or(RpsdParams::default().r_prime),
                t: req.shift.unwrap_or(RpsdParams::default().t),
                b_prime: req.b.unwrap_or(RpsdParams::default().b_prime),
                ..RpsdParams::default()
            };
            p.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            Box::new(move |x| rpsd_core(x, &p))
        }
        CurveLoss::Fc => Box::new(fc_core),
    };
    let name = match req.loss {
        CurveLoss::Iled => "iled",
        CurveLoss::Rpsd => "rpsd",
        CurveLoss::Fc => "fc",
    };
    let mut out = String::from("x");
    for l in &req.lambdas {
        let _ = write!(out, ",{name}_lambda_{l}");
    }
    if req.with_fc {
        out += ",fc";
    }
    out.push('\n');
    let step = (to - from) / (req.points - 1) as f64;
    for i in 0..req.points {
        let x = if i + 1 == req.points { to } else { from + step * i as f64 };
        let v = core(x);
        out += &fmt_sig(x);
        for l in &req.lambdas {
            let _ = write!(out, ",{}", fmt_sig(l * v));
        }
        if req.with_fc {
            let _ = write!(out, ",{}", fmt_sig(fc_core(x)));
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn value_at(csv: &str, row: usize, col: usize) -> f64 {
        csv.lines().nth(row + 1).unwrap().split(',').nth(col).unwrap().parse().unwrap()
    }

    #[test]
    fn fc_at_half_is_one() {
        let csv = curve_csv(&CurveRequest {
            loss: CurveLoss::Fc,
            from: Some(0.0),
            to: Some(1.0),
            points: 3,
            ..CurveRequest::default()
        })
        .unwrap();
        assert_eq!(csv.lines().next().unwrap(), "x,fc_lambda_1");
        assert_eq!(value_at(&csv, 1, 1), 1.0);
    }

    #[test]
    fn iled_at_margin_and_rpsd_at_transition() {
        let iled = curve_csv(&CurveRequest {
            shift: Some(0.85),
            from: Some(0.85),
            to: Some(1.0),
            points: 2,
            ..CurveRequest::default()
        })
        .unwrap();
        assert!((value_at(&iled, 0, 1) - 2f64.ln() / 40.0 * 0.1f64.sqrt()).abs() < 1e-10);
        let rpsd = curve_csv(&CurveRequest {
            loss: CurveLoss::Rpsd,
            shift: Some(0.1),
            from: Some(0.1),
            to: Some(2.0),
            points: 2,
            ..CurveRequest::default()
        })
        .unwrap();
        assert!((value_at(&rpsd, 0, 1) - 2f64.ln() / 60.0).abs() < 1e-10);
    }

    #[test]
    fn columns_follow_lambdas() {
        let csv = curve_csv(&CurveRequest {
            lambdas: vec![1.0, 3.0],
            with_fc: true,
            points: 5,
            ..CurveRequest::default()
        })
        .unwrap();
        assert_eq!(csv.lines().next().unwrap(), "x,iled_lambda_1,iled_lambda_3,fc");
        assert_eq!(csv.lines().count(), 6);
        assert!((value_at(&csv, 2, 2) - 3.0 * value_at(&csv, 2, 1)).abs() <= 1e-8 * value_at(&csv, 2, 2));
    }

    #[test]
    fn out_of_domain_range_is_rejected() {
        let err = curve_csv(&CurveRequest {
            loss: CurveLoss::Rpsd,
            from: Some(-0.5),
            ..CurveRequest::default()
        })
        .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
