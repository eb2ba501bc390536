//! Central finite-difference checks of tape gradients.
//!
//! The error for one coordinate is `|analytic - numeric| / max(1, |analytic|, |numeric|)`:
//! relative for gradients above one in magnitude, absolute below.

use crate::error::{MesinError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_error: f64,
    /// `(input, flat index)` of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
    pub tol: f64,
    pub passed: bool,
}

pub fn coordinate_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Check a scalar function of one tensor.
pub fn grad_check<F>(f: F, point: &Tensor, step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_many(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(point),
        step,
        tol,
    )
}

/// Check a scalar function of several tensors at once.
pub fn grad_check_many<F>(f: F, points: &[Tensor], step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.parameter(v.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out).item()?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(MesinError::NumericFailure {
                op: "grad_check evaluation".into(),
            })
        }
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = points.iter().map(|v| tape.parameter(v.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| grads.wrt(v).into_data()).collect();

    let mut numeric = Vec::with_capacity(points.len());
    let mut working: Vec<Tensor> = points.to_vec();
    for input in 0..points.len() {
        let mut col = Vec::with_capacity(points[input].len());
        for k in 0..points[input].len() {
            let orig = points[input].data()[k];
            working[input].data_mut()[k] = orig + step;
            let plus = eval(&working)?;
            working[input].data_mut()[k] = orig - step;
            let minus = eval(&working)?;
            working[input].data_mut()[k] = orig;
            col.push((plus - minus) / (2.0 * step));
        }
        numeric.push(col);
    }

    let mut max_error = 0.0;
    let mut worst = (0, 0);
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        for (k, (&av, &nv)) in a.iter().zip(n).enumerate() {
            let e = coordinate_error(av, nv);
            if e > max_error {
                max_error = e;
                worst = (i, k);
            }
        }
    }
    Ok(GradCheckReport {
        max_error,
        worst,
        analytic,
        numeric,
        tol,
        passed: max_error < tol,
    })
}
