//! Central-difference verification of tape gradients.

use crate::error::{NumericsError, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Gradients smaller than this are compared on an absolute scale.
pub const RELATIVE_FLOOR: f64 = 1e-3;

/// `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Elementwise comparison of the tape gradient of a scalar function against
/// central differences at `point`. Returns the largest relative error.
///
/// `coords` restricts the check to `(input, element)` pairs; `None` checks
/// every element of every input.
pub fn grad_check_at<F>(f: F, point: &[Tensor], eps: f64, coords: Option<&[(usize, usize)]>) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(NumericsError::shape("grad_check", "scalar function", tape.shape(out)));
    }
    tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(point)
        .map(|(v, p)| tape.grad(*v).cloned().unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();

    let all: Vec<(usize, usize)>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = point.iter().enumerate().flat_map(|(i, t)| (0..t.len()).map(move |e| (i, e))).collect();
            &all
        }
    };

    let mut worst = 0.0f64;
    let mut probe = point.to_vec();
    for &(i, e) in coords {
        let orig = point[i].data()[e];
        probe[i].data_mut()[e] = orig + eps;
        let up = eval(&probe)?;
        probe[i].data_mut()[e] = orig - eps;
        let down = eval(&probe)?;
        probe[i].data_mut()[e] = orig;
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max(relative_error(analytic[i].data()[e], numeric));
    }
    Ok(worst)
}

/// [`grad_check_at`] over every element.
pub fn grad_check<F>(f: F, point: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    grad_check_at(f, point, eps, None)
}
