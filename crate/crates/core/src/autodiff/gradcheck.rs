//! Central-difference verification of the reverse sweep.

use crate::autodiff::error::{Result, TensorError};
use crate::autodiff::tape::{Tape, Var};
use crate::autodiff::tensor::Tensor;

/// Outcome of comparing analytic and numeric gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_abs_diff: f64,
    pub max_numeric: f64,
    pub checked: usize,
    /// Coordinates excluded because the perturbation crossed a kink.
    pub kinks: usize,
}

impl GradCheckReport {
    /// `max |analytic - numeric| / max(max |numeric|, 1e-8)`
    pub fn relative_error(&self) -> f64 {
        self.max_abs_diff / self.max_numeric.max(1e-8)
    }
}

fn evaluate<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape
        .item(out)
        .ok_or_else(|| TensorError::NonScalarLoss(tape.shape(out).to_vec()))?;
    if !v.is_finite() {
        return Err(TensorError::NonFinite("gradient check objective"));
    }
    Ok(v)
}

/// Checks the gradient of a scalar function of several tensors.
///
/// At most `max_coords` coordinates per input are perturbed, spread evenly
/// across the tensor; `None` checks every coordinate.
pub fn gradient_check_many<F>(
    f: F,
    inputs: &[Tensor<f64>],
    eps: f64,
    max_coords: Option<usize>,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if inputs.iter().any(|t| !t.all_finite()) {
        return Err(TensorError::NonFinite("gradient check input"));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();

    let mut report = GradCheckReport {
        max_abs_diff: 0.0,
        max_numeric: 0.0,
        checked: 0,
        kinks: 0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (which, input) in inputs.iter().enumerate() {
        let n = input.len();
        let step = match max_coords {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        for i in (0..n).step_by(step) {
            let orig = input.data()[i];
            work[which].data_mut()[i] = orig + eps;
            let plus = evaluate(&f, &work)?;
            work[which].data_mut()[i] = orig - eps;
            let minus = evaluate(&f, &work)?;
            work[which].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[which][i];
            if !a.is_finite() {
                return Err(TensorError::NonFinite("analytic gradient"));
            }
            report.max_abs_diff = report.max_abs_diff.max((a - numeric).abs());
            report.max_numeric = report.max_numeric.max(numeric.abs());
            report.checked += 1;
        }
    }
    Ok(report)
}

/// Single-input form: returns the relative error directly.
pub fn gradient_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let report = gradient_check_many(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), eps, None)?;
    Ok(report.relative_error())
}
