use crate::autodiff::{GradCheckReport, Tape, TensorError, Var};
use crate::models::{ModelError, Separator};

fn objective<F>(model: &Separator<f64>, f: &F) -> Result<f64, ModelError>
where
    F: Fn(&Separator<f64>, &mut Tape<f64>) -> Result<Var, ModelError>,
{
    let mut tape = Tape::inference();
    let out = f(model, &mut tape)?;
    let v = tape
        .item(out)
        .ok_or_else(|| TensorError::NonScalarLoss(tape.shape(out).to_vec()))?;
    if !v.is_finite() {
        return Err(TensorError::NonFinite("gradient check objective").into());
    }
    Ok(v)
}

/// Central-difference check of every parameter gradient of a scalar
/// objective built from `model`. At most `max_coords` coordinates of each
/// parameter are perturbed.
///
/// Leaky ReLUs make the objective piecewise smooth. When a perturbation
/// crosses a kink the central difference is off by exactly
/// `|f(x+e) - 2 f(x) + f(x-e)| / 2e`, a purely numeric quantity; coordinates
/// where that bound exceeds `kink_tolerance` times the largest numeric
/// gradient are counted in [`GradCheckReport::kinks`] and left out of the
/// error. Pass `None` to keep every coordinate.
pub fn gradient_check_model<F>(
    model: &mut Separator<f64>,
    f: F,
    eps: f64,
    max_coords: Option<usize>,
    kink_tolerance: Option<f64>,
) -> Result<GradCheckReport, ModelError>
where
    F: Fn(&Separator<f64>, &mut Tape<f64>) -> Result<Var, ModelError>,
{
    let mut tape = Tape::new();
    let out = f(model, &mut tape)?;
    let grads = tape.backward(out)?;
    let ids: Vec<_> = model.store().ids().collect();
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| {
            let n = model.store().tensor(id).len();
            grads
                .param(model.store().key(id))
                .map_or_else(|| vec![0.0; n], <[f64]>::to_vec)
        })
        .collect();
    let center = objective(model, &f)?;

    // (analytic, numeric, kink bound) per perturbed coordinate.
    let mut samples = Vec::new();
    for (&id, analytic) in ids.iter().zip(&analytic) {
        let n = analytic.len();
        let step = match max_coords {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        for i in (0..n).step_by(step) {
            let orig = model.store().tensor(id).data()[i];
            model.store_mut().tensor_mut(id).data_mut()[i] = orig + eps;
            let plus = objective(model, &f)?;
            model.store_mut().tensor_mut(id).data_mut()[i] = orig - eps;
            let minus = objective(model, &f)?;
            model.store_mut().tensor_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let bound = (plus - 2.0 * center + minus).abs() / (2.0 * eps);
            samples.push((analytic[i], numeric, bound));
        }
    }

    let max_numeric = samples.iter().map(|s| s.1.abs()).fold(0.0, f64::max);
    let limit = kink_tolerance.map_or(f64::INFINITY, |t| t * max_numeric.max(1e-8));
    let mut report = GradCheckReport {
        max_abs_diff: 0.0,
        max_numeric,
        checked: 0,
        kinks: 0,
    };
    for (a, numeric, bound) in samples {
        if bound > limit {
            report.kinks += 1;
            continue;
        }
        report.max_abs_diff = report.max_abs_diff.max((a - numeric).abs());
        report.checked += 1;
    }
    Ok(report)
}
