use crate::autodiff::{Tape, TensorError, Var};
use crate::scalar::Scalar;

/// Mean squared error between predictions and log-magnitude targets of
/// identical shape, normalized by the total element count `B * S * F * T`.
pub fn mse_loss<T: Scalar>(tape: &mut Tape<T>, pred: Var, targets: Var) -> Result<Var, TensorError> {
    if tape.shape(pred) != tape.shape(targets) {
        return Err(TensorError::ShapeMismatch {
            op: "mse_loss",
            lhs: tape.shape(pred).to_vec(),
            rhs: tape.shape(targets).to_vec(),
        });
    }
    let diff = tape.sub(pred, targets)?;
    let sq = tape.square(diff);
    Ok(tape.mean_all(sq))
}

/// Same loss against raw magnitudes `(B, S, F, T)`, which are mapped
/// through `log(1 + g)` first; `pred` is `(B, S * F, T)`.
pub fn mse_loss_raw<T: Scalar>(tape: &mut Tape<T>, pred: Var, raw_mags: Var) -> Result<Var, TensorError> {
    let (p, g) = (tape.shape(pred).to_vec(), tape.shape(raw_mags).to_vec());
    if g.len() != 4 || p.len() != 3 || p != [g[0], g[1] * g[2], g[3]] {
        return Err(TensorError::ShapeMismatch {
            op: "mse_loss_raw",
            lhs: p,
            rhs: g,
        });
    }
    let flat = tape.reshape(raw_mags, &p)?;
    let targets = tape.log1p(flat);
    mse_loss(tape, pred, targets)
}
