use super::TrainError;
use crate::autodiff::{Real, Tape, Tensor, Var};

/// Mean absolute error between predictions `[P, 1]` (or `[P]`) and `truth`.
pub fn loss_intensity<T: Real>(tape: &mut Tape<T>, pred: Var, truth: &[f64]) -> Result<Var, TrainError> {
    if truth.is_empty() {
        return Err(TrainError::Domain("intensity loss over an empty batch".into()));
    }
    let shape = tape.shape(pred)?.to_vec();
    if shape.iter().product::<usize>() != truth.len() {
        return Err(TrainError::Domain(format!("prediction {shape:?} vs {} targets", truth.len())));
    }
    let t = tape.constant(Tensor::from_f64(&shape, truth)?)?;
    let d = tape.sub(pred, t)?;
    let a = tape.abs(d)?;
    Ok(tape.mean(a)?)
}

/// Global soft Dice loss `1 − (2·Σ p·y + ε) / (Σ (p + y) + ε)` over all points
/// and classes. `probs` is `[P, C]` with rows summing to one; `onehot` is the
/// matching flat one-hot target.
pub fn loss_dice<T: Real>(tape: &mut Tape<T>, probs: Var, onehot: &[f64], eps: f64) -> Result<Var, TrainError> {
    if !(eps > 0.0) {
        return Err(TrainError::Config(format!("dice epsilon must be positive, got {eps}")));
    }
    let shape = tape.shape(probs)?.to_vec();
    if shape.len() != 2 || shape[0] * shape[1] != onehot.len() || shape[0] == 0 {
        return Err(TrainError::Domain(format!("probabilities {shape:?} vs {} one-hot entries", onehot.len())));
    }
    let c = shape[1];
    for (r, row) in tape.value(probs)?.data.chunks(c).enumerate() {
        let s: f64 = row.iter().map(|x| x.as_f64()).sum();
        if (s - 1.0).abs() > 1e-5 {
            return Err(TrainError::Validation(format!("probability row {r} sums to {s}")));
        }
    }
    for (r, row) in onehot.chunks(c).enumerate() {
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        if ones != 1 || row.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(TrainError::Validation(format!("target row {r} is not one-hot")));
        }
    }
    let y = tape.constant(Tensor::from_f64(&shape, onehot)?)?;
    let py = tape.mul(probs, y)?;
    let inter = tape.sum(py)?;
    let num = tape.scale(inter, T::of(2.0))?;
    let num = tape.add_scalar(num, T::of(eps))?;
    let ps = tape.sum(probs)?;
    let ysum: f64 = onehot.iter().sum();
    let den = tape.add_scalar(ps, T::of(ysum + eps))?;
    let ratio = tape.div(num, den)?;
    let neg = tape.scale(ratio, T::of(-1.0))?;
    Ok(tape.add_scalar(neg, T::one())?)
}

/// `λ_int·L_int + λ_seg·L_seg`.
pub fn loss_total<T: Real>(tape: &mut Tape<T>, l_int: Var, l_seg: Var, lambda_int: f64, lambda_seg: f64) -> Result<Var, TrainError> {
    let a = tape.scale(l_int, T::of(lambda_int))?;
    let b = tape.scale(l_seg, T::of(lambda_seg))?;
    Ok(tape.add(a, b)?)
}

/// Flat one-hot encoding of `labels` over `classes` channels.
pub fn one_hot(labels: &[u16], classes: usize) -> Vec<f64> {
    let mut out = vec![0.0; labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        out[i * classes + l as usize] = 1.0;
    }
    out
}
