use super::tensor::Scalar;
use super::NnError;

/// Masked mean squared error: `Σ mask·(pred−target)² / Σ mask`.
///
/// Returns the loss and its gradient with respect to `pred`, which is zero
/// on every masked-out position.
pub fn masked_mse<T: Scalar>(pred: &[T], target: &[T], mask: &[bool]) -> Result<(T, Vec<T>), NnError> {
    if pred.len() != target.len() || pred.len() != mask.len() {
        return Err(NnError::Shape(format!(
            "mse lengths differ: pred {}, target {}, mask {}",
            pred.len(),
            target.len(),
            mask.len()
        )));
    }
    let active = mask.iter().filter(|&&m| m).count();
    if active == 0 {
        return Err(NnError::EmptyMask);
    }
    let denom = T::lit(active as f64);
    let two = T::lit(2.0);
    let mut loss = T::zero();
    let grad = pred
        .iter()
        .zip(target)
        .zip(mask)
        .map(|((&p, &t), &m)| {
            if m {
                let d = p - t;
                loss += d * d;
                two * d / denom
            } else {
                T::zero()
            }
        })
        .collect();
    Ok((loss / denom, grad))
}
