//! Dynamically weighted L2 loss on sigmoid scores and the λ-combined total.

use crate::error::{Error, Result};
use crate::numerics::Scalar;

/// Per-class weights: `1 / (#true labels)` on true classes, `eps` elsewhere.
pub fn dynamic_weights<T: Scalar>(y_true: &[bool], eps: T) -> Result<Vec<T>> {
    let positives = y_true.iter().filter(|&&y| y).count();
    if positives == 0 {
        return Err(Error::Label("label vector has no true class".into()));
    }
    let w = T::one() / T::from_f64(positives as f64);
    Ok(y_true.iter().map(|&y| if y { w } else { eps }).collect())
}

/// `Σ_i (y_i - p_i)^2 · W_i` with `W` from [`dynamic_weights`].
pub fn weighted_l2_loss<T: Scalar>(y_true: &[bool], y_pred: &[T], eps: T) -> Result<T> {
    if y_true.len() != y_pred.len() {
        return Err(Error::dim(format!(
            "loss over {} labels and {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    let w = dynamic_weights(y_true, eps)?;
    let mut acc = T::zero();
    for ((&y, &p), &wi) in y_true.iter().zip(y_pred).zip(&w) {
        let d = label::<T>(y) - p;
        acc += d * d * wi;
    }
    Ok(acc)
}

pub fn total_loss<T: Scalar>(emotion: T, sentiment: T, lambda: T) -> Result<T> {
    if !(lambda >= T::zero() && lambda <= T::one()) {
        return Err(Error::arg(format!("lambda {lambda:?} outside [0, 1]")));
    }
    Ok(lambda * emotion + (T::one() - lambda) * sentiment)
}

pub(crate) fn label<T: Scalar>(y: bool) -> T {
    if y {
        T::one()
    } else {
        T::zero()
    }
}
