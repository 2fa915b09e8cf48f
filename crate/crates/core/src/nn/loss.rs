//! Scalar losses returning `(loss, gradient)`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Probability clamp used by the cross-entropy.
pub const PROB_EPS: f64 = 1e-7;

/// `|log1p(pred) - log1p(target)|` and its derivative in `pred`.
///
/// The subgradient at `pred == target` is zero.
pub fn log_mae_loss<S: Scalar>(pred: S, target: S) -> Result<(S, S)> {
    if !(pred >= S::zero()) || !(target >= S::zero()) {
        return Err(Error::Usage(format!(
            "log-MAE needs nonnegative inputs, got pred {pred} target {target}"
        )));
    }
    let diff = pred.ln_1p() - target.ln_1p();
    let sign = if diff > S::zero() {
        S::one()
    } else if diff < S::zero() {
        -S::one()
    } else {
        S::zero()
    };
    Ok((diff.abs(), sign / (S::one() + pred)))
}

/// Binary cross-entropy of a probability; the gradient is taken at the logit (`p - y`).
pub fn bce_loss<S: Scalar>(prob: S, label: bool) -> (S, S) {
    let eps = S::lit(PROB_EPS);
    let p = prob.max(eps).min(S::one() - eps);
    let y = if label { S::one() } else { S::zero() };
    let loss = -(y * p.ln() + (S::one() - y) * (S::one() - p).ln());
    (loss, prob - y)
}

/// `|pred - target|` with the sign subgradient (zero at equality).
pub fn mae_loss<S: Scalar>(pred: S, target: S) -> (S, S) {
    let d = pred - target;
    let g = if d > S::zero() {
        S::one()
    } else if d < S::zero() {
        -S::one()
    } else {
        S::zero()
    };
    (d.abs(), g)
}
