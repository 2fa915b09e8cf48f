//! Label arithmetic of the calibrator: log-space gaps, pseudo-labels and the
//! online target.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Upper clamp on pseudo-labels so `exp` paths stay finite.
pub const PSEUDO_LABEL_CEILING: f64 = 1e30;

/// `log(1 + y*) - log(1 + y_t)`.
pub fn true_gap<S: Scalar>(y_star: S, y_t: S) -> Result<S> {
    if !(y_t >= S::zero()) || !(y_star >= y_t) {
        return Err(Error::Usage(format!(
            "true gap needs y* >= y_t >= 0, got y* = {y_star}, y_t = {y_t}"
        )));
    }
    Ok(y_star.ln_1p() - y_t.ln_1p())
}

/// `exp(log(1 + y_t) + gap) - 1`, i.e. `(1 + y_t) e^gap - 1`, clamped at the ceiling.
pub fn pseudo_label<S: Scalar>(y_t: S, gap: S) -> S {
    let ceiling = S::lit(PSEUDO_LABEL_CEILING);
    let v = (y_t.ln_1p() + gap).exp_m1();
    if v.is_nan() {
        ceiling
    } else {
        v.min(ceiling)
    }
}

/// `(1 - r) y_t + r * pseudo_label(y_t, gap)`; a constant target for the predictor.
pub fn online_target<S: Scalar>(y_t: S, r: S, gap: S) -> S {
    (S::one() - r) * y_t + r * pseudo_label(y_t, gap)
}

/// `L_online + lambda_gra * (L_gra - lambda_plu * L_plu)`.
pub fn overall_online_loss<S: Scalar>(online: S, gra: S, plu: S, lambda_gra: S, lambda_plu: S) -> S {
    online + lambda_gra * (gra - lambda_plu * plu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn true_gap_examples() {
        let d = true_gap(300.0f64, 100.0).unwrap();
        assert!((d - (301.0f64.ln() - 101.0f64.ln())).abs() < 1e-15);
        assert!((d - 1.0920).abs() < 1e-4);
        assert_eq!(true_gap(5.0f64, 5.0).unwrap(), 0.0);
        assert!(true_gap(5.0f64, 6.0).is_err());
        assert!(true_gap(5.0f64, -1.0).is_err());
    }

    #[test]
    fn pseudo_label_examples() {
        let y = pseudo_label(100.0f64, 1.5f64.ln());
        assert!((y - 150.5).abs() < 1e-12);
        assert_eq!(pseudo_label(37.25f64, 0.0), 37.25);
        assert_eq!(pseudo_label(1.0f64, 1e6), PSEUDO_LABEL_CEILING);
    }

    #[test]
    fn online_target_examples() {
        let g = 1.5f64.ln();
        assert_eq!(online_target(100.0f64, 0.0, g), 100.0);
        assert!((online_target(100.0f64, 1.0, g) - 150.5).abs() < 1e-12);
        assert!((online_target(100.0f64, 0.5, g) - 125.25).abs() < 1e-12);
    }

    #[test]
    fn overall_loss_examples() {
        assert!((overall_online_loss(1.0f64, 0.5, 0.2, 0.1, 0.5) - 1.04).abs() < 1e-15);
        assert_eq!(overall_online_loss(1.0f64, 0.5, 0.2, 0.0, 0.5), 1.0);
        assert_eq!(overall_online_loss(0.0f64, 0.0, 0.0, 0.1, 0.5), 0.0);
    }

    proptest! {
        #[test]
        fn pseudo_label_inverts_true_gap(y_t in 0.0f64..1e6, extra in 0.0f64..1e6) {
            let y_star = y_t + extra;
            let back = pseudo_label(y_t, true_gap(y_star, y_t).unwrap());
            prop_assert!((back - y_star).abs() <= 1e-9 * y_star.max(1e-300) || (back - y_star).abs() < 1e-12);
        }

        #[test]
        fn pseudo_label_dominates_partial(y_t in 0.0f64..1e6, gap in 0.0f64..20.0) {
            prop_assert!(pseudo_label(y_t, gap) >= y_t);
        }
    }
}
