//! Batch forms of the window-close objectives.

use crate::error::Result;
use crate::nn::loss::log_mae_loss;
use crate::reader::model::ReaderModel;
use crate::scalar::Scalar;

/// One window-closed sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedSample<'a, S> {
    pub features: &'a [u64],
    pub purchases: usize,
    pub y_star: S,
    /// Pseudo-label applied at the last purchase-time update, if any.
    pub cached: Option<S>,
}

/// Mean log-MAE against the revealed final label under true-count routing.
/// An empty batch contributes 0.
pub fn gra_loss<S: Scalar>(model: &ReaderModel<S>, batch: &[ClosedSample<'_, S>]) -> Result<S> {
    if batch.is_empty() {
        return Ok(S::zero());
    }
    let mut total = S::zero();
    for s in batch {
        let p = model.oracle_route_predict(s.features, s.purchases)?;
        total += log_mae_loss(p.y_hat, s.y_star)?.0;
    }
    Ok(total / S::lit(batch.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PluLoss<S> {
    pub loss: S,
    pub used: usize,
    pub skipped: usize,
}

/// Mean log-MAE against cached pseudo-labels; samples without a cache are
/// skipped and counted.
pub fn plu_loss<S: Scalar>(model: &ReaderModel<S>, batch: &[ClosedSample<'_, S>]) -> Result<PluLoss<S>> {
    let mut total = S::zero();
    let mut used = 0;
    for s in batch {
        let Some(c) = s.cached else { continue };
        let p = model.oracle_route_predict(s.features, s.purchases)?;
        total += log_mae_loss(p.y_hat, c)?.0;
        used += 1;
    }
    let loss = if used == 0 { S::zero() } else { total / S::lit(used as f64) };
    Ok(PluLoss {
        loss,
        used,
        skipped: batch.len() - used,
    })
}
