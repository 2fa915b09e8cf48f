//! Offline pretraining on samples whose windows have closed.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::reader::{true_gap, ModelGrads, ReaderModel, ReaderOptimizer, Routing};
use crate::sample::{final_label, AttributionConfig, ClickSample};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            learning_rate: 1e-3,
            epochs: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PretrainReport {
    pub samples: usize,
    pub steps: usize,
    pub predictor_loss: f64,
    pub router_loss: f64,
    pub calibrator_loss: f64,
    pub calibrator_pairs: usize,
}

/// One calibrator training pair: elapsed fraction of the window, purchases
/// observed, and the true log-space gap at that moment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapPair {
    pub delta_t: f64,
    pub purchases_so_far: usize,
    pub gap: f64,
}

/// For each observable purchase prefix, one observation time drawn uniformly
/// between the prefix's last purchase and the next one (or the window close).
/// Prefixes sharing a timestamp with the next purchase are never observable alone
/// and are skipped.
pub fn calibrator_pairs(sample: &ClickSample, attribution: &AttributionConfig, rng: &mut impl Rng) -> Result<Vec<GapPair>> {
    let y_star = final_label(sample);
    let close = sample.window_close(attribution);
    let w = attribution.window_seconds as f64;
    let n = sample.purchases.len();
    let mut out = Vec::with_capacity(n);
    let mut partial = 0.0;
    for k in 0..n {
        partial += sample.purchases[k].price;
        let start = sample.purchases[k].ts;
        let end = sample.purchases.get(k + 1).map_or(close, |p| p.ts);
        if end == start && k + 1 < n {
            continue;
        }
        let t = if end > start { rng.random_range(start..end) } else { start };
        out.push(GapPair {
            delta_t: ((t - sample.click_ts) as f64 / w).clamp(0.0, 1.0),
            purchases_so_far: k + 1,
            gap: true_gap(y_star, partial.min(y_star))?,
        });
    }
    Ok(out)
}

/// Fits the predictor with true-count routing on the final label, the router on
/// the repurchase indicator, and the calibrator on repurchase samples only.
/// One optimizer step per sample.
pub fn pretrain<S: Scalar>(
    model: &mut ReaderModel<S>,
    samples: &[ClickSample],
    cfg: &PretrainConfig,
    attribution: &AttributionConfig,
) -> Result<PretrainReport> {
    if samples.is_empty() {
        return Err(Error::Usage("empty pretrain set".into()));
    }
    let mut opt = ReaderOptimizer::new(model, S::lit(cfg.learning_rate));
    let dual = model.branch_mode().is_dual();
    let mut report = PretrainReport {
        samples: samples.len(),
        ..PretrainReport::default()
    };
    let (mut router_n, mut cal_n, mut pred_n) = (0usize, 0usize, 0usize);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.seed);
        shuffle.set_stream(epoch as u64);
        order.shuffle(&mut shuffle);
        for &i in &order {
            let s = &samples[i];
            let n = s.purchases.len();
            let y_star = S::lit(final_label(s));
            let (loss, mut grads, _) = model.regression_grads(&s.features, y_star, Routing::Oracle(n))?;
            report.predictor_loss += loss.as_f64();
            pred_n += 1;
            if dual {
                let (loss, g) = model.router_grads(&s.features, n > 1)?;
                grads.add_scaled(&g, S::one());
                report.router_loss += loss.as_f64();
                router_n += 1;
                if n > 1 {
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64));
                    rng.set_stream(s.click_id);
                    let pairs = calibrator_pairs(s, attribution, &mut rng)?;
                    let mut cal = ModelGrads::default();
                    for p in &pairs {
                        let (loss, g) =
                            model.calibrator_grads(&s.features, S::lit(p.delta_t), p.purchases_so_far, S::lit(p.gap))?;
                        cal.add_scaled(&g, S::one());
                        report.calibrator_loss += loss.as_f64();
                    }
                    cal.scale(S::one() / S::lit(pairs.len() as f64));
                    grads.add_scaled(&cal, S::one());
                    report.calibrator_pairs += pairs.len();
                    cal_n += pairs.len();
                }
            }
            opt.apply(model, &grads, |_| true);
            report.steps += 1;
        }
    }
    let mean = |v: f64, n: usize| if n == 0 { 0.0 } else { v / n as f64 };
    report.predictor_loss = mean(report.predictor_loss, pred_n);
    report.router_loss = mean(report.router_loss, router_n);
    report.calibrator_loss = mean(report.calibrator_loss, cal_n);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::{PurchaseEvent, SECONDS_PER_HOUR};

    const H: i64 = SECONDS_PER_HOUR;

    fn sample(purchases: &[(i64, f64)]) -> ClickSample {
        ClickSample {
            click_id: 4,
            features: vec![1, 2, 3],
            click_ts: 1000,
            purchases: purchases
                .iter()
                .map(|&(dt, price)| PurchaseEvent { ts: 1000 + dt, price })
                .collect(),
        }
    }

    #[test]
    fn prefix_pairs_follow_definition() {
        let attr = AttributionConfig::default();
        let s = sample(&[(0, 40.0), (24 * H, 60.0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let p = calibrator_pairs(&s, &attr, &mut rng).unwrap();
            assert_eq!(p.len(), 2);
            assert_eq!(p[0].purchases_so_far, 1);
            assert!(p[0].delta_t >= 0.0 && p[0].delta_t < 24.0 * H as f64 / attr.window_seconds as f64);
            assert_eq!(p[0].gap, 101f64.ln() - 41f64.ln());
            assert_eq!((p[1].purchases_so_far, p[1].gap), (2, 0.0));
            assert!(p[1].delta_t >= 24.0 * H as f64 / attr.window_seconds as f64);
        }
    }

    #[test]
    fn simultaneous_purchases_collapse() {
        let attr = AttributionConfig::default();
        let s = sample(&[(5, 1.0), (5, 2.0), (attr.window_seconds, 3.0)]);
        let p = calibrator_pairs(&s, &attr, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let n: Vec<usize> = p.iter().map(|q| q.purchases_so_far).collect();
        assert_eq!(n, [2, 3]);
        assert_eq!(p[1].delta_t, 1.0);
    }

    #[test]
    fn empty_set_rejected() {
        let mut m = ReaderModel::<f64>::new(crate::reader::ReaderConfig {
            fields: 3,
            buckets: 8,
            ..Default::default()
        })
        .unwrap();
        assert!(pretrain(&mut m, &[], &PretrainConfig::default(), &AttributionConfig::default()).is_err());
    }
}
