//! Click samples, purchase sequences and label arithmetic.
//!
//! Timestamps are integer seconds on a simulated epoch that starts at day 0,
//! 00:00. Day and hour are derived by integer division. Currency is an `f64`
//! in arbitrary units.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SECONDS_PER_HOUR: i64 = 3_600;
pub const SECONDS_PER_DAY: i64 = 86_400;

/// Largest number of categorical fields the schema accepts.
pub const MAX_FIELDS: usize = 22;

pub fn day_of(ts: i64) -> i64 {
    ts.div_euclid(SECONDS_PER_DAY)
}

pub fn hour_of_day(ts: i64) -> usize {
    (ts.rem_euclid(SECONDS_PER_DAY) / SECONDS_PER_HOUR) as usize
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PurchaseEvent {
    pub ts: i64,
    pub price: f64,
}

/// One converted ad click together with every purchase attributed to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickSample {
    pub click_id: u64,
    pub features: Vec<u64>,
    pub click_ts: i64,
    pub purchases: Vec<PurchaseEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttributionConfig {
    pub window_seconds: i64,
    pub timeline_days: i64,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        AttributionConfig {
            window_seconds: 7 * SECONDS_PER_DAY,
            timeline_days: 82,
        }
    }
}

impl AttributionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_seconds <= 0 {
            return Err(Error::Config("window_seconds must be positive".into()));
        }
        if self.timeline_days <= 0 {
            return Err(Error::Config("timeline_days must be positive".into()));
        }
        Ok(())
    }
}

/// What is known about a sample's label at some moment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelView {
    pub partial: f64,
    pub final_label: f64,
    pub purchases_so_far: usize,
    pub is_complete: bool,
}

impl ClickSample {
    pub fn num_purchases(&self) -> usize {
        self.purchases.len()
    }

    pub fn is_repurchase(&self) -> bool {
        self.purchases.len() > 1
    }

    pub fn window_close(&self, attribution: &AttributionConfig) -> i64 {
        self.click_ts + attribution.window_seconds
    }

    /// Checks every structural invariant of a sample.
    pub fn validate(&self, attribution: &AttributionConfig) -> Result<()> {
        let fail = |reason: String| Error::InvalidSample {
            click_id: self.click_id,
            reason,
        };
        if self.features.is_empty() || self.features.len() > MAX_FIELDS {
            return Err(fail(format!(
                "feature count {} outside 1..={MAX_FIELDS}",
                self.features.len()
            )));
        }
        if self.purchases.is_empty() {
            return Err(fail("no purchases".into()));
        }
        let close = self.window_close(attribution);
        let mut prev = i64::MIN;
        for (i, p) in self.purchases.iter().enumerate() {
            if !(p.price.is_finite() && p.price > 0.0) {
                return Err(fail(format!("purchase {i} has non-positive price {}", p.price)));
            }
            if p.ts < prev {
                return Err(fail(format!("purchase {i} is out of order")));
            }
            if p.ts < self.click_ts || p.ts > close {
                return Err(fail(format!(
                    "purchase {i} at {} outside attribution window [{}, {close}]",
                    p.ts, self.click_ts
                )));
            }
            prev = p.ts;
        }
        Ok(())
    }
}

/// The ground-truth GMV: the sum of every attributed purchase price.
pub fn final_label(sample: &ClickSample) -> f64 {
    sample.purchases.iter().map(|p| p.price).sum()
}

/// The cumulative GMV observed by time `t`.
pub fn partial_label(
    sample: &ClickSample,
    t: i64,
    attribution: &AttributionConfig,
) -> Result<LabelView> {
    if t < sample.click_ts {
        return Err(Error::Usage(format!(
            "label of click {} queried at {t}, before its click time {}",
            sample.click_id, sample.click_ts
        )));
    }
    let mut partial = 0.0;
    let mut seen = 0;
    for p in sample.purchases.iter().take_while(|p| p.ts <= t) {
        partial += p.price;
        seen += 1;
    }
    let is_complete = t >= sample.window_close(attribution);
    let final_label = final_label(sample);
    // At window close every purchase has been summed in the same order.
    Ok(LabelView {
        partial: if is_complete { final_label } else { partial },
        final_label,
        purchases_so_far: seen,
        is_complete,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const H: i64 = SECONDS_PER_HOUR;

    fn two_purchase() -> ClickSample {
        ClickSample {
            click_id: 1,
            features: vec![3, 4],
            click_ts: 10 * SECONDS_PER_DAY,
            purchases: vec![
                PurchaseEvent { ts: 10 * SECONDS_PER_DAY + H, price: 30.0 },
                PurchaseEvent { ts: 10 * SECONDS_PER_DAY + 26 * H, price: 70.0 },
            ],
        }
    }

    #[test]
    fn final_label_sums_prices() {
        assert_eq!(final_label(&two_purchase()), 100.0);
        let mut s = two_purchase();
        s.purchases = vec![PurchaseEvent { ts: s.click_ts, price: 42.0 }];
        assert_eq!(final_label(&s), 42.0);
    }

    #[test]
    fn partial_label_examples() {
        let s = two_purchase();
        let a = AttributionConfig::default();
        let v = partial_label(&s, s.click_ts + 2 * H, &a).unwrap();
        assert_eq!((v.partial, v.purchases_so_far, v.is_complete), (30.0, 1, false));
        let v = partial_label(&s, s.click_ts + 30 * H, &a).unwrap();
        assert_eq!((v.partial, v.purchases_so_far, v.is_complete), (100.0, 2, false));
        let v = partial_label(&s, s.click_ts + a.window_seconds, &a).unwrap();
        assert_eq!((v.partial, v.final_label, v.is_complete), (100.0, 100.0, true));
    }

    #[test]
    fn query_before_click_is_usage_error() {
        let s = two_purchase();
        let err = partial_label(&s, s.click_ts - 1, &AttributionConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn validate_rejects_bad_samples() {
        let a = AttributionConfig::default();
        let mut s = two_purchase();
        assert!(s.validate(&a).is_ok());
        s.purchases.swap(0, 1);
        assert!(s.validate(&a).is_err());
        let mut s = two_purchase();
        s.purchases[0].price = 0.0;
        assert!(s.validate(&a).is_err());
        let mut s = two_purchase();
        s.purchases[1].ts = s.click_ts + a.window_seconds + 1;
        assert!(s.validate(&a).is_err());
        let mut s = two_purchase();
        s.purchases.clear();
        assert!(s.validate(&a).is_err());
    }

    #[test]
    fn hour_and_day_bucketing() {
        assert_eq!(day_of(SECONDS_PER_DAY * 3 + 5), 3);
        assert_eq!(hour_of_day(SECONDS_PER_DAY * 3 + 9 * H + 59), 9);
    }

    fn arb_sample() -> impl Strategy<Value = ClickSample> {
        (0i64..1_000_000, prop::collection::vec((0i64..7 * SECONDS_PER_DAY, 0.01f64..1e4), 1..12))
            .prop_map(|(click_ts, mut ps)| {
                ps.sort_by_key(|p| p.0);
                ClickSample {
                    click_id: 7,
                    features: vec![1, 2, 3],
                    click_ts,
                    purchases: ps
                        .into_iter()
                        .map(|(d, price)| PurchaseEvent { ts: click_ts + d, price })
                        .collect(),
                }
            })
    }

    proptest! {
        #[test]
        fn partial_label_is_monotone(s in arb_sample(), a in 0i64..8 * SECONDS_PER_DAY, b in 0i64..8 * SECONDS_PER_DAY) {
            let attr = AttributionConfig::default();
            let (t1, t2) = (s.click_ts + a.min(b), s.click_ts + a.max(b));
            let l1 = partial_label(&s, t1, &attr).unwrap();
            let l2 = partial_label(&s, t2, &attr).unwrap();
            prop_assert!(l1.partial <= l2.partial);
            prop_assert!(l2.partial <= l2.final_label);
        }

        #[test]
        fn window_close_reveals_final_label(s in arb_sample()) {
            let attr = AttributionConfig::default();
            let v = partial_label(&s, s.window_close(&attr), &attr).unwrap();
            let brute: f64 = s.purchases.iter().fold(0.0, |acc, p| acc + p.price);
            prop_assert_eq!(v.partial, brute);
            prop_assert!(v.is_complete);
            prop_assert_eq!(v.purchases_so_far, s.purchases.len());
        }
    }
}
