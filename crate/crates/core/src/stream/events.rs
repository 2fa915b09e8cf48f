//! Timestamped replay events and the pretrain/online split.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::{day_of, AttributionConfig, ClickSample, SECONDS_PER_DAY};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind {
    ClickInference,
    /// Purchase `index` (0-based) has arrived; `partial` is the cumulative label.
    PurchaseUpdate {
        index: usize,
        partial: f64,
        purchases_so_far: usize,
    },
    WindowClose {
        y_star: f64,
        purchases: usize,
    },
}

impl EventKind {
    pub fn priority(&self) -> u8 {
        match self {
            EventKind::ClickInference => 0,
            EventKind::PurchaseUpdate { .. } => 1,
            EventKind::WindowClose { .. } => 2,
        }
    }

    fn sub_index(&self) -> usize {
        match self {
            EventKind::PurchaseUpdate { index, .. } => *index,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamEvent {
    pub ts: i64,
    pub kind: EventKind,
    pub click_id: u64,
    /// Position of the sample in the slice the stream was built from.
    pub sample: usize,
}

impl StreamEvent {
    /// Total order: time, then click < purchase < close, then click id, then purchase index.
    pub fn order_key(&self) -> (i64, u8, u64, usize) {
        (self.ts, self.kind.priority(), self.click_id, self.kind.sub_index())
    }
}

/// One click event, one event per purchase, and one window close per sample,
/// in the deterministic replay order.
pub fn build_stream(samples: &[ClickSample], attribution: &AttributionConfig) -> Result<Vec<StreamEvent>> {
    let mut events = Vec::with_capacity(samples.iter().map(|s| s.purchases.len() + 2).sum());
    for (i, s) in samples.iter().enumerate() {
        s.validate(attribution)?;
        events.push(StreamEvent {
            ts: s.click_ts,
            kind: EventKind::ClickInference,
            click_id: s.click_id,
            sample: i,
        });
        let mut partial = 0.0;
        for (k, p) in s.purchases.iter().enumerate() {
            partial += p.price;
            events.push(StreamEvent {
                ts: p.ts,
                kind: EventKind::PurchaseUpdate {
                    index: k,
                    partial,
                    purchases_so_far: k + 1,
                },
                click_id: s.click_id,
                sample: i,
            });
        }
        events.push(StreamEvent {
            ts: s.window_close(attribution),
            kind: EventKind::WindowClose {
                y_star: partial,
                purchases: s.purchases.len(),
            },
            click_id: s.click_id,
            sample: i,
        });
    }
    events.sort_by_key(|e| e.order_key());
    Ok(events)
}

/// Half-open day ranges `[start, end)` of click time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentSplit {
    pub pretrain_days: (i64, i64),
    pub online_days: (i64, i64),
}

impl Default for ExperimentSplit {
    fn default() -> Self {
        ExperimentSplit {
            pretrain_days: (0, 50),
            online_days: (57, 82),
        }
    }
}

impl ExperimentSplit {
    pub fn validate(&self, attribution: &AttributionConfig) -> Result<()> {
        let (p0, p1) = self.pretrain_days;
        let (o0, o1) = self.online_days;
        if !(p0 < p1 && o0 < o1) {
            return Err(Error::Config("day ranges must be nonempty".into()));
        }
        if p1 > o0 {
            return Err(Error::Config("pretrain range must precede the online range".into()));
        }
        if (o0 - p1) * SECONDS_PER_DAY < attribution.window_seconds {
            return Err(Error::Config(
                "gap between pretrain and online ranges is shorter than the attribution window".into(),
            ));
        }
        Ok(())
    }

    fn in_range(ts: i64, (a, b): (i64, i64)) -> bool {
        let d = day_of(ts);
        a <= d && d < b
    }

    pub fn is_pretrain(&self, s: &ClickSample) -> bool {
        Self::in_range(s.click_ts, self.pretrain_days)
    }

    pub fn is_online(&self, s: &ClickSample) -> bool {
        Self::in_range(s.click_ts, self.online_days)
    }

    pub fn pretrain_samples(&self, samples: &[ClickSample]) -> Vec<ClickSample> {
        samples.iter().filter(|s| self.is_pretrain(s)).cloned().collect()
    }

    pub fn online_samples(&self, samples: &[ClickSample]) -> Vec<ClickSample> {
        samples.iter().filter(|s| self.is_online(s)).cloned().collect()
    }
}
