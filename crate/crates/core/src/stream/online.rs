//! Sequential replay of the event stream under a training regime.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::reader::{online_target, BlockId, ModelGrads, ReaderModel, ReaderOptimizer, RoutedPrediction, Routing};
use crate::sample::{day_of, AttributionConfig, ClickSample};
use crate::scalar::Scalar;
use crate::stream::events::{EventKind, StreamEvent};
use crate::stream::log::InferenceRecord;
use crate::stream::regime::{RegimeKind, RoutingMode, TrainingRegime};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnlineConfig {
    pub regime: TrainingRegime,
    pub learning_rate: f64,
    /// Seeds the within-day shuffle of the offline regime.
    pub seed: u64,
    /// Checksum the model around every k-th click inference; 0 disables.
    pub purity_check_every: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StreamStats {
    pub click_inferences: usize,
    pub purchase_updates: usize,
    pub window_closes: usize,
    /// Optimizer steps taken.
    pub updates: usize,
    pub plu_used: usize,
    pub plu_skipped: usize,
    pub purity_checks: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnlineOutcome {
    pub log: Vec<InferenceRecord>,
    pub stats: StreamStats,
}

fn routing_for(mode: RoutingMode, purchases: usize) -> Routing {
    match mode {
        RoutingMode::Hybrid => Routing::Hybrid,
        RoutingMode::Hard => Routing::Hard,
        RoutingMode::Oracle => Routing::Oracle(purchases),
    }
}

struct Engine<'a, S: Scalar> {
    model: &'a mut ReaderModel<S>,
    opt: ReaderOptimizer<S>,
    attribution: AttributionConfig,
    stats: StreamStats,
}

impl<S: Scalar> Engine<'_, S> {
    fn step(&mut self, grads: &ModelGrads<S>) {
        let model = &*self.model;
        let keep: Vec<bool> = BlockId::ALL.iter().map(|&id| model.online_trainable(id)).collect();
        self.opt.apply(self.model, grads, |id| keep[id.index()]);
        self.stats.updates += 1;
    }

    fn fit(&mut self, s: &ClickSample, target: S, routing: Routing) -> Result<()> {
        let (_, grads, _) = self.model.regression_grads(&s.features, target, routing)?;
        self.step(&grads);
        Ok(())
    }

    /// Complete-label step used by the offline regime: predictor by true count,
    /// router on the repurchase indicator.
    fn fit_complete(&mut self, s: &ClickSample) -> Result<()> {
        let n = s.purchases.len();
        let y_star = S::lit(s.purchases.iter().map(|p| p.price).sum::<f64>());
        let (_, mut grads, _) = self.model.regression_grads(&s.features, y_star, Routing::Oracle(n))?;
        if self.model.branch_mode().is_dual() {
            let (_, g) = self.model.router_grads(&s.features, n > 1)?;
            grads.add_scaled(&g, S::one());
        }
        self.step(&grads);
        Ok(())
    }
}

/// Replays `events` (built from `samples`) and returns the click-time inference
/// log with event counters.
pub fn run_online<S: Scalar>(
    model: &mut ReaderModel<S>,
    samples: &[ClickSample],
    events: &[StreamEvent],
    cfg: &OnlineConfig,
    attribution: &AttributionConfig,
) -> Result<OnlineOutcome> {
    cfg.regime.validate()?;
    if cfg.regime.branch_mode != model.branch_mode() {
        return Err(Error::Config(format!(
            "regime expects a {} model, got {}",
            cfg.regime.branch_mode.name(),
            model.branch_mode().name()
        )));
    }
    let opt = ReaderOptimizer::new(model, S::lit(cfg.learning_rate));
    let mut eng = Engine {
        model,
        opt,
        attribution: *attribution,
        stats: StreamStats::default(),
    };
    let kind = cfg.regime.kind;
    let mut log = Vec::new();
    let mut cache: HashMap<u64, S> = HashMap::new();
    let mut buffer: Vec<usize> = Vec::new();
    let mut buffer_day: Option<i64> = None;
    let mut shuffle = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut prev: Option<(i64, u8, u64, usize)> = None;

    for ev in events {
        let key = ev.order_key();
        if prev.is_some_and(|p| p >= key) {
            return Err(Error::Protocol(format!(
                "event for click {} at {} is out of order",
                ev.click_id, ev.ts
            )));
        }
        prev = Some(key);
        let s = samples
            .get(ev.sample)
            .filter(|s| s.click_id == ev.click_id)
            .ok_or_else(|| Error::Protocol(format!("event references unknown click {}", ev.click_id)))?;

        if kind == RegimeKind::OfflineDaily {
            let day = day_of(ev.ts);
            if buffer_day.is_some_and(|d| day > d) && !buffer.is_empty() {
                buffer.shuffle(&mut shuffle);
                for &i in &buffer {
                    eng.fit_complete(&samples[i])?;
                }
                buffer.clear();
            }
            buffer_day = Some(day);
        }

        match ev.kind {
            EventKind::ClickInference => {
                eng.stats.click_inferences += 1;
                let check = cfg.purity_check_every > 0 && (eng.stats.click_inferences - 1).is_multiple_of(cfg.purity_check_every);
                let before = check.then(|| eng.model.checksum());
                let routing = routing_for(cfg.regime.routing, s.purchases.len());
                let pred: RoutedPrediction<S> = eng.model.predict(&s.features, routing)?;
                if let Some(b) = before {
                    if eng.model.checksum() != b {
                        return Err(Error::Protocol(format!("inference for click {} changed parameters", s.click_id)));
                    }
                    eng.stats.purity_checks += 1;
                }
                log.push(InferenceRecord {
                    click_id: s.click_id,
                    click_ts: s.click_ts,
                    y_hat: pred.y_hat.as_f64(),
                    y_star: s.purchases.iter().map(|p| p.price).sum(),
                    zone: pred.zone,
                    r: model_r(&*eng.model, pred),
                });
            }
            EventKind::PurchaseUpdate {
                index,
                partial,
                purchases_so_far,
            } => {
                eng.stats.purchase_updates += 1;
                let routing = routing_for(cfg.regime.routing, s.purchases.len());
                match kind {
                    RegimeKind::PreOnly | RegimeKind::OfflineDaily => {}
                    RegimeKind::OracleFirstPurchase => {
                        if index == 0 {
                            let y_star = S::lit(s.purchases.iter().map(|p| p.price).sum());
                            eng.fit(s, y_star, routing)?;
                        }
                    }
                    RegimeKind::OnlineVanilla => eng.fit(s, S::lit(partial), routing)?,
                    RegimeKind::OnlineReader => {
                        let y_t = S::lit(partial);
                        let target = if cfg.regime.debias.calibrator {
                            let w = eng.attribution.window_seconds as f64;
                            let dt = S::lit(((ev.ts - s.click_ts) as f64 / w).clamp(0.0, 1.0));
                            let gap = eng.model.calibrator_gap(&s.features, dt, purchases_so_far)?;
                            let r = eng.model.router_probability(&s.features)?;
                            online_target(y_t, r, gap)
                        } else {
                            y_t
                        };
                        cache.insert(s.click_id, target);
                        eng.fit(s, target, routing)?;
                    }
                }
            }
            EventKind::WindowClose { y_star, purchases } => {
                eng.stats.window_closes += 1;
                let cached = cache.remove(&s.click_id);
                match kind {
                    RegimeKind::OfflineDaily => buffer.push(ev.sample),
                    RegimeKind::OnlineReader if cfg.regime.debias.gra => {
                        let cfgm = eng.model.config();
                        let (l1, l2) = (S::lit(cfgm.lambda_gra), S::lit(cfgm.lambda_plu));
                        let plu = if cfg.regime.debias.plu { cached } else { None };
                        if cfg.regime.debias.plu {
                            if plu.is_some() {
                                eng.stats.plu_used += 1;
                            } else {
                                eng.stats.plu_skipped += 1;
                            }
                        }
                        let (_, _, grads) =
                            eng.model
                                .window_close_grads(&s.features, purchases, S::lit(y_star), plu, l1, l2)?;
                        eng.step(&grads);
                    }
                    _ => {}
                }
            }
        }
    }
    if kind == RegimeKind::OfflineDaily && !buffer.is_empty() {
        buffer.shuffle(&mut shuffle);
        for &i in &buffer {
            eng.fit_complete(&samples[i])?;
        }
    }
    Ok(OnlineOutcome { log, stats: eng.stats })
}

fn model_r<S: Scalar>(model: &ReaderModel<S>, pred: RoutedPrediction<S>) -> Option<f64> {
    model.branch_mode().is_dual().then(|| pred.r.as_f64())
}
