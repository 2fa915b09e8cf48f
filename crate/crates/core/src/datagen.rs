//! Synthetic click/purchase generator with a known ground-truth process.
//!
//! Every sample draws from its own ChaCha8 stream (`seed`, stream = click id),
//! so parallel generation reproduces serial output bit for bit. Per-field
//! effect tables live on a separate stream reserved for the "world".
//!
//! The process for one click:
//! 1. features uniform per field; click time stratified over the timeline;
//! 2. repurchase indicator ~ Bernoulli(sigmoid(w . effects(x) + bias)), with the
//!    bias found by bisection so the expected rate hits `repurchase_base_rate`;
//! 3. `N = 1` for single purchases, else `1 + K` with `K` truncated-geometric on
//!    `1..=9` whose success probability also depends on the features;
//! 4. purchase delays from a two-component exponential mixture truncated to the
//!    attribution window; the first purchase is instantaneous with a probability
//!    calibrated so the mean instant share of final GMV hits `immediate_gmv_target`;
//! 5. lognormal prices whose location carries drifting per-feature effects and the
//!    hourly multiplier of the click hour; repurchase clicks use a wider sigma.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::{
    hour_of_day, AttributionConfig, ClickSample, PurchaseEvent, MAX_FIELDS, SECONDS_PER_DAY,
    SECONDS_PER_HOUR,
};

const WORLD_STREAM: u64 = u64::MAX;
const MAX_EXTRA_PURCHASES: u32 = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub n_clicks: usize,
    pub timeline_days: i64,
    pub window_seconds: i64,
    pub field_cardinalities: Vec<u64>,
    pub repurchase_base_rate: f64,
    pub immediate_gmv_target: f64,
    pub price_log_mean: f64,
    pub price_log_sigma: f64,
    /// Sigma of the heavier-tailed component used by repurchase clicks.
    pub repurchase_price_log_sigma: f64,
    pub hourly_multipliers: Vec<f64>,
    pub repurchase_logit_weights: Vec<f64>,
    /// Per-field weights of the log-price effects.
    pub price_effect_weights: Vec<f64>,
    /// Per-day random-walk step of every per-value log-price effect.
    pub price_drift_per_day: f64,
    /// Mean success probability of the extra-purchase geometric law.
    pub extra_purchase_p: f64,
    pub extra_purchase_weights: Vec<f64>,
    pub fast_delay_hours: f64,
    pub slow_delay_hours: f64,
    pub fast_delay_weight: f64,
}

/// Hour-of-day price multipliers with spikes at 00:00, 09:00 and 19:00.
pub fn default_hourly_multipliers() -> Vec<f64> {
    let mut m = vec![1.0; 24];
    for (h, v) in [
        (23, 1.15),
        (0, 1.6),
        (1, 1.15),
        (8, 1.1),
        (9, 1.5),
        (10, 1.1),
        (18, 1.15),
        (19, 1.7),
        (20, 1.15),
    ] {
        m[h] = v;
    }
    m
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            seed: 7,
            n_clicks: 20_000,
            timeline_days: 82,
            window_seconds: 7 * SECONDS_PER_DAY,
            field_cardinalities: vec![64, 48, 32, 32, 24, 16, 12, 8],
            repurchase_base_rate: 0.5355,
            immediate_gmv_target: 0.40,
            price_log_mean: 1.0,
            price_log_sigma: 0.5,
            repurchase_price_log_sigma: 0.8,
            hourly_multipliers: default_hourly_multipliers(),
            repurchase_logit_weights: vec![1.0, 0.9, 0.8, 0.6, 0.5, 0.4, 0.3, 0.2],
            price_effect_weights: vec![0.5, 0.45, 0.4, 0.3, 0.3, 0.2, 0.2, 0.1],
            price_drift_per_day: 0.04,
            extra_purchase_p: 0.5,
            extra_purchase_weights: vec![0.6, 0.0, 0.5, 0.0, 0.4, 0.0, 0.3, 0.0],
            fast_delay_hours: 3.0,
            slow_delay_hours: 48.0,
            fast_delay_weight: 0.45,
        }
    }
}

impl GeneratorConfig {
    pub fn attribution(&self) -> AttributionConfig {
        AttributionConfig {
            window_seconds: self.window_seconds,
            timeline_days: self.timeline_days,
        }
    }

    pub fn num_fields(&self) -> usize {
        self.field_cardinalities.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.attribution().validate()?;
        let f = self.field_cardinalities.len();
        if f == 0 || f > MAX_FIELDS {
            return bad(format!("field count {f} outside 1..={MAX_FIELDS}"));
        }
        if self.field_cardinalities.iter().any(|&c| c < 2) {
            return bad("every field cardinality must be >= 2".into());
        }
        for (name, w) in [
            ("repurchase_logit_weights", &self.repurchase_logit_weights),
            ("price_effect_weights", &self.price_effect_weights),
            ("extra_purchase_weights", &self.extra_purchase_weights),
        ] {
            if w.len() != f {
                return bad(format!("{name} has {} entries, expected {f}", w.len()));
            }
            if w.iter().any(|v| !v.is_finite()) {
                return bad(format!("{name} must be finite"));
            }
        }
        for (name, v) in [
            ("repurchase_base_rate", self.repurchase_base_rate),
            ("immediate_gmv_target", self.immediate_gmv_target),
            ("extra_purchase_p", self.extra_purchase_p),
            ("fast_delay_weight", self.fast_delay_weight),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} = {v} must lie in (0, 1)"));
            }
        }
        if self.hourly_multipliers.len() != 24 || self.hourly_multipliers.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
            return bad("hourly_multipliers needs 24 positive values".into());
        }
        for (name, v) in [
            ("price_log_sigma", self.price_log_sigma),
            ("repurchase_price_log_sigma", self.repurchase_price_log_sigma),
            ("fast_delay_hours", self.fast_delay_hours),
            ("slow_delay_hours", self.slow_delay_hours),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(self.price_drift_per_day >= 0.0) || !self.price_log_mean.is_finite() {
            return bad("price_drift_per_day must be >= 0 and price_log_mean finite".into());
        }
        if self.n_clicks == 0 {
            return bad("n_clicks must be positive".into());
        }
        Ok(())
    }
}

/// Seeded per-(field, value) effect tables.
struct World {
    repurchase: Vec<Vec<f64>>,
    extra: Vec<Vec<f64>>,
    /// `price[day][field][value]`, a random walk over days.
    price: Vec<Vec<Vec<f64>>>,
}

impl World {
    fn draw(cfg: &GeneratorConfig) -> World {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(WORLD_STREAM);
        let table = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            cfg.field_cardinalities
                .iter()
                .map(|&c| (0..c).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                .collect()
        };
        let repurchase = table(&mut rng);
        let extra = table(&mut rng);
        let mut current = table(&mut rng);
        let days = cfg.timeline_days as usize;
        let mut price = Vec::with_capacity(days);
        for _ in 0..days {
            price.push(current.clone());
            for row in current.iter_mut() {
                for v in row.iter_mut() {
                    *v += cfg.price_drift_per_day * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        World { repurchase, extra, price }
    }

    fn score(table: &[Vec<f64>], weights: &[f64], features: &[u64]) -> f64 {
        features
            .iter()
            .zip(weights)
            .enumerate()
            .map(|(f, (&v, &w))| w * table[f][v as usize])
            .sum()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn sample_rng(seed: u64, click_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(click_id);
    rng
}

/// Intercept such that the mean of `sigmoid(score + b)` equals `target`.
fn calibrate_intercept(scores: &[f64], target: f64) -> Result<f64> {
    let rate = |b: f64| scores.iter().map(|s| sigmoid(s + b)).sum::<f64>() / scores.len() as f64;
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let b = 0.5 * (lo + hi);
    let achieved = rate(b);
    if (achieved - target).abs() > 0.03 {
        return Err(Error::Calibration(format!(
            "intercept bisection reached rate {achieved:.4}, target {target:.4}"
        )));
    }
    Ok(b)
}

/// Delay in seconds from a truncated exponential with the given mean, by inverse CDF.
fn truncated_exp(u: f64, mean_s: f64, max_s: f64) -> f64 {
    let tail = (-max_s / mean_s).exp();
    -mean_s * (1.0 - u * (1.0 - tail)).ln()
}

struct Draft {
    sample: ClickSample,
    instant_u: f64,
    first_delay: i64,
}

fn draft_sample(
    cfg: &GeneratorConfig,
    world: &World,
    click_id: u64,
    repurchase_bias: f64,
    extra_bias: f64,
) -> Draft {
    let mut rng = sample_rng(cfg.seed, click_id);
    let features: Vec<u64> = cfg
        .field_cardinalities
        .iter()
        .map(|&c| rng.random_range(0..c))
        .collect();
    let span = (cfg.timeline_days * SECONDS_PER_DAY) as f64;
    let jitter: f64 = rng.random();
    let click_ts = (((click_id as f64 + jitter) * span / cfg.n_clicks as f64).floor() as i64)
        .min(cfg.timeline_days * SECONDS_PER_DAY - 1);

    let p_rep = sigmoid(World::score(&world.repurchase, &cfg.repurchase_logit_weights, &features) + repurchase_bias);
    let repurchase = rng.random::<f64>() < p_rep;
    let q = sigmoid(World::score(&world.extra, &cfg.extra_purchase_weights, &features) + extra_bias);
    let extra_u: f64 = rng.random();
    let n = if repurchase {
        // inverse CDF of the geometric law truncated to 1..=MAX_EXTRA_PURCHASES
        let total = 1.0 - (1.0 - q).powi(MAX_EXTRA_PURCHASES as i32);
        let mut k = 1;
        let mut cdf = q / total;
        let mut pk = q / total;
        while extra_u > cdf && k < MAX_EXTRA_PURCHASES {
            pk *= 1.0 - q;
            cdf += pk;
            k += 1;
        }
        1 + k as usize
    } else {
        1
    };

    let window = cfg.window_seconds as f64;
    let mut delays: Vec<i64> = (0..n)
        .map(|_| {
            let mean_h = if rng.random::<f64>() < cfg.fast_delay_weight {
                cfg.fast_delay_hours
            } else {
                cfg.slow_delay_hours
            };
            let d = truncated_exp(rng.random(), mean_h * SECONDS_PER_HOUR as f64, window);
            (d.round() as i64).clamp(0, cfg.window_seconds)
        })
        .collect();
    delays.sort_unstable();

    let day = (click_ts / SECONDS_PER_DAY) as usize;
    let location = cfg.price_log_mean
        + World::score(&world.price[day], &cfg.price_effect_weights, &features)
        + cfg.hourly_multipliers[hour_of_day(click_ts)].ln();
    let sigma = if repurchase {
        cfg.repurchase_price_log_sigma
    } else {
        cfg.price_log_sigma
    };
    let purchases = delays
        .iter()
        .map(|&d| {
            let z: f64 = rng.sample(StandardNormal);
            PurchaseEvent {
                ts: click_ts + d,
                price: (location + sigma * z).exp(),
            }
        })
        .collect();
    let instant_u = rng.random();
    Draft {
        first_delay: delays[0],
        sample: ClickSample {
            click_id,
            features,
            click_ts,
            purchases,
        },
        instant_u,
    }
}

/// Generates `n_clicks` samples ordered by click id (and click time).
pub fn generate(cfg: &GeneratorConfig) -> Result<Vec<ClickSample>> {
    cfg.validate()?;
    let world = World::draw(cfg);
    let n = cfg.n_clicks as u64;

    // The first draws of every stream are the features, so the calibration
    // pass can reproduce them without materialising the rest.
    let feature_rows: Vec<Vec<u64>> = (0..n)
        .into_par_iter()
        .map(|id| {
            let mut rng = sample_rng(cfg.seed, id);
            cfg.field_cardinalities
                .iter()
                .map(|&c| rng.random_range(0..c))
                .collect()
        })
        .collect();
    let rep_scores: Vec<f64> = feature_rows
        .iter()
        .map(|x| World::score(&world.repurchase, &cfg.repurchase_logit_weights, x))
        .collect();
    let repurchase_bias = calibrate_intercept(&rep_scores, cfg.repurchase_base_rate)?;
    let extra_scores: Vec<f64> = feature_rows
        .iter()
        .map(|x| World::score(&world.extra, &cfg.extra_purchase_weights, x))
        .collect();
    let extra_bias = calibrate_intercept(&extra_scores, cfg.extra_purchase_p)?;

    let drafts: Vec<Draft> = (0..n)
        .into_par_iter()
        .map(|id| draft_sample(cfg, &world, id, repurchase_bias, extra_bias))
        .collect();

    // Instant first purchases: E[instant share] = pi * mean(p1 / y*).
    let mean_first_share = drafts
        .iter()
        .map(|d| d.sample.purchases[0].price / crate::sample::final_label(&d.sample))
        .sum::<f64>()
        / drafts.len() as f64;
    let instant_prob = cfg.immediate_gmv_target / mean_first_share;
    if instant_prob > 1.0 {
        return Err(Error::Calibration(format!(
            "immediate_gmv_target {} exceeds the attainable first-purchase share {mean_first_share:.4}",
            cfg.immediate_gmv_target
        )));
    }

    Ok(drafts
        .into_iter()
        .map(|mut d| {
            if d.instant_u < instant_prob {
                // shift the first purchase to the click; later ones keep their times
                d.sample.purchases[0].ts -= d.first_delay;
            }
            d.sample
        })
        .collect())
}
