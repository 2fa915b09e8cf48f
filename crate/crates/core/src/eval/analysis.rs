//! Dataset analyses: hourly label trend, cumulative GMV fraction, and the
//! single-vs-repurchase distribution comparison.

use crate::error::{Error, Result};
use crate::sample::{final_label, hour_of_day, partial_label, AttributionConfig, ClickSample, SECONDS_PER_HOUR};

/// Mean final label by hour-of-day of the click; `None` for hours without clicks.
pub fn hourly_gmv_curve(samples: &[ClickSample]) -> [Option<f64>; 24] {
    let mut sum = [0.0; 24];
    let mut count = [0usize; 24];
    for s in samples {
        let h = hour_of_day(s.click_ts);
        sum[h] += final_label(s);
        count[h] += 1;
    }
    std::array::from_fn(|h| (count[h] > 0).then(|| sum[h] / count[h] as f64))
}

/// Offsets `0, 1h, .., w_a` in whole hours.
pub fn hourly_grid(attribution: &AttributionConfig) -> Vec<i64> {
    (0..=attribution.window_seconds / SECONDS_PER_HOUR)
        .map(|h| h * SECONDS_PER_HOUR)
        .collect()
}

/// At each offset `tau`, the mean over samples of `y(click + tau) / y*`.
pub fn cumulative_fraction_curve(
    samples: &[ClickSample],
    grid: &[i64],
    attribution: &AttributionConfig,
) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Usage("cumulative fraction of an empty dataset".into()));
    }
    let mut out = vec![0.0; grid.len()];
    for s in samples {
        let y_star = final_label(s);
        for (acc, &tau) in out.iter_mut().zip(grid) {
            if tau < 0 {
                return Err(Error::Usage(format!("negative offset {tau}")));
            }
            *acc += partial_label(s, s.click_ts + tau, attribution)?.partial / y_star;
        }
    }
    let n = samples.len() as f64;
    Ok(out.into_iter().map(|v| v / n).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n_a: usize,
    pub n_b: usize,
}

/// Survival function of the Kolmogorov distribution, `P(K > lambda)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi-transformed form converges fast where the alternating series does not.
        let c = std::f64::consts::PI * std::f64::consts::PI / (8.0 * lambda * lambda);
        let s: f64 = (1..=100)
            .map(|k| {
                let j = (2 * k - 1) as f64;
                (-j * j * c).exp()
            })
            .sum();
        return (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0);
    }
    let mut total = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        total += if k % 2 == 1 { term } else { -term };
    }
    (2.0 * total).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov–Smirnov statistic with its asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Usage("KS test needs two nonempty samples".into()));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::Usage("NaN in KS input".into()));
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (na, nb) = (xs.len(), ys.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < na && j < nb {
        let v = if xs[i] <= ys[j] { xs[i] } else { ys[j] };
        while i < na && xs[i] <= v {
            i += 1;
        }
        while j < nb && ys[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let n_eff = (na * nb) as f64 / (na + nb) as f64;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_survival(n_eff.sqrt() * d),
        n_a: na,
        n_b: nb,
    })
}

/// Final labels split by single vs repurchase samples.
pub fn split_by_repurchase(samples: &[ClickSample]) -> (Vec<f64>, Vec<f64>) {
    let mut single = Vec::new();
    let mut repurchase = Vec::new();
    for s in samples {
        if s.is_repurchase() {
            repurchase.push(final_label(s));
        } else {
            single.push(final_label(s));
        }
    }
    (single, repurchase)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    /// Bin bounds in `ln(1 + y*)`.
    pub lower: f64,
    pub upper: f64,
    pub count_single: usize,
    pub count_repurchase: usize,
}

/// Equal-width histograms of `ln(1 + y*)` for both sub-populations on a shared grid.
pub fn gmv_histograms(samples: &[ClickSample], bins: usize) -> Result<Vec<HistogramBin>> {
    if bins == 0 || samples.is_empty() {
        return Err(Error::Usage("histogram needs samples and at least one bin".into()));
    }
    let logs: Vec<(f64, bool)> = samples.iter().map(|s| (final_label(s).ln_1p(), s.is_repurchase())).collect();
    let lo = logs.iter().map(|v| v.0).fold(f64::INFINITY, f64::min);
    let hi = logs.iter().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|k| HistogramBin {
            lower: lo + k as f64 * width,
            upper: lo + (k + 1) as f64 * width,
            count_single: 0,
            count_repurchase: 0,
        })
        .collect();
    for (v, rep) in logs {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        if rep {
            out[k].count_repurchase += 1;
        } else {
            out[k].count_single += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::{PurchaseEvent, SECONDS_PER_DAY};
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    const H: i64 = SECONDS_PER_HOUR;

    fn sample(id: u64, click_ts: i64, purchases: &[(i64, f64)]) -> ClickSample {
        ClickSample {
            click_id: id,
            features: vec![0],
            click_ts,
            purchases: purchases
                .iter()
                .map(|&(dt, price)| PurchaseEvent { ts: click_ts + dt, price })
                .collect(),
        }
    }

    #[test]
    fn hourly_curve_groups_by_click_hour() {
        let s: Vec<_> = (0..5).map(|i| sample(i, 9 * H + i as i64 * SECONDS_PER_DAY, &[(0, 50.0)])).collect();
        let c = hourly_gmv_curve(&s);
        assert_eq!(c[9], Some(50.0));
        assert_eq!(c.iter().filter(|v| v.is_some()).count(), 1);
    }

    #[test]
    fn cumulative_fraction_example() {
        let attr = AttributionConfig::default();
        let s = [sample(1, 0, &[(0, 40.0), (24 * H, 60.0)])];
        let grid = hourly_grid(&attr);
        assert_eq!(grid.len(), 169);
        let f = cumulative_fraction_curve(&s, &grid, &attr).unwrap();
        assert_eq!(f[0], 0.4);
        assert_eq!(f[23], 0.4);
        assert_eq!(f[24], 1.0);
        assert_eq!(f[168], 1.0);
        assert!(cumulative_fraction_curve(&[], &grid, &attr).is_err());
    }

    #[test]
    fn ks_examples() {
        let a = [1.0, 2.0, 3.0];
        let r = ks_two_sample(&a, &a).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        let r = ks_two_sample(&a, &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.statistic, 1.0);
        assert!(ks_two_sample(&[], &a).is_err());
    }

    #[test]
    fn ks_with_ties_uses_pooled_points() {
        let r = ks_two_sample(&[1.0, 1.0, 2.0], &[1.0, 2.0, 2.0]).unwrap();
        assert!((r.statistic - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn kolmogorov_branches_agree() {
        // both series are valid near the switch point
        for lambda in [1.0, 1.1, 1.18, 1.3] {
            let c = std::f64::consts::PI * std::f64::consts::PI / (8.0 * lambda * lambda);
            let jacobi = 1.0
                - (2.0 * std::f64::consts::PI).sqrt() / lambda
                    * (1..=100).map(|k| (-((2 * k - 1) as f64).powi(2) * c).exp()).sum::<f64>();
            let alt = 2.0
                * (1..=100)
                    .map(|k| (if k % 2 == 1 { 1.0 } else { -1.0 }) * (-2.0 * (k * k) as f64 * lambda * lambda).exp())
                    .sum::<f64>();
            assert!((jacobi - alt).abs() < 1e-12, "{lambda}");
        }
        assert!((kolmogorov_survival(1.358) - 0.05).abs() < 5e-4);
        assert!((kolmogorov_survival(1.628) - 0.01).abs() < 2e-4);
    }

    #[test]
    fn shifted_normals_are_separated() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a: Vec<f64> = Normal::new(0.0, 1.0).unwrap().sample_iter(&mut rng).take(1000).collect();
        let b: Vec<f64> = Normal::new(1.0, 1.0).unwrap().sample_iter(&mut rng).take(1000).collect();
        assert!(ks_two_sample(&a, &b).unwrap().p_value < 0.01);
    }

    #[test]
    fn asymptotic_p_tracks_permutation_p() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 60;
        for shift in [0.0, 0.3, 0.6] {
            let a: Vec<f64> = Normal::new(0.0, 1.0).unwrap().sample_iter(&mut rng).take(n).collect();
            let b: Vec<f64> = Normal::new(shift, 1.0).unwrap().sample_iter(&mut rng).take(n).collect();
            let observed = ks_two_sample(&a, &b).unwrap();
            let mut pooled: Vec<f64> = a.iter().chain(&b).copied().collect();
            let reps = 2000;
            let mut extreme = 0;
            for _ in 0..reps {
                pooled.shuffle(&mut rng);
                if ks_two_sample(&pooled[..n], &pooled[n..]).unwrap().statistic >= observed.statistic - 1e-12 {
                    extreme += 1;
                }
            }
            let perm = extreme as f64 / reps as f64;
            assert!((perm - observed.p_value).abs() < 0.08, "shift {shift}: {perm} vs {}", observed.p_value);
        }
    }

    #[test]
    fn histograms_partition_samples() {
        let s: Vec<_> = (0..50)
            .map(|i| {
                if i % 3 == 0 {
                    sample(i, 0, &[(0, 1.0 + i as f64), (H, 2.0)])
                } else {
                    sample(i, 0, &[(0, 1.0 + i as f64)])
                }
            })
            .collect();
        let h = gmv_histograms(&s, 7).unwrap();
        assert_eq!(h.len(), 7);
        assert_eq!(h.iter().map(|b| b.count_repurchase).sum::<usize>(), 17);
        assert_eq!(h.iter().map(|b| b.count_single).sum::<usize>(), 33);
        let one = gmv_histograms(&s[..1], 3).unwrap();
        assert_eq!(one.iter().map(|b| b.count_repurchase + b.count_single).sum::<usize>(), 1);
    }
}
