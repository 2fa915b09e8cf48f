//! Evaluation metrics and dataset analyses.

pub mod analysis;
pub mod metrics;

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::Result;
use crate::scalar::Scalar;

pub use analysis::{
    cumulative_fraction_curve, gmv_histograms, hourly_gmv_curve, hourly_grid, kolmogorov_survival, ks_two_sample,
    split_by_repurchase, HistogramBin, KsResult,
};
pub use metrics::{acc_at_20, alpr, pair_counts, regression_auc, Alpr, PairCounts};

/// Marker written for undefined values.
pub const MISSING: &str = "NA";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsReport {
    /// `None` when every label is equal.
    pub auc: Option<f64>,
    pub acc: f64,
    pub alpr: f64,
    pub alpr_clamped: usize,
    pub n_samples: usize,
}

impl MetricsReport {
    pub fn compute<S: Scalar>(preds: &[S], labels: &[S]) -> Result<Self> {
        let a = alpr(preds, labels)?;
        Ok(MetricsReport {
            auc: regression_auc(preds, labels)?,
            acc: acc_at_20(preds, labels)?,
            alpr: a.value,
            alpr_clamped: a.clamped,
            n_samples: preds.len(),
        })
    }

    pub fn auc_field(&self) -> String {
        fmt_opt(self.auc)
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| MISSING.to_string(), |x| x.to_string())
}

pub fn render_hourly_csv(curve: &[Option<f64>; 24]) -> String {
    let mut out = String::from("hour,mean_gmv\n");
    for (h, v) in curve.iter().enumerate() {
        let _ = writeln!(out, "{h},{}", fmt_opt(*v));
    }
    out
}

pub fn render_fraction_csv(grid: &[i64], fractions: &[f64]) -> String {
    let mut out = String::from("tau_hours,fraction\n");
    for (tau, f) in grid.iter().zip(fractions) {
        let _ = writeln!(out, "{},{f}", *tau as f64 / crate::sample::SECONDS_PER_HOUR as f64);
    }
    out
}

pub fn render_histogram_csv(bins: &[HistogramBin]) -> String {
    let mut out = String::from("bin,lower_log1p,upper_log1p,count_single,count_repurchase\n");
    for (k, b) in bins.iter().enumerate() {
        let _ = writeln!(out, "{k},{},{},{},{}", b.lower, b.upper, b.count_single, b.count_repurchase);
    }
    out
}

pub fn render_ks_csv(ks: &KsResult) -> String {
    format!(
        "statistic,p_value,n_single,n_repurchase\n{},{},{},{}\n",
        ks.statistic, ks.p_value, ks.n_a, ks.n_b
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_and_csv_layout() {
        let r = MetricsReport::compute(&[1.0, 2.0, 0.0], &[1.0, 3.0, 2.0]).unwrap();
        assert_eq!(r.n_samples, 3);
        assert_eq!(r.alpr_clamped, 1);
        let flat = MetricsReport::compute(&[1.0, 2.0], &[1.0, 1.0]).unwrap();
        assert_eq!(flat.auc_field(), "NA");
        let mut curve = [None; 24];
        curve[3] = Some(2.5);
        let csv = render_hourly_csv(&curve);
        assert_eq!(csv.lines().count(), 25);
        assert!(csv.contains("\n3,2.5\n"));
        assert!(csv.contains("\n4,NA\n"));
        assert_eq!(render_fraction_csv(&[0, 3600], &[0.4, 1.0]), "tau_hours,fraction\n0,0.4\n1,1\n");
    }
}
