//! The click-time inference log and its pairing with final labels.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::write_atomic;
use crate::error::{Error, Result};
use crate::reader::Zone;
use crate::sample::{final_label, ClickSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceRecord {
    pub click_id: u64,
    pub click_ts: i64,
    pub y_hat: f64,
    pub y_star: f64,
    pub zone: Zone,
    /// Router probability; absent for single-branch models.
    pub r: Option<f64>,
}

pub fn render_inference_log(log: &[InferenceRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for rec in log {
        w.serialize(rec)?;
    }
    w.into_inner().map_err(|e| Error::Protocol(format!("flushing inference log: {e}")))
}

pub fn write_inference_log(log: &[InferenceRecord], path: &Path) -> Result<()> {
    write_atomic(path, &render_inference_log(log)?)
}

pub fn read_inference_log(path: &Path) -> Result<Vec<InferenceRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|rec| rec.map_err(Error::from)).collect()
}

/// Prediction/label pairs in log order. Every click in `samples` must appear
/// exactly once in the log and nothing else may.
pub fn snapshot_eval(log: &[InferenceRecord], samples: &[ClickSample]) -> Result<(Vec<f64>, Vec<f64>)> {
    let labels: HashMap<u64, f64> = samples.iter().map(|s| (s.click_id, final_label(s))).collect();
    if labels.len() != samples.len() {
        return Err(Error::Protocol("duplicate click id among samples".into()));
    }
    let mut seen: HashMap<u64, ()> = HashMap::with_capacity(log.len());
    let mut preds = Vec::with_capacity(log.len());
    let mut ys = Vec::with_capacity(log.len());
    for rec in log {
        let y = *labels
            .get(&rec.click_id)
            .ok_or_else(|| Error::Protocol(format!("logged click {} is not in the evaluation set", rec.click_id)))?;
        if seen.insert(rec.click_id, ()).is_some() {
            return Err(Error::Protocol(format!("click {} logged twice", rec.click_id)));
        }
        preds.push(rec.y_hat);
        ys.push(y);
    }
    if let Some(s) = samples.iter().find(|s| !seen.contains_key(&s.click_id)) {
        return Err(Error::Protocol(format!("click {} has no logged prediction", s.click_id)));
    }
    Ok((preds, ys))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::PurchaseEvent;

    fn sample(id: u64, price: f64) -> ClickSample {
        ClickSample {
            click_id: id,
            features: vec![0],
            click_ts: id as i64,
            purchases: vec![PurchaseEvent { ts: id as i64, price }],
        }
    }

    fn rec(id: u64, y_hat: f64) -> InferenceRecord {
        InferenceRecord {
            click_id: id,
            click_ts: id as i64,
            y_hat,
            y_star: 0.0,
            zone: Zone::Single,
            r: None,
        }
    }

    #[test]
    fn pairs_join_on_click_id() {
        let samples: Vec<_> = (0..20).map(|i| sample(i, 1.0 + i as f64)).collect();
        let log: Vec<_> = (0..20).rev().map(|i| rec(i, i as f64 * 0.5)).collect();
        let (p, y) = snapshot_eval(&log, &samples).unwrap();
        assert_eq!(p.len(), 20);
        let by_id: HashMap<u64, f64> = samples.iter().map(|s| (s.click_id, final_label(s))).collect();
        for (r, (pp, yy)) in log.iter().zip(p.iter().zip(&y)) {
            assert_eq!(*pp, r.y_hat);
            assert_eq!(*yy, by_id[&r.click_id]);
        }
    }

    #[test]
    fn duplicates_and_gaps_rejected() {
        let samples = vec![sample(1, 1.0), sample(2, 2.0)];
        assert!(snapshot_eval(&[rec(1, 0.0), rec(1, 0.0), rec(2, 0.0)], &samples).is_err());
        assert!(snapshot_eval(&[rec(1, 0.0)], &samples).is_err());
        assert!(snapshot_eval(&[rec(1, 0.0), rec(2, 0.0), rec(3, 0.0)], &samples).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let log = vec![
            rec(1, 0.1 + 0.2),
            InferenceRecord {
                zone: Zone::Hybrid,
                r: Some(1.0 / 3.0),
                ..rec(2, 7.0)
            },
        ];
        write_inference_log(&log, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("click_id,click_ts,y_hat,y_star,zone,r\n"));
        assert_eq!(read_inference_log(&path).unwrap(), log);
    }
}
