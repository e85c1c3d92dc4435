//! Accuracy metrics and the MR.CLAM dataset pipeline.

pub mod mrclam;

use crate::manifold::ManifoldPoint;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Debug;
use std::io;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("estimate and ground-truth ids differ: {0}")]
    IdMismatch(String),
    #[error("{0} has no translation or rotation to compare")]
    NotComparable(String),
    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
    #[error(transparent)]
    Manifold(#[from] crate::manifold::ManifoldError),
}

fn paired<'a, K: Ord + Debug>(
    est: &'a BTreeMap<K, ManifoldPoint>,
    gt: &'a BTreeMap<K, ManifoldPoint>,
) -> Result<impl Iterator<Item = (&'a K, &'a ManifoldPoint, &'a ManifoldPoint)>, EvalError> {
    if est.len() != gt.len() || est.keys().zip(gt.keys()).any(|(a, b)| a != b) {
        let missing: Vec<_> = est.keys().filter(|k| !gt.contains_key(k)).collect();
        let extra: Vec<_> = gt.keys().filter(|k| !est.contains_key(k)).collect();
        return Err(EvalError::IdMismatch(format!(
            "only estimated: {missing:?}, only in ground truth: {extra:?}"
        )));
    }
    Ok(est.iter().zip(gt.values()).map(|((k, e), g)| (k, e, g)))
}

/// Root mean squared translational error in metres, without alignment.
pub fn rmse_ate<K: Ord + Debug>(
    est: &BTreeMap<K, ManifoldPoint>,
    gt: &BTreeMap<K, ManifoldPoint>,
) -> Result<f64, EvalError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (k, e, g) in paired(est, gt)? {
        let (Some(te), Some(tg)) = (e.translation(), g.translation()) else {
            return Err(EvalError::NotComparable(format!("{k:?}")));
        };
        sum += (te - tg).norm_squared();
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { (sum / n as f64).sqrt() })
}

/// Root mean squared geodesic rotation error in degrees, without alignment.
pub fn rmse_are<K: Ord + Debug>(
    est: &BTreeMap<K, ManifoldPoint>,
    gt: &BTreeMap<K, ManifoldPoint>,
) -> Result<f64, EvalError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (k, e, g) in paired(est, gt)? {
        let d = e
            .rotation_distance(g)
            .ok_or_else(|| EvalError::NotComparable(format!("{k:?}")))?;
        sum += d * d;
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { (sum / n as f64).sqrt().to_degrees() })
}

/// RMSE of body poses and of the sensor/marker extrinsics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseMetrics {
    pub ate_twb_m: f64,
    pub are_twb_deg: f64,
    pub ate_tbs_m: f64,
    pub are_tbs_deg: f64,
    pub ate_tbm_m: f64,
}

impl MetricsRecord {
    pub fn metrics(&self) -> PoseMetrics {
        PoseMetrics {
            ate_twb_m: self.ate_twb_m,
            are_twb_deg: self.are_twb_deg,
            ate_tbs_m: self.ate_tbs_m,
            are_tbs_deg: self.are_tbs_deg,
            ate_tbm_m: self.ate_tbm_m,
        }
    }
}

/// One row of the metrics CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub seed: u64,
    pub motion: u32,
    pub iteration: u32,
    pub ate_twb_m: f64,
    pub are_twb_deg: f64,
    pub ate_tbs_m: f64,
    pub are_tbs_deg: f64,
    pub ate_tbm_m: f64,
    pub energy: f64,
    pub msgs_sent: u64,
    pub msgs_dropped: u64,
}

pub const CSV_HEADER: [&str; 11] = [
    "seed",
    "motion",
    "iteration",
    "ate_twb_m",
    "are_twb_deg",
    "ate_tbs_m",
    "are_tbs_deg",
    "ate_tbm_m",
    "energy",
    "msgs_sent",
    "msgs_dropped",
];

/// Writes records with the shared header; extra leading columns (e.g. a sweep value) may be prepended.
pub fn write_metrics_csv<W: io::Write>(
    out: W,
    records: &[MetricsRecord],
) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv<R: io::Read>(input: R) -> Result<Vec<MetricsRecord>, EvalError> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(EvalError::from)).collect()
}
