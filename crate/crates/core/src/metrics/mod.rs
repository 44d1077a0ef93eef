//! Voxel-wise confusion counts, overlap metrics and mean ± SD aggregation.
//!
//! Degenerate denominators: when both masks are empty, dice, iou, ppv, npv,
//! sensitivity, specificity and accuracy are 1. The extra fraction is
//! `fp / (tn + fn)` and is an error when `tn + fn == 0`.

use std::fmt::Write as _;

use crate::data::MaskVolume;
use crate::error::{Error, Result};
use crate::kv::KvWriter;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

/// Tallies `pred` against `gt`; label 1 is the positive class.
pub fn confusion_labels(pred: &[u8], gt: &[u8]) -> Result<ConfusionCounts> {
    if pred.len() != gt.len() {
        return Err(Error::shape("confusion", format!("{} predicted vs {} reference voxels", pred.len(), gt.len())));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.iter().zip(gt) {
        match (p, g) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            (0, 0) => c.tn += 1,
            _ => return Err(Error::Data(format!("non-binary label pair ({p}, {g})"))),
        }
    }
    Ok(c)
}

pub fn confusion(pred: &MaskVolume, gt: &MaskVolume) -> Result<ConfusionCounts> {
    if pred.dims() != gt.dims() {
        return Err(Error::shape("confusion", format!("dims {:?} vs {:?}", pred.dims(), gt.dims())));
    }
    confusion_labels(pred.labels(), gt.labels())
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

pub fn dice(c: &ConfusionCounts) -> f64 {
    ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_)
}

pub fn sensitivity(c: &ConfusionCounts) -> f64 {
    ratio(c.tp, c.tp + c.fn_)
}

pub fn specificity(c: &ConfusionCounts) -> f64 {
    ratio(c.tn, c.tn + c.fp)
}

pub fn extra_fraction(c: &ConfusionCounts) -> Result<f64> {
    let den = c.tn + c.fn_;
    if den == 0 {
        return Err(Error::Data("extra fraction undefined: tn + fn = 0".into()));
    }
    Ok(c.fp as f64 / den as f64)
}

pub fn iou(c: &ConfusionCounts) -> f64 {
    ratio(c.tp, c.tp + c.fn_ + c.fp)
}

pub fn ppv(c: &ConfusionCounts) -> f64 {
    ratio(c.tp, c.tp + c.fp)
}

pub fn npv(c: &ConfusionCounts) -> f64 {
    ratio(c.tn, c.tn + c.fn_)
}

pub fn accuracy(c: &ConfusionCounts) -> f64 {
    ratio(c.tp + c.tn, c.total())
}

/// Arithmetic mean and population standard deviation.
pub fn aggregate(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::invalid("aggregate", "empty list"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// Metric names in report order.
pub const METRIC_NAMES: [&str; 8] = ["dice", "sensitivity", "specificity", "iou", "ef", "ppv", "npv", "accuracy"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricValues {
    pub dice: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub iou: f64,
    pub ef: f64,
    pub ppv: f64,
    pub npv: f64,
    pub accuracy: f64,
}

impl MetricValues {
    pub fn from_counts(c: &ConfusionCounts) -> Result<Self> {
        Ok(MetricValues {
            dice: dice(c),
            sensitivity: sensitivity(c),
            specificity: specificity(c),
            iou: iou(c),
            ef: extra_fraction(c)?,
            ppv: ppv(c),
            npv: npv(c),
            accuracy: accuracy(c),
        })
    }

    /// Values in [`METRIC_NAMES`] order.
    pub fn as_array(&self) -> [f64; 8] {
        [
            self.dice,
            self.sensitivity,
            self.specificity,
            self.iou,
            self.ef,
            self.ppv,
            self.npv,
            self.accuracy,
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VolumeMetrics {
    pub id: String,
    pub counts: ConfusionCounts,
    pub values: MetricValues,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aggregate {
    pub metric: &'static str,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub volumes: Vec<VolumeMetrics>,
    pub aggregate: Vec<Aggregate>,
}

impl MetricsReport {
    pub fn from_counts(items: Vec<(String, ConfusionCounts)>) -> Result<Self> {
        let volumes = items
            .into_iter()
            .map(|(id, counts)| {
                Ok(VolumeMetrics {
                    values: MetricValues::from_counts(&counts)?,
                    id,
                    counts,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let aggregate = METRIC_NAMES
            .iter()
            .enumerate()
            .map(|(k, &metric)| {
                let col: Vec<f64> = volumes.iter().map(|v| v.values.as_array()[k]).collect();
                let (mean, sd) = aggregate(&col)?;
                Ok(Aggregate { metric, mean, sd })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MetricsReport { volumes, aggregate })
    }

    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.aggregate.iter().find(|a| a.metric == metric).map(|a| a.mean)
    }

    /// Fixed-width table, one row per volume, then `mean` and `sd` rows.
    pub fn to_text(&self) -> String {
        let mut s = format!("{:<16}", "volume");
        for m in METRIC_NAMES {
            let _ = write!(s, " {m:>11}");
        }
        s.push('\n');
        let mut row = |label: &str, vals: &mut dyn Iterator<Item = f64>| {
            let _ = write!(s, "{label:<16}");
            for v in vals {
                let _ = write!(s, " {v:>11.4}");
            }
            s.push('\n');
        };
        for v in &self.volumes {
            row(&v.id, &mut v.values.as_array().into_iter());
        }
        row("mean", &mut self.aggregate.iter().map(|a| a.mean));
        row("sd", &mut self.aggregate.iter().map(|a| a.sd));
        s
    }

    /// Key/value document: `volume.<id>.<metric>` and `aggregate.<metric>.{mean,sd}`.
    pub fn to_kv(&self) -> String {
        let mut w = KvWriter::new();
        w.put("volumes", self.volumes.len());
        for v in &self.volumes {
            let p = format!("volume.{}", v.id);
            w.put(&format!("{p}.tp"), v.counts.tp)
                .put(&format!("{p}.fp"), v.counts.fp)
                .put(&format!("{p}.fn"), v.counts.fn_)
                .put(&format!("{p}.tn"), v.counts.tn);
            for (m, x) in METRIC_NAMES.iter().zip(v.values.as_array()) {
                w.put(&format!("{p}.{m}"), x);
            }
        }
        for a in &self.aggregate {
            w.put(&format!("aggregate.{}.mean", a.metric), a.mean)
                .put(&format!("aggregate.{}.sd", a.metric), a.sd);
        }
        w.finish()
    }
}
