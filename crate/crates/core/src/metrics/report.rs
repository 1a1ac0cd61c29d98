use serde::{Deserialize, Serialize};

use super::{
    affiliation_metrics, binary_labels, default_grid, events, median_length, point_metrics, range_metrics, vus,
    RangeParams, DEFAULT_GRID_POINTS,
};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::recon::threshold_labels;

pub const METRIC_NAMES: [&str; 16] = [
    "Acc", "P", "R", "F1", "R-P", "R-R", "R-F", "Aff-P", "Aff-R", "Aff-F", "A-P", "A-R", "R-A-P", "R-A-R", "V-PR",
    "V-ROC",
];

/// The sixteen metrics; `None` (JSON `null`) marks an undefined value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(rename = "Acc")]
    pub acc: Option<f64>,
    #[serde(rename = "P")]
    pub p: Option<f64>,
    #[serde(rename = "R")]
    pub r: Option<f64>,
    #[serde(rename = "F1")]
    pub f1: Option<f64>,
    #[serde(rename = "R-P")]
    pub range_p: Option<f64>,
    #[serde(rename = "R-R")]
    pub range_r: Option<f64>,
    #[serde(rename = "R-F")]
    pub range_f: Option<f64>,
    #[serde(rename = "Aff-P")]
    pub aff_p: Option<f64>,
    #[serde(rename = "Aff-R")]
    pub aff_r: Option<f64>,
    #[serde(rename = "Aff-F")]
    pub aff_f: Option<f64>,
    #[serde(rename = "A-P")]
    pub auc_pr: Option<f64>,
    #[serde(rename = "A-R")]
    pub auc_roc: Option<f64>,
    #[serde(rename = "R-A-P")]
    pub range_auc_pr: Option<f64>,
    #[serde(rename = "R-A-R")]
    pub range_auc_roc: Option<f64>,
    #[serde(rename = "V-PR")]
    pub vus_pr: Option<f64>,
    #[serde(rename = "V-ROC")]
    pub vus_roc: Option<f64>,
}

impl MetricReport {
    /// Values in [`METRIC_NAMES`] order.
    pub fn values(&self) -> [Option<f64>; 16] {
        [
            self.acc,
            self.p,
            self.r,
            self.f1,
            self.range_p,
            self.range_r,
            self.range_f,
            self.aff_p,
            self.aff_r,
            self.aff_f,
            self.auc_pr,
            self.auc_roc,
            self.range_auc_pr,
            self.range_auc_roc,
            self.vus_pr,
            self.vus_roc,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    /// Fraction of timestamps flagged for the label-based metrics; defaults
    /// to the true anomaly fraction.
    pub threshold_ratio: Option<f64>,
    /// Buffer grid for the volume metrics; defaults to [`default_grid`].
    pub vus_grid: Option<Vec<f64>>,
    pub vus_points: usize,
    /// Buffer for R-A-P/R-A-R; defaults to the median event length.
    pub buffer: Option<f64>,
    pub range: RangeParams,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            threshold_ratio: None,
            vus_grid: None,
            vus_points: DEFAULT_GRID_POINTS,
            buffer: None,
            range: RangeParams::default(),
        }
    }
}

pub fn evaluate(scores: &[f64], truth: &[u8], opts: &EvalOptions, mode: Execution) -> Result<MetricReport> {
    if scores.len() != truth.len() || scores.is_empty() {
        return Err(Error::Validation(format!(
            "{} scores for {} labels",
            scores.len(),
            truth.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Validation("non-finite score".into()));
    }
    let positives = truth.iter().filter(|&&l| l != 0).count();
    let ratio = opts
        .threshold_ratio
        .unwrap_or(positives as f64 / truth.len() as f64);
    let pred = if ratio > 0.0 && ratio < 1.0 {
        threshold_labels(scores, ratio)?
    } else if ratio >= 1.0 {
        vec![1; truth.len()]
    } else {
        vec![0; truth.len()]
    };
    let t_ev = events(truth);
    let p_ev = events(&pred);
    let pm = point_metrics(&pred, truth)?;
    let rm = range_metrics(&p_ev, &t_ev, &opts.range);
    let am = affiliation_metrics(&p_ev, &t_ev, truth.len());
    let grid = match &opts.vus_grid {
        Some(g) => g.clone(),
        None => default_grid(truth, opts.vus_points),
    };
    let buffer = opts
        .buffer
        .unwrap_or_else(|| median_length(&t_ev).unwrap_or(0.0));
    let vm = vus(scores, truth, &grid, buffer, mode)?;
    let y = binary_labels(truth);
    Ok(MetricReport {
        acc: Some(pm.accuracy),
        p: pm.precision,
        r: pm.recall,
        f1: pm.f1,
        range_p: rm.precision,
        range_r: rm.recall,
        range_f: rm.f1,
        aff_p: am.precision,
        aff_r: am.recall,
        aff_f: am.f1,
        auc_pr: super::average_precision(scores, &y),
        auc_roc: super::roc_auc(scores, &y),
        range_auc_pr: vm.range_auc_pr,
        range_auc_roc: vm.range_auc_roc,
        vus_pr: vm.vus_pr,
        vus_roc: vm.vus_roc,
    })
}
