use super::auc::{average_precision, roc_auc};
use super::events::{events, median_length, Event};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};

pub const DEFAULT_GRID_POINTS: usize = 16;

/// Event labels widened by a linear ramp: `1 − k/(ℓ+1)` at distance
/// `k ≤ ℓ` from the nearest event, `0` beyond.
pub fn ramp_labels(len: usize, ev: &[Event], buffer: f64) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for &(s, e) in ev {
        out[s..e].iter_mut().for_each(|v| *v = 1.0);
        let reach = buffer.floor() as usize;
        for k in 1..=reach {
            let w = 1.0 - k as f64 / (buffer + 1.0);
            if k <= s {
                out[s - k] = f64::max(out[s - k], w);
            }
            if e - 1 + k < len {
                out[e - 1 + k] = f64::max(out[e - 1 + k], w);
            }
        }
    }
    out
}

/// `points` evenly spaced buffers from 0 to twice the median event length
/// (at least 4).
pub fn default_grid(truth: &[u8], points: usize) -> Vec<f64> {
    let hi = (2.0 * median_length(&events(truth)).unwrap_or(0.0)).max(4.0);
    if points <= 1 {
        return vec![0.0];
    }
    (0..points).map(|i| hi * i as f64 / (points - 1) as f64).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VusMetrics {
    pub range_auc_pr: Option<f64>,
    pub range_auc_roc: Option<f64>,
    pub vus_pr: Option<f64>,
    pub vus_roc: Option<f64>,
}

/// Trapezoid mean over the grid; a single point returns its value.
fn grid_mean(grid: &[f64], vals: &[Option<f64>]) -> Option<f64> {
    let vals: Vec<f64> = vals.iter().copied().collect::<Option<_>>()?;
    if grid.len() == 1 {
        return Some(vals[0]);
    }
    let span = grid[grid.len() - 1] - grid[0];
    let area: f64 = (1..grid.len())
        .map(|i| (grid[i] - grid[i - 1]) * 0.5 * (vals[i] + vals[i - 1]))
        .sum();
    Some((area / span).clamp(0.0, 1.0))
}

pub fn vus(scores: &[f64], truth: &[u8], grid: &[f64], buffer: f64, mode: Execution) -> Result<VusMetrics> {
    if grid.is_empty() {
        return Err(Error::Config("empty buffer grid".into()));
    }
    if grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("buffer grid must be finite, ≥ 0 and strictly increasing".into()));
    }
    if scores.len() != truth.len() {
        return Err(Error::Validation("scores and labels differ in length".into()));
    }
    let ev = events(truth);
    let per: Vec<(Option<f64>, Option<f64>)> = map_indexed(mode, grid, |_, &l| {
        let y = ramp_labels(truth.len(), &ev, l);
        (roc_auc(scores, &y), average_precision(scores, &y))
    });
    let roc: Vec<Option<f64>> = per.iter().map(|p| p.0).collect();
    let pr: Vec<Option<f64>> = per.iter().map(|p| p.1).collect();
    let y0 = ramp_labels(truth.len(), &ev, buffer);
    Ok(VusMetrics {
        range_auc_pr: average_precision(scores, &y0),
        range_auc_roc: roc_auc(scores, &y0),
        vus_pr: grid_mean(grid, &pr),
        vus_roc: grid_mean(grid, &roc),
    })
}
