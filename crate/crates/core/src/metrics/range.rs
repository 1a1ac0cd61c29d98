use serde::{Deserialize, Serialize};

use super::events::Event;

/// Positional weighting inside a range.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalBias {
    #[default]
    Flat,
    Front,
    Back,
    Middle,
}

impl PositionalBias {
    /// Weight of 1-based position `i` in a range of length `len`.
    pub fn weight(self, i: usize, len: usize) -> f64 {
        match self {
            PositionalBias::Flat => 1.0,
            PositionalBias::Front => (len - i + 1) as f64,
            PositionalBias::Back => i as f64,
            PositionalBias::Middle => {
                if i <= len / 2 {
                    i as f64
                } else {
                    (len - i + 1) as f64
                }
            }
        }
    }
}

/// Penalty for a range matched by several counterparts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cardinality {
    /// `1/x` for `x` overlapping counterparts.
    #[default]
    Reciprocal,
    One,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RangeParams {
    pub alpha: f64,
    pub bias: PositionalBias,
    pub cardinality: Cardinality,
}

impl Default for RangeParams {
    fn default() -> Self {
        RangeParams {
            alpha: 0.0,
            bias: PositionalBias::Flat,
            cardinality: Cardinality::Reciprocal,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RangeMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

fn intersect(a: Event, b: Event) -> Option<Event> {
    let s = a.0.max(b.0);
    let e = a.1.min(b.1);
    (s < e).then_some((s, e))
}

/// Positional share of `r` covered by `others`, times the cardinality factor.
fn overlap_reward(r: Event, others: &[Event], p: &RangeParams) -> (f64, bool) {
    let len = r.1 - r.0;
    let total: f64 = (1..=len).map(|i| p.bias.weight(i, len)).sum();
    let mut covered = 0.0;
    let mut hits = 0usize;
    // `others` is sorted and disjoint, so a binary search finds the first candidate.
    let first = others.partition_point(|o| o.1 <= r.0);
    for &o in &others[first..] {
        if o.0 >= r.1 {
            break;
        }
        if let Some((s, e)) = intersect(r, o) {
            hits += 1;
            covered += (s..e).map(|t| p.bias.weight(t - r.0 + 1, len)).sum::<f64>();
        }
    }
    let gamma = match (p.cardinality, hits) {
        (_, 0 | 1) => 1.0,
        (Cardinality::Reciprocal, x) => 1.0 / x as f64,
        (Cardinality::One, _) => 1.0,
    };
    (gamma * covered / total, hits > 0)
}

pub fn range_metrics(pred: &[Event], truth: &[Event], p: &RangeParams) -> RangeMetrics {
    let recall = (!truth.is_empty()).then(|| {
        truth
            .iter()
            .map(|&r| {
                let (o, exists) = overlap_reward(r, pred, p);
                p.alpha * if exists { 1.0 } else { 0.0 } + (1.0 - p.alpha) * o
            })
            .sum::<f64>()
            / truth.len() as f64
    });
    let precision = (!pred.is_empty())
        .then(|| pred.iter().map(|&q| overlap_reward(q, truth, p).0).sum::<f64>() / pred.len() as f64);
    RangeMetrics {
        precision,
        recall,
        f1: harmonic(precision, recall),
    }
}

pub(crate) fn harmonic(p: Option<f64>, r: Option<f64>) -> Option<f64> {
    match (p, r) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    }
}
