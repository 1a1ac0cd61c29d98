//! Affiliation precision/recall over continuous time.
//!
//! Labelled index `t` occupies `[t, t+1)`. The timeline `[0, T)` is split
//! into one zone per true event at the midpoints between neighbouring events.
//! Inside a zone, each prediction instant is scored by the probability that a
//! uniformly random instant of the zone lies at least as far from the event;
//! each event instant is scored by the probability that a uniformly random
//! instant lies at least as far from it as the nearest prediction does.

use super::events::Event;
use super::range::harmonic;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffiliationMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

type Span = (f64, f64);

/// Zone bounds for each event.
pub fn zones(truth: &[Event], len: usize) -> Vec<Span> {
    let n = truth.len();
    (0..n)
        .map(|j| {
            let a = if j == 0 {
                0.0
            } else {
                (truth[j - 1].1 + truth[j].0) as f64 / 2.0
            };
            let b = if j + 1 == n {
                len as f64
            } else {
                (truth[j].1 + truth[j + 1].0) as f64 / 2.0
            };
            (a, b)
        })
        .collect()
}

fn clip(spans: &[Span], zone: Span) -> Vec<Span> {
    spans
        .iter()
        .filter_map(|&(s, e)| {
            let s = s.max(zone.0);
            let e = e.min(zone.1);
            (s < e).then_some((s, e))
        })
        .collect()
}

/// Survival of the distance from a random zone instant to the event.
pub(crate) fn precision_survival(d: f64, ev: Span, zone: Span) -> f64 {
    if d <= 0.0 {
        return 1.0;
    }
    let covered = (ev.1 - ev.0) + d.min(ev.0 - zone.0) + d.min(zone.1 - ev.1);
    1.0 - covered / (zone.1 - zone.0)
}

/// Survival of the distance from `x` to a random zone instant.
pub(crate) fn recall_survival(d: f64, x: f64, zone: Span) -> f64 {
    if d <= 0.0 {
        return 1.0;
    }
    1.0 - (d.min(x - zone.0) + d.min(zone.1 - x)) / (zone.1 - zone.0)
}

pub(crate) fn dist_to_span(x: f64, s: Span) -> f64 {
    if x < s.0 {
        s.0 - x
    } else if x > s.1 {
        x - s.1
    } else {
        0.0
    }
}

/// Integral of `f` over `[lo, hi]` split at `cuts`, exact when `f` is linear
/// between consecutive cuts.
fn integrate_pieces(lo: f64, hi: f64, cuts: &mut Vec<f64>, f: impl Fn(f64) -> f64) -> f64 {
    cuts.retain(|&c| c > lo && c < hi);
    cuts.push(lo);
    cuts.push(hi);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts.windows(2)
        .map(|w| (w[1] - w[0]) * f(0.5 * (w[0] + w[1])))
        .sum()
}

fn nearest_distance(x: f64, preds: &[Span]) -> f64 {
    preds.iter().map(|&p| dist_to_span(x, p)).fold(f64::INFINITY, f64::min)
}

pub fn affiliation_metrics(pred: &[Event], truth: &[Event], len: usize) -> AffiliationMetrics {
    if truth.is_empty() {
        return AffiliationMetrics {
            precision: None,
            recall: None,
            f1: None,
        };
    }
    let pred: Vec<Span> = pred.iter().map(|&(s, e)| (s as f64, e as f64)).collect();
    let mut p_sum = 0.0;
    let mut p_zones = 0usize;
    let mut r_sum = 0.0;
    for (&(s, e), zone) in truth.iter().zip(zones(truth, len)) {
        let ev = (s as f64, e as f64);
        let local = clip(&pred, zone);
        if !local.is_empty() {
            let mut total = 0.0;
            let mut mass = 0.0;
            for &(ps, pe) in &local {
                // Kinks where the distance reaches the room on the far side.
                let mut cuts = vec![ev.0, ev.1, ev.0 - (zone.1 - ev.1), ev.1 + (ev.0 - zone.0)];
                total += integrate_pieces(ps, pe, &mut cuts, |y| {
                    precision_survival(dist_to_span(y, ev), ev, zone)
                });
                mass += pe - ps;
            }
            p_sum += total / mass;
            p_zones += 1;
        }
        let recall = if local.is_empty() {
            0.0
        } else {
            let mut cuts = Vec::new();
            for (k, &(ps, pe)) in local.iter().enumerate() {
                cuts.extend([ps, pe, 0.5 * (zone.0 + ps), 0.5 * (pe + zone.1)]);
                if let Some(&(ns, _)) = local.get(k + 1) {
                    cuts.push(0.5 * (pe + ns));
                }
            }
            integrate_pieces(ev.0, ev.1, &mut cuts, |x| {
                recall_survival(nearest_distance(x, &local), x, zone)
            }) / (ev.1 - ev.0)
        };
        r_sum += recall;
    }
    let precision = (p_zones > 0).then(|| p_sum / p_zones as f64);
    let recall = Some(r_sum / truth.len() as f64);
    AffiliationMetrics {
        precision,
        recall,
        f1: harmonic(precision, recall),
    }
}
