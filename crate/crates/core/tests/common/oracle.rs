//! Slow reference implementations of the metrics, written from the
//! definitions without sharing code with the library.

pub fn runs(labels: &[u8]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut t = 0;
    while t < labels.len() {
        if labels[t] == 1 {
            let s = t;
            while t < labels.len() && labels[t] == 1 {
                t += 1;
            }
            out.push((s, t));
        } else {
            t += 1;
        }
    }
    out
}

pub struct Point {
    pub acc: f64,
    pub p: Option<f64>,
    pub r: Option<f64>,
    pub f1: Option<f64>,
}

pub fn point(pred: &[u8], truth: &[u8]) -> Point {
    let n = pred.len() as f64;
    let agree = pred.iter().zip(truth).filter(|(a, b)| a == b).count() as f64;
    let tp = pred.iter().zip(truth).filter(|(a, b)| **a == 1 && **b == 1).count() as f64;
    let flagged = pred.iter().filter(|&&a| a == 1).count() as f64;
    let actual = truth.iter().filter(|&&b| b == 1).count() as f64;
    let p = (flagged > 0.0).then(|| tp / flagged);
    let r = (actual > 0.0).then(|| tp / actual);
    let f1 = match (p, r) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        (Some(_), Some(_)) => Some(0.0),
        // Harmonic mean over the counts when one side is undefined.
        _ if flagged + actual > 0.0 => Some(2.0 * tp / (flagged + actual)),
        _ => None,
    };
    Point {
        acc: agree / n,
        p,
        r,
        f1,
    }
}

/// `bias` in {"flat","front","back","middle"}; `reciprocal` selects 1/x.
pub fn range_pr(pred: &[u8], truth: &[u8], alpha: f64, bias: &str, reciprocal: bool) -> (Option<f64>, Option<f64>) {
    let weight = |i: usize, len: usize| -> f64 {
        match bias {
            "flat" => 1.0,
            "front" => (len - i + 1) as f64,
            "back" => i as f64,
            _ => {
                if 2 * i <= len {
                    i as f64
                } else {
                    (len - i + 1) as f64
                }
            }
        }
    };
    let score = |r: (usize, usize), other: &[u8], other_runs: &[(usize, usize)]| -> (f64, bool) {
        let len = r.1 - r.0;
        let mut total = 0.0;
        let mut got = 0.0;
        for t in r.0..r.1 {
            let w = weight(t - r.0 + 1, len);
            total += w;
            if other[t] == 1 {
                got += w;
            }
        }
        let x = other_runs.iter().filter(|o| o.0 < r.1 && r.0 < o.1).count();
        let gamma = if reciprocal && x > 1 { 1.0 / x as f64 } else { 1.0 };
        (gamma * got / total, x > 0)
    };
    let pr = runs(pred);
    let tr = runs(truth);
    let recall = (!tr.is_empty()).then(|| {
        tr.iter()
            .map(|&r| {
                let (o, e) = score(r, pred, &pr);
                alpha * f64::from(u8::from(e)) + (1.0 - alpha) * o
            })
            .sum::<f64>()
            / tr.len() as f64
    });
    let precision = (!pr.is_empty()).then(|| pr.iter().map(|&r| score(r, truth, &tr).0).sum::<f64>() / pr.len() as f64);
    (precision, recall)
}

/// Two-point Gauss–Legendre over eighth-unit cells. The integrands are
/// linear between kinks that all sit on the quarter grid, so this is exact.
fn integrate(lo: f64, hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let h = 0.125;
    let n = ((hi - lo) / h).round() as usize;
    let c = 0.5 / 3f64.sqrt();
    (0..n)
        .map(|k| {
            let a = lo + k as f64 * h;
            let m = a + 0.5 * h;
            0.5 * h * (f(m - c * h) + f(m + c * h))
        })
        .sum()
}

fn dist(x: f64, s: (f64, f64)) -> f64 {
    (s.0 - x).max(x - s.1).max(0.0)
}

fn overlap_len(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.1.min(b.1) - a.0.max(b.0)).max(0.0)
}

pub fn affiliation(pred: &[u8], truth: &[u8]) -> (Option<f64>, Option<f64>) {
    let len = truth.len() as f64;
    let ev: Vec<(f64, f64)> = runs(truth).iter().map(|&(s, e)| (s as f64, e as f64)).collect();
    if ev.is_empty() {
        return (None, None);
    }
    let pr: Vec<(f64, f64)> = runs(pred).iter().map(|&(s, e)| (s as f64, e as f64)).collect();
    let owner = |y: f64| -> usize {
        (0..ev.len())
            .min_by(|&a, &b| dist(y, ev[a]).total_cmp(&dist(y, ev[b])))
            .unwrap()
    };
    let in_pred = |y: f64| pr.iter().any(|&(s, e)| s <= y && y < e);
    let mut p_sum = 0.0;
    let mut p_n = 0;
    let mut r_sum = 0.0;
    for j in 0..ev.len() {
        let zone_len = integrate(0.0, len, |y| f64::from(u8::from(owner(y) == j)));
        // The zone is an interval; recover its ends from its extent.
        let zone_lo = integrate(0.0, len, |y| f64::from(u8::from(owner(y) < j)));
        let zone = (zone_lo, zone_lo + zone_len);
        let mass = integrate(0.0, len, |y| f64::from(u8::from(owner(y) == j && in_pred(y))));
        if mass > 0.0 {
            let num = integrate(0.0, len, |y| {
                if owner(y) != j || !in_pred(y) {
                    return 0.0;
                }
                let d = dist(y, ev[j]);
                if d == 0.0 {
                    return 1.0;
                }
                1.0 - overlap_len((ev[j].0 - d, ev[j].1 + d), zone) / zone_len
            });
            p_sum += num / mass;
            p_n += 1;
        }
        let local: Vec<(f64, f64)> = pr
            .iter()
            .map(|&(s, e)| (s.max(zone.0), e.min(zone.1)))
            .filter(|(s, e)| s < e)
            .collect();
        if !local.is_empty() {
            let num = integrate(ev[j].0, ev[j].1, |x| {
                let d = local.iter().map(|&p| dist(x, p)).fold(f64::INFINITY, f64::min);
                if d == 0.0 {
                    return 1.0;
                }
                1.0 - overlap_len((x - d, x + d), zone) / zone_len
            });
            r_sum += num / (ev[j].1 - ev[j].0);
        }
    }
    ((p_n > 0).then(|| p_sum / p_n as f64), Some(r_sum / ev.len() as f64))
}

/// Weighted pair counting, self-pairs included.
pub fn roc(scores: &[f64], y: &[f64]) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            let w = y[i] * (1.0 - y[j]);
            den += w;
            if scores[i] > scores[j] {
                num += w;
            } else if scores[i] == scores[j] {
                num += 0.5 * w;
            }
        }
    }
    (den > 0.0).then(|| num / den)
}

/// Precision at each distinct threshold times the recall gained there.
pub fn ap(scores: &[f64], y: &[f64]) -> Option<f64> {
    let pos: f64 = y.iter().sum();
    if pos <= 0.0 {
        return None;
    }
    let mut th: Vec<f64> = scores.to_vec();
    th.sort_by(|a, b| b.total_cmp(a));
    th.dedup();
    let mut prev = 0.0;
    let mut out = 0.0;
    for t in th {
        let sel: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= t).collect();
        let tp: f64 = sel.iter().map(|&i| y[i]).sum();
        let recall = tp / pos;
        out += (recall - prev) * tp / sel.len() as f64;
        prev = recall;
    }
    Some(out)
}

pub fn ramp(truth: &[u8], l: f64) -> Vec<f64> {
    let idx: Vec<usize> = (0..truth.len()).filter(|&t| truth[t] == 1).collect();
    (0..truth.len())
        .map(|t| {
            let k = idx.iter().map(|&a| a.abs_diff(t)).min();
            match k {
                Some(0) => 1.0,
                Some(k) if k as f64 <= l => 1.0 - k as f64 / (l + 1.0),
                _ => 0.0,
            }
        })
        .collect()
}

/// Trapezoid average over the grid of (ROC, PR) areas.
pub fn vus(scores: &[f64], truth: &[u8], grid: &[f64]) -> (Option<f64>, Option<f64>) {
    let per: Vec<(Option<f64>, Option<f64>)> = grid
        .iter()
        .map(|&l| {
            let y = ramp(truth, l);
            (roc(scores, &y), ap(scores, &y))
        })
        .collect();
    let avg = |pick: &dyn Fn(&(Option<f64>, Option<f64>)) -> Option<f64>| -> Option<f64> {
        let v: Option<Vec<f64>> = per.iter().map(pick).collect();
        let v = v?;
        if grid.len() == 1 {
            return Some(v[0]);
        }
        let mut area = 0.0;
        for i in 1..grid.len() {
            area += (grid[i] - grid[i - 1]) * (v[i] + v[i - 1]) / 2.0;
        }
        Some(area / (grid[grid.len() - 1] - grid[0]))
    };
    (avg(&|p| p.0), avg(&|p| p.1))
}
