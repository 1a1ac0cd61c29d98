//! ROC and PR areas for binary or graded labels.
//!
//! A label `y ∈ [0,1]` counts as `y` of a positive and `1−y` of a negative.

/// Indices sorted by descending score, grouped by equal score.
fn tie_groups(scores: &[f64]) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in idx {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Area under the ROC curve: weighted Mann–Whitney statistic, ties count ½.
pub fn roc_auc(scores: &[f64], labels: &[f64]) -> Option<f64> {
    let pos: f64 = labels.iter().sum();
    let neg: f64 = labels.iter().map(|y| 1.0 - y).sum();
    if pos <= 0.0 || neg <= 0.0 {
        return None;
    }
    let mut neg_below = neg;
    let mut acc = 0.0;
    for g in tie_groups(scores) {
        let gp: f64 = g.iter().map(|&i| labels[i]).sum();
        let gn: f64 = g.iter().map(|&i| 1.0 - labels[i]).sum();
        neg_below -= gn;
        acc += gp * (neg_below + 0.5 * gn);
    }
    Some((acc / (pos * neg)).clamp(0.0, 1.0))
}

/// Step-wise average precision over descending unique thresholds.
pub fn average_precision(scores: &[f64], labels: &[f64]) -> Option<f64> {
    let pos: f64 = labels.iter().sum();
    if pos <= 0.0 {
        return None;
    }
    let mut tp = 0.0;
    let mut count = 0.0;
    let mut prev_recall = 0.0;
    let mut ap = 0.0;
    for g in tie_groups(scores) {
        tp += g.iter().map(|&i| labels[i]).sum::<f64>();
        count += g.len() as f64;
        let recall = tp / pos;
        ap += (recall - prev_recall) * (tp / count);
        prev_recall = recall;
    }
    Some(ap.clamp(0.0, 1.0))
}

pub fn binary_labels(labels: &[u8]) -> Vec<f64> {
    labels.iter().map(|&l| l as f64).collect()
}
