use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointMetrics {
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

pub fn point_metrics(pred: &[u8], truth: &[u8]) -> Result<PointMetrics> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Validation(format!(
            "prediction length {} vs truth length {}",
            pred.len(),
            truth.len()
        )));
    }
    let (mut tp, mut fp, mut fneg, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p != 0, t != 0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    Ok(PointMetrics {
        accuracy: (tp + tn) as f64 / pred.len() as f64,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fneg),
        f1: ratio(2 * tp, 2 * tp + fp + fneg),
    })
}
