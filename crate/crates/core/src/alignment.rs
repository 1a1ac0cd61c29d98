//! Time/text similarity and the contrastive alignment loss.

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

pub const COSINE_EPS: f64 = 1e-12;
pub const DEFAULT_TAU: f64 = 0.07;

/// `N×N` cosine similarities between rows of `h_time` and rows of `z_text`.
pub fn similarity_matrix(g: &mut Graph, h_time: Var, z_text: Var) -> Result<Var> {
    if g.shape(h_time) != g.shape(z_text) {
        return Err(Error::Validation(format!(
            "similarity needs equal shapes, got {:?} and {:?}",
            g.shape(h_time),
            g.shape(z_text)
        )));
    }
    let a = g.normalize_rows(h_time, COSINE_EPS)?;
    let b = g.normalize_rows(z_text, COSINE_EPS)?;
    let bt = g.transpose(b)?;
    Ok(g.matmul(a, bt)?)
}

/// Symmetric InfoNCE over `K/τ` with diagonal positives.
///
/// The first term normalizes each row `j` over texts `g`. By default the
/// second term normalizes each column `g` over time rows `j`; with
/// `row_denominators` both terms use the row normalization.
pub fn loss_ma(g: &mut Graph, k: Var, tau: f64, row_denominators: bool) -> Result<Var> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Config(format!("temperature must be > 0, got {tau}")));
    }
    let n = g.value(k).rows();
    let logits = g.scale(k, 1.0 / tau)?;
    let rows = g.log_softmax_rows(logits)?;
    let d1 = g.diag(rows)?;
    let d2 = if row_denominators {
        d1
    } else {
        let t = g.transpose(logits)?;
        let cols = g.log_softmax_rows(t)?;
        g.diag(cols)?
    };
    let both = g.add(d1, d2)?;
    let s = g.sum(both)?;
    Ok(g.scale(s, -0.5 / n as f64)?)
}

/// Plain evaluation of [`loss_ma`] on a matrix.
pub fn loss_ma_value(k: &Tensor, tau: f64, row_denominators: bool) -> Result<f64> {
    let mut g = Graph::new();
    let v = g.constant(k.clone());
    let l = loss_ma(&mut g, v, tau, row_denominators)?;
    Ok(g.value(l).item())
}

/// Mean diagonal minus mean off-diagonal entry.
pub fn diagonal_margin(k: &Tensor) -> f64 {
    let n = k.rows();
    if n < 2 {
        return 0.0;
    }
    let (mut diag, mut off) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                diag += k.get(i, j);
            } else {
                off += k.get(i, j);
            }
        }
    }
    diag / n as f64 - off / (n * (n - 1)) as f64
}
