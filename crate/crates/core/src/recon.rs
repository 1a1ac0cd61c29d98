//! Cross-modal decoder, reconstruction loss and per-timestamp scoring.

use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::nn::{FeedForward, Linear, MultiHeadAttention};
use crate::tensor::{Graph, ParamStore, Tensor, Var};

/// Self-attention over the condensed text, cross-attention from the masked
/// time representation, a feed-forward block and a projection to patches.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub self_attn: MultiHeadAttention,
    pub cross_attn: MultiHeadAttention,
    pub ff: FeedForward,
    pub proj: Linear,
    pub patch: usize,
    pub stride: usize,
    pub channels: usize,
}

impl Decoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        d_model: usize,
        heads: usize,
        ff_hidden: usize,
        patch: usize,
        stride: usize,
        channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Decoder {
            self_attn: MultiHeadAttention::new(store, "recon.self_attn", d_model, heads, rng)?,
            cross_attn: MultiHeadAttention::new(store, "recon.cross_attn", d_model, heads, rng)?,
            ff: FeedForward::new(store, "recon.ff", d_model, ff_hidden, rng),
            proj: Linear::new(store, "recon.proj", d_model, patch * channels, rng),
            patch,
            stride,
            channels,
        })
    }

    /// Reconstructed window `w×D` in normalized space. `z_con = None` skips the
    /// text cross-attention entirely.
    pub fn reconstruct(&self, g: &mut Graph, h_masked: Var, z_con: Option<Var>) -> Result<Var> {
        let u_in = match z_con {
            Some(z) => {
                let z2 = self.self_attn.forward(g, z, z)?;
                let c = self.cross_attn.forward(g, h_masked, z2)?;
                g.add(h_masked, c)?
            }
            None => h_masked,
        };
        let u = self.ff.forward(g, u_in)?;
        let patches = self.proj.forward(g, u)?;
        Ok(g.fold_patches(patches, self.patch, self.stride, self.channels)?)
    }
}

/// `‖X − X̂‖²_F`, divided by the entry count unless `raw_sum`.
pub fn loss_rec(g: &mut Graph, x: Var, x_hat: Var, raw_sum: bool) -> Result<Var> {
    if g.shape(x) != g.shape(x_hat) {
        return Err(Error::Validation(format!(
            "reconstruction shape {:?} != input {:?}",
            g.shape(x_hat),
            g.shape(x)
        )));
    }
    let d = g.sub(x, x_hat)?;
    let sq = g.mul(d, d)?;
    Ok(if raw_sum { g.sum(sq)? } else { g.mean(sq)? })
}

pub fn loss_rec_value(x: &Tensor, x_hat: &Tensor, raw_sum: bool) -> Result<f64> {
    let mut g = Graph::new();
    let a = g.constant(x.clone());
    let b = g.constant(x_hat.clone());
    let l = loss_rec(&mut g, a, b, raw_sum)?;
    Ok(g.value(l).item())
}

/// Channel-mean squared error per row of a `w×D` pair.
pub fn row_errors(x: &[f64], x_hat: &[f64], channels: usize) -> Vec<f64> {
    x.chunks(channels)
        .zip(x_hat.chunks(channels))
        .map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>() / channels as f64)
        .collect()
}

/// Anomaly scores over a test series with their coverage counts.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSeries {
    pub scores: Vec<f64>,
    pub coverage: Vec<u32>,
}

impl ScoreSeries {
    /// Averages per-window row errors placed at their offsets. Windows are
    /// folded in the given order so the result does not depend on how they
    /// were computed.
    pub fn accumulate(len: usize, windows: &[(usize, Vec<f64>)]) -> Result<Self> {
        let mut sum = vec![0.0; len];
        let mut coverage = vec![0u32; len];
        for (offset, errs) in windows {
            if offset + errs.len() > len {
                return Err(Error::Validation(format!(
                    "window at {offset} of length {} exceeds series length {len}",
                    errs.len()
                )));
            }
            for (k, e) in errs.iter().enumerate() {
                sum[offset + k] += e;
                coverage[offset + k] += 1;
            }
        }
        if let Some(t) = coverage.iter().position(|&c| c == 0) {
            return Err(Error::Validation(format!("timestamp index {t} not covered by any window")));
        }
        let scores = sum.iter().zip(&coverage).map(|(s, &c)| s / c as f64).collect();
        Ok(ScoreSeries { scores, coverage })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// `timestamp,score[,label]` rows.
    pub fn write_csv(&self, path: &Path, timestamps: &[i64], labels: Option<&[u8]>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        if labels.is_some() {
            w.write_record(["timestamp", "score", "label"])?;
        } else {
            w.write_record(["timestamp", "score"])?;
        }
        for (t, s) in self.scores.iter().enumerate() {
            let mut rec = vec![timestamps[t].to_string(), format!("{s:e}")];
            if let Some(l) = labels {
                rec.push(l[t].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Reads a `timestamp,score[,label]` file.
pub fn read_scores(path: &Path) -> Result<(Vec<i64>, Vec<f64>, Option<Vec<u8>>)> {
    let (ds, _) = crate::data::load_series_with_warnings(path)?;
    if ds.channels() != 1 {
        return Err(Error::Parse {
            path: path.display().to_string(),
            row: 1,
            msg: "expected a single `score` column".into(),
        });
    }
    Ok((ds.timestamps().to_vec(), ds.values().to_vec(), ds.labels().map(<[u8]>::to_vec)))
}

/// Flags the `⌈r·T⌉` highest scores; ties go to the earlier index.
pub fn threshold_labels(scores: &[f64], ratio: f64) -> Result<Vec<u8>> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("threshold ratio must be in (0,1), got {ratio}")));
    }
    let k = ((ratio * scores.len() as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut out = vec![0u8; scores.len()];
    for &i in idx.iter().take(k) {
        out[i] = 1;
    }
    Ok(out)
}
