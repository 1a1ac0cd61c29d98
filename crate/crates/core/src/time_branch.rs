//! Instance normalization, patching, masking and the patch transformer.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, TensorError};
use crate::tensor::nn::{Linear, TransformerLayer};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};

pub const NORM_EPS: f64 = 1e-5;

/// Per-channel statistics of one window.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    /// Population std floored at `eps`.
    pub std: Vec<f64>,
    pub eps: f64,
}

impl NormStats {
    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        let d = self.mean.len();
        x.iter()
            .enumerate()
            .map(|(i, v)| v * self.std[i % d] + self.mean[i % d])
            .collect()
    }
}

/// Z-scores each channel of a row-major `w×D` window.
///
/// The divisor is `max(std, eps)` rather than `std + eps` so that an affine
/// rescale of the input yields bit-for-bit comparable outputs whenever the
/// channel is not constant.
pub fn instance_norm(window: &[f64], channels: usize) -> (Vec<f64>, NormStats) {
    let w = window.len() / channels;
    let mut mean = vec![0.0; channels];
    let mut std = vec![0.0; channels];
    for c in 0..channels {
        let m = (0..w).map(|t| window[t * channels + c]).sum::<f64>() / w as f64;
        let var = (0..w).map(|t| (window[t * channels + c] - m).powi(2)).sum::<f64>() / w as f64;
        mean[c] = m;
        std[c] = var.sqrt().max(NORM_EPS);
    }
    let out = window
        .iter()
        .enumerate()
        .map(|(i, v)| (v - mean[i % channels]) / std[i % channels])
        .collect();
    (out, NormStats { mean, std, eps: NORM_EPS })
}

/// Flattened patches of one window plus the mask flags of the masked branch.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    /// `N × (p·D)`; row `i` holds time steps `i·l .. i·l+p`, time-major.
    pub patches: Tensor,
    pub mask: Vec<bool>,
    pub patch: usize,
    pub stride: usize,
    pub channels: usize,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn window_len(&self) -> usize {
        (self.len() - 1) * self.stride + self.patch
    }

    /// Values of patch `i`, time-major (`p·D`).
    pub fn patch_values(&self, i: usize) -> &[f64] {
        self.patches.row(i)
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

pub fn patchify(window: &[f64], channels: usize, patch: usize, stride: usize) -> Result<PatchSet> {
    let w = window.len() / channels;
    if patch == 0 || stride == 0 || patch > w || (w - patch) % stride != 0 {
        return Err(Error::Config(format!(
            "cannot patch window {w} with patch {patch} and stride {stride}"
        )));
    }
    let n = (w - patch) / stride + 1;
    let width = patch * channels;
    let mut data = Vec::with_capacity(n * width);
    for i in 0..n {
        data.extend_from_slice(&window[i * stride * channels..(i * stride + patch) * channels]);
    }
    Ok(PatchSet {
        patches: Tensor::from_rows(n, width, data)?,
        mask: vec![false; n],
        patch,
        stride,
        channels,
    })
}

/// Inverse of [`patchify`]; overlapping positions are averaged.
pub fn unpatch(ps: &PatchSet) -> Vec<f64> {
    let (n, d, p) = (ps.len(), ps.channels, ps.patch);
    let w = ps.window_len();
    let mut out = vec![0.0; w * d];
    let mut counts = vec![0usize; w];
    for i in 0..n {
        let row = ps.patch_values(i);
        for k in 0..p {
            let t = i * ps.stride + k;
            counts[t] += 1;
            for c in 0..d {
                out[t * d + c] += row[k * d + c];
            }
        }
    }
    for (t, &cnt) in counts.iter().enumerate() {
        for c in 0..d {
            out[t * d + c] /= cnt as f64;
        }
    }
    out
}

/// Flags `⌊m·N⌋` patches chosen uniformly without replacement.
pub fn mask_patches<R: Rng + ?Sized>(ps: &PatchSet, ratio: f64, rng: &mut R) -> PatchSet {
    let n = ps.len();
    let k = ((ratio.clamp(0.0, 1.0) * n as f64) + 1e-9).floor() as usize;
    let mut out = ps.clone();
    out.mask = vec![false; n];
    for i in sample(rng, n, k.min(n)).into_iter() {
        out.mask[i] = true;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeEncoderDims {
    pub patches: usize,
    pub patch_width: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_hidden: usize,
}

/// Patch embedding, mask token, learned positions and a transformer stack.
/// One instance serves both the plain and the masked branch.
#[derive(Clone, Debug)]
pub struct TimeEncoder {
    pub embed: Linear,
    pub mask_token: ParamId,
    pub positions: ParamId,
    pub layers: Vec<TransformerLayer>,
    pub dims: TimeEncoderDims,
}

impl TimeEncoder {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, dims: TimeEncoderDims, rng: &mut R) -> Result<Self> {
        let embed = Linear::new(store, "time.embed", dims.patch_width, dims.d_model, rng);
        let mask_token = store.add("time.mask_token", Tensor::uniform(&[1, dims.d_model], 0.1, rng));
        let positions = store.add("time.pos", Tensor::uniform(&[dims.patches, dims.d_model], 0.1, rng));
        let layers = (0..dims.layers)
            .map(|i| {
                TransformerLayer::new(
                    store,
                    &format!("time.layer{i}"),
                    dims.d_model,
                    dims.heads,
                    dims.ff_hidden,
                    rng,
                )
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(TimeEncoder {
            embed,
            mask_token,
            positions,
            layers,
            dims,
        })
    }

    /// `N × d_model` representation; flagged patches are replaced by the mask token.
    pub fn forward(&self, g: &mut Graph, ps: &PatchSet) -> Result<Var> {
        if ps.patches.cols() != self.dims.patch_width || ps.len() != self.dims.patches {
            return Err(TensorError::Shape {
                op: "time_encoder",
                lhs: ps.patches.shape().to_vec(),
                rhs: vec![self.dims.patches, self.dims.patch_width],
            }
            .into());
        }
        let ctx = |stage: String| move |e: TensorError| layer_error(e, &stage);
        let x = g.constant(ps.patches.clone());
        let mut h = self.embed.forward(g, x).map_err(ctx("time.embed".into()))?;
        if ps.mask.iter().any(|&m| m) {
            let keep: Vec<f64> = ps.mask.iter().map(|&m| if m { 0.0 } else { 1.0 }).collect();
            let flags: Vec<f64> = keep.iter().map(|k| 1.0 - k).collect();
            let keep = g.constant(Tensor::col_vector(keep));
            let flags = g.constant(Tensor::col_vector(flags));
            let tok = g.param(self.mask_token);
            let kept = g.mul_col(h, keep)?;
            let subst = g.matmul(flags, tok)?;
            h = g.add(kept, subst)?;
        }
        let pos = g.param(self.positions);
        h = g.add(h, pos)?;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, h).map_err(ctx(format!("time.layer{i}")))?;
        }
        Ok(h)
    }
}

fn layer_error(e: TensorError, stage: &str) -> TensorError {
    match e {
        TensorError::NonFinite(op) => TensorError::NonFinite(format!("{stage} ({op})")),
        other => other,
    }
}
