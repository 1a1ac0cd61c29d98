//! Neural building blocks expressed over the tape.

use rand::Rng;

use super::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::TensorError;

type Result<T> = std::result::Result<T, TensorError>;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Affine map `x·W + b` with `W: in×out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let weight = store.add(format!("{name}.weight"), Tensor::xavier_uniform(in_dim, out_dim, rng));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[1, out_dim]));
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        LayerNorm {
            gain: store.add(format!("{name}.gain"), Tensor::full(&[1, dim], 1.0)),
            bias: store.add(format!("{name}.bias"), Tensor::zeros(&[1, dim])),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let gain = g.param(self.gain);
        let bias = g.param(self.bias);
        g.layer_norm(x, gain, bias, LAYER_NORM_EPS)
    }
}

/// Multi-head scaled dot-product attention on already-projected inputs.
///
/// `q: n×d`, `k: m×d`, `v: m×d`; each head attends over its `d/heads` slice
/// with scale `1/sqrt(d/heads)` and the head outputs are concatenated.
pub fn scaled_dot_attention(g: &mut Graph, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
    let d = g.value(q).cols();
    if heads == 0 || d % heads != 0 {
        return Err(TensorError::Config(format!(
            "model width {d} not divisible by {heads} heads"
        )));
    }
    if g.value(k).cols() != d || g.value(v).cols() != d || g.value(k).rows() != g.value(v).rows() {
        return Err(TensorError::Shape {
            op: "attention",
            lhs: g.shape(q).to_vec(),
            rhs: g.shape(k).to_vec(),
        });
    }
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice_cols(q, h * dh, (h + 1) * dh)?,
                g.slice_cols(k, h * dh, (h + 1) * dh)?,
                g.slice_cols(v, h * dh, (h + 1) * dh)?,
            )
        };
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale)?;
        let weights = g.softmax_rows(scores)?;
        outs.push(g.matmul(weights, vh)?);
    }
    if outs.len() == 1 {
        Ok(outs[0])
    } else {
        g.concat_cols(&outs)
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(TensorError::Config(format!(
                "model width {dim} not divisible by {heads} heads"
            )));
        }
        Ok(MultiHeadAttention {
            query: Linear::new(store, &format!("{name}.q"), dim, dim, rng),
            key: Linear::new(store, &format!("{name}.k"), dim, dim, rng),
            value: Linear::new(store, &format!("{name}.v"), dim, dim, rng),
            output: Linear::new(store, &format!("{name}.o"), dim, dim, rng),
            heads,
        })
    }

    /// Queries from `q_src`, keys and values from `kv_src`.
    pub fn forward(&self, g: &mut Graph, q_src: Var, kv_src: Var) -> Result<Var> {
        let q = self.query.forward(g, q_src)?;
        let k = self.key.forward(g, kv_src)?;
        let v = self.value.forward(g, kv_src)?;
        let att = scaled_dot_attention(g, q, k, v, self.heads)?;
        self.output.forward(g, att)
    }
}

/// Two-layer position-wise MLP with GELU.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, dim: usize, hidden: usize, rng: &mut R) -> Self {
        FeedForward {
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, rng),
            down: Linear::new(store, &format!("{name}.down"), hidden, dim, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.up.forward(g, x)?;
        let h = g.gelu(h)?;
        self.down.forward(g, h)
    }
}

/// Pre-norm transformer encoder layer.
#[derive(Clone, Debug)]
pub struct TransformerLayer {
    pub norm1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ff: FeedForward,
}

impl TransformerLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(TransformerLayer {
            norm1: LayerNorm::new(store, &format!("{name}.ln1"), dim),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, heads, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.ln2"), dim),
            ff: FeedForward::new(store, &format!("{name}.ff"), dim, hidden, rng),
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.norm1.forward(g, x)?;
        let a = self.attn.forward(g, h, h)?;
        let x = g.add(x, a)?;
        let h = self.norm2.forward(g, x)?;
        let f = self.ff.forward(g, h)?;
        g.add(x, f)
    }
}
