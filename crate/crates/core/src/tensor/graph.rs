//! Dynamic reverse-mode tape.
//!
//! A [`Graph`] records every operation performed during one forward pass.
//! Nodes are appended in execution order, so a reverse sweep over the node
//! list is a valid topological order for backpropagation.

use super::dense::{matmul_at_into, matmul_bt_into, matmul_into};
use super::{ParamId, ParamStore, Tensor};
use crate::error::TensorError;

type Result<T> = std::result::Result<T, TensorError>;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_COEF: f64 = 0.044_715;

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Transpose(Var),
    Reshape(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    Sigmoid(Var),
    Log(Var),
    Exp(Var),
    Abs(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    Diag(Var),
    EmbeddingBagMean {
        table: Var,
        bags: Vec<Vec<u32>>,
    },
    NormalizeRows {
        x: Var,
        norms: Vec<f64>,
    },
    StraightThrough(Var),
    FoldPatches {
        x: Var,
        patch: usize,
        stride: usize,
        channels: usize,
        counts: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients from one backward sweep.
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: Vec<Option<Var>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, or `None` when no path exists.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].as_deref()
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params
            .get(id.0)
            .copied()
            .flatten()
            .and_then(|v| self.wrt(v))
    }

    /// Dense per-parameter gradients, zeros for parameters the loss never touched.
    pub fn into_param_grads(mut self, store: &ParamStore) -> Vec<Vec<f64>> {
        store
            .ids()
            .map(|id| {
                let var = self.params.get(id.0).copied().flatten();
                match var.and_then(|v| self.nodes[v.0].take()) {
                    Some(g) => g,
                    None => vec![0.0; store.get(id).len()],
                }
            })
            .collect()
    }
}

pub struct Graph<'p> {
    store: Option<&'p ParamStore>,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    pub fn new() -> Self {
        Graph {
            store: None,
            nodes: Vec::new(),
            param_vars: Vec::new(),
        }
    }

    pub fn with_params(store: &'p ParamStore) -> Self {
        Graph {
            store: Some(store),
            nodes: Vec::with_capacity(512),
            param_vars: vec![None; store.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match self.nodes[v.0].op {
            Op::Param(id) => self.store.expect("param node without store").get(id),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.value(v).data()
    }

    fn rc(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    fn push(&mut self, name: &str, value: Tensor, op: Op, needs_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite(name.to_string()));
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf input whose gradient is tracked (used by gradient checks).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node,
    /// so gradients from every use site accumulate into one buffer.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: Tensor::zeros(&[0]),
            op: Op::Param(id),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> TensorError {
        TensorError::Shape {
            op,
            lhs: self.shape(a).to_vec(),
            rhs: self.shape(b).to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.ng(a) || self.ng(b);
        self.push("matmul", out, Op::MatMul(a, b), ng)
    }

    fn zip_same(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err(name, a, b));
        }
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(self.shape(a).to_vec(), data)?;
        let ng = self.ng(a) || self.ng(b);
        self.push(name, out, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `x[r×c] + b[1×c]` broadcast over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (r, c) = self.rc(x);
        if self.value(b).len() != c {
            return Err(self.shape_err("add_row", x, b));
        }
        let bd = self.data(b);
        let mut out = self.data(x).to_vec();
        for i in 0..r {
            for (o, &bv) in out[i * c..(i + 1) * c].iter_mut().zip(bd) {
                *o += bv;
            }
        }
        let out = Tensor::new(self.shape(x).to_vec(), out)?;
        let ng = self.ng(x) || self.ng(b);
        self.push("add_row", out, Op::AddRow(x, b), ng)
    }

    /// `x[r×c] * s[r×1]` broadcast over columns (row gating).
    pub fn mul_col(&mut self, x: Var, s: Var) -> Result<Var> {
        let (r, c) = self.rc(x);
        if self.value(s).len() != r {
            return Err(self.shape_err("mul_col", x, s));
        }
        let sd = self.data(s);
        let mut out = self.data(x).to_vec();
        for i in 0..r {
            for o in &mut out[i * c..(i + 1) * c] {
                *o *= sd[i];
            }
        }
        let out = Tensor::new(self.shape(x).to_vec(), out)?;
        let ng = self.ng(x) || self.ng(s);
        self.push("mul_col", out, Op::MulCol(x, s), ng)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v * k);
        let ng = self.ng(x);
        self.push("scale", out, Op::Scale(x, k), ng)
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v + k);
        let ng = self.ng(x);
        self.push("add_scalar", out, Op::AddScalar(x), ng)
    }

    /// `k - x`
    pub fn rsub_scalar(&mut self, k: f64, x: Var) -> Result<Var> {
        let neg = self.scale(x, -1.0)?;
        self.add_scalar(neg, k)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transpose();
        let ng = self.ng(x);
        self.push("transpose", out, Op::Transpose(x), ng)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let ng = self.ng(x);
        self.push("reshape", out, Op::Reshape(x), ng)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.rc(x);
        let mut out = self.data(x).to_vec();
        for i in 0..r {
            let row = &mut out[i * c..(i + 1) * c];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let out = Tensor::new(self.shape(x).to_vec(), out)?;
        let ng = self.ng(x);
        self.push("softmax", out, Op::SoftmaxRows(x), ng)
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.rc(x);
        let mut out = self.data(x).to_vec();
        for i in 0..r {
            let row = &mut out[i * c..(i + 1) * c];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let out = Tensor::new(self.shape(x).to_vec(), out)?;
        let ng = self.ng(x);
        self.push("log_softmax", out, Op::LogSoftmaxRows(x), ng)
    }

    /// Per-row normalization over the last axis followed by `gain`/`bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.rc(x);
        if self.value(gain).len() != c || self.value(bias).len() != c {
            return Err(self.shape_err("layer_norm", x, gain));
        }
        let xd = self.data(x);
        let gd = self.data(gain);
        let bd = self.data(bias);
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xd[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = h * gd[j] + bd[j];
            }
        }
        let out = Tensor::new(self.shape(x).to_vec(), out)?;
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        self.push(
            "layer_norm",
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| {
            let u = SQRT_2_OVER_PI * (v + GELU_COEF * v * v * v);
            0.5 * v * (1.0 + u.tanh())
        });
        let ng = self.ng(x);
        self.push("gelu", out, Op::Gelu(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        let ng = self.ng(x);
        self.push("sigmoid", out, Op::Sigmoid(x), ng)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(f64::ln);
        let ng = self.ng(x);
        self.push("log", out, Op::Log(x), ng)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(f64::exp);
        let ng = self.ng(x);
        self.push("exp", out, Op::Exp(x), ng)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(f64::abs);
        let ng = self.ng(x);
        self.push("abs", out, Op::Abs(x), ng)
    }

    /// Clamp into `[lo, hi]`; gradient passes only where the input was inside.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v.clamp(lo, hi));
        let ng = self.ng(x);
        self.push("clamp", out, Op::Clamp(x, lo, hi), ng)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().sum();
        let ng = self.ng(x);
        self.push("sum", Tensor::scalar(s), Op::Sum(x), ng)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let d = self.data(x);
        let s = d.iter().sum::<f64>() / d.len() as f64;
        let ng = self.ng(x);
        self.push("mean", Tensor::scalar(s), Op::Mean(x), ng)
    }

    /// `r×c → 1×c` column means.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.rc(x);
        let d = self.data(x);
        let mut out = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                out[j] += d[i * c + j];
            }
        }
        for v in &mut out {
            *v /= r as f64;
        }
        let ng = self.ng(x);
        self.push("mean_rows", Tensor::row_vector(out), Op::MeanRows(x), ng)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.rc(x);
        if start > end || end > c {
            return Err(TensorError::Shape {
                op: "slice_cols",
                lhs: self.shape(x).to_vec(),
                rhs: vec![start, end],
            });
        }
        let d = self.data(x);
        let w = end - start;
        let mut out = Vec::with_capacity(r * w);
        for i in 0..r {
            out.extend_from_slice(&d[i * c + start..i * c + end]);
        }
        let ng = self.ng(x);
        self.push("slice_cols", Tensor::from_rows(r, w, out)?, Op::SliceCols(x, start), ng)
    }

    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let r = self.rc(xs[0]).0;
        let mut total = 0;
        for &x in xs {
            if self.rc(x).0 != r {
                return Err(self.shape_err("concat_cols", xs[0], x));
            }
            total += self.rc(x).1;
        }
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &x in xs {
                out.extend_from_slice(self.value(x).row(i));
            }
        }
        let ng = xs.iter().any(|&x| self.ng(x));
        self.push("concat_cols", Tensor::from_rows(r, total, out)?, Op::ConcatCols(xs.to_vec()), ng)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.rc(x);
        if start > end || end > r {
            return Err(TensorError::Shape {
                op: "slice_rows",
                lhs: self.shape(x).to_vec(),
                rhs: vec![start, end],
            });
        }
        let out = self.data(x)[start * c..end * c].to_vec();
        let ng = self.ng(x);
        self.push("slice_rows", Tensor::from_rows(end - start, c, out)?, Op::SliceRows(x, start), ng)
    }

    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let c = self.rc(xs[0]).1;
        let mut out = Vec::new();
        let mut rows = 0;
        for &x in xs {
            let (r, cc) = self.rc(x);
            if cc != c {
                return Err(self.shape_err("concat_rows", xs[0], x));
            }
            rows += r;
            out.extend_from_slice(self.data(x));
        }
        let ng = xs.iter().any(|&x| self.ng(x));
        self.push("concat_rows", Tensor::from_rows(rows, c, out)?, Op::ConcatRows(xs.to_vec()), ng)
    }

    /// Diagonal of a square matrix as an `n×1` column.
    pub fn diag(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.rc(x);
        if r != c {
            return Err(self.shape_err("diag", x, x));
        }
        let d = self.data(x);
        let out = (0..r).map(|i| d[i * c + i]).collect();
        let ng = self.ng(x);
        self.push("diag", Tensor::col_vector(out), Op::Diag(x), ng)
    }

    /// Mean of embedding-table rows per bag: `bags.len() × d`.
    pub fn embedding_bag_mean(&mut self, table: Var, bags: &[Vec<u32>]) -> Result<Var> {
        let (rows, d) = self.rc(table);
        let td = self.data(table);
        let mut out = vec![0.0; bags.len() * d];
        for (b, ids) in bags.iter().enumerate() {
            if ids.is_empty() {
                return Err(TensorError::Config("empty token bag".into()));
            }
            let o = &mut out[b * d..(b + 1) * d];
            for &id in ids {
                let id = id as usize;
                if id >= rows {
                    return Err(TensorError::Shape {
                        op: "embedding_bag_mean",
                        lhs: vec![rows, d],
                        rhs: vec![id],
                    });
                }
                for (ov, &tv) in o.iter_mut().zip(&td[id * d..(id + 1) * d]) {
                    *ov += tv;
                }
            }
            let inv = 1.0 / ids.len() as f64;
            for ov in o.iter_mut() {
                *ov *= inv;
            }
        }
        let ng = self.ng(table);
        self.push(
            "embedding_bag_mean",
            Tensor::from_rows(bags.len(), d, out)?,
            Op::EmbeddingBagMean {
                table,
                bags: bags.to_vec(),
            },
            ng,
        )
    }

    /// L2-normalize each row, dividing by `max(‖row‖, eps)`.
    pub fn normalize_rows(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.rc(x);
        let mut out = self.data(x).to_vec();
        let mut norms = vec![0.0; r];
        for i in 0..r {
            let row = &mut out[i * c..(i + 1) * c];
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(eps);
            norms[i] = n;
            for v in row.iter_mut() {
                *v /= n;
            }
        }
        let ng = self.ng(x);
        self.push(
            "normalize_rows",
            Tensor::new(self.shape(x).to_vec(), out)?,
            Op::NormalizeRows { x, norms },
            ng,
        )
    }

    /// Emits `sample` in the forward pass and passes the gradient through to
    /// `probs` unchanged in the backward pass (straight-through estimator).
    pub fn straight_through(&mut self, probs: Var, sample: Tensor) -> Result<Var> {
        if sample.shape() != self.shape(probs) {
            let s = self.shape(probs).to_vec();
            return Err(TensorError::Shape {
                op: "straight_through",
                lhs: s,
                rhs: sample.shape().to_vec(),
            });
        }
        let ng = self.ng(probs);
        self.push("straight_through", sample, Op::StraightThrough(probs), ng)
    }

    /// Overlap-add of flattened patches `N×(p·D)` back to a `w×D` window,
    /// averaging positions covered by several patches.
    pub fn fold_patches(&mut self, x: Var, patch: usize, stride: usize, channels: usize) -> Result<Var> {
        let (n, width) = self.rc(x);
        if width != patch * channels || n == 0 || stride == 0 {
            return Err(TensorError::Shape {
                op: "fold_patches",
                lhs: self.shape(x).to_vec(),
                rhs: vec![patch, stride, channels],
            });
        }
        let w = (n - 1) * stride + patch;
        let d = self.data(x);
        let mut out = vec![0.0; w * channels];
        let mut counts = vec![0.0; w];
        for i in 0..n {
            for k in 0..patch {
                let t = i * stride + k;
                counts[t] += 1.0;
                for ch in 0..channels {
                    out[t * channels + ch] += d[i * width + k * channels + ch];
                }
            }
        }
        for t in 0..w {
            for ch in 0..channels {
                out[t * channels + ch] /= counts[t];
            }
        }
        let ng = self.ng(x);
        self.push(
            "fold_patches",
            Tensor::from_rows(w, channels, out)?,
            Op::FoldPatches {
                x,
                patch,
                stride,
                channels,
                counts,
            },
            ng,
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::Shape {
                op: "backward",
                lhs: self.shape(loss).to_vec(),
                rhs: vec![1],
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            nodes: grads,
            params: self.param_vars.clone(),
        })
    }

    fn backprop_node(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let y = self.value(Var(idx));
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (r, k) = self.rc(*a);
                let c = self.rc(*b).1;
                if self.ng(*a) {
                    let ga = self.slot(grads, *a);
                    matmul_bt_into(g, self.data(*b), ga, r, c, k);
                }
                if self.ng(*b) {
                    let gb = self.slot(grads, *b);
                    matmul_at_into(self.data(*a), g, gb, r, k, c);
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, |i| g[i]);
                self.acc(grads, *b, |i| g[i]);
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |i| g[i]);
                self.acc(grads, *b, |i| -g[i]);
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                self.acc(grads, *a, |i| g[i] * bd[i]);
                self.acc(grads, *b, |i| g[i] * ad[i]);
            }
            Op::AddRow(x, b) => {
                self.acc(grads, *x, |i| g[i]);
                if self.ng(*b) {
                    let c = self.rc(*x).1;
                    let gb = self.slot(grads, *b);
                    for (i, gv) in g.iter().enumerate() {
                        gb[i % c] += gv;
                    }
                }
            }
            Op::MulCol(x, s) => {
                let c = self.rc(*x).1;
                let (xd, sd) = (self.data(*x), self.data(*s));
                self.acc(grads, *x, |i| g[i] * sd[i / c]);
                if self.ng(*s) {
                    let gs = self.slot(grads, *s);
                    for (i, gv) in g.iter().enumerate() {
                        gs[i / c] += gv * xd[i];
                    }
                }
            }
            Op::Scale(x, k) => self.acc(grads, *x, |i| g[i] * k),
            Op::AddScalar(x) | Op::Reshape(x) | Op::StraightThrough(x) => {
                self.acc(grads, *x, |i| g[i])
            }
            Op::Transpose(x) => {
                let (r, c) = self.rc(*x);
                // y is c×r; y[j,i] = x[i,j]
                self.acc(grads, *x, |i| g[(i % c) * r + i / c]);
            }
            Op::SoftmaxRows(x) => {
                let c = y.cols();
                let yd = y.data();
                let dots: Vec<f64> = (0..y.rows())
                    .map(|r| (0..c).map(|j| g[r * c + j] * yd[r * c + j]).sum())
                    .collect();
                self.acc(grads, *x, |i| yd[i] * (g[i] - dots[i / c]));
            }
            Op::LogSoftmaxRows(x) => {
                let c = y.cols();
                let yd = y.data();
                let sums: Vec<f64> = (0..y.rows())
                    .map(|r| g[r * c..(r + 1) * c].iter().sum())
                    .collect();
                self.acc(grads, *x, |i| g[i] - yd[i].exp() * sums[i / c]);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (r, c) = self.rc(*x);
                let gd = self.data(*gain);
                if self.ng(*gain) {
                    let gg = self.slot(grads, *gain);
                    for (i, gv) in g.iter().enumerate() {
                        gg[i % c] += gv * xhat[i];
                    }
                }
                if self.ng(*bias) {
                    let gb = self.slot(grads, *bias);
                    for (i, gv) in g.iter().enumerate() {
                        gb[i % c] += gv;
                    }
                }
                if self.ng(*x) {
                    let gx = self.slot(grads, *x);
                    let cf = c as f64;
                    for row in 0..r {
                        let o = row * c;
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for j in 0..c {
                            let gh = g[o + j] * gd[j];
                            s1 += gh;
                            s2 += gh * xhat[o + j];
                        }
                        for j in 0..c {
                            let gh = g[o + j] * gd[j];
                            gx[o + j] += inv_std[row] / cf * (cf * gh - s1 - xhat[o + j] * s2);
                        }
                    }
                }
            }
            Op::Gelu(x) => {
                let xd = self.data(*x);
                self.acc(grads, *x, |i| {
                    let v = xd[i];
                    let u = SQRT_2_OVER_PI * (v + GELU_COEF * v * v * v);
                    let t = u.tanh();
                    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEF * v * v);
                    g[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du)
                });
            }
            Op::Sigmoid(x) => {
                let yd = y.data();
                self.acc(grads, *x, |i| g[i] * yd[i] * (1.0 - yd[i]));
            }
            Op::Log(x) => {
                let xd = self.data(*x);
                self.acc(grads, *x, |i| g[i] / xd[i]);
            }
            Op::Exp(x) => {
                let yd = y.data();
                self.acc(grads, *x, |i| g[i] * yd[i]);
            }
            Op::Abs(x) => {
                let xd = self.data(*x);
                self.acc(grads, *x, |i| {
                    if xd[i] > 0.0 {
                        g[i]
                    } else if xd[i] < 0.0 {
                        -g[i]
                    } else {
                        0.0
                    }
                });
            }
            Op::Clamp(x, lo, hi) => {
                let xd = self.data(*x);
                self.acc(grads, *x, |i| if xd[i] >= *lo && xd[i] <= *hi { g[i] } else { 0.0 });
            }
            Op::Sum(x) => self.acc(grads, *x, |_| g[0]),
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                self.acc(grads, *x, |_| g[0] / n);
            }
            Op::MeanRows(x) => {
                let (r, c) = self.rc(*x);
                self.acc(grads, *x, |i| g[i % c] / r as f64);
            }
            Op::SliceCols(x, start) => {
                if self.ng(*x) {
                    let c = self.rc(*x).1;
                    let w = y.cols();
                    let gx = self.slot(grads, *x);
                    for (i, gv) in g.iter().enumerate() {
                        gx[(i / w) * c + start + i % w] += gv;
                    }
                }
            }
            Op::ConcatCols(xs) => {
                let total = y.cols();
                let mut off = 0;
                for &x in xs {
                    let w = self.rc(x).1;
                    if self.ng(x) {
                        let gx = self.slot(grads, x);
                        let r = gx.len() / w.max(1);
                        for row in 0..r {
                            for j in 0..w {
                                gx[row * w + j] += g[row * total + off + j];
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::SliceRows(x, start) => {
                if self.ng(*x) {
                    let c = self.rc(*x).1;
                    let gx = self.slot(grads, *x);
                    for (i, gv) in g.iter().enumerate() {
                        gx[start * c + i] += gv;
                    }
                }
            }
            Op::ConcatRows(xs) => {
                let mut off = 0;
                for &x in xs {
                    let n = self.value(x).len();
                    if self.ng(x) {
                        let gx = self.slot(grads, x);
                        for (j, gv) in gx.iter_mut().enumerate() {
                            *gv += g[off + j];
                        }
                    }
                    off += n;
                }
            }
            Op::Diag(x) => {
                if self.ng(*x) {
                    let c = self.rc(*x).1;
                    let gx = self.slot(grads, *x);
                    for (i, gv) in g.iter().enumerate() {
                        gx[i * c + i] += gv;
                    }
                }
            }
            Op::EmbeddingBagMean { table, bags } => {
                if self.ng(*table) {
                    let d = self.rc(*table).1;
                    let gt = self.slot(grads, *table);
                    for (b, ids) in bags.iter().enumerate() {
                        let inv = 1.0 / ids.len() as f64;
                        for &id in ids {
                            let id = id as usize;
                            for j in 0..d {
                                gt[id * d + j] += g[b * d + j] * inv;
                            }
                        }
                    }
                }
            }
            Op::NormalizeRows { x, norms } => {
                let c = y.cols();
                let yd = y.data();
                let dots: Vec<f64> = (0..y.rows())
                    .map(|r| (0..c).map(|j| g[r * c + j] * yd[r * c + j]).sum())
                    .collect();
                let raw_norms: Vec<f64> = (0..y.rows())
                    .map(|r| {
                        self.value(*x).row(r).iter().map(|v| v * v).sum::<f64>().sqrt()
                    })
                    .collect();
                self.acc(grads, *x, |i| {
                    let r = i / c;
                    if raw_norms[r] >= norms[r] {
                        (g[i] - yd[i] * dots[r]) / norms[r]
                    } else {
                        g[i] / norms[r]
                    }
                });
            }
            Op::FoldPatches {
                x,
                patch,
                stride,
                channels,
                counts,
            } => {
                if self.ng(*x) {
                    let width = patch * channels;
                    let gx = self.slot(grads, *x);
                    let n = gx.len() / width;
                    for i in 0..n {
                        for k in 0..*patch {
                            let t = i * stride + k;
                            for ch in 0..*channels {
                                gx[i * width + k * channels + ch] += g[t * channels + ch] / counts[t];
                            }
                        }
                    }
                }
            }
        }
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> &'g mut [f64] {
        let n = self.value(v).len();
        grads[v.0].get_or_insert_with(|| vec![0.0; n])
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl Fn(usize) -> f64) {
        if !self.ng(v) {
            return;
        }
        let gv = self.slot(grads, v);
        for (i, x) in gv.iter_mut().enumerate() {
            *x += f(i);
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Plain matrix product used outside the tape.
pub fn matmul_plain(a: &[f64], b: &[f64], r: usize, k: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    matmul_into(a, b, &mut out, r, k, c);
    out
}
