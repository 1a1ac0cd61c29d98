//! Retention probabilities, Bernoulli masking and the condenser losses.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::nn::Linear;
use crate::tensor::{Graph, ParamStore, Tensor, Var};

pub const PSI_MIN: f64 = 1e-6;
pub const PSI_MAX: f64 = 1.0 - 1e-6;

/// Two-layer MLP with a sigmoid head, one probability per row.
#[derive(Clone, Debug)]
pub struct Condenser {
    pub hidden: Linear,
    pub head: Linear,
}

impl Condenser {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, in_dim: usize, d_model: usize, rng: &mut R) -> Self {
        let mid = (d_model / 2).max(1);
        Condenser {
            hidden: Linear::new(store, "condenser.hidden", in_dim, mid, rng),
            head: Linear::new(store, "condenser.head", mid, 1, rng),
        }
    }

    /// `N×1` probabilities clamped to `[PSI_MIN, PSI_MAX]`.
    pub fn retention_probs(&self, g: &mut Graph, z: Var) -> Result<Var> {
        let h = self.hidden.forward(g, z)?;
        let h = g.gelu(h)?;
        let s = self.head.forward(g, h)?;
        let p = g.sigmoid(s)?;
        Ok(g.clamp(p, PSI_MIN, PSI_MAX)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskMode {
    /// `F_i = 1[u_i < ψ_i]`.
    Train,
    /// `F_i = 1[ψ_i ≥ 0.5]`.
    Infer,
}

pub fn sample_mask<R: Rng + ?Sized>(psi: &[f64], rng: &mut R, mode: MaskMode) -> Vec<f64> {
    psi.iter()
        .map(|&p| {
            let keep = match mode {
                MaskMode::Train => rng.gen::<f64>() < p,
                MaskMode::Infer => p >= 0.5,
            };
            if keep {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// How rows are gated when scoring.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferGate {
    #[default]
    Hard,
    /// `Z_text ⊙ ψ`.
    Soft,
}

/// Row gating `Z ⊙ F` with `F` broadcast across columns.
pub fn condense(g: &mut Graph, z: Var, gate: Var) -> Result<Var> {
    Ok(g.mul_col(z, gate)?)
}

/// Straight-through mask: forward emits `mask`, backward flows into `psi`.
pub fn st_mask(g: &mut Graph, psi: Var, mask: Vec<f64>) -> Result<Var> {
    let n = mask.len();
    Ok(g.straight_through(psi, Tensor::from_rows(n, 1, mask)?)?)
}

/// `Σ_i KL(Bernoulli(ψ_i) ‖ Bernoulli(μ))` in nats.
pub fn loss_cc(g: &mut Graph, psi: Var, mu: f64) -> Result<Var> {
    check_mu(mu)?;
    let lp = g.log(psi)?;
    let a = g.add_scalar(lp, -mu.ln())?;
    let t1 = g.mul(psi, a)?;
    let q = g.rsub_scalar(1.0, psi)?;
    let lq = g.log(q)?;
    let b = g.add_scalar(lq, -(1.0 - mu).ln())?;
    let t2 = g.mul(q, b)?;
    let s = g.add(t1, t2)?;
    Ok(g.sum(s)?)
}

/// `(1/N) Σ_i |ψ_{i+1} − ψ_i|`.
pub fn loss_sm(g: &mut Graph, psi: Var) -> Result<Var> {
    let n = g.value(psi).rows();
    if n < 2 {
        let z = g.scale(psi, 0.0)?;
        return Ok(g.sum(z)?);
    }
    let head = g.slice_rows(psi, 0, n - 1)?;
    let tail = g.slice_rows(psi, 1, n)?;
    let d = g.sub(tail, head)?;
    let a = g.abs(d)?;
    let s = g.sum(a)?;
    Ok(g.scale(s, 1.0 / n as f64)?)
}

pub fn loss_cl(g: &mut Graph, psi: Var, mu: f64) -> Result<Var> {
    let cc = loss_cc(g, psi, mu)?;
    let sm = loss_sm(g, psi)?;
    Ok(g.add(cc, sm)?)
}

fn check_mu(mu: f64) -> Result<()> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(Error::Config(format!("prior retention rate must be in (0,1), got {mu}")));
    }
    Ok(())
}

/// Plain-value helpers over a probability vector.
pub fn loss_cc_value(psi: &[f64], mu: f64) -> Result<f64> {
    eval(psi, |g, p| loss_cc(g, p, mu))
}

pub fn loss_sm_value(psi: &[f64]) -> Result<f64> {
    eval(psi, loss_sm)
}

pub fn loss_cl_value(psi: &[f64], mu: f64) -> Result<f64> {
    eval(psi, |g, p| loss_cl(g, p, mu))
}

fn eval(psi: &[f64], f: impl Fn(&mut Graph, Var) -> Result<Var>) -> Result<f64> {
    let mut g = Graph::new();
    let p = g.constant(Tensor::from_rows(psi.len(), 1, psi.to_vec())?);
    let l = f(&mut g, p)?;
    Ok(g.value(l).item())
}

/// Conditional law of the `N`-bit mask given one value of the text variable.
#[derive(Clone, Debug, PartialEq)]
pub enum MaskLaw {
    /// Independent bits with the given keep probabilities.
    Product(Vec<f64>),
    /// Explicit probabilities over the `2^N` masks, bit `i` of the index is `F_i`.
    Joint(Vec<f64>),
}

/// A value of `Z_con`: per row, the id of the kept row content or `0` when
/// the row is dropped (or was zero to begin with).
pub type Condensed = Vec<u32>;

/// Finite channel from text values to condensed values.
///
/// Text symbol `x` is an `N`-row matrix described by row content ids
/// `rows[x]`; equal ids are equal rows and id `0` is the zero row. Given `x`,
/// a mask is drawn from `laws[x]` and `Z_con = Z_text ⊙ F`.
#[derive(Clone, Debug, PartialEq)]
pub struct Channel {
    pub p_text: Vec<f64>,
    pub rows: Vec<Vec<u32>>,
    pub laws: Vec<MaskLaw>,
    pub n: usize,
}

/// Reference distribution `G` over condensed values.
#[derive(Clone, Debug, PartialEq)]
pub enum Prior {
    /// Rows kept independently with probability `μ`, pushed through the
    /// text distribution of the channel.
    Bernoulli(f64),
    Explicit(BTreeMap<Condensed, f64>),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lemma1Report {
    pub mutual_information: f64,
    pub bound: f64,
    pub pass: bool,
}

const NORM_TOL: f64 = 1e-9;

fn law_probs(law: &MaskLaw, n: usize) -> Result<Vec<f64>> {
    let size = 1usize << n;
    let probs = match law {
        MaskLaw::Product(psi) => {
            if psi.len() != n || psi.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Validation("product law needs N probabilities in [0,1]".into()));
            }
            (0..size)
                .map(|m| {
                    (0..n)
                        .map(|i| if m >> i & 1 == 1 { psi[i] } else { 1.0 - psi[i] })
                        .product()
                })
                .collect()
        }
        MaskLaw::Joint(p) => p.clone(),
    };
    check_dist(probs.iter().copied(), probs.len() == size, "mask law")?;
    Ok(probs)
}

fn check_dist(p: impl Iterator<Item = f64> + Clone, len_ok: bool, what: &str) -> Result<()> {
    if !len_ok || p.clone().any(|v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::Validation(format!("{what}: expected non-negative probabilities of the right count")));
    }
    let s: f64 = p.sum();
    if (s - 1.0).abs() > NORM_TOL {
        return Err(Error::Validation(format!("{what}: probabilities sum to {s}")));
    }
    Ok(())
}

fn kl(p: &BTreeMap<Condensed, f64>, q: &BTreeMap<Condensed, f64>) -> f64 {
    p.iter()
        .filter(|(_, &a)| a > 0.0)
        .map(|(z, &a)| match q.get(z) {
            Some(&b) if b > 0.0 => a * (a / b).ln(),
            _ => f64::INFINITY,
        })
        .sum()
}

fn push_forward(rows: &[u32], masks: &[f64], out: &mut BTreeMap<Condensed, f64>, weight: f64) {
    for (m, &pm) in masks.iter().enumerate() {
        if pm == 0.0 {
            continue;
        }
        let z: Condensed = rows
            .iter()
            .enumerate()
            .map(|(i, &r)| if m >> i & 1 == 1 { r } else { 0 })
            .collect();
        *out.entry(z).or_insert(0.0) += weight * pm;
    }
}

impl Channel {
    fn validate(&self) -> Result<()> {
        let n = self.n;
        if n == 0 || n > 4 {
            return Err(Error::Validation(format!("mask length {n} outside 1..=4")));
        }
        let k = self.p_text.len();
        if k == 0 || k > 8 || self.laws.len() != k || self.rows.len() != k {
            return Err(Error::Validation("text alphabet must have 1..=8 symbols, each with rows and a law".into()));
        }
        if self.rows.iter().any(|r| r.len() != n) {
            return Err(Error::Validation("every text symbol needs N row ids".into()));
        }
        let distinct: std::collections::BTreeSet<&Vec<u32>> = self.rows.iter().collect();
        if distinct.len() != k {
            return Err(Error::Validation("text symbols must be distinct matrices".into()));
        }
        check_dist(self.p_text.iter().copied(), true, "text distribution")
    }

    /// `P(Z_con | Z_text = x)`.
    pub fn conditional(&self, x: usize) -> Result<BTreeMap<Condensed, f64>> {
        let mut out = BTreeMap::new();
        push_forward(&self.rows[x], &law_probs(&self.laws[x], self.n)?, &mut out, 1.0);
        Ok(out)
    }

    /// Marginal law of `Z_con`, the prior that makes the bound tight.
    pub fn marginal(&self) -> Result<BTreeMap<Condensed, f64>> {
        self.validate()?;
        let mut out = BTreeMap::new();
        for (x, &px) in self.p_text.iter().enumerate() {
            push_forward(&self.rows[x], &law_probs(&self.laws[x], self.n)?, &mut out, px);
        }
        Ok(out)
    }

    fn prior(&self, prior: &Prior) -> Result<BTreeMap<Condensed, f64>> {
        match prior {
            Prior::Bernoulli(mu) => {
                check_mu(*mu)?;
                let masks = law_probs(&MaskLaw::Product(vec![*mu; self.n]), self.n)?;
                let mut out = BTreeMap::new();
                for (x, &px) in self.p_text.iter().enumerate() {
                    push_forward(&self.rows[x], &masks, &mut out, px);
                }
                Ok(out)
            }
            Prior::Explicit(g) => {
                check_dist(g.values().copied(), true, "prior")?;
                Ok(g.clone())
            }
        }
    }
}

/// Exact `I(Z_text; Z_con)` against `E_x[KL(P(Z_con|x) ‖ G)]`.
pub fn lemma1_validate(ch: &Channel, prior: &Prior) -> Result<Lemma1Report> {
    ch.validate()?;
    let g = ch.prior(prior)?;
    let marginal = ch.marginal()?;
    let mut mi = 0.0;
    let mut bound = 0.0;
    for (x, &px) in ch.p_text.iter().enumerate() {
        if px > 0.0 {
            let cond = ch.conditional(x)?;
            mi += px * kl(&cond, &marginal);
            bound += px * kl(&cond, &g);
        }
    }
    Ok(Lemma1Report {
        mutual_information: mi,
        bound,
        pass: mi <= bound + 1e-12,
    })
}
