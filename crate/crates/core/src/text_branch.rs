//! Endogenous text rendering, tokenization, text encoding and cross-view fusion.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::TextDoc;
use crate::error::{Error, Result};
use crate::tensor::nn::{FeedForward, LayerNorm, Linear, MultiHeadAttention};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::time_branch::PatchSet;

const TREND_DEAD_ZONE: f64 = 0.01;

/// Descriptor toggles for the rendered patch description.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndoTextOptions {
    pub drop_minmaxmedian: bool,
    pub drop_trend: bool,
    pub drop_lag: bool,
    /// Alternate wording of the same statistics.
    pub template_variant: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub median: f64,
    pub slope: f64,
    pub top_lag: usize,
}

impl PatchStats {
    pub fn trend(&self) -> &'static str {
        if self.slope.abs() < TREND_DEAD_ZONE {
            "flat"
        } else if self.slope > 0.0 {
            "rising"
        } else {
            "falling"
        }
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn slope(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    if v.len() < 2 {
        return 0.0;
    }
    let tm = (n - 1.0) / 2.0;
    let vm = v.iter().sum::<f64>() / n;
    let (mut num, mut den) = (0.0, 0.0);
    for (t, x) in v.iter().enumerate() {
        let dt = t as f64 - tm;
        num += dt * (x - vm);
        den += dt * dt;
    }
    num / den
}

/// Autocorrelation at lags `1..p`; `None` for a constant series.
fn acf(v: &[f64]) -> Option<Vec<f64>> {
    let n = v.len();
    let m = v.iter().sum::<f64>() / n as f64;
    let var: f64 = v.iter().map(|x| (x - m).powi(2)).sum();
    if var <= 1e-24 {
        return None;
    }
    Some(
        (1..n)
            .map(|k| (0..n - k).map(|t| (v[t] - m) * (v[t + k] - m)).sum::<f64>() / var)
            .collect(),
    )
}

/// Channel-averaged statistics of one time-major patch of `p·D` values.
pub fn patch_stats(values: &[f64], channels: usize) -> PatchStats {
    let p = values.len() / channels;
    let (mut mean, mut min, mut max, mut med, mut sl) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut acf_sum = vec![0.0; p.saturating_sub(1)];
    let mut acf_n = 0usize;
    for c in 0..channels {
        let mut ch: Vec<f64> = (0..p).map(|t| values[t * channels + c]).collect();
        mean += ch.iter().sum::<f64>() / p as f64;
        min += ch.iter().cloned().fold(f64::INFINITY, f64::min);
        max += ch.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        sl += slope(&ch);
        if let Some(a) = acf(&ch) {
            acf_sum.iter_mut().zip(a).for_each(|(s, v)| *s += v);
            acf_n += 1;
        }
        med += median(&mut ch);
    }
    let k = channels as f64;
    let mut top_lag = 0;
    if p >= 3 && acf_n > 0 {
        let mut best = f64::NEG_INFINITY;
        for (i, &a) in acf_sum.iter().enumerate() {
            if a > best + 1e-12 {
                best = a;
                top_lag = i + 1;
            }
        }
    }
    PatchStats {
        mean: mean / k,
        min: min / k,
        max: max / k,
        median: med / k,
        slope: sl / k,
        top_lag,
    }
}

fn fmt3(v: f64) -> String {
    let s = format!("{v:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

pub fn render_patch(stats: &PatchStats, opts: &EndoTextOptions) -> String {
    let mut parts = Vec::with_capacity(6);
    if opts.template_variant {
        parts.push(format!("segment summary: average {}", fmt3(stats.mean)));
        if !opts.drop_minmaxmedian {
            parts.push(format!("lowest {}", fmt3(stats.min)));
            parts.push(format!("highest {}", fmt3(stats.max)));
            parts.push(format!("middle {}", fmt3(stats.median)));
        }
        if !opts.drop_trend {
            parts.push(format!("direction {}", stats.trend()));
        }
        if !opts.drop_lag {
            parts.push(format!("period {}", stats.top_lag));
        }
    } else {
        parts.push(format!("patch stats: mean {}", fmt3(stats.mean)));
        if !opts.drop_minmaxmedian {
            parts.push(format!("min {}", fmt3(stats.min)));
            parts.push(format!("max {}", fmt3(stats.max)));
            parts.push(format!("median {}", fmt3(stats.median)));
        }
        if !opts.drop_trend {
            parts.push(format!("trend {}", stats.trend()));
        }
        if !opts.drop_lag {
            parts.push(format!("toplag {}", stats.top_lag));
        }
    }
    parts.join(" ")
}

/// One description per patch, computed from the (normalized) patch values.
pub fn gen_endotext(ps: &PatchSet, opts: &EndoTextOptions) -> Vec<String> {
    (0..ps.len())
        .map(|i| render_patch(&patch_stats(ps.patch_values(i), ps.channels), opts))
        .collect()
}

const BASE_WORDS: &[&str] = &[
    "patch", "stats", "mean", "min", "max", "median", "trend", "rising", "falling", "flat", "toplag", "segment",
    "summary", "average", "lowest", "highest", "middle", "direction", "period", "alert", "report", "incident",
    "log", "operator", "note", "abnormal", "sudden", "spike", "level", "shift", "frequency", "change", "observed",
    "in", "sensor", "readings", "anomaly", "normal", "the", "a", "of", "for", "to", "and",
];
const NUM_LIMIT: f64 = 4.0;
const NUM_STEP: f64 = 0.25;
const MAX_INT_TOKEN: i64 = 64;

/// Fixed word list plus numeric buckets; other words hash into the remaining ids.
#[derive(Clone, Debug)]
pub struct Tokenizer {
    vocab: HashMap<String, u32>,
    size: u32,
}

impl Tokenizer {
    pub fn new(size: usize) -> Result<Self> {
        let mut words: Vec<String> = BASE_WORDS.iter().map(|w| w.to_string()).collect();
        let steps = (2.0 * NUM_LIMIT / NUM_STEP).round() as i64;
        for k in 0..=steps {
            words.push(num_token(-NUM_LIMIT + k as f64 * NUM_STEP));
        }
        for k in 0..=MAX_INT_TOKEN {
            words.push(format!("<int:{k}>"));
        }
        if size < words.len() + 16 || size > u32::MAX as usize {
            return Err(Error::Config(format!(
                "vocabulary size {size} too small (need ≥ {})",
                words.len() + 16
            )));
        }
        let vocab = words.into_iter().enumerate().map(|(i, w)| (w, i as u32)).collect();
        Ok(Tokenizer {
            vocab,
            size: size as u32,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.size as usize
    }

    fn base_len(&self) -> u32 {
        self.vocab.len() as u32
    }

    fn word_id(&self, word: &str) -> u32 {
        let key = normalize_word(word);
        if let Some(&id) = self.vocab.get(&key) {
            return id;
        }
        let base = self.base_len();
        base + (fnv1a(key.as_bytes()) % (self.size - base) as u64) as u32
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        let ids: Vec<u32> = text
            .split(|c: char| c.is_whitespace() || c == ':' || c == ',')
            .filter(|w| !w.is_empty())
            .map(|w| self.word_id(w))
            .collect();
        if ids.is_empty() {
            return Err(Error::Validation("cannot encode empty text".into()));
        }
        Ok(ids)
    }

    /// Fixed part of the vocabulary as `{token: id}` JSON.
    pub fn dump_json(&self) -> Result<String> {
        let ordered: std::collections::BTreeMap<u32, &str> =
            self.vocab.iter().map(|(w, &i)| (i, w.as_str())).collect();
        let body = serde_json::json!({
            "size": self.size,
            "hashed_from": self.base_len(),
            "tokens": ordered.into_iter().map(|(i, w)| serde_json::json!([w, i])).collect::<Vec<_>>(),
        });
        Ok(serde_json::to_string_pretty(&body)?)
    }
}

fn num_token(v: f64) -> String {
    let b = ((v.clamp(-NUM_LIMIT, NUM_LIMIT) / NUM_STEP).round() * NUM_STEP) + 0.0;
    format!("<num:{b:.2}>")
}

fn normalize_word(word: &str) -> String {
    let w = word.to_lowercase();
    if w.contains('.') || w.contains('e') {
        if let Ok(v) = w.parse::<f64>() {
            if v.is_finite() {
                return num_token(v);
            }
        }
    }
    if let Ok(k) = w.parse::<i64>() {
        if (0..=MAX_INT_TOKEN).contains(&k) {
            return format!("<int:{k}>");
        }
        return num_token(k as f64);
    }
    w
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Text supplied either as token ids or as an external embedding.
#[derive(Clone, Debug, PartialEq)]
pub enum TextInput {
    Tokens(Vec<u32>),
    Embedding(Vec<f64>),
}

/// Mean-pooled token embeddings followed by a residual feed-forward block.
#[derive(Clone, Debug)]
pub struct TextEncoder {
    pub table: ParamId,
    pub external: Linear,
    pub norm: LayerNorm,
    pub ff: FeedForward,
    pub d_model: usize,
}

impl TextEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        vocab: usize,
        d_model: usize,
        ff_hidden: usize,
        rng: &mut R,
    ) -> Self {
        let bound = (3.0 / d_model as f64).sqrt();
        TextEncoder {
            table: store.add("text.embed", Tensor::uniform(&[vocab, d_model], bound, rng)),
            external: Linear::new(store, "text.external", d_model, d_model, rng),
            norm: LayerNorm::new(store, "text.ln", d_model),
            ff: FeedForward::new(store, "text.ff", d_model, ff_hidden, rng),
            d_model,
        }
    }

    fn pooled(&self, g: &mut Graph, inputs: &[TextInput]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::Validation("no texts to encode".into()));
        }
        let all_tokens = inputs.iter().all(|t| matches!(t, TextInput::Tokens(_)));
        if all_tokens {
            let bags: Vec<Vec<u32>> = inputs
                .iter()
                .map(|t| match t {
                    TextInput::Tokens(ids) => ids.clone(),
                    TextInput::Embedding(_) => unreachable!(),
                })
                .collect();
            let table = g.param(self.table);
            return Ok(g.embedding_bag_mean(table, &bags)?);
        }
        let mut rows = Vec::with_capacity(inputs.len());
        for t in inputs {
            let row = match t {
                TextInput::Tokens(ids) => {
                    let table = g.param(self.table);
                    g.embedding_bag_mean(table, std::slice::from_ref(ids))?
                }
                TextInput::Embedding(e) => {
                    if e.len() != self.d_model {
                        return Err(Error::Validation(format!(
                            "embedding length {} != d_model {}",
                            e.len(),
                            self.d_model
                        )));
                    }
                    let x = g.constant(Tensor::row_vector(e.clone()));
                    self.external.forward(g, x)?
                }
            };
            rows.push(row);
        }
        Ok(g.concat_rows(&rows)?)
    }

    /// `count × d_model`, one row per text.
    pub fn forward(&self, g: &mut Graph, inputs: &[TextInput]) -> Result<Var> {
        let e = self.pooled(g, inputs)?;
        let h = self.norm.forward(g, e)?;
        let f = self.ff.forward(g, h)?;
        Ok(g.add(e, f)?)
    }
}

/// How exogenous documents become fusion keys.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExoPooling {
    /// One key per document.
    #[default]
    Tokens,
    /// Average of the selected documents as a single key.
    Mean,
}

/// Up to `k_max` docs touching `[lo, hi]`, by descending overlap then earlier start.
pub fn select_exo<'d>(docs: &'d [TextDoc], lo: i64, hi: i64, k_max: usize) -> Vec<&'d TextDoc> {
    let mut hits: Vec<(i64, &TextDoc)> = docs
        .iter()
        .filter_map(|d| d.overlap(lo, hi).map(|o| (o, d)))
        .collect();
    hits.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.start.cmp(&b.1.start)));
    hits.into_iter().take(k_max).map(|(_, d)| d).collect()
}

pub fn doc_input(doc: &TextDoc, tok: &Tokenizer) -> Result<TextInput> {
    match &doc.embedding {
        Some(e) => Ok(TextInput::Embedding(e.clone())),
        None => Ok(TextInput::Tokens(tok.encode(&doc.text)?)),
    }
}

/// Cross-attention from endogenous queries onto exogenous keys, then a
/// post-norm feed-forward block.
#[derive(Clone, Debug)]
pub struct Fusion {
    pub attn: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ff: FeedForward,
    pub norm2: LayerNorm,
    pub no_context: ParamId,
}

impl Fusion {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        d_model: usize,
        heads: usize,
        ff_hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Fusion {
            attn: MultiHeadAttention::new(store, "fusion.attn", d_model, heads, rng)?,
            norm1: LayerNorm::new(store, "fusion.ln1", d_model),
            ff: FeedForward::new(store, "fusion.ff", d_model, ff_hidden, rng),
            norm2: LayerNorm::new(store, "fusion.ln2", d_model),
            no_context: store.add("fusion.no_context", Tensor::uniform(&[1, d_model], 0.1, rng)),
        })
    }

    /// Key/value rows for a window: encoded docs, their mean, or the
    /// learned no-context token when there are none.
    pub fn context(
        &self,
        g: &mut Graph,
        enc: &TextEncoder,
        docs: &[TextInput],
        pooling: ExoPooling,
    ) -> Result<Var> {
        if docs.is_empty() {
            return Ok(g.param(self.no_context));
        }
        let h = enc.forward(g, docs)?;
        Ok(match pooling {
            ExoPooling::Tokens => h,
            ExoPooling::Mean => g.mean_rows(h)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, h_o: Var, h_c: Var) -> Result<Var> {
        let a = self.attn.forward(g, h_o, h_c)?;
        let r = g.add(h_o, a)?;
        let z = self.norm1.forward(g, r)?;
        let f = self.ff.forward(g, z)?;
        let r = g.add(z, f)?;
        Ok(self.norm2.forward(g, r)?)
    }
}
