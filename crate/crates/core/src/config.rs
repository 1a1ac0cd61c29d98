//! Run configuration: one JSON document with `data`, `model`, `condenser`,
//! `train` and `eval` sections. Every field has a default and unknown keys
//! are rejected.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::condenser::InferGate;
use crate::data::{SynthConfig, WindowSpec};
use crate::error::{Error, Result};
use crate::metrics::{EvalOptions, RangeParams};
use crate::text_branch::{EndoTextOptions, ExoPooling};

/// Model variants compared by the ablation run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[default]
    Full,
    /// Exogenous text replaced by the no-context token.
    NoExo,
    /// Time representation used as the fusion query instead of endogenous text.
    NoEndo,
    /// Alignment loss disabled.
    NoAlign,
    /// Mask fixed to all ones, condenser losses disabled.
    NoCondenser,
    /// Decoder ignores the text.
    NoRecon,
    /// Condensation applied to endogenous text before fusion.
    ReversedOrder,
    /// Smoothness term disabled.
    #[serde(rename = "no-lsm")]
    NoLsm,
    /// Retention probabilities conditioned on the time representation too.
    CondenserVariant,
}

impl Variant {
    pub const ALL: [Variant; 9] = [
        Variant::Full,
        Variant::NoExo,
        Variant::NoEndo,
        Variant::NoAlign,
        Variant::NoCondenser,
        Variant::NoRecon,
        Variant::ReversedOrder,
        Variant::NoLsm,
        Variant::CondenserVariant,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoExo => "no-exo",
            Variant::NoEndo => "no-endo",
            Variant::NoAlign => "no-align",
            Variant::NoCondenser => "no-condenser",
            Variant::NoRecon => "no-recon",
            Variant::ReversedOrder => "reversed-order",
            Variant::NoLsm => "no-lsm",
            Variant::CondenserVariant => "condenser-variant",
        }
    }

    pub fn uses_exo(self) -> bool {
        self != Variant::NoExo
    }
    pub fn uses_endo(self) -> bool {
        self != Variant::NoEndo
    }
    pub fn uses_align(self) -> bool {
        self != Variant::NoAlign
    }
    pub fn uses_condenser(self) -> bool {
        self != Variant::NoCondenser
    }
    pub fn uses_text_in_decoder(self) -> bool {
        self != Variant::NoRecon
    }
    pub fn uses_smoothness(self) -> bool {
        !matches!(self, Variant::NoLsm | Variant::NoCondenser)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Series CSV; when absent a synthetic corpus is generated from `synth`.
    pub series: Option<PathBuf>,
    pub text: Option<PathBuf>,
    /// Leading fraction used for training; the rest is scored.
    pub train_fraction: f64,
    pub synth: SynthConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            series: None,
            text: None,
            train_fraction: 0.7,
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub window: usize,
    pub patch: usize,
    pub patch_stride: usize,
    pub mask_ratio: f64,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_mult: usize,
    pub vocab_size: usize,
    pub tau: f64,
    /// Row normalization in both contrastive terms instead of row/column.
    pub symmetric_denominator: bool,
    pub exo_k_max: usize,
    pub exo_pooling: ExoPooling,
    pub endotext: EndoTextOptions,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            window: 96,
            patch: 6,
            patch_stride: 6,
            mask_ratio: 0.5,
            d_model: 64,
            layers: 2,
            heads: 4,
            ff_mult: 4,
            vocab_size: 4096,
            tau: 0.07,
            symmetric_denominator: false,
            exo_k_max: 8,
            exo_pooling: ExoPooling::Tokens,
            endotext: EndoTextOptions::default(),
            variant: Variant::Full,
        }
    }
}

impl ModelConfig {
    pub fn num_patches(&self) -> usize {
        (self.window - self.patch) / self.patch_stride + 1
    }

    pub fn window_spec(&self, stride: usize) -> WindowSpec {
        WindowSpec {
            window: self.window,
            stride,
            patch: self.patch,
            patch_stride: self.patch_stride,
            mask_ratio: self.mask_ratio,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CondenserConfig {
    pub mu: f64,
    pub infer_gate: InferGate,
}

impl Default for CondenserConfig {
    fn default() -> Self {
        CondenserConfig {
            mu: 0.5,
            infer_gate: InferGate::Hard,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Window stride over the training split.
    pub stride: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Sum instead of mean in the reconstruction loss.
    pub rec_raw_sum: bool,
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 16,
            stride: 4,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            rec_raw_sum: false,
            parallel: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub score_stride: usize,
    /// Patch mask ratio of the masked branch while scoring. Masks are drawn
    /// from a stream keyed by window offset, so scores stay reproducible.
    pub infer_mask_ratio: f64,
    /// Fraction flagged for label-based metrics; defaults to the true anomaly fraction.
    pub threshold_ratio: Option<f64>,
    pub vus_grid: Option<Vec<f64>>,
    pub vus_points: usize,
    /// Buffer for R-A-P/R-A-R; defaults to the median event length.
    pub buffer: Option<f64>,
    pub range: RangeParams,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let m = EvalOptions::default();
        EvalConfig {
            score_stride: 1,
            infer_mask_ratio: 0.5,
            threshold_ratio: m.threshold_ratio,
            vus_grid: m.vus_grid,
            vus_points: m.vus_points,
            buffer: m.buffer,
            range: m.range,
        }
    }
}

impl EvalConfig {
    pub fn metric_options(&self) -> EvalOptions {
        EvalOptions {
            threshold_ratio: self.threshold_ratio,
            vus_grid: self.vus_grid.clone(),
            vus_points: self.vus_points,
            buffer: self.buffer,
            range: self.range,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub condenser: CondenserConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            condenser: CondenserConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        m.window_spec(self.train.stride).validate()?;
        check(m.d_model > 0 && m.heads > 0 && m.d_model % m.heads == 0, || {
            format!("d_model {} must be a positive multiple of heads {}", m.d_model, m.heads)
        })?;
        check(m.layers > 0 && m.ff_mult > 0, || "layers and ff_mult must be ≥ 1".into())?;
        check(m.tau > 0.0 && m.tau.is_finite(), || format!("tau must be > 0, got {}", m.tau))?;
        check(m.exo_k_max > 0, || "exo_k_max must be ≥ 1".into())?;
        check(self.condenser.mu > 0.0 && self.condenser.mu < 1.0, || {
            format!("mu must be in (0,1), got {}", self.condenser.mu)
        })?;
        let t = &self.train;
        check(t.epochs > 0 && t.batch_size > 0, || "epochs and batch_size must be ≥ 1".into())?;
        check(t.lr > 0.0 && t.eps > 0.0, || "lr and eps must be > 0".into())?;
        check((0.0..1.0).contains(&t.beta1) && (0.0..1.0).contains(&t.beta2), || {
            "betas must be in [0,1)".into()
        })?;
        check(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0, || {
            format!("train_fraction must be in (0,1), got {}", self.data.train_fraction)
        })?;
        check(self.eval.score_stride > 0, || "score_stride must be ≥ 1".into())?;
        check((0.0..=1.0).contains(&self.eval.infer_mask_ratio), || {
            "infer_mask_ratio must be in [0,1]".into()
        })?;
        if let Some(r) = self.eval.threshold_ratio {
            check(r > 0.0 && r < 1.0, || format!("threshold_ratio must be in (0,1), got {r}"))?;
        }
        self.data.synth.validate()?;
        crate::text_branch::Tokenizer::new(m.vocab_size)?;
        Ok(())
    }
}
