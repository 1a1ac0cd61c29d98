//! Full model: both encoders, fusion, condenser and decoder wired per window.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::alignment::{loss_ma, similarity_matrix};
use crate::condenser::{condense, loss_cc, loss_sm, sample_mask, st_mask, Condenser, InferGate, MaskMode};
use crate::config::{ModelConfig, Variant};
use crate::data::{covering_windows, make_windows, RawWindow, SeriesDataset, TextDoc};
use crate::error::{Error, Result, TensorError};
use crate::exec::{map_indexed, Execution};
use crate::recon::{loss_rec, row_errors, Decoder, ScoreSeries};
use crate::tensor::{Graph, ParamStore, Tensor, Var};
use crate::text_branch::{doc_input, gen_endotext, select_exo, Fusion, TextEncoder, TextInput, Tokenizer};
use crate::time_branch::{instance_norm, mask_patches, patchify, NormStats, PatchSet, TimeEncoder, TimeEncoderDims};

/// Window inputs that do not change during training.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub offset: usize,
    pub x_norm: Tensor,
    pub stats: NormStats,
    pub patches: PatchSet,
    pub endo: Vec<TextInput>,
    pub exo: Vec<TextInput>,
}

/// How the retention mask gates the text rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    /// Bernoulli sample with straight-through gradients.
    Sample,
    /// `1[ψ ≥ 0.5]`, no gradient.
    Hard,
    /// `ψ` itself.
    Soft,
}

impl From<InferGate> for Gate {
    fn from(g: InferGate) -> Self {
        match g {
            InferGate::Hard => Gate::Hard,
            InferGate::Soft => Gate::Soft,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct StepOptions {
    pub mask_ratio: f64,
    pub gate: Gate,
    pub mu: f64,
    pub rec_raw_sum: bool,
}

/// Graph nodes produced by one window.
#[derive(Clone, Copy, Debug)]
pub struct Forward {
    pub l_ma: Var,
    pub l_cc: Var,
    pub l_sm: Var,
    pub l_rec: Var,
    pub total: Var,
    pub sim: Var,
    pub psi: Option<Var>,
    pub x_hat: Var,
}

/// Loss values of one window.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub l_ma: f64,
    pub l_cc: f64,
    pub l_sm: f64,
    pub l_rec: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn l_cl(&self) -> f64 {
        self.l_cc + self.l_sm
    }

    pub fn read(g: &Graph, f: &Forward) -> Self {
        LossTerms {
            l_ma: g.value(f.l_ma).item(),
            l_cc: g.value(f.l_cc).item(),
            l_sm: g.value(f.l_sm).item(),
            l_rec: g.value(f.l_rec).item(),
            total: g.value(f.total).item(),
        }
    }
}

fn stage<T>(term: &'static str, r: std::result::Result<T, impl Into<Error>>) -> Result<T> {
    r.map_err(|e| match e.into() {
        Error::Tensor(TensorError::NonFinite(detail)) => Error::Diverged {
            term,
            epoch: 0,
            detail,
        },
        other => other,
    })
}

/// Independent random stream for item `index` of phase `phase`.
pub fn stream_rng(seed: u64, phase: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((phase << 32) ^ index);
    rng
}

const INIT_PHASE: u64 = 0xFFFF_FFFF;
const SCORE_PHASE: u64 = 0xFFFF_FFFE;

pub struct MindTs {
    pub cfg: ModelConfig,
    pub channels: usize,
    pub store: ParamStore,
    pub time: TimeEncoder,
    pub text: TextEncoder,
    pub fusion: Fusion,
    pub condenser: Condenser,
    pub decoder: Decoder,
    pub tokenizer: Tokenizer,
}

impl MindTs {
    pub fn new(cfg: &ModelConfig, channels: usize, seed: u64) -> Result<Self> {
        if cfg.d_model % cfg.heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} not divisible by heads {}",
                cfg.d_model, cfg.heads
            )));
        }
        cfg.window_spec(cfg.window).validate()?;
        let mut rng = stream_rng(seed, INIT_PHASE, 0);
        let mut store = ParamStore::new();
        let d = cfg.d_model;
        let hidden = cfg.ff_mult * d;
        let dims = TimeEncoderDims {
            patches: cfg.num_patches(),
            patch_width: cfg.patch * channels,
            d_model: d,
            layers: cfg.layers,
            heads: cfg.heads,
            ff_hidden: hidden,
        };
        let time = TimeEncoder::new(&mut store, dims, &mut rng)?;
        let text = TextEncoder::new(&mut store, cfg.vocab_size, d, hidden, &mut rng);
        let fusion = Fusion::new(&mut store, d, cfg.heads, hidden, &mut rng)?;
        let cond_in = if cfg.variant == Variant::CondenserVariant { 2 * d } else { d };
        let condenser = Condenser::new(&mut store, cond_in, d, &mut rng);
        let decoder = Decoder::new(&mut store, d, cfg.heads, hidden, cfg.patch, cfg.patch_stride, channels, &mut rng)?;
        Ok(MindTs {
            cfg: cfg.clone(),
            channels,
            store,
            time,
            text,
            fusion,
            condenser,
            decoder,
            tokenizer: Tokenizer::new(cfg.vocab_size)?,
        })
    }

    /// Normalizes, patches and renders the text of one window.
    pub fn prepare(&self, series: &SeriesDataset, win: &RawWindow, docs: &[TextDoc]) -> Result<Prepared> {
        let d = self.channels;
        if series.channels() != d {
            return Err(Error::Validation(format!(
                "series has {} channels, model expects {d}",
                series.channels()
            )));
        }
        let (x, stats) = instance_norm(win.values(series), d);
        let patches = patchify(&x, d, self.cfg.patch, self.cfg.patch_stride)?;
        let endo = gen_endotext(&patches, &self.cfg.endotext)
            .iter()
            .map(|s| self.tokenizer.encode(s).map(TextInput::Tokens))
            .collect::<Result<Vec<_>>>()?;
        let exo = select_exo(docs, win.t_start, win.t_end, self.cfg.exo_k_max)
            .into_iter()
            .map(|doc| doc_input(doc, &self.tokenizer))
            .collect::<Result<Vec<_>>>()?;
        Ok(Prepared {
            offset: win.offset,
            x_norm: Tensor::from_rows(win.len, d, x)?,
            stats,
            patches,
            endo,
            exo,
        })
    }

    pub fn prepare_all(
        &self,
        series: &SeriesDataset,
        windows: &[RawWindow],
        docs: &[TextDoc],
        mode: Execution,
    ) -> Result<Vec<Prepared>> {
        map_indexed(mode, windows, |_, w| self.prepare(series, w, docs))
            .into_iter()
            .collect()
    }

    fn gate(&self, g: &mut Graph, psi: Var, gate: Gate, rng: &mut ChaCha8Rng) -> Result<Var> {
        Ok(match gate {
            Gate::Sample => {
                let mask = sample_mask(g.value(psi).data(), rng, MaskMode::Train);
                st_mask(g, psi, mask)?
            }
            Gate::Hard => {
                let mask = sample_mask(g.value(psi).data(), rng, MaskMode::Infer);
                g.constant(Tensor::col_vector(mask))
            }
            Gate::Soft => psi,
        })
    }

    fn retention(&self, g: &mut Graph, rows: Var, h_time: Var) -> Result<Var> {
        let input = if self.cfg.variant == Variant::CondenserVariant {
            g.concat_cols(&[rows, h_time])?
        } else {
            rows
        };
        self.condenser.retention_probs(g, input)
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        prep: &Prepared,
        opts: &StepOptions,
        rng: &mut ChaCha8Rng,
    ) -> Result<Forward> {
        let v = self.cfg.variant;
        let h_time = stage("time_encoder", self.time.forward(g, &prep.patches))?;
        let masked = mask_patches(&prep.patches, opts.mask_ratio, rng);
        let h_masked = if masked.masked_count() == 0 {
            h_time
        } else {
            stage("time_encoder", self.time.forward(g, &masked))?
        };
        let h_o = if v.uses_endo() {
            stage("text_encoder", self.text.forward(g, &prep.endo))?
        } else {
            h_time
        };
        let exo: &[TextInput] = if v.uses_exo() { &prep.exo } else { &[] };
        let h_c = stage("text_encoder", self.fusion.context(g, &self.text, exo, self.cfg.exo_pooling))?;

        let zero = g.constant(Tensor::scalar(0.0));
        let (z_text, z_con, psi) = if !v.uses_condenser() {
            let z = stage("fusion", self.fusion.forward(g, h_o, h_c))?;
            (z, z, None)
        } else if v == Variant::ReversedOrder {
            let psi = stage("condenser", self.retention(g, h_o, h_time))?;
            let gate = stage("condenser", self.gate(g, psi, opts.gate, rng))?;
            let h_kept = stage("condenser", condense(g, h_o, gate))?;
            let z = stage("fusion", self.fusion.forward(g, h_kept, h_c))?;
            (z, z, Some(psi))
        } else {
            let z = stage("fusion", self.fusion.forward(g, h_o, h_c))?;
            let psi = stage("condenser", self.retention(g, z, h_time))?;
            let gate = stage("condenser", self.gate(g, psi, opts.gate, rng))?;
            let zc = stage("condenser", condense(g, z, gate))?;
            (z, zc, Some(psi))
        };

        let sim = stage("l_ma", similarity_matrix(g, h_time, z_text))?;
        let l_ma = if v.uses_align() {
            stage("l_ma", loss_ma(g, sim, self.cfg.tau, self.cfg.symmetric_denominator))?
        } else {
            zero
        };
        let (l_cc, l_sm) = match psi {
            Some(p) => {
                let cc = stage("l_cc", loss_cc(g, p, opts.mu))?;
                let sm = if v.uses_smoothness() {
                    stage("l_sm", loss_sm(g, p))?
                } else {
                    zero
                };
                (cc, sm)
            }
            None => (zero, zero),
        };
        let text_for_decoder = v.uses_text_in_decoder().then_some(z_con);
        let x_hat = stage("decoder", self.decoder.reconstruct(g, h_masked, text_for_decoder))?;
        let x = g.constant(prep.x_norm.clone());
        let l_rec = stage("l_rec", loss_rec(g, x, x_hat, opts.rec_raw_sum))?;
        let a = stage("l_total", g.add(l_ma, l_cc))?;
        let b = stage("l_total", g.add(a, l_sm))?;
        let total = stage("l_total", g.add(b, l_rec))?;
        Ok(Forward {
            l_ma,
            l_cc,
            l_sm,
            l_rec,
            total,
            sim,
            psi,
            x_hat,
        })
    }

    /// Reconstruction of one window without gradients.
    pub fn infer(&self, prep: &Prepared, opts: &StepOptions, seed: u64) -> Result<WindowInference> {
        let mut g = Graph::with_params(&self.store);
        let mut rng = stream_rng(seed, SCORE_PHASE, prep.offset as u64);
        let f = self.forward(&mut g, prep, opts, &mut rng)?;
        let x_hat = g.value(f.x_hat).clone();
        Ok(WindowInference {
            errors: row_errors(prep.x_norm.data(), x_hat.data(), self.channels),
            psi: f.psi.map(|p| g.value(p).data().to_vec()),
            sim: g.value(f.sim).clone(),
            losses: LossTerms::read(&g, &f),
        })
    }

    /// Per-timestamp scores over `series`, averaged over windows at `stride`
    /// (plus one window flush with the end).
    pub fn score_series(
        &self,
        series: &SeriesDataset,
        docs: &[TextDoc],
        stride: usize,
        opts: &StepOptions,
        seed: u64,
        mode: Execution,
    ) -> Result<ScoreSeries> {
        let windows = covering_windows(series, self.cfg.window, stride)?;
        let per: Vec<Result<(usize, Vec<f64>)>> = map_indexed(mode, &windows, |_, w| {
            let prep = self.prepare(series, w, docs)?;
            Ok((w.offset, self.infer(&prep, opts, seed)?.errors))
        });
        let per: Vec<(usize, Vec<f64>)> = per.into_iter().collect::<Result<_>>()?;
        ScoreSeries::accumulate(series.len(), &per)
    }

    /// Windows over `series` for training at `stride`.
    pub fn training_windows(
        &self,
        series: &SeriesDataset,
        docs: &[TextDoc],
        stride: usize,
        mode: Execution,
    ) -> Result<Vec<Prepared>> {
        let windows = make_windows(series, self.cfg.window, stride)?;
        self.prepare_all(series, &windows, docs, mode)
    }
}

/// Outputs of one inference pass.
#[derive(Clone, Debug)]
pub struct WindowInference {
    pub errors: Vec<f64>,
    pub psi: Option<Vec<f64>>,
    pub sim: Tensor,
    pub losses: LossTerms,
}
