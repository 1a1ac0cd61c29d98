//! End-to-end runs shared by the command line and the test suites.

use std::path::Path;

use crate::config::{RunConfig, Variant};
use crate::data::{load_series, load_text, synth_multimodal, SeriesDataset, TextDoc};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricReport};
use crate::model::{Gate, MindTs, StepOptions};
use crate::recon::ScoreSeries;
use crate::train::Trainer;

/// A series with its documents.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub series: SeriesDataset,
    pub docs: Vec<TextDoc>,
}

impl Corpus {
    /// Files named in `cfg.data`, or a synthetic corpus from `cfg.data.synth`.
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        match &cfg.data.series {
            Some(path) => Ok(Corpus {
                series: load_series(path)?,
                docs: match &cfg.data.text {
                    Some(t) => load_text(t, None)?,
                    None => Vec::new(),
                },
            }),
            None => {
                let s = synth_multimodal(cfg.seed, &cfg.data.synth)?;
                Ok(Corpus {
                    series: s.series,
                    docs: s.docs,
                })
            }
        }
    }

    pub fn split(&self, fraction: f64) -> Result<(SeriesDataset, SeriesDataset)> {
        self.series.split(fraction)
    }
}

pub fn score_options(cfg: &RunConfig) -> StepOptions {
    StepOptions {
        mask_ratio: cfg.eval.infer_mask_ratio,
        gate: Gate::from(cfg.condenser.infer_gate),
        mu: cfg.condenser.mu,
        rec_raw_sum: cfg.train.rec_raw_sum,
    }
}

pub fn train(cfg: &RunConfig, train: &SeriesDataset, docs: &[TextDoc], out: Option<&Path>) -> Result<Trainer> {
    let mut tr = Trainer::new(cfg, train.channels())?;
    let windows = tr.model.training_windows(train, docs, cfg.train.stride, tr.mode)?;
    tr.fit(&windows, out)?;
    Ok(tr)
}

pub fn score(model: &MindTs, cfg: &RunConfig, series: &SeriesDataset, docs: &[TextDoc]) -> Result<ScoreSeries> {
    let mode = if cfg.train.parallel {
        crate::exec::Execution::Parallel
    } else {
        crate::exec::Execution::Sequential
    };
    model.score_series(series, docs, cfg.eval.score_stride, &score_options(cfg), cfg.seed, mode)
}

/// Result of training on the leading split and scoring the rest.
pub struct RunOutcome {
    pub trainer: Trainer,
    pub test: SeriesDataset,
    pub scores: ScoreSeries,
    pub report: Option<MetricReport>,
}

pub fn run(cfg: &RunConfig, corpus: &Corpus, out: Option<&Path>) -> Result<RunOutcome> {
    let (train_ds, test) = corpus.split(cfg.data.train_fraction)?;
    let trainer = train(cfg, &train_ds, &corpus.docs, out)?;
    let scores = score(&trainer.model, cfg, &test, &corpus.docs)?;
    let report = match test.labels() {
        Some(l) => Some(evaluate(&scores.scores, l, &cfg.eval.metric_options(), trainer.mode)?),
        None => None,
    };
    Ok(RunOutcome {
        trainer,
        test,
        scores,
        report,
    })
}

/// One row of the ablation table.
#[derive(Clone, Debug, serde::Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub final_loss: f64,
    pub metrics: MetricReport,
}

/// Runs every variant with the same seed and data.
pub fn ablate(cfg: &RunConfig, corpus: &Corpus) -> Result<Vec<AblationRow>> {
    Variant::ALL
        .into_iter()
        .map(|variant| {
            let mut c = cfg.clone();
            c.model.variant = variant;
            let out = run(&c, corpus, None)?;
            let metrics = out
                .report
                .ok_or_else(|| Error::Validation("ablation needs a labelled series".into()))?;
            Ok(AblationRow {
                variant,
                final_loss: out.trainer.history.last().map_or(f64::NAN, |r| r.l_total),
                metrics,
            })
        })
        .collect()
}
