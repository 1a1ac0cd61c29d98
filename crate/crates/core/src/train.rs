//! Mini-batch Adam training with per-epoch logging and resumable checkpoints.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::model::{stream_rng, Gate, LossTerms, MindTs, Prepared, StepOptions};
use crate::tensor::{AdamState, Checkpoint, Graph};

pub const TRAIN_LOG: &str = "train_log.csv";
pub const BEST_CHECKPOINT: &str = "checkpoint_best.json";
pub const LAST_CHECKPOINT: &str = "checkpoint_last.json";

const SHUFFLE_PHASE: u64 = 0xFFFF_FFFD;

/// Mean loss terms over one epoch. Epochs count from 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_ma: f64,
    pub l_cl: f64,
    pub l_rec: f64,
    pub l_total: f64,
}

pub struct Trainer {
    pub model: MindTs,
    pub cfg: RunConfig,
    pub adam: AdamState,
    pub history: Vec<EpochRecord>,
    pub best_loss: f64,
    pub mode: Execution,
}

fn mode_of(cfg: &RunConfig) -> Execution {
    if cfg.train.parallel {
        Execution::Parallel
    } else {
        Execution::Sequential
    }
}

impl Trainer {
    pub fn new(cfg: &RunConfig, channels: usize) -> Result<Self> {
        let model = MindTs::new(&cfg.model, channels, cfg.seed)?;
        let t = &cfg.train;
        let adam = AdamState::new(&model.store, t.lr, t.beta1, t.beta2, t.eps);
        Ok(Trainer {
            model,
            cfg: cfg.clone(),
            adam,
            history: Vec::new(),
            best_loss: f64::INFINITY,
            mode: mode_of(cfg),
        })
    }

    /// Rebuilds the trainer from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(cfg: &RunConfig, ck: &Checkpoint) -> Result<Self> {
        let channels = meta_channels(ck)?;
        let mut tr = Trainer::new(cfg, channels)?;
        ck.restore_into(&mut tr.model.store)?;
        tr.adam = ck
            .optimizer
            .clone()
            .ok_or_else(|| Error::Checkpoint("no optimizer state to resume from".into()))?;
        tr.history = match ck.meta.get("history") {
            Some(h) => serde_json::from_value(h.clone())?,
            None => Vec::new(),
        };
        tr.best_loss = ck
            .meta
            .get("best_loss")
            .and_then(|v| v.as_f64())
            .unwrap_or(f64::INFINITY);
        Ok(tr)
    }

    pub fn epochs_done(&self) -> usize {
        self.history.len()
    }

    fn step_options(&self) -> StepOptions {
        StepOptions {
            mask_ratio: self.cfg.model.mask_ratio,
            gate: Gate::Sample,
            mu: self.cfg.condenser.mu,
            rec_raw_sum: self.cfg.train.rec_raw_sum,
        }
    }

    /// Loss and parameter gradients of one window.
    fn window_grads(&self, prep: &Prepared, epoch: usize, slot: usize) -> Result<(LossTerms, Vec<Vec<f64>>)> {
        let mut g = Graph::with_params(&self.model.store);
        let mut rng = stream_rng(self.cfg.seed, epoch as u64, slot as u64);
        let f = self.model.forward(&mut g, prep, &self.step_options(), &mut rng)?;
        let terms = LossTerms::read(&g, &f);
        let grads = g.backward(f.total).map_err(|e| Error::Diverged {
            term: "gradient",
            epoch,
            detail: e.to_string(),
        })?;
        Ok((terms, grads.into_param_grads(&self.model.store)))
    }

    /// One pass over `windows` in a seeded shuffled order.
    pub fn run_epoch(&mut self, windows: &[Prepared]) -> Result<EpochRecord> {
        if windows.is_empty() {
            return Err(Error::Validation("no training windows".into()));
        }
        let epoch = self.history.len() + 1;
        let mut order: Vec<usize> = (0..windows.len()).collect();
        order.shuffle(&mut stream_rng(self.cfg.seed, SHUFFLE_PHASE, epoch as u64));
        let mut sums = LossTerms::default();
        for (b, chunk) in order.chunks(self.cfg.train.batch_size).enumerate() {
            let base = b * self.cfg.train.batch_size;
            let results = map_indexed(self.mode, chunk, |k, &w| self.window_grads(&windows[w], epoch, base + k));
            let mut grads: Vec<Vec<f64>> = Vec::new();
            for r in results {
                let (terms, gw) = r.map_err(|e| with_epoch(e, epoch))?;
                sums.l_ma += terms.l_ma;
                sums.l_cc += terms.l_cc;
                sums.l_sm += terms.l_sm;
                sums.l_rec += terms.l_rec;
                sums.total += terms.total;
                if grads.is_empty() {
                    grads = gw;
                } else {
                    for (acc, g) in grads.iter_mut().zip(gw) {
                        acc.iter_mut().zip(g).for_each(|(a, x)| *a += x);
                    }
                }
            }
            let scale = 1.0 / chunk.len() as f64;
            for g in grads.iter_mut() {
                for x in g.iter_mut() {
                    *x *= scale;
                    if !x.is_finite() {
                        return Err(Error::Diverged {
                            term: "gradient",
                            epoch,
                            detail: "non-finite averaged gradient".into(),
                        });
                    }
                }
            }
            self.adam.step(&mut self.model.store, &grads);
        }
        let n = windows.len() as f64;
        let rec = EpochRecord {
            epoch,
            l_ma: sums.l_ma / n,
            l_cl: (sums.l_cc + sums.l_sm) / n,
            l_rec: sums.l_rec / n,
            l_total: sums.total / n,
        };
        for (term, v) in [("l_ma", rec.l_ma), ("l_cl", rec.l_cl), ("l_rec", rec.l_rec), ("l_total", rec.l_total)] {
            if !v.is_finite() {
                return Err(Error::Diverged {
                    term,
                    epoch,
                    detail: format!("epoch mean is {v}"),
                });
            }
        }
        self.history.push(rec);
        Ok(rec)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::capture(&self.model.store, Some(&self.adam));
        ck.meta.insert("epoch".into(), json!(self.history.len()));
        ck.meta.insert("best_loss".into(), json!(self.best_loss));
        ck.meta.insert("channels".into(), json!(self.model.channels));
        ck.meta.insert("seed".into(), json!(self.cfg.seed));
        ck.meta.insert("model".into(), json!(self.cfg.model));
        ck.meta.insert("history".into(), json!(self.history));
        ck
    }

    /// Trains until `cfg.train.epochs` epochs are done. With `out_dir`, the log
    /// and the last checkpoint are rewritten after every epoch and the best
    /// checkpoint whenever the epoch loss improves.
    pub fn fit(&mut self, windows: &[Prepared], out_dir: Option<&Path>) -> Result<()> {
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        while self.history.len() < self.cfg.train.epochs {
            let rec = self.run_epoch(windows)?;
            log::info!(
                "epoch {}: l_ma {:.4} l_cl {:.4} l_rec {:.4} total {:.4}",
                rec.epoch,
                rec.l_ma,
                rec.l_cl,
                rec.l_rec,
                rec.l_total
            );
            let improved = rec.l_total < self.best_loss;
            if improved {
                self.best_loss = rec.l_total;
            }
            if let Some(dir) = out_dir {
                write_log(&dir.join(TRAIN_LOG), &self.history)?;
                let ck = self.checkpoint();
                if improved {
                    ck.save(&dir.join(BEST_CHECKPOINT))?;
                }
                ck.save(&dir.join(LAST_CHECKPOINT))?;
            }
        }
        Ok(())
    }
}

fn with_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::Diverged { term, detail, .. } => Error::Diverged { term, epoch, detail },
        other => other,
    }
}

pub fn meta_channels(ck: &Checkpoint) -> Result<usize> {
    ck.meta
        .get("channels")
        .and_then(|v| v.as_u64())
        .map(|c| c as usize)
        .ok_or_else(|| Error::Checkpoint("metadata lacks `channels`".into()))
}

pub fn write_log(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for rec in history {
        w.serialize(rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
