//! Trained-model checks on synthetic fixtures.

use std::time::{Duration, Instant};

use mindts::alignment::diagonal_margin;
use mindts::config::{RunConfig, Variant};
use mindts::data::{covering_windows, synth_multimodal, AnomalyKind, SeriesDataset, TextDoc};
use mindts::model::MindTs;
use mindts::pipeline::{self, score_options, Corpus, RunOutcome};

use super::suites::Outcome;

pub const TRAIN_BUDGET: Duration = Duration::from_secs(600);

/// Seeded spike and level-shift series with one informative doc per event.
pub fn fixture_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = seed;
    cfg.data.synth.anomaly_kinds = vec![AnomalyKind::Spike, AnomalyKind::LevelShift];
    cfg
}

pub fn run_fixture(cfg: &RunConfig) -> mindts::Result<(RunOutcome, Corpus, Duration)> {
    let corpus = Corpus::load(cfg)?;
    let t0 = Instant::now();
    let out = pipeline::run(cfg, &corpus, None)?;
    Ok((out, corpus, t0.elapsed()))
}

fn vus_pr(out: &RunOutcome) -> f64 {
    out.report.and_then(|r| r.vus_pr).unwrap_or(f64::NAN)
}

/// Trains on seed 0, then again with sequential execution, and compares
/// the score series bit for bit.
pub fn detection(first: &(RunOutcome, Corpus, Duration)) -> Outcome {
    let (out, _, took) = first;
    let report = match out.report {
        Some(r) => r,
        None => return Outcome::new(false, "test split has no labels"),
    };
    let (a_r, v_roc) = (report.auc_roc.unwrap_or(f64::NAN), report.vus_roc.unwrap_or(f64::NAN));
    let mut cfg = fixture_config(0);
    cfg.train.parallel = false;
    let identical = match run_fixture(&cfg) {
        Ok((again, _, _)) => {
            again.scores.scores.len() == out.scores.scores.len()
                && again.scores.scores.iter().zip(&out.scores.scores).all(|(a, b)| a.to_bits() == b.to_bits())
        }
        Err(e) => return Outcome::new(false, format!("rerun failed: {e}")),
    };
    let pass = a_r >= 0.90 && v_roc >= 0.85 && identical && *took < TRAIN_BUDGET;
    Outcome::new(
        pass,
        format!(
            "A-R {a_r:.4} (≥ 0.90), V-ROC {v_roc:.4} (≥ 0.85), {} epochs in {:.0}s, rerun bit-identical: {identical}",
            out.trainer.history.len(),
            took.as_secs_f64()
        ),
    )
}

/// Mean diagonal margin of the similarity matrix over held-out windows.
pub fn alignment_concentration(first: &(RunOutcome, Corpus, Duration)) -> Outcome {
    let (out, corpus, _) = first;
    let cfg = fixture_config(0);
    let model = &out.trainer.model;
    let margins = (|| -> mindts::Result<Vec<f64>> {
        let windows = covering_windows(&out.test, cfg.model.window, cfg.model.window)?;
        windows
            .iter()
            .map(|w| {
                let prep = model.prepare(&out.test, w, &corpus.docs)?;
                Ok(diagonal_margin(&model.infer(&prep, &score_options(&cfg), cfg.seed)?.sim))
            })
            .collect()
    })();
    match margins {
        Ok(m) => {
            let mean = m.iter().sum::<f64>() / m.len() as f64;
            Outcome::new(mean >= 0.1, format!("mean diagonal margin {mean:.4} over {} windows (≥ 0.1)", m.len()))
        }
        Err(e) => Outcome::new(false, format!("inference failed: {e}")),
    }
}

pub const ABLATED: [Variant; 3] = [Variant::NoExo, Variant::NoAlign, Variant::NoCondenser];

/// Mean V-PR of the full model and three ablations over `seeds` seeds. The
/// full-model score for seed 0 is taken from `seed0_full`.
pub fn ablation_direction(seeds: u64, seed0_full: f64) -> Outcome {
    let mut means = Vec::new();
    for variant in std::iter::once(Variant::Full).chain(ABLATED) {
        let mut vals = Vec::new();
        for seed in 0..seeds {
            if variant == Variant::Full && seed == 0 {
                vals.push(seed0_full);
                continue;
            }
            let mut cfg = fixture_config(seed);
            cfg.model.variant = variant;
            match run_fixture(&cfg) {
                Ok((out, _, _)) => vals.push(vus_pr(&out)),
                Err(e) => return Outcome::new(false, format!("{} seed {seed}: {e}", variant.name())),
            }
            eprintln!("  {} seed {seed}: V-PR {:.4}", variant.name(), vals[vals.len() - 1]);
        }
        means.push((variant, vals.iter().sum::<f64>() / vals.len() as f64));
    }
    let full = means[0].1;
    let pass = means[1..].iter().all(|(_, m)| full >= *m);
    let table: Vec<String> = means.iter().map(|(v, m)| format!("{} {m:.4}", v.name())).collect();
    Outcome::new(pass, format!("mean V-PR over {seeds} seeds: {}", table.join(", ")))
}

/// Mean ψ over windows that overlap an informative doc, and over windows
/// that overlap only distractors.
pub fn retention_by_doc_kind(
    model: &MindTs,
    cfg: &RunConfig,
    series: &SeriesDataset,
    docs: &[TextDoc],
    informative: &[usize],
) -> mindts::Result<(f64, f64, usize, usize)> {
    let windows = covering_windows(series, cfg.model.window, cfg.model.window / 4)?;
    let (mut inf, mut dis) = (Vec::new(), Vec::new());
    for w in &windows {
        let touching: Vec<usize> = (0..docs.len())
            .filter(|&i| docs[i].overlap(w.t_start, w.t_end).is_some())
            .collect();
        if touching.is_empty() {
            continue;
        }
        let prep = model.prepare(series, w, docs)?;
        let psi = model.infer(&prep, &score_options(cfg), cfg.seed)?.psi.unwrap_or_default();
        let m = psi.iter().sum::<f64>() / psi.len() as f64;
        if touching.iter().any(|i| informative.contains(i)) {
            inf.push(m);
        } else {
            dis.push(m);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok((mean(&inf), mean(&dis), inf.len(), dis.len()))
}

pub fn condenser_selectivity(seeds: u64) -> Outcome {
    let (mut inf, mut dis) = (0.0, 0.0);
    for seed in 0..seeds {
        let mut cfg = fixture_config(seed);
        cfg.data.synth.text.distractor_rate = 3.0;
        let r = (|| -> mindts::Result<(f64, f64, usize, usize)> {
            let data = synth_multimodal(seed, &cfg.data.synth)?;
            let (train, _) = data.series.split(cfg.data.train_fraction)?;
            let tr = pipeline::train(&cfg, &train, &data.docs, None)?;
            retention_by_doc_kind(&tr.model, &cfg, &data.series, &data.docs, &data.informative_docs())
        })();
        match r {
            Ok((i, d, ni, nd)) => {
                eprintln!("  seed {seed}: ψ informative {i:.4} ({ni} windows), distractor-only {d:.4} ({nd} windows)");
                inf += i / seeds as f64;
                dis += d / seeds as f64;
            }
            Err(e) => return Outcome::new(false, format!("seed {seed}: {e}")),
        }
    }
    Outcome::new(
        inf > dis,
        format!("mean ψ informative {inf:.4} vs distractor-only {dis:.4} over {seeds} seeds"),
    )
}
