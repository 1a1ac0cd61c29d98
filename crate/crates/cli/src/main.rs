use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use mindts::config::{RunConfig, Variant};
use mindts::data::synth_multimodal;
use mindts::metrics::{evaluate, METRIC_NAMES};
use mindts::pipeline::{self, Corpus};
use mindts::recon::{read_scores, threshold_labels};
use mindts::tensor::Checkpoint;
use mindts::train::{meta_channels, Trainer};

#[derive(Parser)]
#[command(name = "mindts", version, about = "Multimodal time series anomaly detection")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic series, its documents and the event ledger.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        anomaly_ratio: Option<f64>,
        #[arg(long)]
        n_points: Option<usize>,
    },
    /// Train on the leading split and write the loss log and checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_variant)]
        ablate: Option<Variant>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score the held-out split with a trained checkpoint.
    Detect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also write binary labels flagging this fraction of timestamps.
        #[arg(long)]
        threshold_ratio: Option<f64>,
    },
    /// Compute the metric report for a score file with labels.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scores: PathBuf,
        /// CSV with `timestamp` and `label` columns, such as a series file.
        /// Defaults to the label column of the score file.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        threshold_ratio: Option<f64>,
    },
    /// Train and evaluate every model variant with the same seed.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: mindts::Error| e.to_string())
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn synth(common: &Common, ratio: Option<f64>, n: Option<usize>) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(r) = ratio {
        cfg.data.synth.anomaly_ratio = r;
    }
    if let Some(n) = n {
        cfg.data.synth.n_points = n;
    }
    cfg.validate()?;
    let data = synth_multimodal(cfg.seed, &cfg.data.synth)?;
    create_dir(&cfg.out_dir)?;
    data.write(&cfg.out_dir)?;
    log::info!(
        "{} points, {} events, {} docs in {}",
        data.series.len(),
        data.ledger.events.len(),
        data.docs.len(),
        cfg.out_dir.display()
    );
    Ok(())
}

fn train(common: &Common, ablate: Option<Variant>, epochs: Option<usize>, resume: Option<&Path>) -> Result<()> {
    let mut cfg = load_config(common)?;
    if let Some(v) = ablate {
        cfg.model.variant = v;
    }
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    cfg.validate()?;
    let corpus = Corpus::load(&cfg)?;
    let (train_ds, _) = corpus.split(cfg.data.train_fraction)?;
    create_dir(&cfg.out_dir)?;
    write_json(&cfg.out_dir.join("config.json"), &cfg)?;
    let mut tr = match resume {
        Some(p) => Trainer::resume(&cfg, &Checkpoint::load(p)?)?,
        None => Trainer::new(&cfg, train_ds.channels())?,
    };
    let windows = tr.model.training_windows(&train_ds, &corpus.docs, cfg.train.stride, tr.mode)?;
    tr.fit(&windows, Some(&cfg.out_dir))?;
    Ok(())
}

fn detect(common: &Common, checkpoint: &Path, ratio: Option<f64>) -> Result<()> {
    let cfg = load_config(common)?;
    let corpus = Corpus::load(&cfg)?;
    let (_, test) = corpus.split(cfg.data.train_fraction)?;
    let ck = Checkpoint::load(checkpoint)?;
    let channels = meta_channels(&ck)?;
    if channels != test.channels() {
        bail!(mindts::Error::Checkpoint(format!(
            "checkpoint has {channels} channels, data has {}",
            test.channels()
        )));
    }
    let mut tr = Trainer::new(&cfg, channels)?;
    ck.restore_into(&mut tr.model.store)?;
    let scores = pipeline::score(&tr.model, &cfg, &test, &corpus.docs)?;
    create_dir(&cfg.out_dir)?;
    scores.write_csv(&cfg.out_dir.join("scores.csv"), test.timestamps(), test.labels())?;
    if let Some(r) = ratio {
        write_labels(&cfg.out_dir.join("labels.csv"), test.timestamps(), &threshold_labels(&scores.scores, r)?)?;
    }
    Ok(())
}

fn write_labels(path: &Path, timestamps: &[i64], labels: &[u8]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["timestamp", "label"])?;
    for (t, l) in timestamps.iter().zip(labels) {
        w.write_record([t.to_string(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Labels from `path` for each of `timestamps`.
fn read_labels(path: &Path, timestamps: &[i64]) -> Result<Vec<u8>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header = r.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h.trim() == name);
    let (Some(tc), Some(lc)) = (col("timestamp"), col("label")) else {
        bail!(mindts::Error::Validation(format!(
            "{} needs timestamp and label columns",
            path.display()
        )));
    };
    let mut by_time = std::collections::HashMap::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let t: i64 = rec[tc].trim().parse().with_context(|| format!("{} row {}: timestamp", path.display(), i + 2))?;
        let l: u8 = match rec[lc].trim() {
            "0" => 0,
            "1" => 1,
            other => bail!(mindts::Error::Validation(format!(
                "{} row {}: label {other:?} is not 0 or 1",
                path.display(),
                i + 2
            ))),
        };
        by_time.insert(t, l);
    }
    timestamps
        .iter()
        .map(|t| {
            by_time.get(t).copied().ok_or_else(|| {
                mindts::Error::Validation(format!("{} has no label for timestamp {t}", path.display())).into()
            })
        })
        .collect()
}

fn eval(common: &Common, scores: &Path, labels: Option<&Path>, ratio: Option<f64>) -> Result<()> {
    let mut cfg = load_config(common)?;
    if ratio.is_some() {
        cfg.eval.threshold_ratio = ratio;
    }
    cfg.validate()?;
    let (timestamps, s, inline) = read_scores(scores)?;
    let labels = match (labels, inline) {
        (Some(p), _) => read_labels(p, &timestamps)?,
        (None, Some(l)) => l,
        (None, None) => bail!(mindts::Error::Validation(format!(
            "{} has no label column and no --labels file was given",
            scores.display()
        ))),
    };
    let report = evaluate(&s, &labels, &cfg.eval.metric_options(), Default::default())?;
    create_dir(&cfg.out_dir)?;
    write_json(&cfg.out_dir.join("metrics.json"), &report)?;
    for (name, v) in METRIC_NAMES.iter().zip(report.values()) {
        println!("{name}\t{}", v.map_or("null".to_string(), |v| format!("{v:.6}")));
    }
    Ok(())
}

fn ablate(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    cfg.validate()?;
    let corpus = Corpus::load(&cfg)?;
    let rows = pipeline::ablate(&cfg, &corpus)?;
    create_dir(&cfg.out_dir)?;
    write_json(&cfg.out_dir.join("ablation.json"), &rows)?;
    let path = cfg.out_dir.join("ablation.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["variant".to_string(), "final_loss".to_string()];
    header.extend(METRIC_NAMES.iter().map(|s| s.to_string()));
    w.write_record(&header)?;
    for r in &rows {
        let mut rec = vec![r.variant.name().to_string(), r.final_loss.to_string()];
        rec.extend(r.metrics.values().iter().map(|v| v.map_or(String::new(), |v| v.to_string())));
        w.write_record(&rec)?;
    }
    w.flush()?;
    println!("{}", header.join("\t"));
    for r in &rows {
        let vals: Vec<String> = r.metrics.values().iter().map(|v| v.map_or("null".into(), |v| format!("{v:.4}"))).collect();
        println!("{}\t{:.4}\t{}", r.variant.name(), r.final_loss, vals.join("\t"));
    }
    Ok(())
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    match e.downcast_ref::<mindts::Error>() {
        Some(m) => m.kind(),
        None if e.downcast_ref::<std::io::Error>().is_some() => "io",
        None if e.downcast_ref::<csv::Error>().is_some() => "csv",
        None => "other",
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Command::Synth {
            common,
            anomaly_ratio,
            n_points,
        } => synth(common, *anomaly_ratio, *n_points),
        Command::Train {
            common,
            ablate,
            epochs,
            resume,
        } => train(common, *ablate, *epochs, resume.as_deref()),
        Command::Detect {
            common,
            checkpoint,
            threshold_ratio,
        } => detect(common, checkpoint, *threshold_ratio),
        Command::Eval {
            common,
            scores,
            labels,
            threshold_ratio,
        } => eval(common, scores, labels.as_deref(), *threshold_ratio),
        Command::Ablate { common } => ablate(common),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error[{}]: {msg}", error_kind(&e));
            ExitCode::from(2)
        }
    }
}
