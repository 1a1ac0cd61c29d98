use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{write_series, write_text, SeriesDataset, TextDoc};
use crate::error::{Error, Result};

pub const BASE_TIMESTAMP: i64 = 1_600_000_000;
pub const STEP_SECONDS: i64 = 3600;
const NOISE_STD: f64 = 0.1;
const EDGE_MARGIN: usize = 4;
const EVENT_GAP: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    Spike,
    LevelShift,
    Frequency,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 3] = [AnomalyKind::Spike, AnomalyKind::LevelShift, AnomalyKind::Frequency];

    fn length_range(self) -> (usize, usize) {
        match self {
            AnomalyKind::Spike => (1, 3),
            AnomalyKind::LevelShift => (10, 30),
            AnomalyKind::Frequency => (20, 40),
        }
    }

    pub fn phrase(self) -> &'static str {
        match self {
            AnomalyKind::Spike => "sudden spike",
            AnomalyKind::LevelShift => "level shift",
            AnomalyKind::Frequency => "frequency change",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextProfile {
    /// Emit one doc per anomaly that covers it and names its kind.
    pub informative: bool,
    /// Unrelated docs per anomaly event.
    pub distractor_rate: f64,
    /// Max extra steps an informative doc extends past its event on each side.
    pub jitter: usize,
}

impl Default for TextProfile {
    fn default() -> Self {
        TextProfile {
            informative: true,
            distractor_rate: 0.0,
            jitter: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_points: usize,
    pub channels: usize,
    pub anomaly_ratio: f64,
    pub anomaly_kinds: Vec<AnomalyKind>,
    pub text: TextProfile,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_points: 4000,
            channels: 1,
            anomaly_ratio: 0.05,
            anomaly_kinds: AnomalyKind::ALL.to_vec(),
            text: TextProfile::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_points < 200 {
            return Err(Error::Config(format!("synthetic series needs ≥ 200 points, got {}", self.n_points)));
        }
        if self.channels == 0 {
            return Err(Error::Config("synthetic series needs ≥ 1 channel".into()));
        }
        if !(0.0..0.5).contains(&self.anomaly_ratio) {
            return Err(Error::Config(format!("anomaly ratio {} outside [0, 0.5)", self.anomaly_ratio)));
        }
        if self.anomaly_ratio > 0.0 && self.anomaly_kinds.is_empty() {
            return Err(Error::Config("anomaly ratio > 0 but no anomaly kinds".into()));
        }
        if !(self.text.distractor_rate >= 0.0 && self.text.distractor_rate.is_finite()) {
            return Err(Error::Config("distractor rate must be finite and ≥ 0".into()));
        }
        Ok(())
    }
}

/// One injected anomaly over rows `start..end`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectedEvent {
    pub kind: AnomalyKind,
    pub start: usize,
    pub end: usize,
    pub t_start: i64,
    pub t_end: i64,
    /// Index into the emitted doc list.
    pub doc: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistractorSpan {
    pub doc: usize,
    pub start: i64,
    pub end: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventLedger {
    pub seed: u64,
    pub n_points: usize,
    pub anomaly_points: usize,
    pub events: Vec<InjectedEvent>,
    pub distractors: Vec<DistractorSpan>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthData {
    pub series: SeriesDataset,
    pub docs: Vec<TextDoc>,
    pub ledger: EventLedger,
}

impl SynthData {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_series(&self.series, &dir.join("series.csv"))?;
        write_text(&self.docs, &dir.join("text.jsonl"))?;
        let p = dir.join("events.json");
        let body = serde_json::to_string_pretty(&self.ledger)?;
        std::fs::write(&p, body + "\n").map_err(|e| Error::io(&p, e))
    }

    /// Docs marked informative in the ledger, by index.
    pub fn informative_docs(&self) -> Vec<usize> {
        self.ledger.events.iter().filter_map(|e| e.doc).collect()
    }
}

const DISTRACTOR_TEXTS: [&str; 8] = [
    "quarterly maintenance schedule published for the facility",
    "staff meeting notes circulated to the operations team",
    "weather outlook mild with scattered clouds this week",
    "routine audit of inventory records completed",
    "software license renewal reminder sent to admins",
    "cafeteria menu updated for the coming month",
    "parking lot resurfacing planned near the north gate",
    "visitor badge policy reminder from front desk",
];

fn informative_text(kind: AnomalyKind, rng: &mut ChaCha8Rng) -> String {
    const LEADS: [&str; 3] = ["alert report:", "incident log:", "operator note:"];
    let lead = LEADS[rng.gen_range(0..LEADS.len())];
    format!("{lead} abnormal {} observed in sensor readings", kind.phrase())
}

struct Channel {
    p1: f64,
    p2: f64,
    phase1: f64,
    phase2: f64,
}

impl Channel {
    fn at(&self, t: f64, speed: f64) -> f64 {
        use std::f64::consts::TAU;
        (TAU * speed * t / self.p1 + self.phase1).sin() + 0.5 * (TAU * speed * t / self.p2 + self.phase2).sin()
    }
}

/// Picks event spans whose lengths sum to exactly `target`, separated by
/// [`EVENT_GAP`] rows.
fn place_events(
    n: usize,
    target: usize,
    kinds: &[AnomalyKind],
    rng: &mut ChaCha8Rng,
) -> Vec<(AnomalyKind, usize, usize)> {
    let mut taken: Vec<(usize, usize)> = Vec::new();
    let mut out = Vec::new();
    let mut remaining = target;
    let mut misses = 0;
    while remaining > 0 {
        let kind = kinds[rng.gen_range(0..kinds.len())];
        let (lo, hi) = kind.length_range();
        let len = rng.gen_range(lo..=hi).min(remaining);
        let free: Vec<usize> = (EDGE_MARGIN..=n - EDGE_MARGIN - len)
            .filter(|&s| {
                taken
                    .iter()
                    .all(|&(a, b)| s + len + EVENT_GAP <= a || s >= b + EVENT_GAP)
            })
            .collect();
        let Some(&start) = free.choose(rng) else {
            misses += 1;
            if misses > 1000 {
                log::warn!("synthetic series too crowded; {remaining} anomaly points not placed");
                break;
            }
            continue;
        };
        taken.push((start, start + len));
        out.push((kind, start, start + len));
        remaining -= len;
    }
    out.sort_by_key(|e| e.1);
    out
}

/// Sinusoidal multivariate series with injected anomalies and matching text.
pub fn synth_multimodal(seed: u64, cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let n = cfg.n_points;
    let d = cfg.channels;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channels: Vec<Channel> = (0..d)
        .map(|_| Channel {
            p1: rng.gen_range(30.0..50.0),
            p2: rng.gen_range(8.0..15.0),
            phase1: rng.gen_range(0.0..std::f64::consts::TAU),
            phase2: rng.gen_range(0.0..std::f64::consts::TAU),
        })
        .collect();
    // Amplitude reference for spike and shift heights: std of the clean signal.
    let sigma = (0.5f64 + 0.125).sqrt();

    let target = (cfg.anomaly_ratio * n as f64 - 1e-9).ceil().max(0.0) as usize;
    let spans = place_events(n, target, &cfg.anomaly_kinds, &mut rng);

    let noise = Normal::new(0.0, NOISE_STD).expect("valid normal");
    let mut values = vec![0.0; n * d];
    for t in 0..n {
        for (c, ch) in channels.iter().enumerate() {
            values[t * d + c] = ch.at(t as f64, 1.0);
        }
    }
    let mut labels = vec![0u8; n];
    for &(kind, s, e) in &spans {
        for t in s..e {
            labels[t] = 1;
            for (c, ch) in channels.iter().enumerate() {
                let v = &mut values[t * d + c];
                match kind {
                    AnomalyKind::Spike => *v += 5.0 * sigma,
                    AnomalyKind::LevelShift => *v += 3.0 * sigma,
                    AnomalyKind::Frequency => *v = ch.at(t as f64, 3.0),
                }
            }
        }
    }
    for v in values.iter_mut() {
        *v += noise.sample(&mut rng);
    }
    let timestamps: Vec<i64> = (0..n as i64).map(|t| BASE_TIMESTAMP + STEP_SECONDS * t).collect();

    // Docs are generated in a fixed order, then sorted by start with a stable
    // sort; ledger indices refer to the sorted list.
    let mut raw_docs: Vec<(TextDoc, Option<usize>)> = Vec::new();
    if cfg.text.informative {
        for (k, &(kind, s, e)) in spans.iter().enumerate() {
            let before = rng.gen_range(0..=cfg.text.jitter);
            let after = rng.gen_range(0..=cfg.text.jitter);
            let lo = s.saturating_sub(before);
            let hi = (e - 1 + after).min(n - 1);
            let text = informative_text(kind, &mut rng);
            raw_docs.push((TextDoc::new(timestamps[lo], timestamps[hi], text), Some(k)));
        }
    }
    let n_distractors = (cfg.text.distractor_rate * spans.len() as f64).round() as usize;
    for _ in 0..n_distractors {
        let len = rng.gen_range(5..=40usize).min(n - 1);
        let lo = rng.gen_range(0..n - len);
        let text = DISTRACTOR_TEXTS[rng.gen_range(0..DISTRACTOR_TEXTS.len())];
        raw_docs.push((TextDoc::new(timestamps[lo], timestamps[lo + len], text), None));
    }
    let mut order: Vec<usize> = (0..raw_docs.len()).collect();
    order.sort_by_key(|&i| raw_docs[i].0.start);
    let mut event_doc = vec![None; spans.len()];
    let mut distractors = Vec::new();
    let mut docs = Vec::with_capacity(raw_docs.len());
    for (pos, &i) in order.iter().enumerate() {
        let (doc, event) = &raw_docs[i];
        match event {
            Some(k) => event_doc[*k] = Some(pos),
            None => distractors.push(DistractorSpan {
                doc: pos,
                start: doc.start,
                end: doc.end,
            }),
        }
        docs.push(doc.clone());
    }

    let events: Vec<InjectedEvent> = spans
        .iter()
        .zip(event_doc)
        .map(|(&(kind, s, e), doc)| InjectedEvent {
            kind,
            start: s,
            end: e,
            t_start: timestamps[s],
            t_end: timestamps[e - 1],
            doc,
        })
        .collect();
    let anomaly_points = labels.iter().map(|&l| l as usize).sum();
    let series = SeriesDataset::new(values, d, timestamps, Some(labels))?;
    Ok(SynthData {
        series,
        docs,
        ledger: EventLedger {
            seed,
            n_points: n,
            anomaly_points,
            events,
            distractors,
        },
    })
}
