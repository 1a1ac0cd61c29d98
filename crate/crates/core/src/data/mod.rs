//! Series and text ingestion, windowing and the synthetic corpus generator.

mod series;
mod synth;
mod text;
mod window;

pub use series::{load_series, load_series_with_warnings, parse_series, write_series, SeriesDataset};
pub use synth::{
    synth_multimodal, AnomalyKind, DistractorSpan, EventLedger, InjectedEvent, SynthConfig, SynthData, TextProfile,
    BASE_TIMESTAMP, STEP_SECONDS,
};
pub use text::{load_text, parse_text, write_text, TextDoc};
pub use window::{covering_windows, make_windows, RawWindow, WindowSpec};
