//! Label-based and score-based anomaly detection metrics.

mod affiliation;
mod auc;
mod events;
mod point;
mod range;
mod report;
mod vus;

pub use affiliation::{affiliation_metrics, zones, AffiliationMetrics};
pub use auc::{average_precision, binary_labels, roc_auc};
pub use events::{events, median_length, Event};
pub use point::{point_metrics, PointMetrics};
pub use range::{range_metrics, Cardinality, PositionalBias, RangeMetrics, RangeParams};
pub use report::{evaluate, EvalOptions, MetricReport, METRIC_NAMES};
pub use vus::{default_grid, ramp_labels, vus, VusMetrics, DEFAULT_GRID_POINTS};
