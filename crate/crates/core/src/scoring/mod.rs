//! Step scorers, interval aggregators and scorer-quality metrics.

pub mod aggregate;
pub mod metrics;
pub mod monotone;
pub mod synthetic;

pub use aggregate::{aggregate, aggregate_scores, raw_aggregate, AggregatorConfig};
pub use metrics::{auprc, auroc, scorer_metrics, ScorerMetrics};
pub use monotone::{check_monotone, check_monotone_with, Violation};
pub use synthetic::{measure_auroc, synth_step_scores, tune_scorer, SyntheticScorerConfig};
