//! Metrics and studies on trained generators.

mod border;
mod curves;
mod metrics;
mod oracle;
mod sweep;

pub use border::{border_effect_report, margins, BorderReport, BorderSummary};
pub use curves::{emit_curves, parse_curves, write_curves, CURVE_HEADER};
pub use metrics::{frechet_distance, frechet_from_samples, gaussian_stats, inception_score, spearman};
pub use oracle::{
    argmax_rows, conditional_accuracy, conditional_outcome, config_fingerprint, evaluate, ConditionalOutcome,
    ConditionalSource, GanEvaluator, MetricReport, OracleClassifier, PassThrough, DEFAULT_EVAL_SAMPLES,
    DEFAULT_ORACLE_FLOOR,
};
pub use sweep::{robustness_sweep, SweepConfig, SweepPoint};
