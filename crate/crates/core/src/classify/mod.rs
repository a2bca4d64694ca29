//! Baseline classifier, its training recipe and the evaluation protocol.

pub mod metrics;
pub mod model;
pub mod report;
pub mod train;

pub use metrics::{aggregate_runs, compute_metrics, evaluate, one_vs_rest_auc, AggregateReport, ClassMetrics, MeanStd, MetricsReport};
pub use model::{Classifier, ClassifierConfig};
pub use report::{format_table, write_json, write_metrics_csv, MethodResult};
pub use train::{accuracy, predict_proba, train_classifier, write_clf_log, ClfEpochLog};
