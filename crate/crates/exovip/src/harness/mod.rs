//! Benchmark harness: corpora, metrics, the ablation-aware runner, the
//! synthetic signal-strength simulator, and post-hoc trace-log reports.

pub mod bench;
pub mod corpus;
pub mod demo;
pub mod metrics;
pub mod report;
pub mod simulate;

pub use bench::{run_benchmark, AblationFlags, BenchError, InstanceRecord, MetricsReport, RunConfig, TimingReport};
pub use corpus::{Corpus, CorpusError, Gold, TaskInstance, TaskKind};
pub use metrics::{box_iou, interval_iou, spearman};
pub use report::{score_distribution_report, DistributionReport, ScoreHistogram, TraceLog};
pub use simulate::{ablation_table, correlation_study, run_simulation, CorrelationRow, SimConfig};
