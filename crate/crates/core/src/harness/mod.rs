//! Run configuration, synthetic tasks, training with early stopping and the
//! artifacts the CLI reads back.

pub mod config;
pub mod idx;
pub mod metrics;
pub mod report;
pub mod tasks;
pub mod train;

pub use config::{parse_document, RunConfig, StackSpec, TaskKind, TaskSpec};
pub use metrics::{mode_accuracy, mode_prediction, Evaluation, MetricRow, TieBreak};
pub use report::{read_metrics, read_output_dir, read_summary};
pub use tasks::{spike_latency_encode, synthetic_generate, Dataset, Sample};
pub use train::{aggregate, evaluate, mean_std, train_run, train_seed, Aggregate, RunOutcome, RunStatus, SeedSummary};
