//! Experiment harness: configuration, dataset generation runs, training
//! loops, evaluation, metrics and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod eval;
pub mod generate;
pub mod gradcheck;
pub mod metrics;
pub mod train;

pub use checkpoint::{load_into_store, read_checkpoint, write_checkpoint};
pub use config::{ExperimentConfig, TaskStyle};
pub use eval::{evaluate_matrix, evaluate_syllogism, report_from_records, EvalReport, PredictionRecord};
pub use generate::{generate_syllogisms, generate_tasks, manifest_warning, run_generate};
pub use gradcheck::{run_gradcheck, GradCheckReport};
pub use metrics::{append_record, deterministic_view, read_records, MetricsRecord};
pub use train::{train_matrix, train_ssr, train_syllogism, TrainArtifacts, TrainOutcome};
