//! Configuration, training loop, evaluation, verification and the
//! diversity-potential study, plus the on-disk layout of a run.
//!
//! A run directory `run-<config hash>-s<seed>` holds:
//!
//! - `config.toml`, `train.jsonl`, `probe.jsonl`
//! - `pretrain.csv`: warm-start loss per step
//! - `steplog.csv`: one [`StepLog`] row per RL step
//! - `timing.csv`: wall time per step, kept apart so the step log is
//!   reproducible byte for byte
//! - `rollouts.jsonl`: every sampled trajectory with its advantage
//! - `checkpoints/base.json`, `checkpoints/step-N.json`, `checkpoints/final.json`
//! - `eval/base.jsonl`, `eval/final.jsonl` and `metrics.json`

mod config;
mod evaluate;
mod optim;
mod pretrain;
mod study;
mod train;
mod verify;

pub use config::{
    BackendKind, EvalConfig, IoConfig, LrSchedule, OptimizerConfig, OptimizerKind, PolicyConfig, PretrainConfig,
    ProblemSplit, RunConfig, ScheduleConfig, TaskConfig, METRIC_NAMES,
};
pub use evaluate::{evaluate_checkpoint, find_run_config, EvalOutcome};
pub use optim::{learning_rate, AdamW};
pub use pretrain::{pretrain, warm_start_corpus, PretrainLog};
pub use study::{run_study, study_checkpoints};
pub use train::{read_steplog, select_metrics, train, RunSummary, StepLog, TrainOutcome};
pub use verify::{verify, KlEstimator, SuiteReport, Suite, Verdict};
