//! Experiment orchestration: config loading, seeded training runs, metric
//! files and checkpoint evaluation.
//!
//! Output layout of one run directory:
//!
//! | file                     | content                                     |
//! |--------------------------|---------------------------------------------|
//! | `metrics_seed<S>.csv`    | one row per episode, see [`METRIC_COLUMNS`] |
//! | `timing_seed<S>.csv`     | cumulative wall-clock seconds per episode   |
//! | `checkpoint_seed<S>.ckpt`| final parameters (only when episodes > 0)   |
//! | `aggregate.csv`          | per-episode mean/std across finished seeds  |
//! | `summary.json`           | status and final rewards of every seed      |

pub mod config;
pub mod learner;
pub mod run;

pub use config::{Algorithm, ConfigError, EnvSpec, ExperimentConfig, Fault, LoadedConfig, Network};
pub use learner::Learner;
pub use run::{
    aggregate_rows, build_env, build_routing_env, evaluate, evaluate_checkpoint, random_policy_expectation,
    resolve_out_dir, run_experiment, train_seed, EvalSummary, MetricsRecord, RunReport, SeedFailure, SeedRun,
    AGGREGATE_COLUMNS, METRIC_COLUMNS, OUT_DIR_ENV,
};
