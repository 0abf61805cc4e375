//! Episode harness: task files, the simulated world, the control loop,
//! metrics and run logs.

pub mod episode;
pub mod featurize;
pub mod metrics;
pub mod run;
pub mod tasks;
pub mod world;

pub use episode::{run_episode, EpisodeLog, EpisodeOptions, Outcome, Policy, StepRecord};
pub use metrics::{compute_metrics, read_logs, MetricsError, MetricsReport};
pub use run::{run_tasks, run_to_dir, RunError};
pub use tasks::{gen_tasks, load_tasks, TaskRecord};
