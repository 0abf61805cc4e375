//! Whole runs: every task in order, logs and metrics written to disk.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::episode::{run_episode, EpisodeLog, EpisodeOptions};
use super::metrics::{compute_metrics, log_to_jsonl, MetricsError, MetricsReport};
use super::tasks::TaskRecord;
use crate::model::{ConfigError, Model};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Log file name for the `index`-th task; ids are reduced to a safe alphabet.
pub fn log_file_name(index: usize, task_id: &str) -> String {
    let safe: String = task_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{index:04}-{safe}.jsonl")
}

pub fn run_tasks(tasks: &[TaskRecord], model: &Model, options: &EpisodeOptions) -> Result<Vec<EpisodeLog>, RunError> {
    tasks.iter().map(|t| run_episode(t, model, options).map_err(RunError::from)).collect()
}

/// Runs every task and writes `<out>/logs/NNNN-<id>.jsonl` plus
/// `<out>/metrics.json`.
pub fn run_to_dir(
    tasks: &[TaskRecord],
    model: &Model,
    options: &EpisodeOptions,
    out: &Path,
) -> Result<(Vec<EpisodeLog>, MetricsReport), RunError> {
    let logs = run_tasks(tasks, model, options)?;
    let report = compute_metrics(&logs)?;
    let log_dir = out.join("logs");
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| RunError::Io { path, source }
    };
    fs::create_dir_all(&log_dir).map_err(io(&log_dir))?;
    for (i, log) in logs.iter().enumerate() {
        let path = log_dir.join(log_file_name(i, &log.task_id));
        fs::write(&path, log_to_jsonl(log)).map_err(io(&path))?;
    }
    let path = out.join("metrics.json");
    let mut text = serde_json::to_string_pretty(&report).expect("reports serialize");
    text.push('\n');
    fs::write(&path, text).map_err(io(&path))?;
    Ok((logs, report))
}
