//! Run metrics and the per-episode JSONL log format.
//!
//! A log file holds one `{"record":"step",...}` line per decision step
//! followed by a single `{"record":"summary",...}` line.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::episode::{EpisodeLog, Outcome, StepRecord};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no episode logs")]
    EmptyLogs,
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("{path} line {line}: {message}")]
    Parse { path: String, line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tsr: f64,
    pub esr: f64,
    pub ael: f64,
    pub episode_count: usize,
    pub tool_calls: usize,
    pub ok_calls: usize,
}

/// TSR = successes / episodes, ESR = ok calls / calls (0 with no calls),
/// AEL = mean steps used.
pub fn compute_metrics(logs: &[EpisodeLog]) -> Result<MetricsReport, MetricsError> {
    if logs.is_empty() {
        return Err(MetricsError::EmptyLogs);
    }
    let n = logs.len();
    let successes = logs.iter().filter(|l| l.outcome == Outcome::Success).count();
    let tool_calls: usize = logs.iter().map(EpisodeLog::tool_calls).sum();
    let ok_calls: usize = logs.iter().map(EpisodeLog::ok_calls).sum();
    let steps: u64 = logs.iter().map(|l| u64::from(l.steps_used)).sum();
    Ok(MetricsReport {
        tsr: successes as f64 / n as f64,
        esr: if tool_calls == 0 { 0.0 } else { ok_calls as f64 / tool_calls as f64 },
        ael: steps as f64 / n as f64,
        episode_count: n,
        tool_calls,
        ok_calls,
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Summary {
    task_id: String,
    budget_steps: u32,
    outcome: Outcome,
    steps_used: u32,
    error: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum LogLine {
    Step(StepRecord),
    Summary(Summary),
}

pub fn log_to_jsonl(log: &EpisodeLog) -> String {
    let mut out = String::new();
    let lines = log.steps.iter().cloned().map(LogLine::Step).chain(std::iter::once(LogLine::Summary(Summary {
        task_id: log.task_id.clone(),
        budget_steps: log.budget_steps,
        outcome: log.outcome,
        steps_used: log.steps_used,
        error: log.error.clone(),
    })));
    for line in lines {
        out.push_str(&serde_json::to_string(&line).expect("log records serialize"));
        out.push('\n');
    }
    out
}

pub fn parse_log(text: &str, path: &str) -> Result<EpisodeLog, MetricsError> {
    let mut steps = Vec::new();
    let mut summary = None;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let err = |message: String| MetricsError::Parse { path: path.to_string(), line: i + 1, message };
        if summary.is_some() {
            return Err(err("record after summary".into()));
        }
        match serde_json::from_str(line).map_err(|e| err(e.to_string()))? {
            LogLine::Step(s) => steps.push(s),
            LogLine::Summary(s) => summary = Some(s),
        }
    }
    let s = summary.ok_or_else(|| MetricsError::Parse {
        path: path.to_string(),
        line: text.lines().count(),
        message: "missing summary record".into(),
    })?;
    Ok(EpisodeLog {
        task_id: s.task_id,
        budget_steps: s.budget_steps,
        steps,
        outcome: s.outcome,
        steps_used: s.steps_used,
        error: s.error,
    })
}

/// Reads every `*.jsonl` file in `dir`, in file-name order.
pub fn read_logs(dir: &Path) -> Result<Vec<EpisodeLog>, MetricsError> {
    let io = |e: std::io::Error| MetricsError::Io { path: dir.display().to_string(), message: e.to_string() };
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let name = p.display().to_string();
            let text = fs::read_to_string(p).map_err(|e| MetricsError::Io { path: name.clone(), message: e.to_string() })?;
            parse_log(&text, &name)
        })
        .collect()
}
