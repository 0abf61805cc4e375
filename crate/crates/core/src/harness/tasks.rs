//! Task records: goal, context, scripted tool path with expected responses.
//!
//! On disk a task file is JSONL, one record per line:
//!
//! ```json
//! {"id":"t1","goal":"move the cup from the sink to the shelf","context":["cup","sink","shelf"],
//!  "steps":[{"tool":"navigate","args":{"target":"sink"},"expected":"robot_at(sink)"}, ...],
//!  "budget_steps":20}
//! ```
//!
//! `expected` is one of `ok`, `robot_at(L)`, `holding(O)` or `at(O,L)`.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};
use thiserror::Error;

use crate::router::{ArgValue, Args};
use crate::tensor::{derive_seed, SplitMix64};

pub const DEFAULT_BUDGET_STEPS: u32 = 20;

/// Object vocabulary of the generator.
pub const OBJECTS: [&str; 12] =
    ["apple", "banana", "cup", "sponge", "bottle", "book", "remote", "towel", "bowl", "can", "chips", "keys"];
/// Location vocabulary of the generator.
pub const LOCATIONS: [&str; 6] = ["kitchen", "counter", "table", "sink", "shelf", "drawer"];

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("cannot read task file: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: schema violation at {field}")]
    SchemaViolation { line: usize, field: String },
}

/// A checkable postcondition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Predicate {
    Ok,
    RobotAt(String),
    Holding(String),
    ObjectAt(String, String),
}

impl Predicate {
    pub fn parse(text: &str) -> Option<Self> {
        let text = text.trim();
        if text == "ok" {
            return Some(Predicate::Ok);
        }
        let (head, rest) = text.split_once('(')?;
        let inner = rest.strip_suffix(')')?;
        let parts: Vec<&str> = inner.split(',').map(str::trim).collect();
        if parts.iter().any(|p| p.is_empty()) {
            return None;
        }
        match (head.trim(), parts.as_slice()) {
            ("robot_at", [l]) => Some(Predicate::RobotAt(l.to_string())),
            ("holding", [o]) => Some(Predicate::Holding(o.to_string())),
            ("at", [o, l]) => Some(Predicate::ObjectAt(o.to_string(), l.to_string())),
            _ => None,
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::Ok => write!(f, "ok"),
            Predicate::RobotAt(l) => write!(f, "robot_at({l})"),
            Predicate::Holding(o) => write!(f, "holding({o})"),
            Predicate::ObjectAt(o, l) => write!(f, "at({o},{l})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskStep {
    pub tool: String,
    pub args: Args,
    pub expected: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskRecord {
    pub id: String,
    pub goal: String,
    pub context: Vec<String>,
    pub steps: Vec<TaskStep>,
    pub budget_steps: u32,
}

impl TaskRecord {
    /// The final step's expected postcondition.
    pub fn goal_predicate(&self) -> Predicate {
        self.steps.last().and_then(|s| Predicate::parse(&s.expected)).unwrap_or(Predicate::Ok)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("task records serialize")
    }
}

fn schema(line: usize, field: impl Into<String>) -> TaskError {
    TaskError::SchemaViolation { line, field: field.into() }
}

fn check_keys(map: &Map<String, Value>, allowed: &[&str], required: &[&str], line: usize, prefix: &str) -> Result<(), TaskError> {
    if let Some(extra) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(schema(line, format!("{prefix}{extra}")));
    }
    if let Some(missing) = required.iter().find(|k| !map.contains_key(**k)) {
        return Err(schema(line, format!("{prefix}{missing}")));
    }
    Ok(())
}

/// Parses and validates one JSONL record. `line` is 1-based.
pub fn parse_task_line(text: &str, line: usize) -> Result<TaskRecord, TaskError> {
    let value: Value = serde_json::from_str(text).map_err(|e| TaskError::Parse { line, message: e.to_string() })?;
    let map = value.as_object().ok_or_else(|| schema(line, "<record>"))?;
    check_keys(map, &["id", "goal", "context", "steps", "budget_steps"], &["id", "goal", "context", "steps"], line, "")?;

    let string = |v: &Value, field: &str| v.as_str().map(str::to_string).ok_or_else(|| schema(line, field));
    let id = string(&map["id"], "id")?;
    if id.is_empty() {
        return Err(schema(line, "id"));
    }
    let goal = string(&map["goal"], "goal")?;
    let context = map["context"]
        .as_array()
        .ok_or_else(|| schema(line, "context"))?
        .iter()
        .enumerate()
        .map(|(i, v)| string(v, &format!("context[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;

    let raw_steps = map["steps"].as_array().filter(|s| !s.is_empty()).ok_or_else(|| schema(line, "steps"))?;
    let mut steps = Vec::with_capacity(raw_steps.len());
    for (i, raw) in raw_steps.iter().enumerate() {
        let prefix = format!("steps[{i}].");
        let step = raw.as_object().ok_or_else(|| schema(line, format!("steps[{i}]")))?;
        check_keys(step, &["tool", "args", "expected"], &["tool", "args", "expected"], line, &prefix)?;
        let tool = string(&step["tool"], &format!("{prefix}tool"))?;
        let raw_args = step["args"].as_object().ok_or_else(|| schema(line, format!("{prefix}args")))?;
        let mut args = Args::new();
        for (slot, v) in raw_args {
            let field = format!("{prefix}args.{slot}");
            let arg = match v {
                Value::String(s) if context.contains(s) => ArgValue::Ref(s.clone()),
                Value::Number(n) => ArgValue::Scalar(n.as_f64().ok_or_else(|| schema(line, field.clone()))?),
                _ => return Err(schema(line, field)),
            };
            args.insert(slot.clone(), arg);
        }
        let expected = string(&step["expected"], &format!("{prefix}expected"))?;
        if Predicate::parse(&expected).is_none() {
            return Err(schema(line, format!("{prefix}expected")));
        }
        steps.push(TaskStep { tool, args, expected });
    }

    let budget_steps = match map.get("budget_steps") {
        None => DEFAULT_BUDGET_STEPS,
        Some(v) => v
            .as_u64()
            .and_then(|b| u32::try_from(b).ok())
            .filter(|&b| b >= 1 && b as usize >= steps.len())
            .ok_or_else(|| schema(line, "budget_steps"))?,
    };
    if steps.len() > budget_steps as usize {
        return Err(schema(line, "budget_steps"));
    }
    Ok(TaskRecord { id, goal, context, steps, budget_steps })
}

/// Parses JSONL text; blank lines are skipped but still counted.
pub fn parse_tasks(text: &str) -> Result<Vec<TaskRecord>, TaskError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_task_line(l, i + 1))
        .collect()
}

pub fn load_tasks(path: &Path) -> Result<Vec<TaskRecord>, TaskError> {
    parse_tasks(&fs::read_to_string(path)?)
}

pub fn to_jsonl(tasks: &[TaskRecord]) -> String {
    tasks.iter().map(|t| t.to_json_line() + "\n").collect()
}

fn step(tool: &str, slot: &str, arg: &str, expected: Predicate) -> TaskStep {
    let mut args = Args::new();
    args.insert(slot.to_string(), ArgValue::Ref(arg.to_string()));
    TaskStep { tool: tool.to_string(), args, expected: expected.to_string() }
}

/// Generates `n` navigate/pick/navigate/place tasks of one to three chains.
pub fn gen_tasks(seed: u64, n: usize) -> Vec<TaskRecord> {
    (0..n)
        .map(|i| {
            let mut rng = SplitMix64::new(derive_seed(seed, &format!("task.{i}")));
            let mut objects = OBJECTS.to_vec();
            rng.shuffle(&mut objects);
            let chains = 1 + rng.below(3) as usize;
            let mut steps = Vec::new();
            let mut goals = Vec::new();
            let mut locations: Vec<&str> = Vec::new();
            for &object in &objects[..chains] {
                let src = LOCATIONS[rng.below(LOCATIONS.len() as u64) as usize];
                let mut dst = src;
                while dst == src {
                    dst = LOCATIONS[rng.below(LOCATIONS.len() as u64) as usize];
                }
                for l in [src, dst] {
                    if !locations.contains(&l) {
                        locations.push(l);
                    }
                }
                steps.push(step("navigate", "target", src, Predicate::RobotAt(src.into())));
                steps.push(step("pick", "object", object, Predicate::Holding(object.into())));
                steps.push(step("navigate", "target", dst, Predicate::RobotAt(dst.into())));
                steps.push(step("place", "object", object, Predicate::ObjectAt(object.into(), dst.into())));
                goals.push(format!("move the {object} from the {src} to the {dst}"));
            }
            // One extra object rides along as a distractor.
            let context = objects[..=chains].iter().chain(&locations).map(|s| s.to_string()).collect();
            TaskRecord {
                id: format!("synth-{seed}-{i}"),
                goal: goals.join(", then "),
                context,
                steps,
                budget_steps: DEFAULT_BUDGET_STEPS,
            }
        })
        .collect()
}
