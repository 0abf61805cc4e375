//! Symbolic world and the simulated tools.
//!
//! The initial world is derived from the task script: the robot starts at
//! [`START_LOCATION`], every object first picked in the script starts where
//! the robot stands at that point of the script, and any other context
//! object starts at [`START_LOCATION`]. Navigate targets are locations, not
//! objects.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::json;
use thiserror::Error;

use super::tasks::{Predicate, TaskRecord};
use crate::actuator::{compliance_filter, interpolate_trajectory, plan_torque, torque_to_pwm, ActuatorParams};
use crate::router::{ArgValue, Args, EnvelopeMeta, ToolHandler, ToolResult};

pub const START_LOCATION: &str = "base";

/// Joint displacement (rad) commanded at the torque limit.
const RAD_PER_FULL_TORQUE: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("unknown tool {0:?}")]
    UnknownTool(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectState {
    pub location: String,
    pub held: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub objects: BTreeMap<String, ObjectState>,
    pub robot_at: String,
    pub goal: Predicate,
    /// Current joint displacement, updated by `actuate`.
    pub joints: Vec<f64>,
}

fn ref_arg<'a>(args: &'a Args, slot: &str) -> Option<&'a str> {
    match args.get(slot) {
        Some(ArgValue::Ref(s)) => Some(s),
        _ => None,
    }
}

impl WorldState {
    pub fn from_task(task: &TaskRecord, joints: usize) -> Self {
        let locations: BTreeSet<&str> = task
            .steps
            .iter()
            .filter(|s| s.tool == "navigate")
            .filter_map(|s| ref_arg(&s.args, "target"))
            .collect();
        let mut objects = BTreeMap::new();
        let mut robot = START_LOCATION.to_string();
        for step in &task.steps {
            match step.tool.as_str() {
                "navigate" => {
                    if let Some(t) = ref_arg(&step.args, "target") {
                        robot = t.to_string();
                    }
                }
                "pick" => {
                    if let Some(o) = ref_arg(&step.args, "object") {
                        objects
                            .entry(o.to_string())
                            .or_insert_with(|| ObjectState { location: robot.clone(), held: false });
                    }
                }
                _ => {}
            }
        }
        for name in &task.context {
            if !locations.contains(name.as_str()) {
                objects
                    .entry(name.clone())
                    .or_insert_with(|| ObjectState { location: START_LOCATION.to_string(), held: false });
            }
        }
        Self { objects, robot_at: START_LOCATION.to_string(), goal: task.goal_predicate(), joints: vec![0.0; joints] }
    }

    pub fn held(&self) -> Option<&str> {
        self.objects.iter().find(|(_, o)| o.held).map(|(n, _)| n.as_str())
    }

    pub fn holds(&self, p: &Predicate) -> bool {
        match p {
            Predicate::Ok => true,
            Predicate::RobotAt(l) => &self.robot_at == l,
            Predicate::Holding(o) => self.objects.get(o).is_some_and(|s| s.held),
            Predicate::ObjectAt(o, l) => self.objects.get(o).is_some_and(|s| !s.held && &s.location == l),
        }
    }

    pub fn goal_holds(&self) -> bool {
        self.holds(&self.goal)
    }
}

/// Applies one tool call. Failed calls leave the state untouched.
pub fn step_env(
    state: &WorldState,
    tool: &str,
    args: &Args,
    sync: &[f32],
    actuator: &ActuatorParams,
) -> Result<(WorldState, ToolResult), WorldError> {
    let mut next = state.clone();
    let result = match tool {
        "noop" => ToolResult::ok(json!(null)),
        "navigate" => match ref_arg(args, "target") {
            Some(target) => {
                next.robot_at = target.to_string();
                ToolResult::ok(json!({ "robot_at": target }))
            }
            None => ToolResult::error("navigate needs a target"),
        },
        "pick" => {
            let Some(name) = ref_arg(args, "object") else {
                return Ok((next, ToolResult::error("pick needs an object")));
            };
            match state.objects.get(name) {
                None => ToolResult::error(format!("no object {name}")),
                Some(_) if state.held().is_some() => ToolResult::error("hand is not empty"),
                Some(o) if o.location != state.robot_at => ToolResult::error(format!("{name} is not here")),
                Some(_) => {
                    next.objects.get_mut(name).expect("checked above").held = true;
                    ToolResult::ok(json!({ "holding": name }))
                }
            }
        }
        "place" => {
            let Some(name) = ref_arg(args, "object") else {
                return Ok((next, ToolResult::error("place needs an object")));
            };
            match state.objects.get(name) {
                Some(o) if o.held => {
                    let o = next.objects.get_mut(name).expect("checked above");
                    o.held = false;
                    o.location = state.robot_at.clone();
                    ToolResult::ok(json!({ "placed": name, "at": state.robot_at }))
                }
                _ => ToolResult::error(format!("{name} is not held")),
            }
        }
        "actuate" => actuate(&mut next, args, sync, actuator),
        other => return Err(WorldError::UnknownTool(other.to_string())),
    };
    if !result.is_ok() {
        return Ok((state.clone(), result));
    }
    Ok((next, result))
}

fn actuate(world: &mut WorldState, args: &Args, sync: &[f32], actuator: &ActuatorParams) -> ToolResult {
    let gain = match args.get("gain") {
        Some(ArgValue::Scalar(g)) if g.is_finite() => g.abs().max(f64::MIN_POSITIVE),
        None => 1.0,
        _ => return ToolResult::error("gain must be a finite real"),
    };
    let tau = match plan_torque(sync, actuator) {
        Ok(t) => t,
        Err(e) => return ToolResult::error(e.to_string()),
    };
    let feasible = tau
        .iter()
        .enumerate()
        .all(|(i, &t)| t.is_finite() && actuator.tau_min[i] <= t && t <= actuator.tau_max[i]);
    if !feasible || world.joints.len() != tau.len() {
        return ToolResult::error("infeasible torque plan");
    }
    let target: Vec<f64> =
        tau.iter().zip(&actuator.tau_max).map(|(t, max)| RAD_PER_FULL_TORQUE * t / max).collect();
    let trajectory = match interpolate_trajectory(&world.joints, &target, actuator.samples_per_move) {
        Ok(t) => compliance_filter(&t, actuator.filter_window),
        Err(e) => return ToolResult::error(e.to_string()),
    };
    let mut scaled = actuator.clone();
    scaled.gain.iter_mut().for_each(|g| *g *= gain);
    let duty = match torque_to_pwm(&tau, &scaled) {
        Ok(d) => d,
        Err(e) => return ToolResult::error(e.to_string()),
    };
    world.joints = trajectory.last().map(|s| s.q.clone()).unwrap_or(target);
    ToolResult::ok(json!({ "torque": tau, "duty": duty }))
}

/// Tool handler backed by the simulated world.
pub struct SimEnv {
    pub world: WorldState,
    /// Merged sync vector of the decision being executed.
    pub sync: Vec<f32>,
    pub actuator: ActuatorParams,
}

impl ToolHandler for SimEnv {
    fn call(&mut self, tool: &str, args: &Args, _meta: &EnvelopeMeta) -> ToolResult {
        match step_env(&self.world, tool, args, &self.sync, &self.actuator) {
            Ok((world, result)) => {
                self.world = world;
                result
            }
            Err(e) => ToolResult::error(e.to_string()),
        }
    }
}
