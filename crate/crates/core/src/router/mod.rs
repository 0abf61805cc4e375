//! Tool decisions: the confidence gate, the linear action and slot heads,
//! canonical JSON-RPC envelopes and their transport.

mod envelope;
mod transport;

pub use envelope::{
    parse_envelope, serialize_envelope, sync_digest, ArgValue, Args, Envelope, EnvelopeError, EnvelopeMeta, Session,
    AFFECT_DIMS,
};
pub use transport::{
    dispatch, serve, serve_tcp, LineTransport, Loopback, ToolHandler, ToolResult, ToolServer, ToolStatus, Transport,
    TransportError,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consensus::ConsensusResult;
use crate::tensor::{dot, Matrix};

/// Width of the per-slot projections and of candidate embeddings.
pub const SLOT_WIDTH: usize = 16;

/// Name of the always-present no-op tool.
pub const NOOP: &str = "noop";

#[derive(Debug, Error, PartialEq)]
pub enum RouterError {
    #[error("registry must not be empty")]
    EmptyRegistry,
    #[error("duplicate tool name {0:?}")]
    DuplicateTool(String),
    #[error("registry lacks a zero-slot `noop` tool")]
    MissingNoop,
    #[error("no candidates to fill object slot {slot:?}")]
    NoCandidates { slot: String },
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch { context: &'static str, expected: usize, actual: usize },
    #[error("unknown tool {0:?}")]
    UnknownTool(String),
    #[error("response id {got} does not match request id {expected}")]
    IdMismatch { expected: u64, got: u64 },
    #[error(transparent)]
    Envelope(#[from] EnvelopeError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("remote error {code}: {message}")]
    Remote { code: i64, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    ObjectRef,
    Scalar,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgSlot {
    pub name: String,
    pub kind: SlotKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub arg_slots: Vec<ArgSlot>,
    pub description: String,
}

impl ToolSpec {
    pub fn new(name: &str, description: &str, slots: &[(&str, SlotKind)]) -> Self {
        Self {
            name: name.to_string(),
            arg_slots: slots.iter().map(|&(n, kind)| ArgSlot { name: n.to_string(), kind }).collect(),
            description: description.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolRegistry {
    tools: Vec<ToolSpec>,
}

impl ToolRegistry {
    pub fn new(tools: Vec<ToolSpec>) -> Result<Self, RouterError> {
        if tools.is_empty() {
            return Err(RouterError::EmptyRegistry);
        }
        for (i, t) in tools.iter().enumerate() {
            if tools[..i].iter().any(|u| u.name == t.name) {
                return Err(RouterError::DuplicateTool(t.name.clone()));
            }
        }
        if !tools.iter().any(|t| t.name == NOOP && t.arg_slots.is_empty()) {
            return Err(RouterError::MissingNoop);
        }
        Ok(Self { tools })
    }

    /// The simulated robot's tools; `noop` is index 0.
    pub fn standard() -> Self {
        use SlotKind::*;
        Self::new(vec![
            ToolSpec::new(NOOP, "Do nothing this step.", &[]),
            ToolSpec::new("navigate", "Move the robot to a location.", &[("target", ObjectRef)]),
            ToolSpec::new("pick", "Grasp an object at the robot's location.", &[("object", ObjectRef)]),
            ToolSpec::new("place", "Put the held object down at the robot's location.", &[("object", ObjectRef)]),
            ToolSpec::new("actuate", "Run the joint controller on the current sync vector.", &[("gain", Scalar)]),
        ])
        .expect("standard registry is well formed")
    }

    pub fn tools(&self) -> &[ToolSpec] {
        &self.tools
    }

    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.iter().find(|t| t.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tools.iter().position(|t| t.name == name)
    }

    pub fn max_slots(&self) -> usize {
        self.tools.iter().map(|t| t.arg_slots.len()).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RouterConfig {
    pub gamma: f64,
}

impl Default for RouterConfig {
    fn default() -> Self {
        Self { gamma: 0.70 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RouterParams {
    pub gamma: f64,
    /// `T x P`, one row per registered tool.
    pub action_head: Matrix,
    /// `(max_slots * SLOT_WIDTH) x P`.
    pub slot_head: Matrix,
}

impl RouterParams {
    pub fn seeded(cfg: &RouterConfig, registry: &ToolRegistry, sync_pairs: usize, seed: u64) -> Self {
        Self {
            gamma: cfg.gamma,
            action_head: Matrix::seeded(registry.len(), sync_pairs, seed, "router.action"),
            slot_head: Matrix::seeded(registry.max_slots().max(1) * SLOT_WIDTH, sync_pairs, seed, "router.slot"),
        }
    }

    pub fn zeros(cfg: &RouterConfig, registry: &ToolRegistry, sync_pairs: usize) -> Self {
        Self {
            gamma: cfg.gamma,
            action_head: Matrix::zeros(registry.len(), sync_pairs),
            slot_head: Matrix::zeros(registry.max_slots().max(1) * SLOT_WIDTH, sync_pairs),
        }
    }
}

/// An object the slot head can refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub name: String,
    pub embedding: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateDecision {
    Rethink,
    Dispatch,
}

/// Dispatch when confident enough or when the slab budget is spent.
pub fn policy_gate(c_merged: f64, gamma: f64, slabs_used: u32, max_slabs: u32) -> GateDecision {
    if c_merged >= gamma || slabs_used >= max_slabs {
        GateDecision::Dispatch
    } else {
        GateDecision::Rethink
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Action {
    pub tool_index: usize,
    pub tool: String,
    pub args: Args,
}

/// First index of the maximum; later equal scores never win.
fn argmax(scores: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.into_iter().enumerate() {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Picks the tool by the action head and fills its slots by the slot head.
/// Fallback results always map to `noop`.
pub fn select_action(
    result: &ConsensusResult,
    params: &RouterParams,
    registry: &ToolRegistry,
    candidates: &[Candidate],
) -> Result<Action, RouterError> {
    if registry.is_empty() {
        return Err(RouterError::EmptyRegistry);
    }
    if result.fallback {
        let tool_index = registry.index_of(NOOP).ok_or(RouterError::MissingNoop)?;
        return Ok(Action { tool_index, tool: NOOP.to_string(), args: Args::new() });
    }
    let s = &result.sync_merged;
    if params.action_head.rows() != registry.len() || params.action_head.cols() != s.len() {
        return Err(RouterError::DimensionMismatch {
            context: "action head",
            expected: registry.len() * s.len(),
            actual: params.action_head.rows() * params.action_head.cols(),
        });
    }
    let tool_index = argmax(params.action_head.matvec(s)).expect("registry is non-empty");
    let spec = &registry.tools()[tool_index];

    let mut args = Args::new();
    for (slot_index, slot) in spec.arg_slots.iter().enumerate() {
        let rows = slot_index * SLOT_WIDTH..(slot_index + 1) * SLOT_WIDTH;
        if rows.end > params.slot_head.rows() || params.slot_head.cols() != s.len() {
            return Err(RouterError::DimensionMismatch {
                context: "slot head",
                expected: rows.end,
                actual: params.slot_head.rows(),
            });
        }
        let projection: Vec<f64> = rows.map(|r| dot(params.slot_head.row(r), s)).collect();
        let value = match slot.kind {
            SlotKind::ObjectRef => {
                let best = argmax(candidates.iter().map(|c| {
                    c.embedding.iter().zip(&projection).map(|(&e, p)| f64::from(e) * p).sum::<f64>()
                }))
                .ok_or_else(|| RouterError::NoCandidates { slot: slot.name.clone() })?;
                ArgValue::Ref(candidates[best].name.clone())
            }
            SlotKind::Scalar => {
                let norm = projection.iter().map(|p| p * p).sum::<f64>().sqrt();
                ArgValue::Scalar(if norm > 0.0 { projection[0] / norm } else { 0.0 })
            }
        };
        args.insert(slot.name.clone(), value);
    }
    Ok(Action { tool_index, tool: spec.name.clone(), args })
}
