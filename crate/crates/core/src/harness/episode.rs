//! The closed control loop of one episode.
//!
//! Each decision step featurizes the goal and world, runs branch rounds
//! until the policy gate dispatches, turns the merged result into one tool
//! call, sends it as an envelope through an in-process transport, and lets
//! the simulated world answer.

use serde::{Deserialize, Serialize};

use super::featurize::{candidate_embeddings, featurize};
use super::tasks::TaskRecord;
use super::world::{SimEnv, WorldState};
use crate::affect::{affect_decode, modulate_epsilon};
use crate::consensus::{decide, BranchHook, BranchSpec, ConsensusResult};
use crate::ctm::BranchState;
use crate::model::{ConfigError, Model};
use crate::perception::{encode_modality, fuse};
use crate::router::{
    dispatch, policy_gate, select_action, sync_digest, Args, EnvelopeMeta, GateDecision, Loopback, Session,
    ToolServer, ToolStatus,
};
use crate::tensor::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Ctm,
    #[serde(rename = "oracle")]
    ScriptedOracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    BudgetExhausted,
    Error,
}

/// One decision step, with logical tick counts only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    pub step: u32,
    /// Slabs run by the dispatching lineage within this step.
    pub slab_count: u32,
    /// Ticks run by the dispatching lineage within this step.
    pub ticks: u32,
    pub c_merged: f64,
    /// Threshold in force when the step dispatched.
    pub epsilon: f64,
    pub action: String,
    pub args: Args,
    pub tool_status: ToolStatus,
    pub fallback: bool,
    /// Gate decisions that sent the step back for more slabs.
    pub rethinks: u32,
    /// Dispatched below `gamma` because the slab budget ran out.
    pub forced_dispatch: bool,
    pub envelope_id: u64,
    pub branch_failures: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub task_id: String,
    pub budget_steps: u32,
    pub steps: Vec<StepRecord>,
    pub outcome: Outcome,
    pub steps_used: u32,
    pub error: Option<String>,
}

impl EpisodeLog {
    pub fn tool_calls(&self) -> usize {
        self.steps.len()
    }

    pub fn ok_calls(&self) -> usize {
        self.steps.iter().filter(|s| s.tool_status == ToolStatus::Ok).count()
    }
}

/// Knobs that are not part of the model.
#[derive(Clone)]
pub struct EpisodeOptions {
    pub policy: Policy,
    pub run_seed: u64,
    /// Injected into every branch worker; test use only.
    pub hook: Option<BranchHook>,
}

impl EpisodeOptions {
    pub fn new(policy: Policy, run_seed: u64) -> Self {
        Self { policy, run_seed, hook: None }
    }
}

/// What one decision step produced before it touched the world.
struct Thought {
    result: ConsensusResult,
    epsilon: f64,
    affect: Vec<f32>,
    slab_count: u32,
    ticks: u32,
    rethinks: u32,
    forced: bool,
    failures: u32,
    next_seed: BranchState,
}

fn think(
    model: &Model,
    seed_state: &BranchState,
    f: &crate::perception::FusionVector,
    spec: &mut BranchSpec,
    cache: Option<&ConsensusResult>,
) -> Result<Thought, String> {
    let cfg = &model.config;
    let max_slabs = cfg.ctm.max_slabs;
    let mut seed = seed_state.clone();
    let mut rethinks = 0;
    let mut failures = 0;
    loop {
        let epsilon = spec.epsilon;
        let decision = decide(&seed, f, &model.ctm, &cfg.consensus, spec, cache).map_err(|e| e.to_string())?;
        failures += decision.failures.len() as u32;
        let result = decision.result;
        let affect = affect_decode(&result.sync_merged, &model.affect).map_err(|e| e.to_string())?;
        spec.epsilon = modulate_epsilon(&affect, &model.affect);

        let Some(mut lineage) = decision.lineage else {
            // Nothing converged: the safe pass goes straight to the router.
            let slab_count = decision.outcomes.iter().map(|o| o.slabs_used).max().unwrap_or(seed.slab);
            let ticks = decision.outcomes.iter().map(|o| o.ticks_used).max().unwrap_or(seed.tick);
            let next_seed = decision
                .outcomes
                .iter()
                .find(|o| o.branch_id == 0)
                .map(|o| o.state.carried())
                .unwrap_or_else(|| seed.carried());
            return Ok(Thought {
                result,
                epsilon,
                affect: affect.0,
                slab_count,
                ticks,
                rethinks,
                forced: false,
                failures,
                next_seed,
            });
        };
        match policy_gate(result.confidence_merged, model.router.gamma, lineage.slab, max_slabs) {
            GateDecision::Dispatch => {
                return Ok(Thought {
                    forced: result.confidence_merged < model.router.gamma,
                    slab_count: lineage.slab,
                    ticks: lineage.tick,
                    next_seed: lineage.carried(),
                    result,
                    epsilon,
                    affect: affect.0,
                    rethinks,
                    failures,
                });
            }
            GateDecision::Rethink => {
                rethinks += 1;
                lineage.sync = result.sync_merged;
                seed = lineage;
            }
        }
    }
}

/// Runs one task to success, budget exhaustion or a logged error.
pub fn run_episode(task: &TaskRecord, model: &Model, options: &EpisodeOptions) -> Result<EpisodeLog, ConfigError> {
    model.config.validate()?;
    let cfg = &model.config;
    let mut log = EpisodeLog {
        task_id: task.id.clone(),
        budget_steps: task.budget_steps,
        steps: Vec::new(),
        outcome: Outcome::BudgetExhausted,
        steps_used: 0,
        error: None,
    };
    let env = SimEnv {
        world: WorldState::from_task(task, model.actuator.joints()),
        sync: vec![0.0; cfg.ctm.sync_pairs],
        actuator: model.actuator.clone(),
    };
    let mut transport = Loopback::new(ToolServer::new(model.registry.clone(), env));
    let mut session = Session::new();
    let mut spec = BranchSpec {
        episode_seed: derive_seed(options.run_seed, &format!("episode.{}", task.id)),
        epsilon: cfg.affect.epsilon0,
        hook: options.hook.clone(),
    };
    let candidates = candidate_embeddings(&task.context);
    let mut seed_state = BranchState::new(&cfg.ctm);
    let mut cache: Option<ConsensusResult> = None;

    let fail = |mut log: EpisodeLog, message: String| {
        log::warn!("episode {} aborted: {message}", log.task_id);
        log.outcome = Outcome::Error;
        log.error = Some(message);
        log
    };

    for step in 0..task.budget_steps {
        let world = &transport.server().handler().world;
        let frames = match featurize(task, world, step, &cfg.perception) {
            Ok(f) => f,
            Err(e) => return Ok(fail(log, e.to_string())),
        };
        let latents: Result<Vec<_>, _> = frames.iter().map(|fr| encode_modality(fr, &model.encoders)).collect();
        let f = match latents.and_then(|l| fuse(&l[0], &l[1], &l[2], &model.encoders)) {
            Ok(f) => f,
            Err(e) => return Ok(fail(log, e.to_string())),
        };
        let thought = match think(model, &seed_state, &f, &mut spec, cache.as_ref()) {
            Ok(t) => t,
            Err(e) => return Ok(fail(log, e)),
        };
        seed_state = thought.next_seed;

        let (tool, args) = match options.policy {
            Policy::Ctm => match select_action(&thought.result, &model.router, &model.registry, &candidates) {
                Ok(a) => (a.tool, a.args),
                Err(e) => return Ok(fail(log, e.to_string())),
            },
            Policy::ScriptedOracle => match task.steps.get(step as usize) {
                Some(s) => (s.tool.clone(), s.args.clone()),
                None => return Ok(fail(log, format!("script has no step {step}"))),
            },
        };
        let meta = EnvelopeMeta {
            episode: task.id.clone(),
            step,
            slab_count: thought.slab_count,
            ticks: thought.ticks,
            confidence: thought.result.confidence_merged,
            affect: thought.affect,
            sync_digest: sync_digest(&thought.result.sync_merged),
            fallback: thought.result.fallback,
        };
        let envelope = session.envelope(&tool, args, meta);
        transport.server_mut().handler_mut().sync = thought.result.sync_merged.clone();
        let reply = dispatch(&envelope, &mut transport);
        log.steps_used = step + 1;
        let tool_status = match &reply {
            Ok(r) => r.status,
            Err(_) => ToolStatus::Error,
        };
        log.steps.push(StepRecord {
            step,
            slab_count: thought.slab_count,
            ticks: thought.ticks,
            c_merged: thought.result.confidence_merged,
            epsilon: thought.epsilon,
            action: envelope.tool,
            args: envelope.args,
            tool_status,
            fallback: thought.result.fallback,
            rethinks: thought.rethinks,
            forced_dispatch: thought.forced,
            envelope_id: envelope.id,
            branch_failures: thought.failures,
        });
        if let Err(e) = reply {
            return Ok(fail(log, e.to_string()));
        }
        if !thought.result.fallback {
            cache = Some(thought.result);
        }
        if transport.server().handler().world.goal_holds() {
            log.outcome = Outcome::Success;
            return Ok(log);
        }
    }
    Ok(log)
}
