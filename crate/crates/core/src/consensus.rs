//! Parallel reasoning branches and their confidence-weighted merge.
//!
//! Each decision step clones the seed state into `k` branches that run on
//! their own threads. A single collector consumes completions. In
//! deterministic mode the collector waits for every branch and picks the
//! winner by logical tick count, so results never depend on scheduling. In
//! live mode a wall-clock timer races the collector and a once-only latch
//! lets exactly one of them publish a result.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ctm::{certainty, certainty_from_logits, run_branch, BranchState, CtmError, CtmParams, SlabContext};
use crate::perception::FusionVector;
use crate::tensor::Matrix;

/// Merge weights below this are treated as zero.
pub const MIN_TOTAL_CONFIDENCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum ConsensusError {
    #[error("no branch outcomes to merge")]
    EmptyOutcomeList,
    #[error("branch {branch_id} has {actual} sync entries, expected {expected}")]
    DimensionMismatch { branch_id: usize, expected: usize, actual: usize },
    #[error("at least one branch is required")]
    NoBranches,
    #[error("a decision deadline needs a tick limit or a wall-clock limit")]
    UnboundedDeadline,
    #[error(transparent)]
    Ctm(#[from] CtmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaitPolicy {
    Off,
    One,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsensusMode {
    Deterministic,
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConsensusConfig {
    pub branches: usize,
    pub wait_policy: WaitPolicy,
    /// Logical ticks a straggler may trail the first halting branch by and
    /// still join the merge. Defaults to four slabs.
    pub extra_wait_ticks: Option<u32>,
    pub mode: ConsensusMode,
    pub wall_clock_ms: u64,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        Self {
            branches: 4,
            wait_policy: WaitPolicy::One,
            extra_wait_ticks: None,
            mode: ConsensusMode::Deterministic,
            wall_clock_ms: 250,
        }
    }
}

impl ConsensusConfig {
    pub fn extra_wait(&self, ticks_per_slab: usize) -> u32 {
        self.extra_wait_ticks.unwrap_or(4 * ticks_per_slab as u32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchOutcome {
    pub branch_id: usize,
    pub sync: Vec<f32>,
    pub logits: Vec<f32>,
    pub confidence: f64,
    pub ticks_used: u32,
    pub slabs_used: u32,
    pub reached_threshold: bool,
    /// Final state, kept so the decision step can continue thinking from it.
    pub state: BranchState,
}

impl BranchOutcome {
    /// The stored confidence agrees with the one implied by the logits.
    pub fn is_consistent(&self) -> bool {
        (certainty_from_logits(&self.logits) - self.confidence).abs() <= 1e-7
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusResult {
    pub sync_merged: Vec<f32>,
    pub confidence_merged: f64,
    /// Sorted branch ids.
    pub contributors: Vec<usize>,
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecisionDeadline {
    pub logical_tick_limit: Option<u32>,
    pub wall_clock_ms: Option<u64>,
}

impl DecisionDeadline {
    pub fn new(logical_tick_limit: Option<u32>, wall_clock_ms: Option<u64>) -> Result<Self, ConsensusError> {
        if logical_tick_limit.is_none() && wall_clock_ms.is_none() {
            return Err(ConsensusError::UnboundedDeadline);
        }
        Ok(Self { logical_tick_limit, wall_clock_ms })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BranchFailure {
    pub branch_id: usize,
    pub message: String,
}

/// Test hook run inside each worker before it computes. An `Err` (or a
/// panic) removes the branch from the step.
pub type BranchHook = Arc<dyn Fn(usize) -> Result<(), String> + Send + Sync>;

#[derive(Debug)]
pub enum Completion {
    Done(Box<BranchOutcome>),
    Failed(BranchFailure),
}

/// What a branch needs beyond the shared parameters.
#[derive(Clone)]
pub struct BranchSpec {
    pub episode_seed: u64,
    pub epsilon: f64,
    pub hook: Option<BranchHook>,
}

impl BranchSpec {
    pub fn new(episode_seed: u64, epsilon: f64) -> Self {
        Self { episode_seed, epsilon, hook: None }
    }
}

/// Runs one branch inline.
pub fn run_single_branch(
    branch_id: usize,
    seed_state: &BranchState,
    f: &FusionVector,
    params: &CtmParams,
    spec: &BranchSpec,
) -> Result<BranchOutcome, CtmError> {
    let ctx = SlabContext::for_branch(params, spec.epsilon, spec.episode_seed, branch_id);
    let (state, slab) = run_branch(seed_state.clone(), f, params, &ctx)?;
    Ok(BranchOutcome {
        branch_id,
        sync: slab.sync,
        logits: slab.logits,
        confidence: slab.certainty,
        ticks_used: state.tick,
        slabs_used: state.slab,
        reached_threshold: slab.reached_threshold,
        state,
    })
}

fn branch_worker(
    branch_id: usize,
    seed_state: &BranchState,
    f: &FusionVector,
    params: &CtmParams,
    spec: &BranchSpec,
) -> Completion {
    let run = catch_unwind(AssertUnwindSafe(|| {
        if let Some(hook) = &spec.hook {
            hook(branch_id)?;
        }
        run_single_branch(branch_id, seed_state, f, params, spec).map_err(|e| e.to_string())
    }));
    match run {
        Ok(Ok(outcome)) => Completion::Done(Box::new(outcome)),
        Ok(Err(message)) => Completion::Failed(BranchFailure { branch_id, message }),
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "branch panicked".into());
            Completion::Failed(BranchFailure { branch_id, message })
        }
    }
}

/// Outcomes in completion order plus the branches that failed.
#[derive(Debug, Default)]
pub struct SpawnReport {
    pub completed: Vec<BranchOutcome>,
    pub failures: Vec<BranchFailure>,
}

fn launch<'scope, 'env>(
    scope: &'scope thread::Scope<'scope, 'env>,
    seed_state: &'env BranchState,
    f: &'env FusionVector,
    k: usize,
    params: &'env CtmParams,
    spec: &'env BranchSpec,
    tx: Sender<Completion>,
) {
    for branch_id in 0..k {
        let tx = tx.clone();
        scope.spawn(move || {
            // The collector may have stopped listening; that is fine.
            let _ = tx.send(branch_worker(branch_id, seed_state, f, params, spec));
        });
    }
}

fn record(report: &mut SpawnReport, completion: Completion) {
    match completion {
        Completion::Done(outcome) => report.completed.push(*outcome),
        Completion::Failed(failure) => {
            log::warn!("branch {} excluded: {}", failure.branch_id, failure.message);
            report.failures.push(failure);
        }
    }
}

/// Runs `k` clones of `seed_state` concurrently until each halts.
pub fn spawn_branches(
    seed_state: &BranchState,
    f: &FusionVector,
    k: usize,
    params: &CtmParams,
    spec: &BranchSpec,
) -> Result<SpawnReport, ConsensusError> {
    if k == 0 {
        return Err(ConsensusError::NoBranches);
    }
    let (tx, rx) = mpsc::channel();
    let mut report = SpawnReport::default();
    thread::scope(|scope| {
        launch(scope, seed_state, f, k, params, spec, tx);
        for completion in rx.iter() {
            record(&mut report, completion);
        }
    });
    Ok(report)
}

/// `S_merged = sum c_i s_i / sum c_i` over outcomes in branch-id order; the
/// unweighted mean when every confidence is negligible.
pub fn merge(outcomes: &[BranchOutcome], w_c: &Matrix, logit_scale: f64) -> Result<ConsensusResult, ConsensusError> {
    let mut sorted: Vec<&BranchOutcome> = outcomes.iter().collect();
    sorted.sort_by_key(|o| o.branch_id);
    let first = sorted.first().ok_or(ConsensusError::EmptyOutcomeList)?;
    let p = first.sync.len();
    if let Some(bad) = sorted.iter().find(|o| o.sync.len() != p) {
        return Err(ConsensusError::DimensionMismatch { branch_id: bad.branch_id, expected: p, actual: bad.sync.len() });
    }
    let total: f64 = sorted.iter().map(|o| o.confidence).sum();
    let weights: Vec<f64> = if total < MIN_TOTAL_CONFIDENCE {
        vec![1.0; sorted.len()]
    } else {
        sorted.iter().map(|o| o.confidence).collect()
    };
    let norm: f64 = weights.iter().sum();
    let sync_merged: Vec<f32> = (0..p)
        .map(|k| {
            let acc: f64 = sorted.iter().zip(&weights).map(|(o, w)| w * f64::from(o.sync[k])).sum();
            (acc / norm) as f32
        })
        .collect();
    let (_, confidence_merged) = certainty(&sync_merged, w_c, logit_scale)?;
    Ok(ConsensusResult {
        sync_merged,
        confidence_merged,
        contributors: sorted.iter().map(|o| o.branch_id).collect(),
        fallback: false,
    })
}

/// Deterministic extra-slab wait: with policy `One`, the earliest other
/// completion (by logical ticks, then id) that trails `first` by at most
/// `window_ticks` joins the merge set.
pub fn wait_extra_slab(
    first: &BranchOutcome,
    pending: &[BranchOutcome],
    policy: WaitPolicy,
    window_ticks: u32,
) -> Vec<BranchOutcome> {
    let mut set = vec![first.clone()];
    if policy == WaitPolicy::One {
        let limit = first.ticks_used.saturating_add(window_ticks);
        if let Some(next) = pending
            .iter()
            .filter(|o| o.branch_id != first.branch_id && o.ticks_used <= limit)
            .min_by_key(|o| (o.ticks_used, o.branch_id))
        {
            set.push(next.clone());
        }
    }
    set
}

/// The result emitted when no branch converged in time: the cached
/// consensus if there is one, otherwise a zero vector the router maps to
/// the no-op tool.
pub fn timeout_safe_pass(cache: Option<&ConsensusResult>, sync_pairs: usize) -> ConsensusResult {
    match cache {
        Some(cached) => ConsensusResult { fallback: true, ..cached.clone() },
        None => ConsensusResult {
            sync_merged: vec![0.0; sync_pairs],
            confidence_merged: 0.0,
            contributors: Vec::new(),
            fallback: true,
        },
    }
}

/// One branch round of a decision step.
#[derive(Debug)]
pub struct Decision {
    pub result: ConsensusResult,
    /// Every completed outcome, sorted by branch id.
    pub outcomes: Vec<BranchOutcome>,
    pub failures: Vec<BranchFailure>,
    /// State of the lowest-id contributor, when there is one.
    pub lineage: Option<BranchState>,
}

impl Decision {
    pub fn max_slabs(&self) -> u32 {
        self.outcomes.iter().map(|o| o.slabs_used).max().unwrap_or(0)
    }

    pub fn max_ticks(&self) -> u32 {
        self.outcomes.iter().map(|o| o.ticks_used).max().unwrap_or(0)
    }
}

/// Picks the merge set from a finished round, by logical ticks only.
pub fn select_merge_set(
    outcomes: &[BranchOutcome],
    deadline: &DecisionDeadline,
    policy: WaitPolicy,
    window_ticks: u32,
) -> Option<Vec<BranchOutcome>> {
    let limit = deadline.logical_tick_limit.unwrap_or(u32::MAX);
    let first = outcomes
        .iter()
        .filter(|o| o.reached_threshold && o.ticks_used <= limit)
        .min_by_key(|o| (o.ticks_used, o.branch_id))?;
    Some(wait_extra_slab(first, outcomes, policy, window_ticks))
}

fn finish(
    result: ConsensusResult,
    mut outcomes: Vec<BranchOutcome>,
    failures: Vec<BranchFailure>,
) -> Decision {
    outcomes.sort_by_key(|o| o.branch_id);
    // A safe pass may carry a cached result whose contributor ids refer to
    // an earlier round, so it never has a lineage.
    let lineage = (!result.fallback)
        .then(|| result.contributors.first())
        .flatten()
        .and_then(|id| outcomes.iter().find(|o| o.branch_id == *id))
        .map(|o| o.state.clone());
    Decision { result, outcomes, failures, lineage }
}

/// Runs one branch round and reduces it to exactly one consensus result.
pub fn decide(
    seed_state: &BranchState,
    f: &FusionVector,
    params: &CtmParams,
    cfg: &ConsensusConfig,
    spec: &BranchSpec,
    cache: Option<&ConsensusResult>,
) -> Result<Decision, ConsensusError> {
    let p = params.config.sync_pairs;
    let window = cfg.extra_wait(params.config.ticks_per_slab);
    match cfg.mode {
        ConsensusMode::Deterministic => {
            let report = spawn_branches(seed_state, f, cfg.branches, params, spec)?;
            let deadline = DecisionDeadline::new(Some(params.config.tick_budget()), None)?;
            let result = match select_merge_set(&report.completed, &deadline, cfg.wait_policy, window) {
                Some(set) => merge(&set, &params.weights.certainty, params.config.logit_scale)?,
                None => timeout_safe_pass(cache, p),
            };
            Ok(finish(result, report.completed, report.failures))
        }
        ConsensusMode::Live => {
            if cfg.branches == 0 {
                return Err(ConsensusError::NoBranches);
            }
            let deadline = Duration::from_millis(cfg.wall_clock_ms);
            let w_c = &params.weights.certainty;
            let scale = params.config.logit_scale;
            let (tx, rx) = mpsc::channel();
            let live = thread::scope(|scope| {
                launch(scope, seed_state, f, cfg.branches, params, spec, tx);
                collect_live(rx, cfg.branches, deadline, cfg.wait_policy, cache, p, |set| merge(set, w_c, scale))
            })?;
            Ok(finish(live.result, live.received, live.failures))
        }
    }
}

/// Which path published the step's result.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Winner {
    Normal,
    Timeout,
}

/// Once-only publication slot shared by the collector and the timer.
#[derive(Debug, Default)]
pub struct DecisionLatch {
    claimed: AtomicBool,
}

impl DecisionLatch {
    /// True for exactly one caller over the latch's lifetime.
    pub fn try_claim(&self) -> bool {
        self.claimed.compare_exchange(false, true, Ordering::AcqRel, Ordering::Acquire).is_ok()
    }

    pub fn is_claimed(&self) -> bool {
        self.claimed.load(Ordering::Acquire)
    }
}

#[derive(Debug)]
pub struct LiveReport {
    pub result: ConsensusResult,
    pub winner: Winner,
    /// Results that reached the output channel; always 1.
    pub emissions: usize,
    /// Completions consumed before the decision, in arrival order.
    pub received: Vec<BranchOutcome>,
    pub failures: Vec<BranchFailure>,
}

/// Live-mode collector. Consumes up to `expected` completions from `rx`
/// while a timer thread counts down `deadline`; whichever of the two claims
/// the latch first publishes the single result.
pub fn collect_live<M>(
    rx: Receiver<Completion>,
    expected: usize,
    deadline: Duration,
    policy: WaitPolicy,
    cache: Option<&ConsensusResult>,
    sync_pairs: usize,
    merge_fn: M,
) -> Result<LiveReport, ConsensusError>
where
    M: Fn(&[BranchOutcome]) -> Result<ConsensusResult, ConsensusError>,
{
    let start = Instant::now();
    let due = start + deadline;
    let latch = DecisionLatch::default();
    let (out_tx, out_rx) = mpsc::channel::<(Winner, ConsensusResult)>();
    let (cancel_tx, cancel_rx) = mpsc::channel::<()>();
    let fallback = timeout_safe_pass(cache, sync_pairs);

    let mut report = SpawnReport::default();
    let mut merge_error = None;
    thread::scope(|scope| {
        let timer_out = out_tx.clone();
        let timer_latch = &latch;
        let timer_fallback = fallback.clone();
        scope.spawn(move || {
            if let Err(RecvTimeoutError::Timeout) = cancel_rx.recv_timeout(deadline) {
                if timer_latch.try_claim() {
                    let _ = timer_out.send((Winner::Timeout, timer_fallback));
                }
            }
        });

        let recv_next = |report: &mut SpawnReport| -> Option<BranchOutcome> {
            loop {
                let left = due.checked_duration_since(Instant::now())?;
                match rx.recv_timeout(left) {
                    Ok(Completion::Done(o)) => return Some(*o),
                    Ok(failed) => record(report, failed),
                    Err(_) => return None,
                }
            }
        };

        let mut seen = 0usize;
        let mut first = None;
        while first.is_none() && seen < expected && !latch.is_claimed() {
            match recv_next(&mut report) {
                Some(o) => {
                    if o.reached_threshold {
                        first = Some(o.clone());
                    }
                    report.completed.push(o);
                }
                None => break,
            }
            seen = report.completed.len() + report.failures.len();
        }

        match first {
            // Claiming on arrival commits the step to the normal path; the
            // extra wait below is still bounded by the deadline.
            Some(first) if latch.try_claim() => {
                let mut set = vec![first];
                if policy == WaitPolicy::One && seen < expected {
                    if let Some(next) = recv_next(&mut report) {
                        report.completed.push(next.clone());
                        set.push(next);
                    }
                }
                let result = merge_fn(&set).unwrap_or_else(|e| {
                    merge_error = Some(e);
                    fallback.clone()
                });
                let _ = out_tx.send((Winner::Normal, result));
            }
            Some(_) => {}
            None => {
                // Either the deadline passed or every branch finished
                // without converging.
                if latch.try_claim() {
                    let _ = out_tx.send((Winner::Timeout, fallback.clone()));
                }
            }
        }
        drop(cancel_tx);
    });
    drop(out_tx);
    if let Some(e) = merge_error {
        return Err(e);
    }

    let emitted: Vec<(Winner, ConsensusResult)> = out_rx.iter().collect();
    let emissions = emitted.len();
    let (winner, result) = emitted.into_iter().next().unwrap_or((Winner::Timeout, fallback));
    Ok(LiveReport { result, winner, emissions, received: report.completed, failures: report.failures })
}
