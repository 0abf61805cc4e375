//! The tick-slab thought engine.
//!
//! One tick projects the previous hidden state and the context vector through
//! the synapse, appends the candidate to the per-neuron depth history and reads
//! the history back through the low-rank readout. A slab is `L` ticks; after
//! each slab the synchrony accumulators absorb the slab's states, certainty is
//! read off the accumulators, and the halt controller decides whether the
//! branch keeps thinking.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perception::FusionVector;
use crate::tensor::{derive_seed, squash, Matrix, SplitMix64};

#[derive(Debug, Error, PartialEq)]
pub enum CtmError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch { context: &'static str, expected: usize, actual: usize },
    #[error("slab has no ticks")]
    EmptySlab,
    #[error("branch has no slab budget left ({slabs} of {max_slabs} used)")]
    BudgetExhausted { slabs: u32, max_slabs: u32 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<(), CtmError> {
    if expected == actual {
        Ok(())
    } else {
        Err(CtmError::DimensionMismatch { context, expected, actual })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CtmConfig {
    /// Neuron count `D`.
    pub neurons: usize,
    /// Depth-history length `M`.
    pub history: usize,
    /// Rank `r` of the readout factors.
    pub rank: usize,
    /// Number of synchrony pairs `P`.
    pub sync_pairs: usize,
    /// Ticks per slab `L`.
    pub ticks_per_slab: usize,
    pub max_slabs: u32,
    pub decay: f64,
    pub logit_scale: f64,
    /// Certainty logit count `C`.
    pub logits: usize,
    /// Gated-carry smoothing coefficient.
    pub beta: f64,
    /// Upper cap applied to the modulated halting threshold.
    pub halt_cap: f64,
    /// A certainty trace spanning less than this is a plateau.
    pub plateau_span: f64,
    pub plateau_window: usize,
}

impl Default for CtmConfig {
    fn default() -> Self {
        Self {
            neurons: 64,
            history: 8,
            rank: 4,
            sync_pairs: 256,
            ticks_per_slab: 8,
            max_slabs: 16,
            decay: 0.999,
            logit_scale: 8.0,
            logits: 4,
            beta: 0.9,
            halt_cap: 0.995,
            plateau_span: 1e-3,
            plateau_window: 3,
        }
    }
}

impl CtmConfig {
    pub fn validate(&self) -> Result<(), CtmError> {
        let bad = |m: &str| Err(CtmError::InvalidParams(m.to_string()));
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad("decay must lie in (0, 1]");
        }
        if self.logits < 2 {
            return bad("at least two certainty logits are required");
        }
        if self.neurons == 0 || self.history == 0 || self.rank == 0 || self.sync_pairs == 0 {
            return bad("neurons, history, rank and sync_pairs must be positive");
        }
        if self.sync_pairs > self.neurons * self.neurons {
            return bad("more synchrony pairs than ordered neuron pairs");
        }
        if self.ticks_per_slab == 0 {
            return bad("ticks_per_slab must be positive");
        }
        if self.max_slabs == 0 {
            return bad("max_slabs must be positive");
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad("beta must lie in [0, 1]");
        }
        if !(self.logit_scale.is_finite() && self.halt_cap.is_finite() && self.plateau_span.is_finite()) {
            return bad("non-finite scalar parameter");
        }
        Ok(())
    }

    /// Hard per-branch tick budget for one decision step.
    pub fn tick_budget(&self) -> u32 {
        self.ticks_per_slab as u32 * self.max_slabs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtmWeights {
    /// `D x (D + fusion_dim)`.
    pub synapse: Matrix,
    /// `M x r`.
    pub factor_a: Matrix,
    /// `D x r`.
    pub factor_b: Matrix,
    pub bias: Vec<f32>,
    /// `C x P`.
    pub certainty: Matrix,
    /// Neuron pairs `(p_k, q_k)`, distinct as ordered pairs.
    pub pairs: Vec<(usize, usize)>,
}

impl CtmWeights {
    pub fn seeded(cfg: &CtmConfig, fusion_dim: usize, seed: u64) -> Self {
        let d = cfg.neurons;
        let bias = Matrix::seeded(1, d, seed, "ctm.bias").data().to_vec();
        Self {
            synapse: Matrix::seeded(d, d + fusion_dim, seed, "ctm.synapse"),
            factor_a: Matrix::seeded(cfg.history, cfg.rank, seed, "ctm.factor_a"),
            factor_b: Matrix::seeded(d, cfg.rank, seed, "ctm.factor_b"),
            bias,
            certainty: Matrix::seeded(cfg.logits, cfg.sync_pairs, seed, "ctm.certainty"),
            pairs: sample_pairs(d, cfg.sync_pairs, seed),
        }
    }

    pub fn zeros(cfg: &CtmConfig, fusion_dim: usize, seed: u64) -> Self {
        let d = cfg.neurons;
        Self {
            synapse: Matrix::zeros(d, d + fusion_dim),
            factor_a: Matrix::zeros(cfg.history, cfg.rank),
            factor_b: Matrix::zeros(d, cfg.rank),
            bias: vec![0.0; d],
            certainty: Matrix::zeros(cfg.logits, cfg.sync_pairs),
            pairs: sample_pairs(d, cfg.sync_pairs, seed),
        }
    }

    pub fn validate(&self, cfg: &CtmConfig, fusion_dim: usize) -> Result<(), CtmError> {
        let d = cfg.neurons;
        let shape = |context, m: &Matrix, rows: usize, cols: usize| {
            check_len(context, rows * cols, m.rows() * m.cols())?;
            check_len(context, rows, m.rows())
        };
        shape("synapse", &self.synapse, d, d + fusion_dim)?;
        shape("factor_a", &self.factor_a, cfg.history, cfg.rank)?;
        shape("factor_b", &self.factor_b, d, cfg.rank)?;
        shape("certainty", &self.certainty, cfg.logits, cfg.sync_pairs)?;
        check_len("bias", d, self.bias.len())?;
        check_len("pairs", cfg.sync_pairs, self.pairs.len())?;
        if self.pairs.iter().any(|&(p, q)| p >= d || q >= d) {
            return Err(CtmError::InvalidParams("pair index out of range".into()));
        }
        let mut seen: Vec<_> = self.pairs.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.pairs.len() {
            return Err(CtmError::InvalidParams("synchrony pairs must be distinct".into()));
        }
        let finite = [&self.synapse, &self.factor_a, &self.factor_b, &self.certainty].iter().all(|m| m.is_finite())
            && self.bias.iter().all(|v| v.is_finite());
        if !finite {
            return Err(CtmError::InvalidParams("non-finite weight".into()));
        }
        Ok(())
    }
}

/// Draws `count` distinct ordered pairs (self-pairs allowed) from `d` neurons
/// by a partial Fisher-Yates pass over the `d*d` flattened pair indices.
pub fn sample_pairs(d: usize, count: usize, seed: u64) -> Vec<(usize, usize)> {
    let total = d * d;
    let mut rng = SplitMix64::new(derive_seed(seed, "ctm.pairs"));
    let mut idx: Vec<usize> = (0..total).collect();
    let count = count.min(total);
    for i in 0..count {
        let j = i + rng.below((total - i) as u64) as usize;
        idx.swap(i, j);
    }
    idx[..count].iter().map(|&k| (k / d, k % d)).collect()
}

/// Engine configuration together with its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct CtmParams {
    pub config: CtmConfig,
    pub weights: CtmWeights,
}

/// One branch's evolving thought state.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchState {
    pub z: Vec<f32>,
    /// `D x M`; column `M - 1` holds the newest entry.
    pub history: Matrix,
    pub sync: Vec<f32>,
    pub tick: u32,
    pub slab: u32,
    pub entropy_trace: VecDeque<f64>,
}

impl BranchState {
    pub fn new(cfg: &CtmConfig) -> Self {
        Self {
            z: vec![0.0; cfg.neurons],
            history: Matrix::zeros(cfg.neurons, cfg.history),
            sync: vec![0.0; cfg.sync_pairs],
            tick: 0,
            slab: 0,
            entropy_trace: VecDeque::new(),
        }
    }

    /// Keeps the hidden state and history, clears everything tied to a
    /// single decision step.
    pub fn carried(&self) -> Self {
        Self {
            z: self.z.clone(),
            history: self.history.clone(),
            sync: vec![0.0; self.sync.len()],
            tick: 0,
            slab: 0,
            entropy_trace: VecDeque::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlabResult {
    pub sync: Vec<f32>,
    /// Already multiplied by the logit scale.
    pub logits: Vec<f32>,
    pub certainty: f64,
    pub halted: bool,
    /// The halt was caused by certainty crossing the threshold.
    pub reached_threshold: bool,
    pub ticks_used: u32,
}

/// `tanh(W_s [z_prev || f])`.
pub fn synapse(z_prev: &[f32], f: &[f32], w_s: &Matrix) -> Result<Vec<f32>, CtmError> {
    check_len("synapse input", w_s.cols(), z_prev.len() + f.len())?;
    check_len("synapse output", w_s.rows(), z_prev.len())?;
    let context = w_s.matvec_cols(z_prev.len(), f);
    Ok(synapse_with_context(z_prev, &context, w_s))
}

/// Synapse with the context half of the product precomputed; the context
/// vector is fixed for a whole decision step.
fn synapse_with_context(z_prev: &[f32], context: &[f64], w_s: &Matrix) -> Vec<f32> {
    w_s.matvec_cols(0, z_prev).iter().zip(context).map(|(a, b)| squash(a + b)).collect()
}

/// Shifts every row one column left and writes `z_new` into the last column.
pub fn push_history(history: &mut Matrix, z_new: &[f32]) -> Result<(), CtmError> {
    check_len("history rows", history.rows(), z_new.len())?;
    let m = history.cols();
    for (d, &v) in z_new.iter().enumerate() {
        let row = history.row_mut(d);
        row.copy_within(1.., 0);
        row[m - 1] = v;
    }
    Ok(())
}

/// Low-rank readout `z_d = tanh(b0_d + sum_m (B A^T)_{dm} H[d][m])`, evaluated
/// through the factors as `sum_j B_dj (sum_m A_mj H[d][m])`.
pub fn mu_mlp(history: &Matrix, a: &Matrix, b: &Matrix, b0: &[f32]) -> Result<Vec<f32>, CtmError> {
    let (d, m) = history.shape();
    check_len("factor_a rows", m, a.rows())?;
    check_len("factor_b rows", d, b.rows())?;
    check_len("factor ranks", a.cols(), b.cols())?;
    check_len("bias", d, b0.len())?;
    let r = a.cols();
    let mut projected = vec![0.0f64; r];
    Ok((0..d)
        .map(|n| {
            let h = history.row(n);
            projected.iter_mut().enumerate().for_each(|(j, p)| {
                *p = (0..m).map(|k| f64::from(a.get(k, j)) * f64::from(h[k])).sum();
            });
            let acc: f64 = b.row(n).iter().zip(&projected).map(|(&bj, p)| f64::from(bj) * p).sum();
            squash(f64::from(b0[n]) + acc)
        })
        .collect())
}

/// Closed-form slab update
/// `S'_k = decay^L S_k + sum_j decay^(L-j) z_j[p_k] z_j[q_k]`.
pub fn sync_update(
    sync: &[f32],
    slab_states: &[Vec<f32>],
    pairs: &[(usize, usize)],
    decay: f64,
) -> Result<Vec<f32>, CtmError> {
    let l = slab_states.len();
    if l == 0 {
        return Err(CtmError::EmptySlab);
    }
    check_len("sync accumulators", pairs.len(), sync.len())?;
    let weights: Vec<f64> = (1..=l).map(|j| decay.powi((l - j) as i32)).collect();
    let carry = decay.powi(l as i32);
    Ok(pairs
        .iter()
        .zip(sync)
        .map(|(&(p, q), &s)| {
            let fresh: f64 = slab_states
                .iter()
                .zip(&weights)
                .map(|(z, w)| w * f64::from(z[p]) * f64::from(z[q]))
                .sum();
            (carry * f64::from(s) + fresh) as f32
        })
        .collect())
}

/// Normalized-entropy certainty `1 - H(softmax(h)) / ln C` of scaled logits.
pub fn certainty_from_logits(logits: &[f32]) -> f64 {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(f64::from(v)));
    let exps: Vec<f64> = logits.iter().map(|&v| libm::exp(f64::from(v) - max)).collect();
    let total: f64 = exps.iter().sum();
    let entropy: f64 = exps
        .iter()
        .map(|e| e / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * libm::log(p))
        .sum();
    (1.0 - entropy / libm::log(logits.len() as f64)).clamp(0.0, 1.0)
}

/// Scaled logits `h = scale * W_c S` and the certainty they imply.
pub fn certainty(sync: &[f32], w_c: &Matrix, logit_scale: f64) -> Result<(Vec<f32>, f64), CtmError> {
    check_len("certainty input", w_c.cols(), sync.len())?;
    let logits: Vec<f32> = w_c.matvec(sync).into_iter().map(|v| (logit_scale * v) as f32).collect();
    let c = certainty_from_logits(&logits);
    Ok((logits, c))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HaltDecision {
    Continue,
    Halt,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HaltConfig {
    pub cap: f64,
    pub plateau_span: f64,
    pub plateau_window: usize,
}

impl From<&CtmConfig> for HaltConfig {
    fn from(cfg: &CtmConfig) -> Self {
        Self { cap: cfg.halt_cap, plateau_span: cfg.plateau_span, plateau_window: cfg.plateau_window }
    }
}

/// Certainty clears the (capped) threshold.
pub fn threshold_met(c: f64, epsilon: f64, cap: f64) -> bool {
    c >= epsilon.min(cap)
}

fn plateaued(trace: &[f64], window: usize, span: f64) -> bool {
    if window == 0 || trace.len() < window {
        return false;
    }
    let recent = &trace[trace.len() - window..];
    let hi = recent.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = recent.iter().copied().fold(f64::INFINITY, f64::min);
    hi - lo < span
}

/// Halts on a met threshold, an exhausted budget, or a flat certainty trace.
pub fn halt_decision(
    c: f64,
    epsilon: f64,
    trace: &[f64],
    tick_budget_left: u32,
    slab_budget_left: u32,
    cfg: &HaltConfig,
) -> HaltDecision {
    if threshold_met(c, epsilon, cfg.cap)
        || slab_budget_left == 0
        || tick_budget_left == 0
        || plateaued(trace, cfg.plateau_window, cfg.plateau_span)
    {
        HaltDecision::Halt
    } else {
        HaltDecision::Continue
    }
}

/// Convex blend `beta * z_a + (1 - beta) * z_b`.
pub fn gated_carry(z_a: &[f32], z_b: &[f32], beta: f64) -> Result<Vec<f32>, CtmError> {
    check_len("gated carry", z_a.len(), z_b.len())?;
    Ok(z_a
        .iter()
        .zip(z_b)
        .map(|(&a, &b)| (beta * f64::from(a) + (1.0 - beta) * f64::from(b)) as f32)
        .collect())
}

/// Per-branch inputs that stay fixed while the branch runs.
#[derive(Debug, Clone, PartialEq)]
pub struct SlabContext {
    pub epsilon: f64,
    /// Synchrony pairs in this branch's evaluation order.
    pub pairs: Vec<(usize, usize)>,
}

impl SlabContext {
    /// Canonical pair order.
    pub fn canonical(params: &CtmParams, epsilon: f64) -> Self {
        Self { epsilon, pairs: params.weights.pairs.clone() }
    }

    /// Pair order reshuffled from a branch-specific stream.
    pub fn for_branch(params: &CtmParams, epsilon: f64, episode_seed: u64, branch_id: usize) -> Self {
        let mut pairs = params.weights.pairs.clone();
        let mut rng = SplitMix64::new(derive_seed(episode_seed, &format!("branch.{branch_id}")));
        rng.shuffle(&mut pairs);
        Self { epsilon, pairs }
    }
}

/// Runs one slab of `L` ticks and the halt controller at its end.
pub fn run_slab(
    mut state: BranchState,
    f: &FusionVector,
    params: &CtmParams,
    ctx: &SlabContext,
) -> Result<(BranchState, SlabResult), CtmError> {
    let cfg = &params.config;
    let w = &params.weights;
    check_len("hidden state", cfg.neurons, state.z.len())?;
    check_len("fusion vector", w.synapse.cols() - cfg.neurons, f.len())?;
    check_len("sync accumulators", ctx.pairs.len(), state.sync.len())?;
    if state.slab >= cfg.max_slabs {
        return Err(CtmError::BudgetExhausted { slabs: state.slab, max_slabs: cfg.max_slabs });
    }
    if cfg.ticks_per_slab == 0 {
        return Err(CtmError::EmptySlab);
    }

    let context = w.synapse.matvec_cols(cfg.neurons, f.as_slice());
    let mut states = Vec::with_capacity(cfg.ticks_per_slab);
    for _ in 0..cfg.ticks_per_slab {
        let candidate = synapse_with_context(&state.z, &context, &w.synapse);
        push_history(&mut state.history, &candidate)?;
        state.z = mu_mlp(&state.history, &w.factor_a, &w.factor_b, &w.bias)?;
        states.push(state.z.clone());
        state.tick += 1;
    }
    state.slab += 1;
    state.sync = sync_update(&state.sync, &states, &ctx.pairs, cfg.decay)?;
    let (logits, c) = certainty(&state.sync, &w.certainty, cfg.logit_scale)?;

    state.entropy_trace.push_back(c);
    while state.entropy_trace.len() > cfg.plateau_window.max(1) {
        state.entropy_trace.pop_front();
    }
    let trace: Vec<f64> = state.entropy_trace.iter().copied().collect();
    let halt = halt_decision(
        c,
        ctx.epsilon,
        &trace,
        cfg.tick_budget().saturating_sub(state.tick),
        cfg.max_slabs - state.slab,
        &HaltConfig::from(cfg),
    );

    let next = synapse_with_context(&state.z, &context, &w.synapse);
    state.z = gated_carry(&state.z, &next, cfg.beta)?;

    let result = SlabResult {
        sync: state.sync.clone(),
        logits,
        certainty: c,
        halted: halt == HaltDecision::Halt,
        reached_threshold: threshold_met(c, ctx.epsilon, cfg.halt_cap),
        ticks_used: cfg.ticks_per_slab as u32,
    };
    Ok((state, result))
}

/// Runs slabs until the halt controller stops the branch.
pub fn run_branch(
    mut state: BranchState,
    f: &FusionVector,
    params: &CtmParams,
    ctx: &SlabContext,
) -> Result<(BranchState, SlabResult), CtmError> {
    loop {
        let (next, result) = run_slab(state, f, params, ctx)?;
        if result.halted {
            return Ok((next, result));
        }
        state = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> CtmConfig {
        CtmConfig { neurons: 6, history: 3, rank: 2, sync_pairs: 10, ..CtmConfig::default() }
    }

    #[test]
    fn synapse_zero_in_zero_out() {
        let w = Matrix::seeded(4, 4 + 256, 1, "s");
        assert_eq!(synapse(&[0.0; 4], &[0.0; 256], &w).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn synapse_identity_row() {
        // D = 2 with a single fusion column; row 0 picks z_prev[0].
        let w = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 0.5, 2.0]]).unwrap();
        let z = synapse(&[0.3, -0.4], &[0.25], &w).unwrap();
        assert_eq!(z[0], libm::tanh(0.3f32 as f64) as f32);
        assert!((f64::from(z[1]) - (0.5 * -0.4f64 + 2.0 * 0.25).tanh()).abs() < 1e-7);
    }

    #[test]
    fn synapse_shape_errors() {
        let w = Matrix::zeros(4, 4 + 256);
        assert!(matches!(synapse(&[0.0; 4], &[0.0; 255], &w), Err(CtmError::DimensionMismatch { .. })));
    }

    #[test]
    fn history_fifo() {
        let mut h = Matrix::zeros(2, 3);
        push_history(&mut h, &[1.0, 2.0]).unwrap();
        assert_eq!(h.data(), &[0.0, 0.0, 1.0, 0.0, 0.0, 2.0]);
        push_history(&mut h, &[3.0, 4.0]).unwrap();
        push_history(&mut h, &[5.0, 6.0]).unwrap();
        assert_eq!(h.row(0), &[1.0, 3.0, 5.0]);
        push_history(&mut h, &[7.0, 8.0]).unwrap();
        assert_eq!(h.row(0), &[3.0, 5.0, 7.0]);
        assert_eq!(h.row(1), &[4.0, 6.0, 8.0]);
    }

    #[test]
    fn mu_mlp_zero_history_is_tanh_bias() {
        let cfg = small_cfg();
        let w = CtmWeights::seeded(&cfg, 256, 3);
        let z = mu_mlp(&Matrix::zeros(6, 3), &w.factor_a, &w.factor_b, &w.bias).unwrap();
        for (zd, b) in z.iter().zip(&w.bias) {
            assert_eq!(*zd, squash(f64::from(*b)));
        }
    }

    #[test]
    fn mu_mlp_single_term() {
        let a = Matrix::from_vec(1, 1, vec![0.7]).unwrap();
        let b = Matrix::from_vec(3, 1, vec![1.0, -2.0, 0.5]).unwrap();
        let h = Matrix::from_vec(3, 1, vec![0.4, 0.1, -0.9]).unwrap();
        let z = mu_mlp(&h, &a, &b, &[0.0; 3]).unwrap();
        let expect = [0.7 * 1.0 * 0.4, 0.7 * -2.0 * 0.1, 0.7 * 0.5 * -0.9];
        for (zd, e) in z.iter().zip(expect) {
            assert!((f64::from(*zd) - f64::tanh(e)).abs() < 1e-6);
        }
    }

    #[test]
    fn sync_single_tick() {
        let pairs = [(0, 1), (1, 1)];
        let s = sync_update(&[1.0, 2.0], &[vec![0.5, -0.5]], &pairs, 0.999).unwrap();
        assert!((f64::from(s[0]) - (0.999 - 0.25)).abs() < 1e-7);
        assert!((f64::from(s[1]) - (2.0 * 0.999 + 0.25)).abs() < 1e-6);
    }

    #[test]
    fn sync_zero_states_decay_only() {
        let s = sync_update(&[1.0, -3.0], &vec![vec![0.0; 2]; 5], &[(0, 0), (0, 1)], 0.999).unwrap();
        assert!((f64::from(s[0]) - 0.999f64.powi(5)).abs() < 1e-7);
        assert!((f64::from(s[1]) + 3.0 * 0.999f64.powi(5)).abs() < 1e-6);
    }

    #[test]
    fn sync_empty_slab() {
        assert_eq!(sync_update(&[0.0], &[], &[(0, 0)], 0.999), Err(CtmError::EmptySlab));
    }

    #[test]
    fn certainty_uniform_and_peaked() {
        for t in [-3.0f32, 0.0, 12.5] {
            assert!(certainty_from_logits(&[t; 4]).abs() < 1e-7);
        }
        let w = Matrix::from_rows(&[vec![10.0], vec![0.0], vec![0.0], vec![0.0]]).unwrap();
        let (h, c) = certainty(&[1.0], &w, 8.0).unwrap();
        assert_eq!(h, vec![80.0, 0.0, 0.0, 0.0]);
        assert!(c > 1.0 - 1e-8);
    }

    #[test]
    fn halt_examples() {
        let cfg = HaltConfig { cap: 0.995, plateau_span: 1e-3, plateau_window: 3 };
        let spread = [0.3, 0.5, 0.4];
        assert_eq!(halt_decision(0.9, 0.75, &spread, 10, 3, &cfg), HaltDecision::Halt);
        assert_eq!(halt_decision(0.5, 0.75, &spread, 10, 3, &cfg), HaltDecision::Continue);
        assert_eq!(halt_decision(0.99, 1.125, &[0.79, 0.99, 0.89], 10, 3, &cfg), HaltDecision::Continue);
        assert_eq!(halt_decision(0.995, 1.125, &[0.79, 0.995, 0.89], 10, 3, &cfg), HaltDecision::Halt);
        assert_eq!(halt_decision(0.1, 0.75, &spread, 10, 0, &cfg), HaltDecision::Halt);
        assert_eq!(halt_decision(0.1, 0.75, &[0.1, 0.1005, 0.1], 10, 3, &cfg), HaltDecision::Halt);
        // Two samples are not yet a plateau.
        assert_eq!(halt_decision(0.1, 0.75, &[0.1, 0.1], 10, 3, &cfg), HaltDecision::Continue);
    }

    #[test]
    fn gated_carry_examples() {
        let zb = [0.5f32, -1.0, 0.25];
        let out = gated_carry(&[0.0; 3], &zb, 0.9).unwrap();
        for (o, b) in out.iter().zip(zb) {
            assert!((f64::from(*o) - 0.1 * f64::from(b)).abs() < 1e-7);
        }
        assert_eq!(gated_carry(&zb, &zb, 0.9).unwrap(), zb.to_vec());
        assert!(gated_carry(&[0.0; 2], &zb, 0.9).is_err());
    }

    #[test]
    fn zero_weight_slab_is_silent() {
        let cfg = CtmConfig::default();
        let params = CtmParams { weights: CtmWeights::zeros(&cfg, 256, 1), config: cfg.clone() };
        let ctx = SlabContext::canonical(&params, 0.75);
        let f = FusionVector::new(vec![0.3; 256]);
        let (state, r) = run_slab(BranchState::new(&cfg), &f, &params, &ctx).unwrap();
        assert!(r.sync.iter().all(|&s| s == 0.0));
        assert!(r.logits.iter().all(|&h| h == 0.0));
        assert!(r.certainty.abs() < 1e-7);
        assert_eq!(r.ticks_used, 8);
        assert_eq!((state.tick, state.slab), (8, 1));
    }

    #[test]
    fn branch_respects_budget() {
        let cfg = CtmConfig { max_slabs: 3, ..CtmConfig::default() };
        let params = CtmParams { weights: CtmWeights::seeded(&cfg, 256, 9), config: cfg.clone() };
        // Threshold above the cap and no plateau window: only the budget stops it.
        let ctx = SlabContext::canonical(&params, 10.0);
        let params = CtmParams { config: CtmConfig { plateau_window: 0, halt_cap: 2.0, ..cfg }, ..params };
        let f = FusionVector::new(vec![0.2; 256]);
        let (state, r) = run_branch(BranchState::new(&params.config), &f, &params, &ctx).unwrap();
        assert_eq!(state.slab, 3);
        assert_eq!(state.tick, 24);
        assert!(r.halted && !r.reached_threshold);
        let again = run_slab(state, &f, &params, &ctx);
        assert_eq!(again.unwrap_err(), CtmError::BudgetExhausted { slabs: 3, max_slabs: 3 });
    }

    #[test]
    fn pairs_are_distinct_and_in_range() {
        let pairs = sample_pairs(64, 256, 5);
        assert_eq!(pairs.len(), 256);
        let mut sorted = pairs.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 256);
        assert!(pairs.iter().all(|&(p, q)| p < 64 && q < 64));
    }

    #[test]
    fn validate_rejects_bad_config() {
        assert!(CtmConfig::default().validate().is_ok());
        assert!(CtmConfig { decay: 0.0, ..CtmConfig::default() }.validate().is_err());
        assert!(CtmConfig { logits: 1, ..CtmConfig::default() }.validate().is_err());
    }
}
