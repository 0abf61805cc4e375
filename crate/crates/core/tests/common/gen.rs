//! Seeded random instance generators shared by the per-module suites and the
//! acceptance runner.

use ctm_core::actuator::{ActuatorConfig, ActuatorParams};
use ctm_core::consensus::BranchOutcome;
use ctm_core::ctm::{BranchState, CtmConfig};
use ctm_core::router::*;
use ctm_core::tensor::Matrix;
use rand::rngs::StdRng;
use rand::Rng;

pub fn random_matrix(rng: &mut StdRng, rows: usize, cols: usize, bound: f32) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect()).unwrap()
}

/// Random gain matrix with a random non-empty torque box per joint.
pub fn random_actuator(rng: &mut StdRng, joints: usize, p: usize) -> ActuatorParams {
    let k = random_matrix(rng, joints, p, 2.0);
    let mut params = ActuatorParams::new(&ActuatorConfig { joints, ..ActuatorConfig::default() }, k);
    for i in 0..joints {
        let lo = rng.random_range(-6.0..0.0);
        params.tau_min[i] = lo;
        params.tau_max[i] = lo + rng.random_range(0.1..8.0);
    }
    params
}

fn tiny_state() -> BranchState {
    BranchState::new(&CtmConfig { neurons: 1, history: 1, sync_pairs: 1, ..CtmConfig::default() })
}

/// A synthetic converged branch; about one in five has zero confidence.
pub fn random_outcome(rng: &mut StdRng, id: usize, p: usize) -> BranchOutcome {
    BranchOutcome {
        branch_id: id,
        sync: (0..p).map(|_| rng.random_range(-4.0..4.0)).collect(),
        logits: vec![0.0; 4],
        confidence: if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..1.0) },
        ticks_used: 8 * rng.random_range(1..5),
        slabs_used: 1,
        reached_threshold: true,
        state: tiny_state(),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn meta(episode: &str, step: u32, slabs: u32, ticks: u32, confidence: f64, affect: Vec<f32>, sync: &[f32], fallback: bool) -> EnvelopeMeta {
    EnvelopeMeta {
        episode: episode.into(),
        step,
        slab_count: slabs,
        ticks,
        confidence,
        affect,
        sync_digest: sync_digest(sync),
        fallback,
    }
}

/// The envelopes behind `fixtures/golden_envelopes.jsonl`, in file order.
pub fn golden_cases() -> Vec<Envelope> {
    let mut pick = Args::new();
    pick.insert("object".into(), ArgValue::Ref("apple".into()));
    let mut actuate = Args::new();
    actuate.insert("gain".into(), ArgValue::Scalar(-0.3));
    vec![
        Envelope {
            id: 7,
            tool: "pick".into(),
            args: pick,
            meta: meta("synth-1-0", 2, 3, 24, 0.8125, vec![0.5, -0.25, 0.0, 0.125, 0.0, 0.0, 0.75, -1.0], &[0.5, -1.25, 3.0, 0.0], false),
        },
        Envelope { id: 1, tool: "actuate".into(), args: actuate, meta: meta("t1", 0, 16, 128, 0.1, vec![0.0; 8], &[0.0; 4], false) },
        Envelope { id: 12, tool: "noop".into(), args: Args::new(), meta: meta("synth-7-3", 5, 4, 32, 0.0, vec![0.0; 8], &[0.0; 256], true) },
    ]
}

fn random_string(rng: &mut StdRng) -> String {
    const POOL: &[char] = &['a', 'z', '0', '-', '_', ' ', '"', '\\', '\n', 'é', '中', '🙂', '/'];
    (0..rng.random_range(0..12)).map(|_| POOL[rng.random_range(0..POOL.len())]).collect()
}

fn finite_f64(rng: &mut StdRng) -> f64 {
    loop {
        let v = match rng.random_range(0..3) {
            0 => f64::from_bits(rng.random()),
            1 => rng.random_range(-1.0..1.0),
            _ => f64::from(rng.random_range(-1000i32..1000)),
        };
        if v.is_finite() {
            return v;
        }
    }
}

pub fn random_envelope(rng: &mut StdRng) -> Envelope {
    let mut args = Args::new();
    for _ in 0..rng.random_range(0..4) {
        let value = if rng.random_bool(0.5) { ArgValue::Ref(random_string(rng)) } else { ArgValue::Scalar(finite_f64(rng)) };
        args.insert(random_string(rng), value);
    }
    let affect = (0..8)
        .map(|_| loop {
            let v = if rng.random_bool(0.5) { f32::from_bits(rng.random()) } else { rng.random_range(-1.0..1.0) };
            if v.is_finite() {
                break v;
            }
        })
        .collect();
    let sync: Vec<f32> = (0..rng.random_range(1..40)).map(|_| rng.random_range(-9.0..9.0)).collect();
    Envelope {
        id: rng.random(),
        tool: ["noop", "pick", "x/y", "navigate"][rng.random_range(0..4)].into(),
        args,
        meta: EnvelopeMeta {
            episode: random_string(rng),
            step: rng.random(),
            slab_count: rng.random(),
            ticks: rng.random(),
            confidence: finite_f64(rng),
            affect,
            sync_digest: sync_digest(&sync),
            fallback: rng.random(),
        },
    }
}

/// The offending path of a rejected envelope, or a description of what
/// happened instead.
pub fn violation_path(bytes: &[u8]) -> Result<String, String> {
    match parse_envelope(bytes) {
        Err(EnvelopeError::SchemaViolation { path, .. }) => Ok(path),
        other => Err(format!("expected a schema violation, got {other:?}")),
    }
}
