//! Deterministic hash featurizer.
//!
//! Every token is hashed with FNV-1a 64. The low bits pick a slot
//! (`hash % width`) and bit 63 picks the sign; the signed unit lands in that
//! slot. Vision carries the goal words and object placements, proprio
//! carries the robot's own situation, and audio carries the spectrum of a
//! waveform seeded by every token together.

use crate::perception::{spectrum, Modality, ModalityFrame, PerceptionConfig, PerceptionError};
use crate::router::{Candidate, SLOT_WIDTH};
use crate::tensor::{fnv1a64, SplitMix64};

use super::tasks::TaskRecord;
use super::world::WorldState;

fn scatter(tokens: &[String], width: usize) -> Vec<f32> {
    let mut out = vec![0.0f64; width];
    for t in tokens {
        let h = fnv1a64(t.as_bytes());
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        out[(h % width as u64) as usize] += sign;
    }
    // Keep the frame norm near one however many tokens there are.
    let scale = 1.0 / (tokens.len().max(1) as f64).sqrt();
    out.into_iter().map(|v| (v * scale) as f32).collect()
}

fn goal_tokens(task: &TaskRecord) -> Vec<String> {
    task.goal
        .split(|c: char| !c.is_alphanumeric() && c != '_')
        .filter(|w| !w.is_empty())
        .map(|w| format!("goal:{}", w.to_lowercase()))
        .collect()
}

fn object_tokens(world: &WorldState) -> Vec<String> {
    world
        .objects
        .iter()
        .map(|(name, o)| if o.held { format!("held:{name}") } else { format!("at:{name}@{}", o.location) })
        .collect()
}

fn self_tokens(world: &WorldState, step: u32) -> Vec<String> {
    let mut tokens = vec![format!("robot:{}", world.robot_at), format!("step:{step}")];
    tokens.push(match world.held() {
        Some(name) => format!("hand:{name}"),
        None => "hand:empty".into(),
    });
    tokens
}

/// The three frames for one decision step.
pub fn featurize(
    task: &TaskRecord,
    world: &WorldState,
    step: u32,
    cfg: &PerceptionConfig,
) -> Result<[ModalityFrame; 3], PerceptionError> {
    let mut vision_tokens = goal_tokens(task);
    vision_tokens.extend(object_tokens(world));
    let proprio_tokens = self_tokens(world, step);

    let mut seed_text = String::new();
    for t in vision_tokens.iter().chain(&proprio_tokens) {
        seed_text.push_str(t);
        seed_text.push('\n');
    }
    let mut rng = SplitMix64::new(fnv1a64(seed_text.as_bytes()));
    let wave: Vec<f32> = (0..cfg.audio_window).map(|_| rng.symmetric(1.0) as f32).collect();
    let norm = 1.0 / (cfg.audio_window as f32).sqrt();
    let audio = spectrum(&wave, cfg.audio_in)?.into_iter().map(|m| m * norm).collect();

    Ok([
        ModalityFrame { modality: Modality::Vision, values: scatter(&vision_tokens, cfg.vision_in) },
        ModalityFrame { modality: Modality::Audio, values: audio },
        ModalityFrame { modality: Modality::Proprio, values: scatter(&proprio_tokens, cfg.proprio_in) },
    ])
}

/// Slot-head embedding for a named object; a pure function of the name.
pub fn embedding(name: &str) -> Vec<f32> {
    let mut rng = SplitMix64::new(fnv1a64(name.as_bytes()));
    (0..SLOT_WIDTH).map(|_| rng.symmetric(1.0) as f32).collect()
}

/// One candidate per context entry, in context order.
pub fn candidate_embeddings(context: &[String]) -> Vec<Candidate> {
    context.iter().map(|name| Candidate { name: name.clone(), embedding: embedding(name) }).collect()
}
