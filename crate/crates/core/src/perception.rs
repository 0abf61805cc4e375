//! Per-modality encoders and the fusion layer that produces the context
//! vector handed to the thought engine.

use rustfft::num_complex::Complex;
use rustfft::FftPlannerScalar;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{squash, Matrix};

#[derive(Debug, Error, PartialEq)]
pub enum PerceptionError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch { context: &'static str, expected: usize, actual: usize },
    #[error("non-finite input value at index {index}")]
    NonFiniteInput { index: usize },
    #[error("window of {len} samples is too short for {n_bins} bins")]
    WindowTooShort { len: usize, n_bins: usize },
    #[error("expected a {expected:?} latent, got {actual:?}")]
    ModalityMismatch { expected: Modality, actual: Modality },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Vision,
    Audio,
    Proprio,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Vision, Modality::Audio, Modality::Proprio];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Vision => "vision",
            Modality::Audio => "audio",
            Modality::Proprio => "proprio",
        }
    }
}

/// Input and latent widths for each modality, plus the fused width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerceptionConfig {
    pub vision_in: usize,
    pub audio_in: usize,
    pub proprio_in: usize,
    pub vision_latent: usize,
    pub audio_latent: usize,
    pub proprio_latent: usize,
    pub fusion_dim: usize,
    /// Samples in the single audio analysis window.
    pub audio_window: usize,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            vision_in: 768,
            audio_in: 80,
            proprio_in: 64,
            vision_latent: 128,
            audio_latent: 64,
            proprio_latent: 32,
            fusion_dim: 256,
            audio_window: 256,
        }
    }
}

impl PerceptionConfig {
    pub fn input_dim(&self, m: Modality) -> usize {
        match m {
            Modality::Vision => self.vision_in,
            Modality::Audio => self.audio_in,
            Modality::Proprio => self.proprio_in,
        }
    }

    pub fn latent_dim(&self, m: Modality) -> usize {
        match m {
            Modality::Vision => self.vision_latent,
            Modality::Audio => self.audio_latent,
            Modality::Proprio => self.proprio_latent,
        }
    }

    /// Width of the concatenated latents.
    pub fn concat_dim(&self) -> usize {
        self.vision_latent + self.audio_latent + self.proprio_latent
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModalityFrame {
    pub modality: Modality,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModalityLatent {
    pub modality: Modality,
    pub latent: Vec<f32>,
}

/// The fused context vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionVector(Vec<f32>);

impl FusionVector {
    pub fn new(values: Vec<f32>) -> Self {
        Self(values)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub vision: Matrix,
    pub audio: Matrix,
    pub proprio: Matrix,
    /// `fusion_dim x concat_dim`.
    pub fusion: Matrix,
}

impl EncoderWeights {
    pub fn seeded(cfg: &PerceptionConfig, seed: u64) -> Self {
        Self {
            vision: Matrix::seeded(cfg.vision_latent, cfg.vision_in, seed, "enc.vision"),
            audio: Matrix::seeded(cfg.audio_latent, cfg.audio_in, seed, "enc.audio"),
            proprio: Matrix::seeded(cfg.proprio_latent, cfg.proprio_in, seed, "enc.proprio"),
            fusion: Matrix::seeded(cfg.fusion_dim, cfg.concat_dim(), seed, "enc.fusion"),
        }
    }

    pub fn zeros(cfg: &PerceptionConfig) -> Self {
        Self {
            vision: Matrix::zeros(cfg.vision_latent, cfg.vision_in),
            audio: Matrix::zeros(cfg.audio_latent, cfg.audio_in),
            proprio: Matrix::zeros(cfg.proprio_latent, cfg.proprio_in),
            fusion: Matrix::zeros(cfg.fusion_dim, cfg.concat_dim()),
        }
    }

    pub fn for_modality(&self, m: Modality) -> &Matrix {
        match m {
            Modality::Vision => &self.vision,
            Modality::Audio => &self.audio,
            Modality::Proprio => &self.proprio,
        }
    }
}

/// `W x` before the nonlinearity, in `f64`.
pub fn encode_preactivation(frame: &ModalityFrame, weights: &EncoderWeights) -> Result<Vec<f64>, PerceptionError> {
    let w = weights.for_modality(frame.modality);
    if frame.values.len() != w.cols() {
        return Err(PerceptionError::DimensionMismatch {
            context: frame.modality.name(),
            expected: w.cols(),
            actual: frame.values.len(),
        });
    }
    if let Some(index) = frame.values.iter().position(|v| !v.is_finite()) {
        return Err(PerceptionError::NonFiniteInput { index });
    }
    Ok(w.matvec(&frame.values))
}

/// `y = tanh(W x)` for one modality.
pub fn encode_modality(frame: &ModalityFrame, weights: &EncoderWeights) -> Result<ModalityLatent, PerceptionError> {
    let pre = encode_preactivation(frame, weights)?;
    Ok(ModalityLatent { modality: frame.modality, latent: pre.into_iter().map(squash).collect() })
}

/// Magnitudes of the full discrete Fourier transform of one rectangular window.
pub fn full_magnitude_spectrum(samples: &[f32]) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&s| Complex::new(f64::from(s), 0.0)).collect();
    if buf.is_empty() {
        return Vec::new();
    }
    FftPlannerScalar::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf.iter().map(|c| c.norm()).collect()
}

/// First `n_bins` DFT magnitudes of a single window.
pub fn spectrum(samples: &[f32], n_bins: usize) -> Result<Vec<f32>, PerceptionError> {
    if samples.len() < 2 * n_bins || n_bins == 0 {
        return Err(PerceptionError::WindowTooShort { len: samples.len(), n_bins });
    }
    Ok(full_magnitude_spectrum(samples).into_iter().take(n_bins).map(|m| m as f32).collect())
}

/// `f = tanh(W_f [vis || aud || pro])`.
pub fn fuse(
    vis: &ModalityLatent,
    aud: &ModalityLatent,
    pro: &ModalityLatent,
    weights: &EncoderWeights,
) -> Result<FusionVector, PerceptionError> {
    for (latent, expected) in [(vis, Modality::Vision), (aud, Modality::Audio), (pro, Modality::Proprio)] {
        if latent.modality != expected {
            return Err(PerceptionError::ModalityMismatch { expected, actual: latent.modality });
        }
    }
    let concat: Vec<f32> = [&vis.latent, &aud.latent, &pro.latent].into_iter().flatten().copied().collect();
    if concat.len() != weights.fusion.cols() {
        return Err(PerceptionError::DimensionMismatch {
            context: "fusion",
            expected: weights.fusion.cols(),
            actual: concat.len(),
        });
    }
    Ok(FusionVector(weights.fusion.matvec(&concat).into_iter().map(squash).collect()))
}

/// Fuses latents supplied in any order; they are placed by modality.
pub fn fuse_unordered(latents: &[ModalityLatent], weights: &EncoderWeights) -> Result<FusionVector, PerceptionError> {
    let pick = |m: Modality| {
        latents.iter().find(|l| l.modality == m).ok_or(PerceptionError::DimensionMismatch {
            context: "fusion inputs",
            expected: 3,
            actual: latents.len(),
        })
    };
    fuse(pick(Modality::Vision)?, pick(Modality::Audio)?, pick(Modality::Proprio)?, weights)
}
