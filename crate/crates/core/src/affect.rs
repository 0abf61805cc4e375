//! Affect readout and halting-threshold modulation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{squash, Matrix};

#[derive(Debug, Error, PartialEq)]
pub enum AffectError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch { context: &'static str, expected: usize, actual: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AffectConfig {
    pub hidden: usize,
    pub dims: usize,
    pub epsilon0: f64,
    pub alpha: f64,
}

impl Default for AffectConfig {
    fn default() -> Self {
        Self { hidden: 32, dims: 8, epsilon0: 0.75, alpha: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffectParams {
    /// `hidden x P`.
    pub w1: Matrix,
    /// `dims x hidden`.
    pub w2: Matrix,
    pub epsilon0: f64,
    pub alpha: f64,
}

impl AffectParams {
    pub fn seeded(cfg: &AffectConfig, sync_pairs: usize, seed: u64) -> Self {
        Self {
            w1: Matrix::seeded(cfg.hidden, sync_pairs, seed, "affect.w1"),
            w2: Matrix::seeded(cfg.dims, cfg.hidden, seed, "affect.w2"),
            epsilon0: cfg.epsilon0,
            alpha: cfg.alpha,
        }
    }

    pub fn zeros(cfg: &AffectConfig, sync_pairs: usize) -> Self {
        Self {
            w1: Matrix::zeros(cfg.hidden, sync_pairs),
            w2: Matrix::zeros(cfg.dims, cfg.hidden),
            epsilon0: cfg.epsilon0,
            alpha: cfg.alpha,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffectVector(pub Vec<f32>);

impl AffectVector {
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|&v| f64::from(v) * f64::from(v)).sum::<f64>().sqrt()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }
}

/// `e = tanh(W2 tanh(W1 S))`.
pub fn affect_decode(sync: &[f32], params: &AffectParams) -> Result<AffectVector, AffectError> {
    if sync.len() != params.w1.cols() {
        return Err(AffectError::DimensionMismatch {
            context: "affect input",
            expected: params.w1.cols(),
            actual: sync.len(),
        });
    }
    if params.w2.cols() != params.w1.rows() {
        return Err(AffectError::DimensionMismatch {
            context: "affect hidden",
            expected: params.w1.rows(),
            actual: params.w2.cols(),
        });
    }
    let hidden: Vec<f32> = params.w1.matvec(sync).into_iter().map(squash).collect();
    Ok(AffectVector(params.w2.matvec(&hidden).into_iter().map(squash).collect()))
}

/// `eps = eps0 * (1 + alpha * |e|_2)`; the halt controller applies its own cap.
pub fn modulate_epsilon(e: &AffectVector, params: &AffectParams) -> f64 {
    params.epsilon0 * (1.0 + params.alpha * e.norm())
}
