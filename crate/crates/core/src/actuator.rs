//! Torque planning, reference trajectories, compliance smoothing and PWM
//! mapping.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Matrix;

#[derive(Debug, Error, PartialEq)]
pub enum ActuatorError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch { context: &'static str, expected: usize, actual: usize },
    #[error("malformed PWM table for joint {joint}: {reason}")]
    MalformedTable { joint: usize, reason: &'static str },
    #[error("invalid torque bounds for joint {joint}")]
    InvalidBounds { joint: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActuatorConfig {
    pub joints: usize,
    /// Symmetric torque limit in N*m applied to every joint.
    pub torque_limit: f64,
    pub gain: f64,
    pub filter_window: usize,
    pub samples_per_move: usize,
}

impl Default for ActuatorConfig {
    fn default() -> Self {
        Self { joints: 12, torque_limit: 5.0, gain: 1.0, filter_window: 5, samples_per_move: 10 }
    }
}

/// Piecewise-linear `torque -> duty` breakpoints for one joint.
#[derive(Debug, Clone, PartialEq)]
pub struct PwmTable {
    pub breakpoints: Vec<(f64, f64)>,
}

impl PwmTable {
    fn validate(&self, joint: usize) -> Result<(), ActuatorError> {
        if self.breakpoints.len() < 2 {
            return Err(ActuatorError::MalformedTable { joint, reason: "needs at least two breakpoints" });
        }
        if self.breakpoints.windows(2).any(|w| w[1].0.partial_cmp(&w[0].0) != Some(std::cmp::Ordering::Greater)) {
            return Err(ActuatorError::MalformedTable { joint, reason: "breakpoints must be strictly increasing" });
        }
        if self.breakpoints.iter().any(|&(_, d)| !(0.0..=1.0).contains(&d)) {
            return Err(ActuatorError::MalformedTable { joint, reason: "duties must lie in [0, 1]" });
        }
        Ok(())
    }

    /// Linear interpolation, held flat past either end.
    fn duty(&self, tau: f64) -> f64 {
        let pts = &self.breakpoints;
        if tau <= pts[0].0 {
            return pts[0].1;
        }
        for w in pts.windows(2) {
            let ((t0, d0), (t1, d1)) = (w[0], w[1]);
            if tau <= t1 {
                return d0 + (d1 - d0) * (tau - t0) / (t1 - t0);
            }
        }
        pts[pts.len() - 1].1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActuatorParams {
    /// `J x P`.
    pub k: Matrix,
    pub tau_min: Vec<f64>,
    pub tau_max: Vec<f64>,
    /// `None` selects the bipolar default mapping for that joint.
    pub pwm_tables: Vec<Option<PwmTable>>,
    pub gain: Vec<f64>,
    pub filter_window: usize,
    pub samples_per_move: usize,
}

impl ActuatorParams {
    pub fn new(cfg: &ActuatorConfig, k: Matrix) -> Self {
        let j = cfg.joints;
        Self {
            k,
            tau_min: vec![-cfg.torque_limit; j],
            tau_max: vec![cfg.torque_limit; j],
            pwm_tables: vec![None; j],
            gain: vec![cfg.gain; j],
            filter_window: cfg.filter_window,
            samples_per_move: cfg.samples_per_move,
        }
    }

    pub fn seeded(cfg: &ActuatorConfig, sync_pairs: usize, seed: u64) -> Self {
        Self::new(cfg, Matrix::seeded(cfg.joints, sync_pairs, seed, "actuator.k"))
    }

    pub fn joints(&self) -> usize {
        self.k.rows()
    }

    // Negated comparisons so that NaN fails every check.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ActuatorError> {
        let j = self.joints();
        for (context, len) in [
            ("tau_min", self.tau_min.len()),
            ("tau_max", self.tau_max.len()),
            ("pwm_tables", self.pwm_tables.len()),
            ("gain", self.gain.len()),
        ] {
            if len != j {
                return Err(ActuatorError::DimensionMismatch { context, expected: j, actual: len });
            }
        }
        for joint in 0..j {
            if !(self.tau_min[joint] < self.tau_max[joint]) {
                return Err(ActuatorError::InvalidBounds { joint });
            }
            if let Some(table) = &self.pwm_tables[joint] {
                table.validate(joint)?;
            }
        }
        Ok(())
    }
}

/// Box-constrained least squares `min |tau - K s|^2, tau_min <= tau <= tau_max`.
/// The objective is separable, so the optimum is the coordinatewise clamp.
pub fn plan_torque(sync_merged: &[f32], params: &ActuatorParams) -> Result<Vec<f64>, ActuatorError> {
    if sync_merged.len() != params.k.cols() {
        return Err(ActuatorError::DimensionMismatch {
            context: "plan_torque",
            expected: params.k.cols(),
            actual: sync_merged.len(),
        });
    }
    if params.tau_min.len() != params.joints() || params.tau_max.len() != params.joints() {
        return Err(ActuatorError::DimensionMismatch {
            context: "torque bounds",
            expected: params.joints(),
            actual: params.tau_min.len().min(params.tau_max.len()),
        });
    }
    Ok(params
        .k
        .matvec(sync_merged)
        .into_iter()
        .enumerate()
        .map(|(i, t)| t.clamp(params.tau_min[i], params.tau_max[i]))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
}

/// Cubic Hermite blend `q(t) = q0 + (q1 - q0)(3t^2 - 2t^3)` sampled at
/// `n` evenly spaced times in `[0, 1]`; both endpoint velocities are zero.
pub fn interpolate_trajectory(q0: &[f64], q_target: &[f64], n: usize) -> Result<Vec<TrajectorySample>, ActuatorError> {
    if q0.len() != q_target.len() {
        return Err(ActuatorError::DimensionMismatch {
            context: "trajectory endpoints",
            expected: q0.len(),
            actual: q_target.len(),
        });
    }
    let n = n.max(2);
    Ok((0..n)
        .map(|i| {
            let t = i as f64 / (n - 1) as f64;
            let blend = 3.0 * t * t - 2.0 * t * t * t;
            let rate = 6.0 * t - 6.0 * t * t;
            let (q, qdot) = q0
                .iter()
                .zip(q_target)
                .map(|(&a, &b)| {
                    let delta = b - a;
                    // Exact endpoints regardless of rounding in the blend.
                    let q = match i {
                        0 => a,
                        _ if i == n - 1 => b,
                        _ => a + delta * blend,
                    };
                    (q, delta * rate)
                })
                .unzip();
            TrajectorySample { t, q, qdot }
        })
        .collect())
}

/// Causal moving average of `q` over the last `min(window, i + 1)` samples,
/// followed by forward-difference velocities. The first sample passes
/// through untouched; the last one reuses the preceding difference.
pub fn compliance_filter(samples: &[TrajectorySample], window: usize) -> Vec<TrajectorySample> {
    let window = window.max(1);
    let n = samples.len();
    if n == 0 {
        return Vec::new();
    }
    let joints = samples[0].q.len();
    let smoothed: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            let span = &samples[lo..=i];
            // Averaging offsets from the newest sample keeps constant runs exact.
            (0..joints)
                .map(|j| {
                    let anchor = samples[i].q[j];
                    anchor + span.iter().map(|s| s.q[j] - anchor).sum::<f64>() / span.len() as f64
                })
                .collect()
        })
        .collect();
    let diff = |i: usize| -> Vec<f64> {
        let dt = samples[i + 1].t - samples[i].t;
        (0..joints).map(|j| (smoothed[i + 1][j] - smoothed[i][j]) / dt).collect()
    };
    (0..n)
        .map(|i| {
            if i == 0 {
                return samples[0].clone();
            }
            let qdot = if i + 1 < n { diff(i) } else { diff(i - 1) };
            TrajectorySample { t: samples[i].t, q: smoothed[i].clone(), qdot }
        })
        .collect()
}

/// Torque to duty cycle. The default mapping is bipolar around 0.5:
/// `0.5 + 0.5 * clamp(gain * tau / tau_max, -1, 1)`.
pub fn torque_to_pwm(tau: &[f64], params: &ActuatorParams) -> Result<Vec<f64>, ActuatorError> {
    let j = params.joints();
    if tau.len() != j {
        return Err(ActuatorError::DimensionMismatch { context: "torque_to_pwm", expected: j, actual: tau.len() });
    }
    params.validate()?;
    Ok(tau
        .iter()
        .enumerate()
        .map(|(i, &t)| match &params.pwm_tables[i] {
            Some(table) => table.duty(params.gain[i] * t),
            None => 0.5 + 0.5 * (params.gain[i] * t / params.tau_max[i]).clamp(-1.0, 1.0),
        })
        .collect())
}
