//! Run configuration and the assembled parameter set.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actuator::{ActuatorConfig, ActuatorParams};
use crate::affect::{AffectConfig, AffectParams};
use crate::consensus::ConsensusConfig;
use crate::ctm::{CtmConfig, CtmParams, CtmWeights};
use crate::perception::{EncoderWeights, PerceptionConfig};
use crate::router::{RouterConfig, RouterParams, ToolRegistry, AFFECT_DIMS};
use crate::tensor::Matrix;
use crate::weights::{self, WeightFileError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Weights(#[from] WeightFileError),
}

/// Where model weights come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightSource {
    /// Drawn from the run seed.
    Seeded,
    /// Every weight zero; synchrony pairs still come from the seed.
    Zero,
    /// Loaded from a `CTMW0001` container.
    File(PathBuf),
}

/// Every tunable constant in one document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub perception: PerceptionConfig,
    pub ctm: CtmConfig,
    pub consensus: ConsensusConfig,
    pub affect: AffectConfig,
    pub router: RouterConfig,
    pub actuator: ActuatorConfig,
    pub weights: WeightSource,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            perception: PerceptionConfig::default(),
            ctm: CtmConfig::default(),
            consensus: ConsensusConfig::default(),
            affect: AffectConfig::default(),
            router: RouterConfig::default(),
            actuator: ActuatorConfig::default(),
            weights: WeightSource::Seeded,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let cfg: Config = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    // Negated comparisons so that NaN fails every check.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        self.ctm.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let p = &self.perception;
        if [p.vision_in, p.audio_in, p.proprio_in, p.vision_latent, p.audio_latent, p.proprio_latent, p.fusion_dim]
            .contains(&0)
        {
            return invalid("perception widths must be positive".into());
        }
        if p.audio_window < 2 * p.audio_in {
            return invalid(format!("audio_window {} is shorter than 2 x audio_in", p.audio_window));
        }
        if self.affect.dims != AFFECT_DIMS {
            return invalid(format!("affect dims must be {AFFECT_DIMS}"));
        }
        if !(self.affect.epsilon0 > 0.0) || !(self.affect.alpha >= 0.0) || self.affect.hidden == 0 {
            return invalid("affect requires epsilon0 > 0, alpha >= 0 and a hidden layer".into());
        }
        if self.consensus.branches == 0 {
            return invalid("at least one branch is required".into());
        }
        if !(0.0..=1.0).contains(&self.router.gamma) {
            return invalid("gamma must lie in [0, 1]".into());
        }
        let a = &self.actuator;
        if a.joints == 0 || !(a.torque_limit > 0.0) || a.filter_window == 0 || a.samples_per_move < 2 {
            return invalid("actuator needs joints, a positive torque limit, a window and >= 2 samples".into());
        }
        Ok(())
    }
}

/// Everything a run needs besides its inputs.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: Config,
    pub registry: ToolRegistry,
    pub encoders: EncoderWeights,
    pub ctm: CtmParams,
    pub affect: AffectParams,
    pub router: RouterParams,
    pub actuator: ActuatorParams,
}

impl Model {
    pub fn build(config: &Config, seed: u64) -> Result<Self, ConfigError> {
        config.validate()?;
        let registry = ToolRegistry::standard();
        let p = config.ctm.sync_pairs;
        let fusion = config.perception.fusion_dim;
        let model = match &config.weights {
            WeightSource::Seeded => Self {
                config: config.clone(),
                encoders: EncoderWeights::seeded(&config.perception, seed),
                ctm: CtmParams { config: config.ctm.clone(), weights: CtmWeights::seeded(&config.ctm, fusion, seed) },
                affect: AffectParams::seeded(&config.affect, p, seed),
                router: RouterParams::seeded(&config.router, &registry, p, seed),
                actuator: ActuatorParams::seeded(&config.actuator, p, seed),
                registry,
            },
            WeightSource::Zero => Self {
                config: config.clone(),
                encoders: EncoderWeights::zeros(&config.perception),
                ctm: CtmParams { config: config.ctm.clone(), weights: CtmWeights::zeros(&config.ctm, fusion, seed) },
                affect: AffectParams::zeros(&config.affect, p),
                router: RouterParams::zeros(&config.router, &registry, p),
                actuator: ActuatorParams::new(&config.actuator, Matrix::zeros(config.actuator.joints, p)),
                registry,
            },
            WeightSource::File(path) => Self::from_tensors(config, registry, &weights::read_file(path)?)?,
        };
        model.ctm.weights.validate(&config.ctm, fusion).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(model)
    }

    fn from_tensors(
        config: &Config,
        registry: ToolRegistry,
        t: &[(String, Matrix)],
    ) -> Result<Self, ConfigError> {
        let pc = &config.perception;
        let c = &config.ctm;
        let p = c.sync_pairs;
        let d = c.neurons;
        let slots = registry.max_slots().max(1) * crate::router::SLOT_WIDTH;
        let get = |name: &str, shape| weights::expect(t, name, shape);
        let pairs_m = get("ctm.pairs", (2, p))?;
        let pairs = (0..p)
            .map(|k| {
                let (a, b) = (pairs_m.get(0, k), pairs_m.get(1, k));
                let ok = |v: f32| v >= 0.0 && v.fract() == 0.0 && (v as usize) < d;
                if ok(a) && ok(b) {
                    Ok((a as usize, b as usize))
                } else {
                    Err(ConfigError::Invalid(format!("ctm.pairs column {k} is not a neuron index pair")))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            encoders: EncoderWeights {
                vision: get("enc.vision", (pc.vision_latent, pc.vision_in))?,
                audio: get("enc.audio", (pc.audio_latent, pc.audio_in))?,
                proprio: get("enc.proprio", (pc.proprio_latent, pc.proprio_in))?,
                fusion: get("enc.fusion", (pc.fusion_dim, pc.concat_dim()))?,
            },
            ctm: CtmParams {
                config: c.clone(),
                weights: CtmWeights {
                    synapse: get("ctm.synapse", (d, d + pc.fusion_dim))?,
                    factor_a: get("ctm.factor_a", (c.history, c.rank))?,
                    factor_b: get("ctm.factor_b", (d, c.rank))?,
                    bias: get("ctm.bias", (1, d))?.data().to_vec(),
                    certainty: get("ctm.certainty", (c.logits, p))?,
                    pairs,
                },
            },
            affect: AffectParams {
                w1: get("affect.w1", (config.affect.hidden, p))?,
                w2: get("affect.w2", (config.affect.dims, config.affect.hidden))?,
                epsilon0: config.affect.epsilon0,
                alpha: config.affect.alpha,
            },
            router: RouterParams {
                gamma: config.router.gamma,
                action_head: get("router.action", (registry.len(), p))?,
                slot_head: get("router.slot", (slots, p))?,
            },
            actuator: ActuatorParams::new(&config.actuator, get("actuator.k", (config.actuator.joints, p))?),
            config: config.clone(),
            registry,
        })
    }

    /// All weights as named tensors, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Matrix)> {
        let w = &self.ctm.weights;
        let p = w.pairs.len();
        let mut pairs = Matrix::zeros(2, p);
        for (k, &(a, b)) in w.pairs.iter().enumerate() {
            pairs.set(0, k, a as f32);
            pairs.set(1, k, b as f32);
        }
        let named = |n: &str, m: &Matrix| (n.to_string(), m.clone());
        vec![
            named("enc.vision", &self.encoders.vision),
            named("enc.audio", &self.encoders.audio),
            named("enc.proprio", &self.encoders.proprio),
            named("enc.fusion", &self.encoders.fusion),
            named("ctm.synapse", &w.synapse),
            named("ctm.factor_a", &w.factor_a),
            named("ctm.factor_b", &w.factor_b),
            ("ctm.bias".into(), Matrix::from_vec(1, w.bias.len(), w.bias.clone()).expect("row vector")),
            named("ctm.certainty", &w.certainty),
            ("ctm.pairs".into(), pairs),
            named("affect.w1", &self.affect.w1),
            named("affect.w2", &self.affect.w2),
            named("router.action", &self.router.action_head),
            named("router.slot", &self.router.slot_head),
            named("actuator.k", &self.actuator.k),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_file_round_trip() {
        let cfg = Config::default();
        let model = Model::build(&cfg, 42).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        weights::write_file(&path, &model.tensors()).unwrap();
        let loaded = Model::build(&Config { weights: WeightSource::File(path), ..cfg }, 0).unwrap();
        assert_eq!(loaded.tensors(), model.tensors());
        assert_eq!(loaded.ctm.weights, model.ctm.weights);
    }

    #[test]
    fn config_json_defaults_and_strictness() {
        let cfg: Config = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, Config::default());
        let cfg: Config = serde_json::from_str(r#"{"router":{"gamma":0.5},"weights":"zero"}"#).unwrap();
        assert_eq!(cfg.router.gamma, 0.5);
        assert_eq!(cfg.weights, WeightSource::Zero);
        assert!(serde_json::from_str::<Config>(r#"{"ctm":{"neuronz":3}}"#).is_err());
        let bad = Config { affect: AffectConfig { dims: 7, ..AffectConfig::default() }, ..Config::default() };
        assert!(bad.validate().is_err());
    }
}
