//! Engine configuration.
//!
//! Config files are flat `key = value` TOML. Every key is optional and an
//! empty file yields the defaults; unknown keys are rejected by name.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hash::fnv1a64;

const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// Hard cap on tokens emitted per trace, across all passes.
    pub max_tokens: usize,
    /// Number of documents each retrieval hands to the generator.
    pub retrieval_top_k: usize,
    /// Hard cap on retrieval events per trace.
    pub max_retrievals: usize,
    /// Weights for the attention, tf-idf, positional and semantic
    /// components of keyword importance. Must sum to 1.
    pub importance_weights: [f64; 4],
    /// Cosine similarity at or above which two entities count as matching.
    pub entity_sim_threshold: f64,
    /// Per-token penalty applied to chunk block scores.
    pub chunk_length_penalty: f64,
    /// Token budget a chunk block should stay under.
    pub chunk_max_tokens: usize,
    pub disable_early: bool,
    pub disable_realtime: bool,
    pub disable_prerank: bool,
    pub disable_stepwise: bool,
    pub disable_chunk: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            max_tokens: 256,
            retrieval_top_k: 3,
            max_retrievals: 5,
            importance_weights: [0.25, 0.25, 0.25, 0.25],
            entity_sim_threshold: 0.85,
            chunk_length_penalty: 0.1,
            chunk_max_tokens: 64,
            disable_early: false,
            disable_realtime: false,
            disable_prerank: false,
            disable_stepwise: false,
            disable_chunk: false,
        }
    }
}

/// File-facing shape of the config: everything optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialConfig {
    max_tokens: Option<usize>,
    retrieval_top_k: Option<usize>,
    max_retrievals: Option<usize>,
    importance_weights: Option<Vec<f64>>,
    entity_sim_threshold: Option<f64>,
    chunk_length_penalty: Option<f64>,
    chunk_max_tokens: Option<usize>,
    disable_early: Option<bool>,
    disable_realtime: Option<bool>,
    disable_prerank: Option<bool>,
    disable_stepwise: Option<bool>,
    disable_chunk: Option<bool>,
}

impl EngineConfig {
    /// Reads a config file, applying defaults for absent keys.
    pub fn load(path: impl AsRef<Path>) -> Result<EngineConfig> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_toml_str(&raw)
    }

    /// Parses config text. An empty string yields the defaults.
    pub fn from_toml_str(raw: &str) -> Result<EngineConfig> {
        let partial: PartialConfig =
            toml::from_str(raw).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        let defaults = EngineConfig::default();
        let weights = match partial.importance_weights {
            None => defaults.importance_weights,
            Some(v) => {
                if v.len() != 4 {
                    return Err(Error::Config(format!(
                        "importance_weights: expected 4 values, got {}",
                        v.len()
                    )));
                }
                [v[0], v[1], v[2], v[3]]
            }
        };
        let config = EngineConfig {
            max_tokens: partial.max_tokens.unwrap_or(defaults.max_tokens),
            retrieval_top_k: partial.retrieval_top_k.unwrap_or(defaults.retrieval_top_k),
            max_retrievals: partial.max_retrievals.unwrap_or(defaults.max_retrievals),
            importance_weights: weights,
            entity_sim_threshold: partial.entity_sim_threshold.unwrap_or(defaults.entity_sim_threshold),
            chunk_length_penalty: partial.chunk_length_penalty.unwrap_or(defaults.chunk_length_penalty),
            chunk_max_tokens: partial.chunk_max_tokens.unwrap_or(defaults.chunk_max_tokens),
            disable_early: partial.disable_early.unwrap_or(false),
            disable_realtime: partial.disable_realtime.unwrap_or(false),
            disable_prerank: partial.disable_prerank.unwrap_or(false),
            disable_stepwise: partial.disable_stepwise.unwrap_or(false),
            disable_chunk: partial.disable_chunk.unwrap_or(false),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_tokens == 0 {
            return Err(Error::Config("max_tokens must be at least 1".into()));
        }
        if self.retrieval_top_k == 0 {
            return Err(Error::Config("retrieval_top_k must be at least 1".into()));
        }
        validate_weights(&self.importance_weights)?;
        if !(self.entity_sim_threshold > 0.0 && self.entity_sim_threshold < 1.0) {
            return Err(Error::Config(format!(
                "entity_sim_threshold: {} outside (0, 1)",
                self.entity_sim_threshold
            )));
        }
        if !self.chunk_length_penalty.is_finite() || self.chunk_length_penalty < 0.0 {
            return Err(Error::Config(format!(
                "chunk_length_penalty: {} must be finite and non-negative",
                self.chunk_length_penalty
            )));
        }
        if self.chunk_max_tokens == 0 {
            return Err(Error::Config("chunk_max_tokens must be at least 1".into()));
        }
        Ok(())
    }

    /// Stable hex fingerprint of the resolved configuration.
    pub fn fingerprint(&self) -> String {
        let canonical = toml::to_string(self).expect("config serializes");
        format!("{:016x}", fnv1a64(canonical.as_bytes()))
    }
}

/// Checks a four-component weight vector: non-negative, summing to one.
pub fn validate_weights(weights: &[f64; 4]) -> Result<()> {
    for (i, w) in weights.iter().enumerate() {
        if !w.is_finite() || *w < 0.0 {
            return Err(Error::Config(format!(
                "importance_weights[{i}]: {w} must be finite and non-negative"
            )));
        }
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::Config(format!("importance_weights sum to {sum}, expected 1")));
    }
    Ok(())
}
