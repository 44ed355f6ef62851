//! Flat run configuration shared by training, evaluation and the CLI.
//!
//! Files are TOML with one level of `key = value` pairs; every key is
//! optional except `variant`. Unknown keys are rejected by name. The resolved
//! configuration serializes back to the same format and re-parses to an
//! identical value.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::env::Layout;
use crate::knowledge::RecommendConfig;
use crate::nets::Variant;
use crate::ppo::PpoConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config i/o on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config: {0}")]
    Parse(String),
    #[error("override `{0}` is not of the form key=value")]
    BadOverride(String),
    #[error("config key `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayoutPreset {
    Mini,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroundMetric {
    Manhattan,
    Index,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub variant: Variant,
    #[serde(default)]
    pub task: u8,
    #[serde(default = "d::seed")]
    pub seed: u64,

    #[serde(default = "d::layout")]
    pub layout: LayoutPreset,
    /// 0 keeps the preset's value.
    #[serde(default)]
    pub rows: usize,
    #[serde(default)]
    pub cols: usize,
    #[serde(default)]
    pub room_size: usize,
    /// Unset keeps the preset's value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blockers: Option<bool>,
    #[serde(default)]
    pub max_steps: u32,

    #[serde(default = "d::workers")]
    pub workers: usize,
    #[serde(default = "d::total_steps")]
    pub total_steps: u64,
    #[serde(default = "d::meta_batch")]
    pub meta_batch: usize,
    #[serde(default = "d::budget")]
    pub interaction_budget: usize,
    #[serde(default = "d::budget")]
    pub reach_budget: usize,
    #[serde(default = "d::fallback")]
    pub fallback_budget: usize,
    #[serde(default = "d::rollout")]
    pub base_rollout: usize,
    #[serde(default = "d::temperature")]
    pub temperature: f64,
    #[serde(default = "d::yes")]
    pub mask_incompatible: bool,
    /// Pay the 0.1 segment bonus only for the first success of each
    /// (object, interaction) pair in an episode.
    #[serde(default)]
    pub meta_bonus_once: bool,

    #[serde(default = "d::clip")]
    pub clip_eps: f64,
    #[serde(default = "d::entropy")]
    pub entropy_coef: f64,
    #[serde(default = "d::value")]
    pub value_coef: f64,
    #[serde(default = "d::gamma")]
    pub gamma: f64,
    #[serde(default = "d::gamma")]
    pub meta_gamma: f64,
    #[serde(default = "d::epochs")]
    pub epochs: usize,
    #[serde(default = "d::lr")]
    pub lr: f64,
    #[serde(default = "d::meta_lr")]
    pub meta_lr: f64,
    #[serde(default = "d::minibatch")]
    pub minibatch: usize,
    /// Low-level and base nets update once this many of their records have
    /// accumulated, possibly over several rounds.
    #[serde(default = "d::low_level_batch")]
    pub low_level_batch: usize,
    #[serde(default = "d::meta_minibatch")]
    pub meta_minibatch: usize,
    #[serde(default = "d::grad_clip")]
    pub max_grad_norm: f64,
    #[serde(default = "d::yes")]
    pub normalize_advantages: bool,

    /// Rounds between in-training greedy evaluations; 0 disables them.
    #[serde(default)]
    pub eval_every: usize,
    #[serde(default = "d::train_eval_episodes")]
    pub eval_episodes: usize,
    /// Stop training once an in-training evaluation reaches this success
    /// rate; 0 disables early stopping.
    #[serde(default)]
    pub stop_at_success: f64,
    /// Rounds between periodic checkpoints; 0 keeps only the initial and final ones.
    #[serde(default)]
    pub checkpoint_every: usize,

    #[serde(default = "d::episodes")]
    pub episodes: usize,
    #[serde(default = "d::top_k")]
    pub top_k: usize,
    #[serde(default = "d::yes")]
    pub greedy: bool,
    /// With `greedy`, also take the argmax primitive action instead of
    /// sampling the low-level (and base) policies.
    #[serde(default)]
    pub greedy_primitives: bool,
    #[serde(default = "d::metric")]
    pub ground_metric: GroundMetric,

    #[serde(default = "d::out_dir")]
    pub out_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

mod d {
    use super::*;
    pub fn seed() -> u64 {
        0
    }
    pub fn layout() -> LayoutPreset {
        LayoutPreset::Mini
    }
    pub fn workers() -> usize {
        4
    }
    pub fn total_steps() -> u64 {
        200_000
    }
    pub fn meta_batch() -> usize {
        128
    }
    pub fn budget() -> usize {
        64
    }
    pub fn fallback() -> usize {
        16
    }
    pub fn rollout() -> usize {
        128
    }
    pub fn temperature() -> f64 {
        1.0
    }
    pub fn yes() -> bool {
        true
    }
    pub fn clip() -> f64 {
        0.2
    }
    pub fn entropy() -> f64 {
        0.01
    }
    pub fn value() -> f64 {
        0.5
    }
    pub fn gamma() -> f64 {
        0.99
    }
    pub fn epochs() -> usize {
        4
    }
    pub fn lr() -> f64 {
        2.5e-4
    }
    pub fn meta_lr() -> f64 {
        1e-3
    }
    pub fn minibatch() -> usize {
        64
    }
    pub fn low_level_batch() -> usize {
        2048
    }
    pub fn meta_minibatch() -> usize {
        16
    }
    pub fn grad_clip() -> f64 {
        0.5
    }
    pub fn train_eval_episodes() -> usize {
        100
    }
    pub fn episodes() -> usize {
        1000
    }
    pub fn top_k() -> usize {
        100
    }
    pub fn metric() -> GroundMetric {
        GroundMetric::Manhattan
    }
    pub fn out_dir() -> PathBuf {
        PathBuf::from("runs")
    }
}

impl RunConfig {
    /// Defaults for every optional key.
    pub fn new(variant: Variant) -> Self {
        Self::from_toml_str(&format!("variant = \"{variant}\"")).expect("defaults parse")
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Self::from_toml_with(text, &[])
    }

    /// Parses `text` and applies `key=value` overrides on top. Override
    /// values use TOML syntax; anything that does not parse as a TOML value
    /// is taken as a bare string.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.message().to_string()))?;
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| ConfigError::BadOverride(o.clone()))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(ConfigError::BadOverride(o.clone()));
            }
            let value = format!("v = {v}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(v.to_string()));
            table.insert(k.to_string(), value);
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_with(&text, overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key, reason: &str| {
            Err(ConfigError::Invalid {
                key,
                reason: reason.to_string(),
            })
        };
        if self.task > 3 {
            return bad("task", "must be 0, 1, 2 or 3");
        }
        if self.workers == 0 {
            return bad("workers", "must be at least 1");
        }
        for (key, v) in [
            ("meta_batch", self.meta_batch),
            ("interaction_budget", self.interaction_budget),
            ("reach_budget", self.reach_budget),
            ("fallback_budget", self.fallback_budget),
            ("base_rollout", self.base_rollout),
            ("low_level_batch", self.low_level_batch),
        ] {
            if v == 0 {
                return bad(key, "must be at least 1");
            }
        }
        if !(self.temperature > 0.0) {
            return bad("temperature", "must be positive");
        }
        if !(0.0..=1.0).contains(&self.stop_at_success) {
            return bad("stop_at_success", "must lie in [0, 1]");
        }
        if self.top_k == 0 {
            return bad("top_k", "must be at least 1");
        }
        self.layout()
            .validate()
            .or_else(|e| bad("layout", &e.to_string()))?;
        for (key, p) in [("meta_lr", self.meta_ppo()), ("lr", self.ppo())] {
            if let Err(e) = p.validate() {
                return bad(key, &e.to_string());
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        let mut l = match self.layout {
            LayoutPreset::Mini => Layout::mini(),
            LayoutPreset::Full => Layout::default(),
        };
        if self.rows > 0 {
            l.rows = self.rows;
        }
        if self.cols > 0 {
            l.cols = self.cols;
        }
        if self.room_size > 0 {
            l.room_size = self.room_size;
        }
        if let Some(b) = self.blockers {
            l.blockers = b;
        }
        if self.max_steps > 0 {
            l.max_steps = Some(self.max_steps);
        }
        l
    }

    /// PPO settings for interaction, reach and base policies.
    pub fn ppo(&self) -> PpoConfig {
        PpoConfig {
            clip_eps: self.clip_eps,
            entropy_coef: self.entropy_coef,
            value_coef: self.value_coef,
            lr: self.lr,
            epochs: self.epochs,
            minibatch: self.minibatch,
            gamma: self.gamma,
            max_grad_norm: self.max_grad_norm,
            normalize_advantages: self.normalize_advantages,
        }
    }

    pub fn meta_ppo(&self) -> PpoConfig {
        PpoConfig {
            lr: self.meta_lr,
            minibatch: self.meta_minibatch,
            gamma: self.meta_gamma,
            ..self.ppo()
        }
    }

    pub fn recommend(&self) -> RecommendConfig {
        RecommendConfig {
            temperature: self.temperature,
            mask_incompatible: self.mask_incompatible,
        }
    }
}
