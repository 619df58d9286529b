//! Experiment configuration, read from JSON, with `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::acr::ALPHA_GRID;
use crate::datasets::{SbmSpec, TaskStreamSpec};
use crate::error::{AdrError, Result};
use crate::graph::Split;

/// Ridge weights accepted in grid configurations: `10^i`, `−3 ≤ i ≤ 0`.
pub const GAMMA_GRID: [f64; 4] = [1e-3, 1e-2, 1e-1, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Adr,
    Bare,
    Joint,
    FrozenAnalytic,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Adr => "adr",
            Method::Bare => "bare",
            Method::Joint => "joint",
            Method::FrozenAnalytic => "frozen_analytic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub model: u64,
    pub dropout: u64,
    pub buffer: u64,
    pub split: u64,
}

impl Seeds {
    pub fn from_base(seed: u64) -> Self {
        Seeds {
            model: seed,
            dropout: seed.wrapping_add(1),
            buffer: seed.wrapping_add(2),
            split: seed.wrapping_add(3),
        }
    }
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds::from_base(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// Directory holding `features.tsv`, `labels.tsv`, `edges.tsv`.
    Files { dir: PathBuf },
    Sbm(SbmSpec),
}

/// Task layout of the stream; the split seed lives in [`Seeds`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamLayout {
    pub base_classes: usize,
    #[serde(default = "two")]
    pub increment_classes: usize,
    #[serde(default = "default_split")]
    pub split_ratio: [f64; 3],
    #[serde(default)]
    pub shuffle_classes: bool,
}

fn two() -> usize {
    2
}

fn default_split() -> [f64; 3] {
    [0.6, 0.2, 0.2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    #[serde(default = "defaults::hidden_dims")]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "defaults::lr_base")]
    pub lr_base: f64,
    #[serde(default = "defaults::lr_incremental")]
    pub lr_incremental: f64,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::dropout")]
    pub dropout: f64,
    #[serde(default = "defaults::gamma")]
    pub gamma: f64,
    #[serde(default = "defaults::alpha")]
    pub alpha: usize,
    #[serde(default)]
    pub seeds: Seeds,
    pub dataset: DatasetSource,
    pub stream: StreamLayout,
    #[serde(default = "defaults::eval_split")]
    pub eval_split: Split,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "defaults::yes")]
    pub save_checkpoints: bool,
}

mod defaults {
    use crate::graph::Split;

    pub fn hidden_dims() -> Vec<usize> {
        vec![128, 128]
    }
    pub fn lr_base() -> f64 {
        1e-3
    }
    pub fn lr_incremental() -> f64 {
        1e-4
    }
    pub fn epochs() -> usize {
        200
    }
    pub fn batch_size() -> usize {
        2000
    }
    pub fn dropout() -> f64 {
        0.5
    }
    pub fn gamma() -> f64 {
        0.1
    }
    pub fn alpha() -> usize {
        1
    }
    pub fn eval_split() -> Split {
        Split::Test
    }
    pub fn yes() -> bool {
        true
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| AdrError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn stream_spec(&self) -> TaskStreamSpec {
        TaskStreamSpec {
            base_classes: self.stream.base_classes,
            increment_classes: self.stream.increment_classes,
            split_ratio: self.stream.split_ratio,
            seed: self.seeds.split,
            shuffle_classes: self.stream.shuffle_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(AdrError::Config(m));
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return bad("hidden_dims must be a nonempty list of positive sizes".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return bad(format!("gamma {} must be finite and ≥ 0", self.gamma));
        }
        if self.alpha == 0 {
            return bad("alpha must be ≥ 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1".into());
        }
        for lr in [self.lr_base, self.lr_incremental] {
            if !(lr >= 0.0) || !lr.is_finite() {
                return bad(format!("learning rate {lr} must be finite and ≥ 0"));
            }
        }
        Ok(())
    }

    /// Applies `dotted.key=value` overrides. Values are parsed as JSON when
    /// possible and as plain strings otherwise. Keys that do not exist in the
    /// config are rejected, and the result is re-validated against the schema.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut value = serde_json::to_value(self)?;
        for ov in overrides {
            apply_override(&mut value, ov.as_ref())?;
        }
        let cfg: ExperimentConfig = serde_json::from_value(value)
            .map_err(|e| AdrError::Config(format!("override does not type-check: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// True when γ and α both sit on the published search grids.
    pub fn on_grid(&self) -> bool {
        gamma_on_grid(self.gamma) && ALPHA_GRID.contains(&self.alpha)
    }
}

pub fn gamma_on_grid(gamma: f64) -> bool {
    GAMMA_GRID.iter().any(|g| (g - gamma).abs() <= 1e-12 * g)
}

pub fn apply_override(root: &mut Value, ov: &str) -> Result<()> {
    let (key, raw) = ov
        .split_once('=')
        .ok_or_else(|| AdrError::Config(format!("override {ov:?} is not key=value")))?;
    let parsed = serde_json::from_str::<Value>(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| AdrError::Config(format!("override key {key:?}: {part:?} is not inside an object")))?;
        let child = obj
            .get_mut(*part)
            .ok_or_else(|| AdrError::Config(format!("unknown config key {key:?}")))?;
        if i + 1 == parts.len() {
            *child = parsed;
            return Ok(());
        }
        node = child;
    }
    unreachable!("split yields at least one part")
}
