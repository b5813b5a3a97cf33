//! Run configuration: one JSON document with defaults for every field,
//! overridden by `IBPD_*` environment variables and `--set key=value` flags.
//! The fully resolved config is echoed verbatim into the output directory.

use ibpd_core::data::SynthEcgConfig;
use ibpd_core::ibp::IbpConfig;
use ibpd_core::model::{Likelihood, ModelConfig};
use ibpd_core::training::TrainConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENV_PREFIX: &str = "IBPD_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config json in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("override {key:?} does not match any config field")]
    UnknownKey { key: String },
    #[error("override {key:?} has invalid value {value:?}: {detail}")]
    BadValue {
        key: String,
        value: String,
        detail: String,
    },
    #[error("resolved config is invalid: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DigitsConfig {
    /// Number of images to draw from the source (IDX files or the built-in
    /// glyph set).
    pub n_images: usize,
    /// Directory holding `train-images-idx3-ubyte` / `train-labels-idx1-ubyte`;
    /// when absent the built-in synthetic glyph set is used with a warning.
    pub mnist_dir: Option<String>,
    pub colorize_seed: u64,
}

impl Default for DigitsConfig {
    fn default() -> Self {
        Self {
            n_images: 4000,
            mnist_dir: None,
            colorize_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSection {
    /// "synth-ecg" or "colored-digits".
    pub preset: String,
    pub split_fractions: [f64; 3],
    pub synth_ecg: SynthEcgConfig,
    pub digits: DigitsConfig,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            preset: "synth-ecg".into(),
            split_fractions: [0.6, 0.2, 0.2],
            synth_ecg: SynthEcgConfig::default(),
            digits: DigitsConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisSection {
    pub seed: u64,
    pub probe_epochs: usize,
    pub probe_learning_rate: f64,
    /// Hidden width for a nonlinear probe; null keeps the probe linear.
    pub probe_hidden: Option<usize>,
    pub gap_threshold: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            seed: 7,
            probe_epochs: 300,
            probe_learning_rate: 0.05,
            probe_hidden: None,
            gap_threshold: 0.9,
        }
    }
}

/// Model section: the architecture knobs. `input_dim` and `task_classes`
/// always come from the dataset at train time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub ibp: IbpConfig,
    pub enc_hidden: Vec<usize>,
    pub task_hidden: Vec<usize>,
    pub dec_hidden: Vec<usize>,
    pub likelihood: Likelihood,
    pub zeta: f64,
    pub temperature: f64,
    pub log_var_floor: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelConfig::default();
        Self {
            ibp: d.ibp,
            enc_hidden: d.enc_hidden,
            task_hidden: d.task_hidden,
            dec_hidden: d.dec_hidden,
            likelihood: d.likelihood,
            zeta: d.zeta,
            temperature: d.temperature,
            log_var_floor: d.log_var_floor,
        }
    }
}

impl ModelSection {
    pub fn to_model_config(&self, input_dim: usize, task_classes: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            task_classes,
            ibp: self.ibp,
            enc_hidden: self.enc_hidden.clone(),
            task_hidden: self.task_hidden.clone(),
            dec_hidden: self.dec_hidden.clone(),
            likelihood: self.likelihood,
            zeta: self.zeta,
            temperature: self.temperature,
            log_var_floor: self.log_var_floor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub analysis: AnalysisSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: DatasetSection::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            analysis: AnalysisSection::default(),
        }
    }
}

impl RunConfig {
    /// Load with full precedence: defaults ← JSON file ← `IBPD_*` env vars
    /// ← `--set` overrides.
    pub fn resolve(
        config_path: Option<&str>,
        env: &[(String, String)],
        sets: &[(String, String)],
    ) -> Result<Self, ConfigError> {
        let mut value = match config_path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.into(),
                    source,
                })?;
                let file: serde_json::Value =
                    serde_json::from_str(&text).map_err(|source| ConfigError::Json {
                        path: p.into(),
                        source,
                    })?;
                let mut base = serde_json::to_value(RunConfig::default()).expect("serializes");
                merge(&mut base, file);
                base
            }
            None => serde_json::to_value(RunConfig::default()).expect("serializes"),
        };
        for (key, raw) in env {
            if let Some(rest) = key.strip_prefix(ENV_PREFIX) {
                let tokens: Vec<String> = rest.split('_').map(|t| t.to_lowercase()).collect();
                apply_tokens(&mut value, &tokens, raw, key)?;
            }
        }
        for (key, raw) in sets {
            let tokens: Vec<String> = key
                .split(['.', '_'])
                .map(|t| t.to_lowercase())
                .collect();
            apply_tokens(&mut value, &tokens, raw, key)?;
        }
        let cfg: RunConfig = serde_json::from_value(value)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if cfg.dataset.preset != "synth-ecg" && cfg.dataset.preset != "colored-digits" {
            return Err(ConfigError::Invalid(format!(
                "unknown preset {:?} (expected synth-ecg or colored-digits)",
                cfg.dataset.preset
            )));
        }
        Ok(cfg)
    }

    /// Canonical pretty-printed echo.
    pub fn echo_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// FNV-1a hash of the canonical echo, for manifests.
    pub fn hash(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.echo_json().as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

/// Deep-merge `patch` into `base` (objects merge key-wise, everything else
/// replaces).
fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Walk the config tree matching `tokens` against keys greedily (longest
/// underscore-joined key first), then parse and assign the value.
fn apply_tokens(
    value: &mut serde_json::Value,
    tokens: &[String],
    raw: &str,
    original_key: &str,
) -> Result<(), ConfigError> {
    if tokens.is_empty() {
        return Err(ConfigError::UnknownKey {
            key: original_key.into(),
        });
    }
    let obj = match value.as_object_mut() {
        Some(o) => o,
        None => {
            return Err(ConfigError::UnknownKey {
                key: original_key.into(),
            })
        }
    };
    // try the longest joined prefix first so batch_size beats batch.size
    for take in (1..=tokens.len()).rev() {
        let candidate = tokens[..take].join("_");
        let matched = obj
            .keys()
            .find(|k| k.to_lowercase().replace('-', "_") == candidate)
            .cloned();
        if let Some(key) = matched {
            let slot = obj.get_mut(&key).expect("key present");
            if take == tokens.len() {
                *slot = parse_value(raw);
                return Ok(());
            }
            if apply_tokens(slot, &tokens[take..], raw, original_key).is_ok() {
                return Ok(());
            }
        }
    }
    Err(ConfigError::UnknownKey {
        key: original_key.into(),
    })
}

fn parse_value(raw: &str) -> serde_json::Value {
    serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()))
}
