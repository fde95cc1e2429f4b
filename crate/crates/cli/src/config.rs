//! Run configuration: nested defaults, flat dotted-key JSON overrides and
//! a canonical digest.
//!
//! Precedence, lowest to highest: built-in defaults, the `--config` file,
//! command-line flags.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use supnotmiwae::baselines::{BaselineConfig, SimpleImpute, Variant};
use supnotmiwae::data::{MissingMechanismConfig, SyntheticConfig};
use supnotmiwae::model::{KernelConfig, ModelConfig};
use supnotmiwae::objective::{Ablation, SamplingConfig, TrainConfig};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub n: usize,
    pub t_len: usize,
    pub d: usize,
    pub classes: usize,
    pub noise_std: f64,
    pub ar_rho: f64,
    pub noise_cross_corr: f64,
    pub class_offset: f64,
    pub class_freq: f64,
    pub class_phase: f64,
    pub phase_jitter: f64,
    pub signal_features: Option<Vec<usize>>,
    pub missing: MissingMechanismConfig,
    pub val_frac: f64,
    pub test_frac: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        let s = SyntheticConfig::default();
        Self {
            n: s.n,
            t_len: s.t_len,
            d: s.d,
            classes: s.classes,
            noise_std: s.noise_std,
            ar_rho: s.ar_rho,
            noise_cross_corr: s.noise_cross_corr,
            class_offset: s.class_offset,
            class_freq: s.class_freq,
            class_phase: s.class_phase,
            phase_jitter: s.phase_jitter,
            signal_features: s.signal_features,
            missing: s.missing,
            val_frac: 0.15,
            test_frac: 0.15,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub z_dim: usize,
    pub hidden: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub cls_layers: usize,
    pub conv_width: usize,
    pub conv_channels: usize,
    pub mis_hidden: usize,
    pub kernel: KernelConfig,
    pub online: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            z_dim: m.z_dim,
            hidden: m.hidden,
            heads: m.heads,
            enc_layers: m.enc_layers,
            dec_layers: m.dec_layers,
            cls_layers: m.cls_layers,
            conv_width: m.conv_width,
            conv_channels: m.conv_channels,
            mis_hidden: m.mis_hidden,
            kernel: m.kernel,
            online: m.online,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub oversample: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            batch_size: t.batch_size,
            lr: t.lr,
            weight_decay: t.weight_decay,
            max_epochs: t.max_epochs,
            patience: t.patience,
            oversample: t.oversample,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub hidden: usize,
    pub simple_impute: SimpleImpute,
}

impl Default for BaselineSection {
    fn default() -> Self {
        let b = BaselineConfig::default();
        Self {
            hidden: b.hidden,
            simple_impute: b.simple_impute,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImputeSection {
    /// Particles per series in model mode.
    pub draws: usize,
    pub holdout_rate: f64,
}

impl Default for ImputeSection {
    fn default() -> Self {
        Self {
            draws: 20,
            holdout_rate: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub precision: Precision,
    pub data: DataSection,
    pub model: ModelSection,
    pub sampling: SamplingConfig,
    pub train: TrainSection,
    pub baseline: BaselineSection,
    pub impute: ImputeSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            precision: Precision::F64,
            data: DataSection::default(),
            model: ModelSection::default(),
            sampling: SamplingConfig::default(),
            train: TrainSection::default(),
            baseline: BaselineSection::default(),
            impute: ImputeSection::default(),
        }
    }
}

/// Models selectable with `--model`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Ours(Ablation),
    Gru(Variant),
}

impl ModelKind {
    pub const NAMES: [&'static str; 9] = [
        "ours",
        "ours-no-obsdropout",
        "ours-no-mnar",
        "ours-no-supervision",
        "gru-zero",
        "gru-mean",
        "gru-forward",
        "gru-simple",
        "gru-d",
    ];

    pub fn parse(name: &str) -> Result<Self, CliError> {
        let full = Ablation::default();
        Ok(match name {
            "ours" => Self::Ours(full),
            "ours-no-obsdropout" => Self::Ours(Ablation {
                obs_dropout: false,
                ..full
            }),
            "ours-no-mnar" => Self::Ours(Ablation { mnar: false, ..full }),
            "ours-no-supervision" => Self::Ours(Ablation {
                supervision: false,
                ..full
            }),
            other => match other.parse::<Variant>() {
                Ok(v) if other.starts_with("gru") => Self::Gru(v),
                _ => {
                    return Err(CliError::Usage(format!(
                        "unknown model `{name}` (expected one of: {})",
                        Self::NAMES.join(", ")
                    )))
                }
            },
        })
    }
}

impl RunConfig {
    pub fn synthetic(&self) -> SyntheticConfig {
        let d = &self.data;
        SyntheticConfig {
            n: d.n,
            t_len: d.t_len,
            d: d.d,
            classes: d.classes,
            missing: d.missing.clone(),
            noise_std: d.noise_std,
            ar_rho: d.ar_rho,
            noise_cross_corr: d.noise_cross_corr,
            class_offset: d.class_offset,
            class_freq: d.class_freq,
            class_phase: d.class_phase,
            phase_jitter: d.phase_jitter,
            signal_features: d.signal_features.clone(),
            seed: self.seed,
        }
    }

    pub fn model_config(&self, n_features: usize, n_classes: usize) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            n_features,
            n_classes,
            z_dim: m.z_dim,
            hidden: m.hidden,
            heads: m.heads,
            enc_layers: m.enc_layers,
            dec_layers: m.dec_layers,
            cls_layers: m.cls_layers,
            conv_width: m.conv_width,
            conv_channels: m.conv_channels,
            mis_hidden: m.mis_hidden,
            kernel: m.kernel.clone(),
            online: m.online,
        }
    }

    pub fn train_config(&self, ablation: Ablation) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch_size: t.batch_size,
            lr: t.lr,
            weight_decay: t.weight_decay,
            max_epochs: t.max_epochs,
            patience: t.patience,
            oversample: t.oversample,
            seed: self.seed,
            ablation,
        }
    }

    pub fn baseline_config(&self, variant: Variant) -> BaselineConfig {
        BaselineConfig {
            variant,
            hidden: self.baseline.hidden,
            simple_impute: self.baseline.simple_impute,
            online: self.model.online,
        }
    }

    pub fn flatten(&self) -> BTreeMap<String, Value> {
        let mut out = BTreeMap::new();
        flatten_into("", &serde_json::to_value(self).expect("config serializes"), &mut out);
        out
    }

    pub fn from_flat(flat: &BTreeMap<String, Value>) -> Result<Self, CliError> {
        let mut root = Map::new();
        for (key, value) in flat {
            let mut node = &mut root;
            let parts: Vec<&str> = key.split('.').collect();
            for p in &parts[..parts.len() - 1] {
                node = node
                    .entry(p.to_string())
                    .or_insert_with(|| Value::Object(Map::new()))
                    .as_object_mut()
                    .expect("dotted keys nest objects");
            }
            node.insert(parts[parts.len() - 1].to_string(), value.clone());
        }
        serde_json::from_value(Value::Object(root)).map_err(|e| CliError::Usage(format!("invalid configuration: {e}")))
    }

    /// Overrides keys from a JSON object of flat dotted keys; every key
    /// must already exist.
    pub fn apply_overrides(&self, overrides: &Map<String, Value>) -> Result<Self, CliError> {
        let mut flat = self.flatten();
        for (key, value) in overrides {
            match flat.get_mut(key) {
                Some(slot) => *slot = value.clone(),
                None => return Err(CliError::Usage(format!("unknown configuration key `{key}`"))),
            }
        }
        Self::from_flat(&flat)
    }

    pub fn apply_file(&self, path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(|e| CliError::Usage(format!("{e:#}")))?;
        let value: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {} is not valid JSON: {e}", path.display())))?;
        let Value::Object(map) = value else {
            return Err(CliError::Usage(format!("config {} must be a JSON object", path.display())));
        };
        self.apply_overrides(&map)
    }

    /// SHA-256 of the canonical (sorted, flattened, compact) JSON form.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(&self.flatten()).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

fn flatten_into(prefix: &str, value: &Value, out: &mut BTreeMap<String, Value>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_into(&key, v, out);
            }
        }
        leaf => {
            out.insert(prefix.to_string(), leaf.clone());
        }
    }
}
