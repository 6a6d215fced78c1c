//! Flat run configuration shared by every command.
//!
//! The file is TOML with one key per field; `key=value` overrides are
//! applied on top and must name an existing key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::batching::BatchSettings;
use crate::error::{Error, Result};
use crate::optim::{OptimizerSettings, Schedule};
use crate::synth::{GeneratorConfig, Signals};

use super::train::{ModelSpec, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,

    pub num_layers: usize,
    pub hidden_units: usize,
    pub dropout_rate: f64,
    /// 0 means no embedding layer.
    pub embedding_dim: usize,
    /// Optional pre-trained embedding table (one whitespace-separated row per vocabulary index).
    pub embedding_file: String,
    pub freeze_embedding: bool,

    pub adam_epochs: usize,
    pub sgd_epochs: usize,
    pub adam_lr: f64,
    pub sgd_lr: f64,
    pub momentum: f64,
    pub clip_norm: f64,
    pub patience: usize,

    pub batching: String,
    pub batch_size: usize,
    pub sort_window: usize,
    pub max_len: usize,

    pub train: String,
    pub valid: String,
    pub test: String,

    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    pub base_close_logit: f64,
    pub effect_misspelling: f64,
    pub effect_punct_overuse: f64,
    pub effect_all_caps: f64,
    pub rate_misspelling: f64,
    pub rate_punct_overuse: f64,
    pub rate_all_caps: f64,
    pub tabular_weights: Vec<f64>,
    pub median_target: usize,
    pub max_text_len: usize,

    /// Embedding width of the randomly initialized ablation arm when `embedding_dim` is 0.
    pub ablation_embedding_dim: usize,
    pub fusion_seeds: usize,
    pub downstream_l2: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let schedule = Schedule::default();
        let batch = BatchSettings::default();
        let opt = OptimizerSettings::default();
        let synth = GeneratorConfig::default();
        Self {
            seed: 0,
            num_layers: 4,
            hidden_units: 256,
            dropout_rate: 0.3,
            embedding_dim: 0,
            embedding_file: String::new(),
            freeze_embedding: true,
            adam_epochs: schedule.adam_epochs,
            sgd_epochs: schedule.sgd_epochs,
            adam_lr: schedule.adam_lr,
            sgd_lr: schedule.sgd_lr,
            momentum: opt.momentum,
            clip_norm: 5.0,
            patience: 10,
            batching: batch.batching,
            batch_size: batch.batch_size,
            sort_window: batch.sort_window,
            max_len: batch.max_len,
            train: "data/train.jsonl".into(),
            valid: "data/valid.jsonl".into(),
            test: "data/test.jsonl".into(),
            n_train: 5_000,
            n_valid: 1_000,
            n_test: 1_000,
            base_close_logit: synth.base_close_logit,
            effect_misspelling: synth.effects.misspelling,
            effect_punct_overuse: synth.effects.punct_overuse,
            effect_all_caps: synth.effects.all_caps,
            rate_misspelling: synth.signal_rates.misspelling,
            rate_punct_overuse: synth.signal_rates.punct_overuse,
            rate_all_caps: synth.signal_rates.all_caps,
            tabular_weights: synth.tabular_weights,
            median_target: synth.median_target,
            max_text_len: synth.max_len,
            ablation_embedding_dim: 32,
            fusion_seeds: 5,
            downstream_l2: 1e-4,
        }
    }
}

fn parse_override(raw: &str) -> Result<(String, toml::Value)> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("override `{raw}` is not key=value")))?;
    let key = key.trim().to_string();
    let value = value.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((key, parsed))
}

impl RunConfig {
    /// Reads `path` (or starts from defaults) and applies `overrides`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::InvalidConfig(format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| Error::InvalidConfig(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        let known = toml::Table::try_from(RunConfig::default()).expect("config serializes");
        for (key, _) in table.iter() {
            if !known.contains_key(key) {
                return Err(Error::InvalidConfig(format!("unknown config key `{key}`")));
            }
        }
        for raw in overrides {
            let (key, mut value) = parse_override(raw)?;
            let reference = known
                .get(&key)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown config key `{key}`")))?;
            // `lr=1` should still land in a float field.
            if let (toml::Value::Float(_), toml::Value::Integer(i)) = (reference, &value) {
                value = toml::Value::Float(*i as f64);
            }
            table.insert(key, value);
        }
        let config: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::InvalidConfig("patience must be >= 1".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::InvalidConfig("clip_norm must be positive".into()));
        }
        self.schedule().validate()?;
        self.batch_settings().build()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            adam_epochs: self.adam_epochs,
            sgd_epochs: self.sgd_epochs,
            adam_lr: self.adam_lr,
            sgd_lr: self.sgd_lr,
        }
    }

    pub fn batch_settings(&self) -> BatchSettings {
        BatchSettings {
            batching: self.batching.clone(),
            batch_size: self.batch_size,
            sort_window: self.sort_window,
            max_len: self.max_len,
        }
    }

    pub fn embedding_path(&self) -> Option<PathBuf> {
        (!self.embedding_file.is_empty()).then(|| PathBuf::from(&self.embedding_file))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            model: ModelSpec {
                num_layers: self.num_layers,
                hidden_units: self.hidden_units,
                dropout_rate: self.dropout_rate,
                embedding_dim: (self.embedding_dim > 0).then_some(self.embedding_dim),
                embedding_file: self.embedding_path(),
                freeze_embedding: self.freeze_embedding,
            },
            schedule: self.schedule(),
            batching: self.batch_settings(),
            optimizer: OptimizerSettings {
                momentum: self.momentum,
                ..OptimizerSettings::default()
            },
            clip_norm: self.clip_norm,
            patience: self.patience,
            seed: self.seed,
        }
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            n: self.n_train + self.n_valid + self.n_test,
            base_close_logit: self.base_close_logit,
            effects: Signals {
                misspelling: self.effect_misspelling,
                punct_overuse: self.effect_punct_overuse,
                all_caps: self.effect_all_caps,
            },
            signal_rates: Signals {
                misspelling: self.rate_misspelling,
                punct_overuse: self.rate_punct_overuse,
                all_caps: self.rate_all_caps,
            },
            tabular_weights: self.tabular_weights.clone(),
            median_target: self.median_target,
            max_len: self.max_text_len,
            seed: self.seed,
        }
    }

    /// Dataset paths, which must be distinct.
    pub fn split_paths(&self) -> Result<[PathBuf; 3]> {
        if self.train == self.valid || self.train == self.test || self.valid == self.test {
            return Err(Error::InvalidConfig("train, valid and test paths must differ".into()));
        }
        Ok([self.train.clone().into(), self.valid.clone().into(), self.test.clone().into()])
    }
}
