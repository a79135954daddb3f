//! Experiment configuration: TOML sections, dotted `key=value` overrides and
//! a stable content hash.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimators::{BaselineOptions, EstimatorKind};
use crate::rewards::{CenteringKind, RewardWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CatalogConfig {
    pub n_items: usize,
    pub n_attributes: usize,
    pub attrs_per_item: usize,
    pub embedding_dim: usize,
    /// Weight of shared attribute directions in item embeddings.
    pub coupling: f64,
    pub decay: f64,
    /// Simulator softmax temperature.
    pub temperature: f64,
}

impl Default for CatalogConfig {
    fn default() -> Self {
        CatalogConfig {
            n_items: 30,
            n_attributes: 8,
            attrs_per_item: 2,
            embedding_dim: 8,
            coupling: 0.8,
            decay: 0.5,
            temperature: 0.2,
        }
    }
}

/// Synthetic users, demonstration mining and task construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_users: usize,
    pub sequence_length: usize,
    pub walk_bias: f64,
    pub history_length: usize,
    pub min_shared_attributes: usize,
    pub archive_trailing: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n_users: 300,
            sequence_length: 14,
            walk_bias: 0.8,
            history_length: 3,
            min_shared_attributes: 1,
            archive_trailing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub temperature: f64,
    pub l_max: usize,
    pub mask_target: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            temperature: 1.0,
            l_max: 10,
            mask_target: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    /// Zero skips pretraining; the policy then starts from uniform weights.
    pub epochs: usize,
    pub lr: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig { epochs: 150, lr: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Inputs sampled per epoch.
    pub batch_size: usize,
    /// Rollouts per input.
    pub samples_per_input: usize,
    pub kl_coef: f64,
    pub estimator: EstimatorKind,
    pub centering: CenteringKind,
    pub epsilon: f64,
    pub warmup_epochs: usize,
    pub leave_one_out: bool,
    pub eval_inputs: usize,
    pub eval_greedy: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            lr: 3.0,
            batch_size: 128,
            samples_per_input: 16,
            kl_coef: 0.01,
            estimator: EstimatorKind::PositionBaseline,
            centering: CenteringKind::Normalize,
            epsilon: 0.0,
            warmup_epochs: 1,
            leave_one_out: false,
            eval_inputs: 64,
            eval_greedy: false,
        }
    }
}

impl TrainConfig {
    pub fn baseline_options(&self) -> BaselineOptions {
        BaselineOptions {
            leave_one_out: self.leave_one_out,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticConfig {
    pub hidden: usize,
    pub lr: f64,
    pub loss_coef: f64,
    /// Critic-only fitting epochs before policy updates begin.
    pub warmup_epochs: usize,
}

impl Default for CriticConfig {
    fn default() -> Self {
        CriticConfig {
            hidden: 256,
            lr: 0.05,
            loss_coef: 0.25,
            warmup_epochs: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub catalog: CatalogConfig,
    pub data: DataConfig,
    pub policy: PolicyConfig,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
    pub rewards: RewardWeights,
    pub critic: CriticConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Applies `section.key=value` overrides; values parse as TOML scalars
    /// and fall back to bare strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(&self.to_toml()).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            let o = o.as_ref();
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            let value = parse_scalar(raw.trim());
            let path: Vec<&str> = key.trim().split('.').collect();
            let (last, parents) = path.split_last().expect("split yields at least one part");
            let mut cursor = &mut table;
            for p in parents {
                cursor = cursor
                    .entry(p.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("{key}: {p} is not a section")))?;
            }
            cursor.insert(last.to_string(), value);
        }
        let cfg: ExperimentConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        let c = &self.catalog;
        if c.n_items < 2 || c.attrs_per_item == 0 || c.attrs_per_item > c.n_attributes || c.embedding_dim == 0 {
            return fail(format!("invalid catalog sizes {c:?}"));
        }
        if !(0.0..=1.0).contains(&c.coupling) {
            return fail(format!("catalog coupling must lie in [0,1], got {}", c.coupling));
        }
        if !(c.decay > 0.0 && c.decay < 1.0) || !(c.temperature > 0.0) {
            return fail("catalog decay must lie in (0,1) and temperature be positive".into());
        }
        if self.policy.l_max == 0 || !(self.policy.temperature > 0.0) {
            return fail("policy needs l_max >= 1 and a positive temperature".into());
        }
        let d = &self.data;
        if d.history_length == 0 || d.history_length >= d.sequence_length || d.n_users < 10 {
            return fail("data needs 1 <= history_length < sequence_length and at least 10 users".into());
        }
        if !(0.0..=1.0).contains(&d.walk_bias) || d.min_shared_attributes == 0 {
            return fail("walk_bias must lie in [0,1] and min_shared_attributes be >= 1".into());
        }
        let t = &self.train;
        if t.batch_size == 0 || t.samples_per_input == 0 || t.eval_inputs == 0 {
            return fail("batch_size, samples_per_input and eval_inputs must be positive".into());
        }
        if t.estimator.needs_group() && t.samples_per_input < 2 {
            return fail(format!("estimator {} needs samples_per_input >= 2", t.estimator));
        }
        if !(t.kl_coef >= 0.0) || !t.lr.is_finite() {
            return fail("kl_coef must be >= 0 and lr finite".into());
        }
        if t.centering.needs_stats() && t.warmup_epochs == 0 {
            return fail(format!("centering {:?} needs at least one warm-up epoch", t.centering));
        }
        let w = self.rewards.as_array();
        if w.iter().any(|x| !x.is_finite()) || w.iter().all(|x| *x == 0.0) {
            return fail("reward weights must be finite and not all zero".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).into()
    }
}

fn parse_scalar(raw: &str) -> toml::Value {
    let wrapped = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&wrapped) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
