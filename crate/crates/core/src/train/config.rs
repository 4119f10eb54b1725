use serde::{Deserialize, Serialize};

use crate::data::AugmentOps;
use crate::error::{Error, Result};
use crate::tensor::AdamConfig;

/// Every knob of a training run. Serialized field names double as the keys of
/// the flat `key = value` config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs_per_stage: usize,
    pub max_iterations: usize,
    pub lr_decay_factor: f64,
    pub plateau_patience_epochs: usize,
    pub min_learning_rate: f64,
    /// Stop a stage after this many epochs without a new best validation
    /// loss; 0 runs every epoch.
    pub early_stop_patience_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub bn_momentum: f64,
    pub flip_probability: f64,
    pub brightness_jitter: f64,
    pub crop_pad: usize,
    pub kmeans_max_rounds: usize,
    pub kmeans_tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs_per_stage: 100,
            max_iterations: 5,
            lr_decay_factor: 0.03,
            plateau_patience_epochs: 5,
            min_learning_rate: 1e-7,
            early_stop_patience_epochs: 0,
            batch_size: 32,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            bn_momentum: 0.1,
            flip_probability: 0.5,
            brightness_jitter: 0.05,
            crop_pad: 2,
            kmeans_max_rounds: 100,
            kmeans_tolerance: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return bad(format!("lr_decay_factor must lie in (0,1), got {}", self.lr_decay_factor));
        }
        if !(self.min_learning_rate > 0.0) || self.min_learning_rate > self.learning_rate {
            return bad(format!("min_learning_rate must lie in (0, learning_rate], got {}", self.min_learning_rate));
        }
        if self.max_iterations < 1 {
            return bad("max_iterations must be at least 1".into());
        }
        if self.epochs_per_stage < 1 {
            return bad("epochs_per_stage must be at least 1".into());
        }
        if self.plateau_patience_epochs < 1 {
            return bad("plateau_patience_epochs must be at least 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        for (name, v) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0,1), got {v}"));
            }
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("adam_epsilon must be positive".into());
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return bad(format!("bn_momentum must lie in (0,1], got {}", self.bn_momentum));
        }
        if self.kmeans_max_rounds < 1 || !(self.kmeans_tolerance >= 0.0) {
            return bad("k-means needs at least one round and a non-negative tolerance".into());
        }
        AugmentOps::validate(&self.augment_ops(), usize::MAX, usize::MAX).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }

    pub fn augment_ops(&self) -> AugmentOps {
        AugmentOps {
            flip_probability: self.flip_probability,
            brightness: self.brightness_jitter,
            crop_pad: self.crop_pad,
        }
    }

    /// Parse the flat `key = value` config document.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv_text(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    /// FNV-1a digest of the canonical JSON form, as 16 hex digits.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let hash =
            json.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3));
        format!("{hash:016x}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_published_protocol() {
        let c = TrainConfig::default();
        assert_eq!(c.learning_rate, 0.001);
        assert_eq!(c.epochs_per_stage, 100);
        assert_eq!(c.max_iterations, 5);
        assert_eq!(c.lr_decay_factor, 0.03);
        c.validate().unwrap();
    }

    #[test]
    fn kv_round_trip_and_partial_files() {
        let c = TrainConfig { seed: 9, epochs_per_stage: 30, ..Default::default() };
        assert_eq!(TrainConfig::from_kv_text(&c.to_kv_text()).unwrap(), c);
        let partial = TrainConfig::from_kv_text("epochs_per_stage = 7\nbatch_size = 16\n").unwrap();
        assert_eq!(partial.epochs_per_stage, 7);
        assert_eq!(partial.learning_rate, 0.001);
        assert!(TrainConfig::from_kv_text("no_such_key = 1").is_err());
    }

    #[test]
    fn invalid_values() {
        for c in [
            TrainConfig { batch_size: 1, ..Default::default() },
            TrainConfig { lr_decay_factor: 1.0, ..Default::default() },
            TrainConfig { max_iterations: 0, ..Default::default() },
            TrainConfig { brightness_jitter: 0.7, ..Default::default() },
        ] {
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn digest_tracks_content() {
        let a = TrainConfig::default();
        let b = TrainConfig { seed: 1, ..Default::default() };
        assert_eq!(a.digest(), TrainConfig::default().digest());
        assert_ne!(a.digest(), b.digest());
    }
}
