use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::config::{Ablations, ModelConfig};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub batch_size: usize,
    /// Probability that a training fact lands in the observed set of an epoch.
    pub p_obs: f64,
    pub weight_decay: f64,
    pub clip_norm: f64,
    /// Validate every this many epochs; 0 disables periodic validation.
    pub validation_interval: usize,
    pub seed: u64,
    pub model: ModelConfig,
    pub ablations: Ablations,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 2000,
            warmup_epochs: 200,
            lr_max: 1e-3,
            lr_min: 1e-5,
            batch_size: 1024,
            p_obs: 0.7,
            weight_decay: 0.01,
            clip_norm: 1.0,
            validation_interval: 50,
            seed: 0,
            model: ModelConfig::default(),
            ablations: Ablations::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<TrainConfig> {
        let cfg: TrainConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::Config(format!(
                "warmup_epochs {} must be below epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(self.p_obs > 0.0 && self.p_obs < 1.0) {
            return Err(Error::Config(format!("p_obs {} outside (0, 1)", self.p_obs)));
        }
        if !(self.lr_max > 0.0 && self.lr_min > 0.0 && self.lr_min <= self.lr_max) {
            return Err(Error::Config("need 0 < lr_min <= lr_max".into()));
        }
        if !(self.clip_norm > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("clip_norm must be positive and weight_decay non-negative".into()));
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `lr_max`, then cosine decay reaching `lr_min` at the last epoch.
pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    let w = cfg.warmup_epochs;
    if epoch < w {
        return cfg.lr_max * epoch as f64 / w as f64;
    }
    let span = cfg.epochs.saturating_sub(1).saturating_sub(w);
    if span == 0 {
        return cfg.lr_max;
    }
    let progress = ((epoch - w) as f64 / span as f64).min(1.0);
    cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + (PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_points() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(&cfg, 0), 0.0);
        assert!((lr_at(&cfg, 100) - 5e-4).abs() < 1e-15);
        assert!((lr_at(&cfg, 200) - 1e-3).abs() < 1e-15);
        assert!((lr_at(&cfg, 1999) - 1e-5).abs() < 1e-9);
        let mid = 200 + (1999 - 200) / 2;
        let closed = 1e-5 + 0.5 * (1e-3 - 1e-5) * (1.0 + (PI * (mid - 200) as f64 / 1799.0).cos());
        assert!((lr_at(&cfg, mid) - closed).abs() < 1e-15);
        for e in 201..2000 {
            assert!(lr_at(&cfg, e) <= lr_at(&cfg, e - 1));
        }
    }

    #[test]
    fn toml_rejects_unknown_keys() {
        let cfg = TrainConfig::default();
        let back = TrainConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert!(TrainConfig::from_toml("epochs = 10\nwarmup_epochs = 1\nbogus = 1\n").is_err());
        assert!(TrainConfig::from_toml("[ablations]\nnot_a_switch = true\n").is_err());
        assert!(TrainConfig::from_toml("epochs = 10\nwarmup_epochs = 10\n").is_err());
        assert!(TrainConfig::from_toml("p_obs = 1.0\n").is_err());
        let parsed = TrainConfig::from_toml("epochs = 10\nwarmup_epochs = 2\n[ablations]\nlp_loss = true\n").unwrap();
        assert!(parsed.ablations.lp_loss);
    }
}
