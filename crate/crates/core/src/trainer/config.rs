//! Training configuration, stored as sectioned `key = value` text (TOML) and
//! parsed strictly: unknown keys and missing sections are errors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::{EncoderConfig, ObjectiveSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub learning_rate: f64,
    /// Fractions of the total step count at which the rate is multiplied by
    /// `decay_factor`.
    pub decay_milestones: Vec<f64>,
    pub decay_factor: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Frames per training window.
    pub clip_len: usize,
    /// Global gradient-norm cap; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub optim: OptimConfig,
    pub loss: LossConfig,
    pub model: EncoderConfig,
}

impl Default for TrainConfig {
    /// Published hyperparameters where they exist: Adam at 1e-4, batch 64,
    /// 40 epochs over 16-frame clips.
    fn default() -> Self {
        Self {
            optim: OptimConfig {
                learning_rate: 1e-4,
                decay_milestones: vec![0.6, 0.85],
                decay_factor: 0.1,
                batch_size: 64,
                epochs: 40,
                clip_len: 16,
                grad_clip: 1.0,
                seed: 0,
            },
            loss: LossConfig { alpha: 0.1, beta: 0.1, tau: 0.07 },
            model: EncoderConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Laptop-scale profile: batch 16, 10 epochs, and a larger step size so
    /// the shorter schedule still converges.
    pub fn desk() -> Self {
        let mut c = Self::default();
        c.optim.batch_size = 16;
        c.optim.epochs = 10;
        c.optim.learning_rate = DESK_LEARNING_RATE;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let o = &self.optim;
        if o.batch_size == 0 || o.epochs == 0 || o.clip_len < 1 {
            return Err(Error::InvalidArgument("batch_size, epochs and clip_len must be positive".into()));
        }
        if !(o.learning_rate >= 0.0 && o.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning_rate {} must be finite and >= 0", o.learning_rate)));
        }
        if o.decay_milestones.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(Error::InvalidArgument("decay milestones are fractions in [0, 1]".into()));
        }
        if self.loss.alpha < 0.0 || self.loss.beta < 0.0 || self.loss.tau <= 0.0 {
            return Err(Error::InvalidArgument("alpha, beta must be >= 0 and tau > 0".into()));
        }
        Ok(())
    }

    pub fn objective(&self) -> ObjectiveSpec {
        ObjectiveSpec { alpha: self.loss.alpha, beta: self.loss.beta, tau: self.loss.tau, ..Default::default() }
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Parse and validate. Errors name the offending key and line.
    pub fn from_text(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            let msg = e.message().trim().to_string();
            match line {
                Some(l) => Error::ConfigParse(format!("line {l}: {msg}")),
                None => Error::ConfigParse(msg),
            }
        })?;
        cfg.validate().map_err(|e| Error::ConfigParse(e.to_string()))?;
        Ok(cfg)
    }

    /// Learning rate at `step` of `total_steps` under the multistep schedule.
    pub fn lr_at(&self, step: usize, total_steps: usize) -> f64 {
        let progress = step as f64 / total_steps.max(1) as f64;
        let hits = self.optim.decay_milestones.iter().filter(|&&m| progress >= m).count();
        self.optim.learning_rate * self.optim.decay_factor.powi(hits as i32)
    }
}

/// Step size of the desk profile.
pub const DESK_LEARNING_RATE: f64 = 1e-2;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_text() {
        for cfg in [TrainConfig::default(), TrainConfig::desk()] {
            let text = cfg.to_text();
            let back = TrainConfig::from_text(&text).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.to_text(), text);
        }
    }

    #[test]
    fn paper_defaults_and_desk_overrides() {
        let p = TrainConfig::default();
        assert_eq!((p.optim.learning_rate, p.optim.batch_size, p.optim.epochs, p.optim.clip_len), (1e-4, 64, 40, 16));
        let d = TrainConfig::desk();
        assert_eq!((d.optim.batch_size, d.optim.epochs), (16, 10));
    }

    #[test]
    fn unknown_key_is_reported_with_line() {
        let text = TrainConfig::default().to_text().replacen("learning_rate", "learning_rat", 1);
        let err = TrainConfig::from_text(&text).unwrap_err();
        let Error::ConfigParse(msg) = err else { panic!("wrong error") };
        assert!(msg.contains("learning_rat"), "{msg}");
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn schedule_steps_down_at_milestones() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(0, 100), 1e-4);
        assert_eq!(c.lr_at(59, 100), 1e-4);
        assert!((c.lr_at(60, 100) - 1e-5).abs() < 1e-20);
        assert!((c.lr_at(85, 100) - 1e-6).abs() < 1e-20);
    }
}
