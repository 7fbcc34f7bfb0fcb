//! Training configuration, stored as sectioned TOML.
//!
//! ```toml
//! seed = 0
//!
//! [network]
//! n_layers = 5
//! hidden_dim = 256
//! omega0 = 30.0
//!
//! [schedule]
//! epochs_per_phase = [200, 200, 200]
//! steps_per_epoch = 1
//! checkpoint_every = 50
//!
//! [optimizer]
//! lr = 1e-4
//! adam_beta1 = 0.9
//! adam_beta2 = 0.999
//! adam_eps = 1e-8
//!
//! [loss]
//! lambda1 = 10.0
//! lambda2 = 10.0
//! lambda3 = 0.1
//! residual = "l1"
//!
//! [sampling]
//! times_per_epoch = 16
//! points_per_time = 4096
//! near_surface_fraction = 0.5
//! near_surface_sigma = 0.01
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{LossWeights, ResidualNorm};
use crate::siren::DEFAULT_OMEGA0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Linear layers per network.
    pub n_layers: usize,
    pub hidden_dim: usize,
    pub omega0: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            n_layers: 5,
            hidden_dim: 256,
            omega0: DEFAULT_OMEGA0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub epochs_per_phase: [usize; 3],
    /// Optimizer updates per epoch, each on a fresh batch.
    pub steps_per_epoch: usize,
    /// Write a checkpoint every this many epochs (0 disables periodic ones).
    pub checkpoint_every: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            epochs_per_phase: [200, 200, 200],
            steps_per_epoch: 1,
            checkpoint_every: 50,
        }
    }
}

impl ScheduleConfig {
    pub fn total_epochs(&self) -> usize {
        self.epochs_per_phase.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub residual: ResidualNorm,
}

impl Default for LossConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            lambda1: w.lambda1,
            lambda2: w.lambda2,
            lambda3: w.lambda3,
            residual: ResidualNorm::L1,
        }
    }
}

impl LossConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub times_per_epoch: usize,
    pub points_per_time: usize,
    /// Share of reconstruction samples drawn near the observed points.
    pub near_surface_fraction: f64,
    /// Jitter of near-surface samples, as a fraction of the box diagonal.
    pub near_surface_sigma: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            times_per_epoch: 16,
            points_per_time: 4096,
            near_surface_fraction: 0.5,
            near_surface_sigma: 0.01,
        }
    }
}

/// Every knob of the three-phase optimization.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub network: NetworkConfig,
    pub schedule: ScheduleConfig,
    pub optimizer: OptimizerConfig,
    pub loss: LossConfig,
    pub sampling: SamplingConfig,
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Sets a dotted key such as `optimizer.lr` from a TOML literal
    /// (`1e-3`, `[1, 0, 0]`, `"squared"`). Bare words are taken as strings.
    pub fn apply_override(&mut self, key: &str, literal: &str) -> Result<()> {
        let mut doc = toml::Value::try_from(&*self).expect("config serializes");
        let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {literal}"))
            .map(|mut t| t.remove("v").unwrap())
            .unwrap_or_else(|_| toml::Value::String(literal.to_string()));
        let mut slot = &mut doc;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = slot
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("'{key}' does not name a config field")))?;
            if !table.contains_key(*part) {
                return Err(Error::Config(format!("unknown config key '{key}'")));
            }
            if i + 1 == parts.len() {
                table.insert(part.to_string(), value.clone());
                break;
            }
            slot = table.get_mut(*part).unwrap();
        }
        let updated: TrainConfig = doc
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{key} = {literal}: {}", e.message())))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let n = &self.network;
        if n.n_layers < 2 {
            return bad(format!("network.n_layers = {} needs at least one hidden layer", n.n_layers));
        }
        if n.hidden_dim == 0 {
            return bad("network.hidden_dim must be positive".into());
        }
        if !(n.omega0.is_finite() && n.omega0 > 0.0) {
            return bad(format!("network.omega0 = {} must be positive", n.omega0));
        }
        let o = &self.optimizer;
        if !(o.lr.is_finite() && o.lr > 0.0) {
            return bad(format!("optimizer.lr = {} must be positive", o.lr));
        }
        for (name, b) in [("adam_beta1", o.adam_beta1), ("adam_beta2", o.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("optimizer.{name} = {b} must lie in (0, 1)"));
            }
        }
        if !(o.adam_eps.is_finite() && o.adam_eps > 0.0) {
            return bad(format!("optimizer.adam_eps = {} must be positive", o.adam_eps));
        }
        self.loss.weights().validate()?;
        let s = &self.sampling;
        if s.times_per_epoch == 0 || s.points_per_time == 0 {
            return bad("sampling.times_per_epoch and sampling.points_per_time must be positive".into());
        }
        if !(0.0..=1.0).contains(&s.near_surface_fraction) {
            return bad(format!(
                "sampling.near_surface_fraction = {} must lie in [0, 1]",
                s.near_surface_fraction
            ));
        }
        if !(s.near_surface_sigma.is_finite() && s.near_surface_sigma >= 0.0) {
            return bad("sampling.near_surface_sigma must be finite and >= 0".into());
        }
        if self.schedule.steps_per_epoch == 0 {
            return bad("schedule.steps_per_epoch must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = TrainConfig::default();
        let text = cfg.to_toml_string();
        assert!(text.contains("[optimizer]") && text.contains("epochs_per_phase"));
        assert_eq!(TrainConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn documented_example_parses() {
        let text = include_str!("config.rs")
            .lines()
            .skip_while(|l| !l.starts_with("//! ```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("//! ```"))
            .map(|l| l.trim_start_matches("//!").trim_start())
            .collect::<Vec<_>>()
            .join("\n");
        assert_eq!(TrainConfig::from_toml_str(&text).unwrap(), TrainConfig::default());
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = TrainConfig::from_toml_str("seed = 9\n[optimizer]\nlr = 0.001\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.optimizer.lr, 1e-3);
        assert_eq!(cfg.schedule.epochs_per_phase, [200, 200, 200]);
    }

    #[test]
    fn rejects_bad_values_and_keys() {
        assert!(TrainConfig::from_toml_str("[optimizer]\nlr = -1.0\n").is_err());
        assert!(TrainConfig::from_toml_str("[optimizer]\nadam_beta1 = 1.0\n").is_err());
        assert!(TrainConfig::from_toml_str("[optimizer]\nlearning_rate = 1.0\n").is_err());
        assert!(TrainConfig::from_toml_str("[network]\nn_layers = 1\n").is_err());
        assert!(TrainConfig::from_toml_str("not toml [").is_err());
    }

    #[test]
    fn overrides() {
        let mut cfg = TrainConfig::default();
        cfg.apply_override("optimizer.lr", "1e-3").unwrap();
        cfg.apply_override("schedule.epochs_per_phase", "[1, 0, 0]").unwrap();
        cfg.apply_override("loss.residual", "squared").unwrap();
        cfg.apply_override("seed", "42").unwrap();
        assert_eq!(cfg.optimizer.lr, 1e-3);
        assert_eq!(cfg.schedule.epochs_per_phase, [1, 0, 0]);
        assert_eq!(cfg.loss.residual, ResidualNorm::Squared);
        assert_eq!(cfg.seed, 42);
        assert!(cfg.apply_override("optimizer.nope", "1").is_err());
        assert!(cfg.apply_override("optimizer.lr", "0").is_err());
        assert_eq!(cfg.optimizer.lr, 1e-3);
    }
}
