use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::LossWeights;
use crate::net::NetConfig;

/// Training configuration, read from a flat `key = value` TOML file.
/// Missing keys take their defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub image_size: usize,
    pub width_div: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    /// Save a checkpoint every this many steps; 0 disables intermediate saves.
    pub checkpoint_interval: usize,
    pub lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub beta1: f64,
    pub no_pix: bool,
    pub no_sym: bool,
    pub no_f: bool,
    pub no_sdn: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        Self {
            image_size: 64,
            width_div: 16,
            batch_size: 2,
            steps: 2000,
            seed: 0,
            checkpoint_interval: 0,
            lr: 2e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            lambda1: w.lambda1,
            lambda2: w.lambda2,
            beta1: w.beta1,
            no_pix: false,
            no_sym: false,
            no_f: false,
            no_sdn: false,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.net()?;
        self.weights().map_err(|e| Error::Config(e.to_string()))?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::Config(format!("lr must be finite and nonnegative, got {}", self.lr)));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return Err(Error::Config(format!("adam_eps must be positive, got {}", self.adam_eps)));
        }
        Ok(())
    }

    pub fn net(&self) -> Result<NetConfig> {
        NetConfig::new(self.image_size, self.width_div).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn weights(&self) -> Result<LossWeights> {
        LossWeights::new(self.lambda1, self.lambda2, self.beta1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_partial_files_and_round_trips() {
        let c = TrainConfig::from_toml_str("steps = 10\nno_sdn = true\nlr = 0.001\n").unwrap();
        assert_eq!(c.steps, 10);
        assert!(c.no_sdn);
        assert_eq!(c.batch_size, TrainConfig::default().batch_size);
        assert_eq!(TrainConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(matches!(TrainConfig::from_toml_str("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(TrainConfig::from_toml_str("image_size = 48"), Err(Error::Config(_))));
        assert!(matches!(TrainConfig::from_toml_str("batch_size = 0"), Err(Error::Config(_))));
        assert!(matches!(TrainConfig::from_toml_str("lambda1 = -1.0"), Err(Error::Config(_))));
        assert!(matches!(TrainConfig::from_toml_str("adam_beta2 = 1.0"), Err(Error::Config(_))));
    }
}
