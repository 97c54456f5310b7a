//! TOML configuration shared by the command-line tools.
//!
//! ```toml
//! [paths]
//! graph = "kg.tsv"
//! labels = "labels.tsv"
//! features = "features.tsv"
//! output_dir = "out"
//!
//! [pretrain]
//! gamma = 0.1
//! tau = 0.05
//! variant = "full"
//! encoder_mode = "pregat"
//!
//! [downstream]
//! kind = "mlp"
//! epochs = 500
//!
//! [eval]
//! ks = [10, 50]
//! folds = 5
//! seed = 7
//!
//! [mode]
//! skip_pretrain = false
//! ```
//!
//! Every section and key is optional; missing keys take their defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::downstream::DownstreamConfig;
use crate::error::{LicapError, Result};
use crate::pretrain::PretrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub graph: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub folds: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ks: vec![10, 50],
            folds: 5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModeConfig {
    /// Run only the raw-feature arm.
    pub skip_pretrain: bool,
    /// Run the raw-feature arm next to the pretrained arm.
    pub compare: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub paths: PathsConfig,
    pub pretrain: PretrainConfig,
    pub downstream: DownstreamConfig,
    pub eval: EvalConfig,
    pub mode: ModeConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| LicapError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LicapError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        self.pretrain.validate()?;
        self.downstream.validate()?;
        if self.eval.folds < 2 {
            return Err(LicapError::Config(format!("need at least 2 folds, got {}", self.eval.folds)));
        }
        if self.eval.ks.contains(&0) {
            return Err(LicapError::Config("k values must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pregat::EncoderMode;
    use crate::pretrain::Variant;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn sections_override_defaults() {
        let cfg = ExperimentConfig::from_toml(
            "[pretrain]\ntau = 0.1\nvariant = \"l1_only\"\nencoder_mode = \"gat\"\n\
             [eval]\nks = [5]\n[downstream]\nkind = \"aggregated_scorer\"\n",
        )
        .unwrap();
        assert_eq!(cfg.pretrain.tau, 0.1);
        assert_eq!(cfg.pretrain.variant, Variant::L1Only);
        assert_eq!(cfg.pretrain.encoder_mode, EncoderMode::Gat);
        assert_eq!(cfg.pretrain.gamma, 0.1);
        assert_eq!(cfg.eval.ks, vec![5]);
        assert_eq!(cfg.downstream.kind, crate::downstream::ModelKind::AggregatedScorer);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("[pretrain]\ntemperature = 1.0\n").is_err());
        assert!(ExperimentConfig::from_toml("[nope]\n").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}
