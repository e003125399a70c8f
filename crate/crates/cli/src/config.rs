//! The experiment config file: one JSON document binding dataset, proposer,
//! classifier and evaluation settings plus all seeds.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use cascadet::classifier::ClassifierConfig;
use cascadet::eval::RecallSpec;
use cascadet::proposer::ProposerConfig;
use cascadet::rngutil::derive_seed;
use cascadet::synthdata::DatasetConfig;

/// Everything one experiment run needs, serializable and diffable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Train split (including its seed and image count).
    pub dataset: DatasetConfig,
    /// Test split; its seed must differ from the train seed.
    pub test_dataset: DatasetConfig,
    pub proposer: ProposerConfig,
    pub classifier: ClassifierConfig,
    pub eval: RecallSpec,
    /// Master seed for all training stages.
    pub train_seed: u64,
    pub out_dir: String,
}

impl ExperimentConfig {
    /// The default benchmark: craft-toy-6 at 500 train / 200 test.
    pub fn craft_toy6(out_dir: &str) -> Self {
        let mut cfg = Self {
            dataset: DatasetConfig::craft_toy6(500, 0),
            test_dataset: DatasetConfig::craft_toy6(200, 0),
            proposer: ProposerConfig::default(),
            classifier: ClassifierConfig::toy(6),
            eval: RecallSpec::default(),
            train_seed: 0,
            out_dir: out_dir.to_string(),
        };
        cfg.apply_master_seed(1);
        cfg
    }

    /// Rewrites every seed deterministically from one master value.
    pub fn apply_master_seed(&mut self, master: u64) {
        self.dataset.seed = derive_seed(master, 1);
        self.test_dataset.seed = derive_seed(master, 2);
        self.train_seed = derive_seed(master, 3);
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate().context("dataset")?;
        self.test_dataset.validate().context("test_dataset")?;
        self.proposer.validate().context("proposer")?;
        self.classifier.validate().context("classifier")?;
        self.eval.validate().context("eval")?;
        anyhow::ensure!(
            self.dataset.seed != self.test_dataset.seed,
            "train and test splits must use disjoint seeds"
        );
        anyhow::ensure!(
            self.classifier.n_classes == self.dataset.n_classes,
            "classifier.n_classes ({}) must match dataset.n_classes ({})",
            self.classifier.n_classes,
            self.dataset.n_classes
        );
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).with_context(|| format!("writing config {}", path.display()))?;
        Ok(())
    }

    /// Content hash binding artifacts to the exact config that produced them.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let mut hex = String::with_capacity(16);
        for b in &digest[..8] {
            hex.push_str(&format!("{b:02x}"));
        }
        hex
    }

    pub fn class_names(&self) -> Vec<String> {
        self.dataset.class_specs.iter().map(|s| s.name.clone()).collect()
    }
}
