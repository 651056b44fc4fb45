//! Pipeline configuration file (TOML). Every section has defaults, so an
//! empty file is a valid config.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::GeneratorSpec;
use crate::error::{Error, Result};
use crate::harness::baseline::BaselineOptions;
use crate::harness::GridSpec;
use crate::preprocess::HeadingLexicon;
use crate::splits::SplitOptions;
use crate::tokenize::TokenizerSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataPaths {
    pub corpus: PathBuf,
    pub split: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for DataPaths {
    fn default() -> Self {
        DataPaths {
            corpus: "corpus.jsonl".into(),
            split: "split.json".into(),
            out_dir: "run".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Baseline,
    Worker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    pub backend: BackendKind,
    /// Trials in flight; 0 means one per core.
    pub parallelism: usize,
    pub dev_metrics: bool,
    /// Tokenizer that enforces each trial's max_tokens.
    pub truncation: TokenizerSpec,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            backend: BackendKind::Baseline,
            parallelism: 1,
            dev_metrics: true,
            truncation: TokenizerSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkerConfig {
    pub command: Vec<String>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for WorkerConfig {
    fn default() -> Self {
        WorkerConfig {
            command: vec!["python3".into(), "-m".into(), "bepath_worker".into()],
            checkpoint_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTokenizer {
    pub name: String,
    #[serde(flatten)]
    pub spec: TokenizerSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub data: DataPaths,
    pub generator: GeneratorSpec,
    pub headings: HeadingLexicon,
    pub split: SplitOptions,
    pub harness: HarnessConfig,
    pub grid: GridSpec,
    pub baseline: BaselineOptions,
    pub worker: WorkerConfig,
    /// Tokenizers for the stats command.
    pub tokenizers: Vec<NamedTokenizer>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            data: DataPaths::default(),
            generator: GeneratorSpec::default(),
            headings: HeadingLexicon::default(),
            split: SplitOptions::default(),
            harness: HarnessConfig::default(),
            grid: GridSpec::default(),
            baseline: BaselineOptions::default(),
            worker: WorkerConfig::default(),
            tokenizers: vec![NamedTokenizer {
                name: "whitespace".into(),
                spec: TokenizerSpec::default(),
            }],
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.headings.validate()?;
        for f in [self.split.val_fraction, self.split.eval_fraction] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::InvalidFraction(f));
            }
        }
        if self.grid.models.is_empty() || self.grid.seeds.is_empty() {
            return Err(Error::Config("grid needs at least one model and one seed".into()));
        }
        if self.baseline.hash_bits == 0 || self.baseline.hash_bits > 31 {
            return Err(Error::Config(format!(
                "baseline.hash_bits must be in 1..=31, got {}",
                self.baseline.hash_bits
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn empty_file_is_default() {
        assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn partial_override() {
        let cfg = PipelineConfig::from_toml(
            "[grid]\ntask = \"binary\"\nreport_field = \"full\"\nseeds = [7]\n[harness]\nparallelism = 4\n",
        )
        .unwrap();
        assert_eq!(cfg.grid.seeds, vec![7]);
        assert_eq!(cfg.harness.parallelism, 4);
        assert_eq!(cfg.grid.baseline_linear.epochs, 200);
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(PipelineConfig::from_toml("[split]\nval_fraction = 1.5\n").is_err());
        assert!(PipelineConfig::from_toml("[grid]\ntask = \"ternary\"\n").is_err());
        assert!(PipelineConfig::from_toml("[baseline]\nhash_bits = 40\n").is_err());
    }
}
