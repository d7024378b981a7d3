use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use qfed::experiment::ExperimentSpec;
use qfed::fed::FedConfig;
use qfed::model::{TrainConfig, Variant};
use qfed::synth::SynthConfig;

/// Everything a run can be configured with. The `--config` file is this
/// struct as JSON; any field may be omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub deterministic: bool,
    pub variant: Variant,
    /// Dataset directory written by `gen-data`.
    pub data: Option<PathBuf>,
    /// Precomputed feature CSV; takes precedence over `data`.
    pub features: Option<PathBuf>,
    /// Class-balanced holdout size used by `train` and `fed`.
    pub test_size: usize,
    pub synth: SynthConfig,
    pub train: TrainConfig,
    pub fed: FedConfig,
    pub experiment: ExperimentSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            deterministic: false,
            variant: Variant::Hybrid,
            data: None,
            features: None,
            test_size: 400,
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            fed: FedConfig::default(),
            experiment: ExperimentSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}
