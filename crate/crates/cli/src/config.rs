//! JSON experiment configuration.

use std::path::{Path, PathBuf};

use mkid::blocks::KernelMode;
use mkid::models::{ArchParams, FirDomain, FrameRule, FrameSpec, ModelSpec};
use mkid::optim::TrainConfig;
use mkid::plants::DatasetConfig;
use mkid::{Error, Result};
use serde::{Deserialize, Serialize};

fn default_depth() -> usize {
    5
}

fn default_width() -> usize {
    6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Architecture notation such as `FIR6-NL6-FIR`.
    pub notation: String,
    pub kernel_lens: Vec<usize>,
    #[serde(default = "default_depth")]
    pub nl_depth: usize,
    #[serde(default = "default_width")]
    pub nl_width: usize,
    #[serde(default)]
    pub fir_domain: FirDomain,
    #[serde(default)]
    pub kernel_mode: KernelMode,
    /// Defaults to [`default_frame_rule`].
    #[serde(default)]
    pub frame: Option<FrameRule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Network(NetworkConfig),
    MemoryPolynomial { order: usize, len: usize },
}

/// Bounds on the minimum NMSE checked by `--check`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct CheckConfig {
    #[serde(default)]
    pub max_nmse_db: Option<f64>,
    #[serde(default)]
    pub min_nmse_db: Option<f64>,
}

impl CheckConfig {
    pub fn passes(&self, nmse_db: f64) -> bool {
        self.max_nmse_db.is_none_or(|t| nmse_db <= t) && self.min_nmse_db.is_none_or(|t| nmse_db >= t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Unseen plants for `adapt`.
    #[serde(default)]
    pub test: Option<DatasetConfig>,
    #[serde(default)]
    pub check: CheckConfig,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// Smallest power of two of at least 1024 samples and four times the model
/// memory. Long frames keep the overlap, which memoryless stages evaluate
/// twice, small.
pub fn default_frame_rule(spec: &ModelSpec) -> FrameRule {
    let frame_len = (4 * spec.total_memory()).next_power_of_two().max(1024);
    FrameRule::MinOverlap { frame_len }
}

impl NetworkConfig {
    pub fn new(notation: &str, kernel_lens: &[usize]) -> Self {
        Self {
            notation: notation.into(),
            kernel_lens: kernel_lens.to_vec(),
            nl_depth: default_depth(),
            nl_width: default_width(),
            fir_domain: FirDomain::Time,
            kernel_mode: KernelMode::Multikernel,
            frame: None,
        }
    }

    pub fn spec(&self, plants: usize, complex: bool) -> Result<ModelSpec> {
        ModelSpec::from_notation(
            &self.notation,
            &ArchParams {
                kernel_lens: self.kernel_lens.clone(),
                nl_depth: self.nl_depth,
                nl_width: self.nl_width,
                fir_domain: self.fir_domain,
                kernel_mode: self.kernel_mode,
                plants,
                complex,
            },
        )
    }

    pub fn frame(&self, spec: &ModelSpec) -> Result<FrameSpec> {
        FrameSpec::from_rule(self.frame.unwrap_or_else(|| default_frame_rule(spec)), spec)
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// `--seed` reseeds both the data and the model initialization.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.dataset.seed = seed;
        self.train.seed = seed;
        if let Some(t) = &mut self.test {
            t.seed = seed.wrapping_add(1);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        if let Some(t) = &self.test {
            t.validate()?;
            if t.is_complex() != self.dataset.is_complex() {
                return Err(Error::Config("test data must match the training data domain".into()));
            }
        }
        if self.train.epochs == 0 {
            return Err(Error::Config("train.epochs must be at least 1".into()));
        }
        match &self.model {
            ModelConfig::Network(net) => {
                let spec = net.spec(self.dataset.plants, self.dataset.is_complex())?;
                net.frame(&spec)?;
            }
            ModelConfig::MemoryPolynomial { order, len } => {
                if *order == 0 || *len == 0 {
                    return Err(Error::Config("memory polynomial needs order and len ≥ 1".into()));
                }
            }
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        match &self.model {
            ModelConfig::Network(n) => {
                let mode = match n.kernel_mode {
                    KernelMode::Multikernel => "",
                    KernelMode::SingleKernel => " (single kernel)",
                };
                format!("{}{mode}", n.notation)
            }
            ModelConfig::MemoryPolynomial { order, len } => format!("MP(P={order}, L={len})"),
        }
    }
}
