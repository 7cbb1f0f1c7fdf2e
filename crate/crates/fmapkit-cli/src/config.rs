//! Pipeline configuration, serialized as JSON. Every field has a default so
//! partial config files stay valid.

use std::path::{Path, PathBuf};

use fmapkit::features::ExtractorConfig;
use fmapkit::mesh::{Axis, Normalization};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DescriptorConfig {
    Hks {
        #[serde(default = "default_hks_count")]
        count: usize,
    },
    Wks {
        #[serde(default = "default_wks_count")]
        count: usize,
    },
    Xyz,
    Learned {
        #[serde(default)]
        checkpoint: Option<PathBuf>,
    },
}

fn default_hks_count() -> usize {
    16
}

fn default_wks_count() -> usize {
    100
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        DescriptorConfig::Wks {
            count: default_wks_count(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ZoomoutConfig {
    pub target: usize,
    pub step: usize,
}

impl Default for ZoomoutConfig {
    fn default() -> Self {
        ZoomoutConfig { target: 90, step: 2 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_final: f64,
    pub augment: bool,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4,
            lr_initial: 1e-3,
            lr_final: 1e-4,
            augment: true,
            checkpoint_every: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct EvalThresholds {
    pub max: f64,
    pub count: usize,
}

impl Default for EvalThresholds {
    fn default() -> Self {
        EvalThresholds { max: 0.25, count: 100 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct PipelineConfig {
    /// Spectral width for matching and training.
    pub k: usize,
    /// Laplacian-commutativity regularization weight.
    pub lambda: f64,
    pub descriptor: DescriptorConfig,
    /// Base grid cell for the sampling hierarchy.
    pub grid_base_cell: f64,
    pub extractor: ExtractorConfig,
    pub zoomout: ZoomoutConfig,
    pub icp_iterations: usize,
    pub seed: u64,
    pub normalization: Normalization,
    pub up_axis: Axis,
    pub cache_dir: PathBuf,
    pub train: TrainConfig,
    pub eval_thresholds: EvalThresholds,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k: fmapkit::fmap::DEFAULT_K,
            lambda: fmapkit::fmap::DEFAULT_LAMBDA,
            descriptor: DescriptorConfig::default(),
            grid_base_cell: 0.03,
            extractor: ExtractorConfig::default(),
            zoomout: ZoomoutConfig::default(),
            icp_iterations: 10,
            seed: 0,
            normalization: Normalization::UnitArea,
            up_axis: Axis::Y,
            cache_dir: PathBuf::from(".fmapkit_cache"),
            train: TrainConfig::default(),
            eval_thresholds: EvalThresholds::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let config: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("bad config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.k < 2 {
            return Err(CliError::usage("k must be at least 2".into()));
        }
        if self.lambda < 0.0 {
            return Err(CliError::usage("lambda must be nonnegative".into()));
        }
        if self.grid_base_cell <= 0.0 {
            return Err(CliError::usage("grid_base_cell must be positive".into()));
        }
        if self.zoomout.step < 1 {
            return Err(CliError::usage("zoomout step must be at least 1".into()));
        }
        Ok(())
    }

    /// Cache directory, honoring the `FMAPKIT_CACHE` override.
    pub fn effective_cache_dir(&self) -> PathBuf {
        match std::env::var_os("FMAPKIT_CACHE") {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.cache_dir.clone(),
        }
    }

    /// Width to precompute: wide enough for matching and the refinement
    /// schedule.
    pub fn precompute_width(&self) -> usize {
        self.k.max(self.zoomout.target)
    }

    /// Digest of the extractor architecture; checkpoints are only loadable
    /// with a matching one.
    pub fn extractor_digest(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(&self.extractor).expect("extractor config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        hasher.finalize().into()
    }
}
