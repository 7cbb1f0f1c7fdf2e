//! Dataset manifest: shapes by id, pairs with optional ground truth.
//!
//! Relative paths resolve against the manifest file's directory. Ground
//! truth for a pair is either a correspondence file in the `T: target ->
//! source` direction, or a pair of template-to-shape functional map files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapeEntry {
    pub id: String,
    pub mesh: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairEntry {
    pub source: String,
    pub target: String,
    /// Pointwise ground truth: a `P2P` file mapping target vertices to
    /// source vertices.
    #[serde(default)]
    pub gt: Option<PathBuf>,
    /// Template ground truth: `FMAP` files of the template-to-source and
    /// template-to-target point maps.
    #[serde(default)]
    pub template_map_source: Option<PathBuf>,
    #[serde(default)]
    pub template_map_target: Option<PathBuf>,
}

impl PairEntry {
    pub fn key(&self) -> String {
        format!("{}:{}", self.source, self.target)
    }

    pub fn has_ground_truth(&self) -> bool {
        self.gt.is_some()
            || (self.template_map_source.is_some() && self.template_map_target.is_some())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub shapes: Vec<ShapeEntry>,
    #[serde(default)]
    pub pairs: Vec<PairEntry>,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read manifest {}: {e}", path.display())))?;
        let mut manifest: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("bad manifest {}: {e}", path.display())))?;
        manifest.base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();

        for pair in &manifest.pairs {
            for id in [&pair.source, &pair.target] {
                if manifest.shape(id).is_none() {
                    return Err(CliError::usage(format!(
                        "pair {} references unknown shape {id:?}",
                        pair.key()
                    )));
                }
            }
        }
        Ok(manifest)
    }

    pub fn shape(&self, id: &str) -> Option<&ShapeEntry> {
        self.shapes.iter().find(|s| s.id == id)
    }

    pub fn require_shape(&self, id: &str) -> Result<&ShapeEntry, CliError> {
        self.shape(id)
            .ok_or_else(|| CliError::usage(format!("unknown shape id {id:?}")))
    }

    /// Resolve a pair key of the form `source:target`.
    pub fn require_pair(&self, key: &str) -> Result<&PairEntry, CliError> {
        self.pairs
            .iter()
            .find(|p| p.key() == key)
            .ok_or_else(|| CliError::usage(format!("unknown pair {key:?} (expected source:target)")))
    }

    /// Make a manifest-relative path absolute.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }
}
