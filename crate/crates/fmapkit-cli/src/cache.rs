//! Spectral cache management: content-hash invalidation and a lock file
//! serializing concurrent writers of one cache directory.

use std::path::{Path, PathBuf};

use fmapkit::mesh::{load_mesh, normalize_mesh, Mesh};
use fmapkit::spectral::{cache, cotan_laplacian, eigendecompose, SpectralBasis};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::CliError;

/// Hash of the mesh as ingested: raw file bytes plus the normalization and
/// up-axis settings that shape the spectral result.
pub fn mesh_content_hash(mesh_path: &Path, config: &PipelineConfig) -> Result<[u8; 32], CliError> {
    let bytes = std::fs::read(mesh_path)
        .map_err(|e| CliError::usage(format!("cannot read mesh {}: {e}", mesh_path.display())))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    hasher.update(format!("|norm={:?}|up={}", config.normalization, config.up_axis).as_bytes());
    Ok(hasher.finalize().into())
}

/// Held while writing to a cache directory; the lock file disappears on drop.
pub struct CacheLock {
    path: PathBuf,
}

impl CacheLock {
    pub fn acquire(dir: &Path) -> Result<CacheLock, CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::usage(format!("cannot create cache dir {}: {e}", dir.display())))?;
        let path = dir.join(".lock");
        for _ in 0..200 {
            match std::fs::OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(_) => return Ok(CacheLock { path }),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    std::thread::sleep(std::time::Duration::from_millis(50));
                }
                Err(e) => {
                    return Err(CliError::usage(format!(
                        "cannot create lock file {}: {e}",
                        path.display()
                    )))
                }
            }
        }
        Err(CliError::usage(format!(
            "cache directory {} is locked by another process",
            dir.display()
        )))
    }
}

impl Drop for CacheLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

pub fn cache_path(dir: &Path, shape_id: &str) -> PathBuf {
    dir.join(format!("{shape_id}.spec1"))
}

/// Load the shape's mesh with the configured normalization.
pub fn load_shape_mesh(mesh_path: &Path, config: &PipelineConfig) -> Result<Mesh, CliError> {
    let mut mesh = load_mesh(mesh_path).map_err(CliError::from)?;
    mesh.up_axis = config.up_axis;
    normalize_mesh(&mesh, config.normalization).map_err(CliError::from)
}

pub enum CacheOutcome {
    Hit,
    Computed,
}

/// Fetch a basis of width at least `width`, recomputing (and rewriting the
/// cache) when the file is missing, stale or too narrow.
pub fn load_or_compute_basis(
    shape_id: &str,
    mesh_path: &Path,
    config: &PipelineConfig,
    width: usize,
) -> Result<(SpectralBasis, Mesh, CacheOutcome), CliError> {
    let dir = config.effective_cache_dir();
    let hash = mesh_content_hash(mesh_path, config)?;
    let path = cache_path(&dir, shape_id);

    let mesh = load_shape_mesh(mesh_path, config)?;
    let width = width.min(mesh.vertex_count() - 1);

    if path.exists() {
        if let Ok((basis, stored_hash)) = cache::read_cache(&path) {
            if stored_hash == hash && basis.k() >= width && basis.n() == mesh.vertex_count() {
                return Ok((basis, mesh, CacheOutcome::Hit));
            }
        }
    }

    let compute_width = config.precompute_width().max(width).min(mesh.vertex_count() - 1);
    let ops = cotan_laplacian(&mesh).map_err(CliError::from)?;
    let basis = eigendecompose(&ops, compute_width).map_err(CliError::from)?;

    let _lock = CacheLock::acquire(&dir)?;
    cache::write_cache(&path, &basis, &hash).map_err(CliError::from)?;
    Ok((basis, mesh, CacheOutcome::Computed))
}
