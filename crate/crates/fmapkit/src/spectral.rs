//! Discrete Laplace-Beltrami assembly, truncated eigenbases, spectral
//! projection and classical descriptor fields.
//!
//! The eigenbasis is mass-orthonormal (`Phi' M Phi = I`), so the Moore
//! pseudo-inverse used for projection reduces to `Phi' M`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::mesh::Mesh;
use crate::sparse::SymCsr;
use crate::{Error, Result};

mod eigen;
pub use eigen::eigendecompose;

pub mod cache;

/// Cotangent weights are clamped to this magnitude to survive
/// near-degenerate triangles in re-meshed data.
pub const COTAN_CLAMP: f64 = 1e4;

/// Stiffness (cotangent weights) and lumped diagonal mass.
#[derive(Debug, Clone)]
pub struct LaplaceOperators {
    /// Positive semidefinite; rows sum to zero.
    pub stiffness: SymCsr,
    pub mass: DVector<f64>,
}

/// Truncated Laplace-Beltrami eigenbasis.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    /// n x k eigenfunctions, columns sorted by eigenvalue.
    pub phi: DMatrix<f64>,
    /// Nonnegative, nondecreasing eigenvalues.
    pub evals: DVector<f64>,
    /// Lumped vertex masses of the underlying mesh.
    pub mass: DVector<f64>,
}

impl SpectralBasis {
    pub fn n(&self) -> usize {
        self.phi.nrows()
    }

    pub fn k(&self) -> usize {
        self.phi.ncols()
    }

    /// First `k` columns as a standalone basis.
    pub fn truncated(&self, k: usize) -> Result<SpectralBasis> {
        if k == 0 || k > self.k() {
            return Err(Error::Dimension(format!(
                "cannot truncate basis of width {} to {k}",
                self.k()
            )));
        }
        Ok(SpectralBasis {
            phi: self.phi.columns(0, k).into_owned(),
            evals: self.evals.rows(0, k).into_owned(),
            mass: self.mass.clone(),
        })
    }
}

/// Per-vertex feature functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DescriptorKind {
    Hks,
    Wks,
    Xyz,
    Learned,
}

/// An n x d matrix of per-vertex feature functions.
#[derive(Debug, Clone)]
pub struct DescriptorField {
    pub values: DMatrix<f64>,
    pub kind: DescriptorKind,
}

impl DescriptorField {
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn d(&self) -> usize {
        self.values.ncols()
    }
}

/// Assemble cotangent stiffness and lumped mass for a mesh.
///
/// Off-diagonal `w_ij = -(cot a_ij + cot b_ij)/2` over the angles opposite
/// edge `(i,j)`; the diagonal makes rows sum to zero exactly.
pub fn cotan_laplacian(mesh: &Mesh) -> Result<LaplaceOperators> {
    let n = mesh.vertex_count();
    let mut off = Vec::with_capacity(mesh.face_count() * 6);

    for f in &mesh.faces {
        for corner in 0..3 {
            let i = f[corner];
            let j = f[(corner + 1) % 3];
            let k = f[(corner + 2) % 3];
            // cot of the angle at vertex i, opposite edge (j, k).
            let u = mesh.vertices[j] - mesh.vertices[i];
            let v = mesh.vertices[k] - mesh.vertices[i];
            let cross = u.cross(&v).norm();
            let cot = if cross > 0.0 {
                (u.dot(&v) / cross).clamp(-COTAN_CLAMP, COTAN_CLAMP)
            } else {
                COTAN_CLAMP
            };
            if !cot.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite cotangent at face corner {i} after clamping"
                )));
            }
            let w = -0.5 * cot; // contribution to the (j, k) off-diagonal
            off.push((j, k, w));
            off.push((k, j, w));
        }
    }

    // Merge off-diagonals first, then set diagonals to minus the row sums so
    // rows cancel exactly.
    let off_matrix = SymCsr::from_triplets(n, &off);
    let mut all = Vec::with_capacity(off_matrix.nnz() + n);
    for r in 0..n {
        let mut row_total = 0.0;
        for (c, v) in off_matrix.row(r) {
            all.push((r, c, v));
            row_total += v;
        }
        all.push((r, r, -row_total));
    }

    Ok(LaplaceOperators {
        stiffness: SymCsr::from_triplets(n, &all),
        mass: DVector::from_vec(mesh.vertex_masses.clone()),
    })
}

/// Spectral coefficients `A = Phi' M F` of a descriptor field.
pub fn project(basis: &SpectralBasis, field: &DescriptorField) -> Result<DMatrix<f64>> {
    if field.n() != basis.n() {
        return Err(Error::Dimension(format!(
            "field has {} rows, basis has {}",
            field.n(),
            basis.n()
        )));
    }
    let weighted = scale_rows(&field.values, &basis.mass);
    Ok(basis.phi.transpose() * weighted)
}

/// Reconstruct per-vertex values `Phi * coeffs` from spectral coefficients.
pub fn reconstruct(basis: &SpectralBasis, coeffs: &DMatrix<f64>) -> Result<DescriptorField> {
    if coeffs.nrows() != basis.k() {
        return Err(Error::Dimension(format!(
            "coefficients have {} rows, basis width is {}",
            coeffs.nrows(),
            basis.k()
        )));
    }
    Ok(DescriptorField {
        values: &basis.phi * coeffs,
        kind: DescriptorKind::Learned,
    })
}

fn scale_rows(m: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (mut row, &wi) in out.row_iter_mut().zip(w.iter()) {
        row *= wi;
    }
    out
}

/// Heat kernel signature: `hks_t(x) = sum_i exp(-mu_i t) phi_i(x)^2`.
pub fn hks(basis: &SpectralBasis, times: &[f64]) -> DescriptorField {
    assert!(times.iter().all(|&t| t > 0.0), "times must be positive");
    let n = basis.n();
    let k = basis.k();
    let mut values = DMatrix::zeros(n, times.len());
    for (ti, &t) in times.iter().enumerate() {
        for v in 0..n {
            let mut acc = 0.0;
            for i in 0..k {
                let phi = basis.phi[(v, i)];
                acc += (-basis.evals[i] * t).exp() * phi * phi;
            }
            values[(v, ti)] = acc;
        }
    }
    DescriptorField {
        values,
        kind: DescriptorKind::Hks,
    }
}

/// Log-spaced HKS times spanning the resolvable scale range of the basis.
pub fn hks_default_times(basis: &SpectralBasis, count: usize) -> Vec<f64> {
    let ln10 = std::f64::consts::LN_10;
    let mu_min = basis
        .evals
        .iter()
        .copied()
        .find(|&m| m > 1e-12)
        .unwrap_or(1.0);
    let mu_max = basis.evals[basis.k() - 1].max(mu_min * (1.0 + 1e-9));
    let t_min = 4.0 * ln10 / mu_max;
    let t_max = 4.0 * ln10 / mu_min;
    log_space(t_min, t_max, count)
}

fn log_space(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![(lo * hi).sqrt()];
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (llo + (lhi - llo) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Wave kernel signature with Gaussian energy windows of width `sigma`;
/// eigenvalues at or below 1e-12 are skipped.
pub fn wks(basis: &SpectralBasis, energies: &[f64], sigma: f64) -> Result<DescriptorField> {
    assert!(sigma > 0.0, "sigma must be positive");
    let n = basis.n();
    let k = basis.k();
    let log_mu: Vec<Option<f64>> = basis
        .evals
        .iter()
        .map(|&m| (m > 1e-12).then(|| m.ln()))
        .collect();

    let mut values = DMatrix::zeros(n, energies.len());
    for (ei, &e) in energies.iter().enumerate() {
        let weights: Vec<f64> = log_mu
            .iter()
            .map(|lm| match lm {
                Some(lm) => {
                    let z = (e - lm) / sigma;
                    (-0.5 * z * z).exp()
                }
                None => 0.0,
            })
            .collect();
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::Numeric(format!(
                "all WKS weights underflow at energy {e}"
            )));
        }
        for v in 0..n {
            let mut acc = 0.0;
            for i in 0..k {
                if weights[i] > 0.0 {
                    let phi = basis.phi[(v, i)];
                    acc += weights[i] * phi * phi;
                }
            }
            values[(v, ei)] = acc / total;
        }
    }
    Ok(DescriptorField {
        values,
        kind: DescriptorKind::Wks,
    })
}

/// Standard WKS defaults: `count` energies uniform in
/// `[log mu_1 + 2 sigma, log mu_k - 2 sigma]` with `sigma = 7 (range / count)`.
pub fn wks_default_params(basis: &SpectralBasis, count: usize) -> Result<(Vec<f64>, f64)> {
    let mu_min = basis
        .evals
        .iter()
        .copied()
        .find(|&m| m > 1e-12)
        .ok_or_else(|| Error::Numeric("basis has no positive eigenvalues".into()))?;
    let mu_max = basis.evals[basis.k() - 1];
    if mu_max <= mu_min {
        return Err(Error::Numeric("eigenvalue range too narrow for WKS".into()));
    }
    let (lo, hi) = (mu_min.ln(), mu_max.ln());
    let sigma = 7.0 * (hi - lo) / count as f64;
    let (e0, e1) = (lo + 2.0 * sigma, hi - 2.0 * sigma);
    if e1 <= e0 {
        // Fewer than ~29 energies leaves no room between the 2-sigma margins.
        return Err(Error::Numeric(format!(
            "WKS energy count {count} too small for the 2-sigma window"
        )));
    }
    let energies = (0..count)
        .map(|i| e0 + (e1 - e0) * i as f64 / (count.max(2) - 1) as f64)
        .collect();
    Ok((energies, sigma))
}

/// Raw vertex coordinates as a 3-channel descriptor field.
pub fn xyz_descriptors(mesh: &Mesh) -> DescriptorField {
    let n = mesh.vertex_count();
    let mut values = DMatrix::zeros(n, 3);
    for (i, v) in mesh.vertices.iter().enumerate() {
        values[(i, 0)] = v.x;
        values[(i, 1)] = v.y;
        values[(i, 2)] = v.z;
    }
    DescriptorField {
        values,
        kind: DescriptorKind::Xyz,
    }
}
