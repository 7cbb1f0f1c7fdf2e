//! Point-map recovery from functional maps, and ICP / ZoomOut refinement.
//!
//! Maps run `T: N -> M` (one source vertex per target vertex), consistent
//! with the functional-map orientation `C: spectral(M) -> spectral(N)`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::fmap::{gt_from_pointmap, FuncMap};
use crate::spectral::SpectralBasis;
use crate::{Error, Result};

mod kdtree;
pub use kdtree::KdTree;

/// A dense vertex-to-vertex assignment `T: N -> M`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMap {
    /// `assignment[j]` is the source vertex matched to target vertex `j`.
    pub assignment: Vec<usize>,
    /// Nearest-neighbor embedding distance per target vertex (lower is a
    /// closer spectral match); populated by [`fmap_to_pointmap`].
    pub confidence: Option<Vec<f64>>,
    codomain_size: usize,
}

impl PointMap {
    pub fn new(assignment: Vec<usize>, codomain_size: usize) -> Result<Self> {
        if let Some(&bad) = assignment.iter().find(|&&i| i >= codomain_size) {
            return Err(Error::Dimension(format!(
                "assignment {bad} out of range for codomain of {codomain_size} vertices"
            )));
        }
        Ok(PointMap {
            assignment,
            confidence: None,
            codomain_size,
        })
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn codomain_size(&self) -> usize {
        self.codomain_size
    }
}

/// Recover a point map by nearest neighbors between spectral embeddings:
/// target rows `Phi_N C` against source rows `Phi_M`, both at the widths of
/// `C`. Ties break to the lowest index; the tree search is exact.
pub fn fmap_to_pointmap(
    c: &FuncMap,
    basis_m: &SpectralBasis,
    basis_n: &SpectralBasis,
) -> Result<PointMap> {
    let (k_m, k_n) = (c.source_k(), c.target_k());
    if k_m > basis_m.k() || k_n > basis_n.k() {
        return Err(Error::Dimension(format!(
            "map needs widths ({k_n}, {k_m}) but bases provide ({}, {})",
            basis_n.k(),
            basis_m.k()
        )));
    }
    let source_embedding = basis_m.phi.columns(0, k_m).into_owned();
    let target_embedding = basis_n.phi.columns(0, k_n) * &c.c;

    let tree = KdTree::build(&source_embedding);
    let rows: Vec<(usize, f64)> = (0..target_embedding.nrows())
        .into_par_iter()
        .map(|j| {
            let q: Vec<f64> = target_embedding.row(j).iter().copied().collect();
            tree.nearest(&q)
        })
        .collect();

    let assignment = rows.iter().map(|&(i, _)| i).collect();
    let confidence = rows.iter().map(|&(_, d2)| d2.sqrt()).collect();
    let mut map = PointMap::new(assignment, basis_m.n())?;
    map.confidence = Some(confidence);
    Ok(map)
}

/// Spectral-domain ICP: alternate point-map extraction with orthonormal
/// projection of the re-estimated map. Stops early when the point map stops
/// changing.
pub fn icp_refine(
    c0: &FuncMap,
    basis_m: &SpectralBasis,
    basis_n: &SpectralBasis,
    iterations: usize,
) -> Result<FuncMap> {
    let k = c0.source_k();
    if c0.target_k() != k {
        return Err(Error::Dimension(format!(
            "ICP needs a square map, got {}x{}",
            c0.target_k(),
            k
        )));
    }
    let bm = basis_m.truncated(k)?;
    let bn = basis_n.truncated(k)?;

    let mut c = c0.clone();
    let mut previous: Option<Vec<usize>> = None;
    for _ in 0..iterations {
        let t = fmap_to_pointmap(&c, &bm, &bn)?;
        c = orthonormal_projection(&gt_from_pointmap(&bm, &bn, &t)?.map);
        if previous.as_deref() == Some(&t.assignment[..]) {
            break;
        }
        previous = Some(t.assignment);
    }
    Ok(c)
}

/// Nearest orthonormal matrix `U V'` from the SVD.
fn orthonormal_projection(map: &FuncMap) -> FuncMap {
    let svd = map.c.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    FuncMap::new(u * v_t)
}

/// ZoomOut: alternate point-map extraction and functional-map re-estimation
/// while widening the basis from the input width up to `k1` in increments of
/// `step` (the last increment is truncated so the output width is exactly
/// `k1`).
pub fn zoomout(
    c0: &FuncMap,
    basis_m: &SpectralBasis,
    basis_n: &SpectralBasis,
    k1: usize,
    step: usize,
) -> Result<FuncMap> {
    let k0 = c0.source_k();
    if c0.target_k() != k0 {
        return Err(Error::Dimension(format!(
            "ZoomOut needs a square map, got {}x{}",
            c0.target_k(),
            k0
        )));
    }
    if k0 > k1 {
        return Err(Error::Dimension(format!(
            "ZoomOut cannot shrink: start {k0} > target {k1}"
        )));
    }
    if k1 > basis_m.k() || k1 > basis_n.k() {
        return Err(Error::Dimension(format!(
            "ZoomOut to width {k1} needs bases at least that wide, have ({}, {})",
            basis_m.k(),
            basis_n.k()
        )));
    }
    assert!(step >= 1, "step must be >= 1");

    let mut c = c0.clone();
    let mut k = k0;
    loop {
        let bm = basis_m.truncated(k)?;
        let bn = basis_n.truncated(k)?;
        let t = fmap_to_pointmap(&c, &bm, &bn)?;
        let next = (k + step).min(k1);
        c = gt_from_pointmap(&basis_m.truncated(next)?, &basis_n.truncated(next)?, &t)?.map;
        if k == k1 {
            break;
        }
        k = next;
    }
    Ok(c)
}

// ---------------------------------------------------------------------------
// Correspondence files
// ---------------------------------------------------------------------------

/// Write the text format: header `P2P n_N n_M`, then one `j i` line per
/// target vertex.
pub fn write_pointmap(path: impl AsRef<Path>, map: &PointMap) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "P2P {} {}", map.len(), map.codomain_size)?;
    for (j, &i) in map.assignment.iter().enumerate() {
        writeln!(out, "{j} {i}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_pointmap(path: impl AsRef<Path>) -> Result<PointMap> {
    let path = path.as_ref();
    let format_err = |message: String| Error::Format {
        path: path.display().to_string(),
        message,
    };
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| format_err("empty file".into()))?
        .map_err(Error::Io)?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 3 || toks[0] != "P2P" {
        return Err(format_err(format!("bad header {header:?}")));
    }
    let n_n: usize = toks[1].parse().map_err(|_| format_err("bad n_N".into()))?;
    let n_m: usize = toks[2].parse().map_err(|_| format_err("bad n_M".into()))?;
    let mut assignment = vec![usize::MAX; n_n];
    for line in lines {
        let line = line.map_err(Error::Io)?;
        if line.trim().is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(format_err(format!("bad correspondence line {line:?}")));
        }
        let j: usize = toks[0].parse().map_err(|_| format_err("bad index".into()))?;
        let i: usize = toks[1].parse().map_err(|_| format_err("bad index".into()))?;
        if j >= n_n {
            return Err(format_err(format!("target index {j} out of range")));
        }
        assignment[j] = i;
    }
    if let Some(j) = assignment.iter().position(|&i| i == usize::MAX) {
        return Err(format_err(format!("target vertex {j} has no assignment")));
    }
    PointMap::new(assignment, n_m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{cotan_laplacian, eigendecompose};
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn basis_of(mesh: &crate::mesh::Mesh, k: usize) -> SpectralBasis {
        eigendecompose(&cotan_laplacian(mesh).unwrap(), k).unwrap()
    }

    #[test]
    fn identity_map_on_same_shape() {
        let mesh = crate::synth::bumpy_sphere(8, 10, 31);
        let basis = basis_of(&mesh, 10);
        let t = fmap_to_pointmap(&FuncMap::identity(10), &basis, &basis).unwrap();
        let expect: Vec<usize> = (0..mesh.vertex_count()).collect();
        assert_eq!(t.assignment, expect);
    }

    #[test]
    fn recovers_vertex_permutation() {
        let mesh = crate::synth::bumpy_sphere(8, 10, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let (permuted, sigma) = crate::synth::permuted_copy(&mesh, &mut rng);
        let k = 12;
        let bm = basis_of(&mesh, k);
        let bn = basis_of(&permuted, k);
        // In matched bases the alignment map is the ground-truth functional
        // map of the permutation itself.
        let gt = gt_from_pointmap(&bm, &bn, &PointMap::new(sigma.clone(), mesh.vertex_count()).unwrap())
            .unwrap();
        let t = fmap_to_pointmap(&gt.map, &bm, &bn).unwrap();
        assert_eq!(t.assignment, sigma);
    }

    #[test]
    fn ties_break_to_lowest_index() {
        // Hand-built embeddings: target row 0 is equidistant from source
        // rows 3 and 7 and everything else is far away.
        let n = 9;
        let k = 2;
        let mut phi_m = DMatrix::zeros(n, k);
        for i in 0..n {
            phi_m[(i, 0)] = 100.0 + i as f64 * 10.0;
            phi_m[(i, 1)] = 0.0;
        }
        phi_m[(3, 0)] = 1.0;
        phi_m[(3, 1)] = 0.0;
        phi_m[(7, 0)] = -1.0;
        phi_m[(7, 1)] = 0.0;
        let phi_n = DMatrix::from_row_slice(1, k, &[0.0, 5.0]); // distance sqrt(26) to both
        let mass_m = DVector::from_element(n, 1.0);
        let mass_n = DVector::from_element(1, 1.0);
        let bm = SpectralBasis {
            phi: phi_m,
            evals: DVector::zeros(k),
            mass: mass_m,
        };
        let bn = SpectralBasis {
            phi: phi_n,
            evals: DVector::zeros(k),
            mass: mass_n,
        };
        let t = fmap_to_pointmap(&FuncMap::identity(k), &bm, &bn).unwrap();
        assert_eq!(t.assignment, vec![3]);
    }

    #[test]
    fn argmin_invariant_under_orthogonal_transform() {
        // Rotating the k_M coordinate system of both embeddings at once
        // preserves all pairwise distances, hence the argmin.
        let mesh = crate::synth::bumpy_sphere(8, 10, 33);
        let basis = basis_of(&mesh, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let c = FuncMap::new(DMatrix::from_fn(8, 8, |_, _| rng.random_range(-0.3..0.3)) + DMatrix::identity(8, 8));

        let q = DMatrix::from_fn(8, 8, |_, _| rng.random_range(-1.0..1.0)).qr().q();
        let rotated_m = SpectralBasis {
            phi: &basis.phi * &q,
            evals: basis.evals.clone(),
            mass: basis.mass.clone(),
        };
        let c_rotated = FuncMap::new(q.transpose() * &c.c);

        let t0 = fmap_to_pointmap(&c, &basis, &basis).unwrap();
        // E_M' = Phi q, E_N' = Phi C q = Phi (C q): rotate the map columns.
        let t1 = fmap_to_pointmap(&FuncMap::new(&c.c * &q), &rotated_m, &basis).unwrap();
        let _ = c_rotated;
        assert_eq!(t0.assignment, t1.assignment);
    }

    #[test]
    fn icp_fixed_point_and_orthonormality() {
        let mesh = crate::synth::bumpy_sphere(8, 10, 34);
        let basis = basis_of(&mesh, 8);
        let refined = icp_refine(&FuncMap::identity(8), &basis, &basis, 10).unwrap();
        assert!((refined.c.clone() - DMatrix::identity(8, 8)).amax() < 1e-8);
        let gram = refined.c.transpose() * &refined.c;
        assert!((gram - DMatrix::identity(8, 8)).norm() <= 1e-8);
    }

    #[test]
    fn icp_recovers_permutation_from_noisy_start() {
        let mesh = crate::synth::bumpy_sphere(8, 10, 35);
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let (permuted, sigma) = crate::synth::permuted_copy(&mesh, &mut rng);
        let k = 10;
        let bm = basis_of(&mesh, k);
        let bn = basis_of(&permuted, k);
        let clean = gt_from_pointmap(&bm, &bn, &PointMap::new(sigma.clone(), mesh.vertex_count()).unwrap())
            .unwrap()
            .map;
        let noise = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
        let noisy = FuncMap::new(&clean.c + noise.clone() * (0.05 / noise.norm()));
        let refined = icp_refine(&noisy, &bm, &bn, 10).unwrap();
        let t = fmap_to_pointmap(&refined, &bm, &bn).unwrap();
        assert_eq!(t.assignment, sigma);
        let gram = refined.c.transpose() * &refined.c;
        assert!((gram - DMatrix::identity(k, k)).norm() <= 1e-8);
    }

    #[test]
    fn zoomout_identity_fixed_point() {
        let mesh = crate::synth::bumpy_sphere(8, 10, 36);
        let basis = basis_of(&mesh, 16);
        let out = zoomout(&FuncMap::identity(8), &basis, &basis, 16, 2).unwrap();
        assert_eq!(out.source_k(), 16);
        assert!((out.c - DMatrix::identity(16, 16)).amax() < 1e-8);
    }

    #[test]
    fn zoomout_equal_widths_is_single_roundtrip() {
        let mesh = crate::synth::bumpy_sphere(8, 10, 36);
        let basis = basis_of(&mesh, 8);
        let c0 = FuncMap::identity(8);
        let out = zoomout(&c0, &basis, &basis, 8, 2).unwrap();
        // One conversion round trip: T from C, then rebuild at width 8.
        let t = fmap_to_pointmap(&c0, &basis, &basis).unwrap();
        let expect = gt_from_pointmap(&basis, &basis, &t).unwrap().map;
        assert!((out.c - expect.c).amax() < 1e-12);
    }

    #[test]
    fn zoomout_recovers_permutation_and_width() {
        let mesh = crate::synth::bumpy_sphere(10, 12, 37);
        let mut rng = ChaCha8Rng::seed_from_u64(57);
        let (permuted, sigma) = crate::synth::permuted_copy(&mesh, &mut rng);
        let wide = 40;
        let bm = basis_of(&mesh, wide);
        let bn = basis_of(&permuted, wide);
        let k0 = 20;
        let clean = gt_from_pointmap(
            &bm.truncated(k0).unwrap(),
            &bn.truncated(k0).unwrap(),
            &PointMap::new(sigma.clone(), mesh.vertex_count()).unwrap(),
        )
        .unwrap()
        .map;
        let noise = DMatrix::from_fn(k0, k0, |_, _| rng.random_range(-1.0..1.0));
        let noisy = FuncMap::new(&clean.c + noise.clone() * (0.1 / noise.norm()));
        let out = zoomout(&noisy, &bm, &bn, wide, 2).unwrap();
        assert_eq!(out.source_k(), wide);
        assert_eq!(out.target_k(), wide);
        let t = fmap_to_pointmap(&out, &bm, &bn).unwrap();
        assert_eq!(t.assignment, sigma);
    }

    #[test]
    fn refinement_never_corrupts_identity_pair() {
        let mesh = crate::synth::bumpy_sphere(8, 10, 38);
        let basis = basis_of(&mesh, 12);
        let n = mesh.vertex_count();
        let count_non_identity = |t: &PointMap| t.assignment.iter().enumerate().filter(|&(j, &i)| j != i).count();

        let c = FuncMap::identity(8);
        let t0 = fmap_to_pointmap(&c, &basis.truncated(8).unwrap(), &basis.truncated(8).unwrap()).unwrap();
        assert_eq!(count_non_identity(&t0), 0);

        let icp = icp_refine(&c, &basis, &basis, 5).unwrap();
        let t1 = fmap_to_pointmap(&icp, &basis.truncated(8).unwrap(), &basis.truncated(8).unwrap()).unwrap();
        assert!(count_non_identity(&t1) <= count_non_identity(&t0));

        let zo = zoomout(&c, &basis, &basis, 12, 2).unwrap();
        let t2 = fmap_to_pointmap(&zo, &basis, &basis).unwrap();
        assert!(count_non_identity(&t2) <= count_non_identity(&t0));
        let _ = n;
    }

    #[test]
    fn pointmap_file_roundtrip_and_validation() {
        let map = PointMap::new(vec![2, 0, 1], 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.p2p");
        write_pointmap(&path, &map).unwrap();
        let back = read_pointmap(&path).unwrap();
        assert_eq!(back.assignment, map.assignment);
        assert_eq!(back.codomain_size(), 3);

        assert!(PointMap::new(vec![3], 3).is_err());
    }
}
