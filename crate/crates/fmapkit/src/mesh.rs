//! Triangle-mesh and point-cloud ingestion, normalization, grid subsampling
//! and spatial neighborhood queries.
//!
//! Meshes carry barycentric lumped vertex masses (one third of each incident
//! triangle's area), so the mass matrix is diagonal and `pinv(Phi) = Phi^T M`
//! for a mass-orthonormal basis. Grid cells are anchored at the global
//! origin, half-open `[k*s, (k+1)*s)`.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// World axis used as "up" for rotation augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    #[default]
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Axis::X => write!(f, "x"),
            Axis::Y => write!(f, "y"),
            Axis::Z => write!(f, "z"),
        }
    }
}

/// How to rescale a mesh after loading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    #[default]
    UnitArea,
    UnitMaxExtent,
}

/// A triangle mesh with lumped vertex masses.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<Vector3<f64>>,
    /// Triangles as 0-based vertex indices, counter-clockwise.
    pub faces: Vec<[usize; 3]>,
    /// Barycentric lumped areas; strictly positive, sums to the surface area.
    pub vertex_masses: Vec<f64>,
    pub up_axis: Axis,
    /// Zero-area faces dropped during construction.
    pub dropped_faces: usize,
}

fn face_area(a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> f64 {
    0.5 * (b - a).cross(&(c - a)).norm()
}

impl Mesh {
    /// Validate raw geometry, drop degenerate faces and compute lumped masses.
    pub fn new(
        vertices: Vec<Vector3<f64>>,
        faces: Vec<[usize; 3]>,
        up_axis: Axis,
    ) -> Result<Self> {
        let n = vertices.len();
        for v in &vertices {
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Error::Topology("non-finite vertex coordinate".into()));
            }
        }
        for (fi, f) in faces.iter().enumerate() {
            for &i in f {
                if i >= n {
                    return Err(Error::Topology(format!(
                        "face {fi} references vertex {i} but mesh has {n} vertices"
                    )));
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::Topology(format!("face {fi} repeats a vertex")));
            }
        }

        // Scale-aware degeneracy threshold from the bounding box diagonal.
        let (lo, hi) = bounding_box(&vertices);
        let diag2 = (hi - lo).norm_squared();
        let area_floor = 1e-14 * diag2.max(f64::MIN_POSITIVE);

        let mut kept = Vec::with_capacity(faces.len());
        let mut dropped = 0usize;
        for f in faces {
            let area = face_area(&vertices[f[0]], &vertices[f[1]], &vertices[f[2]]);
            if area > area_floor {
                kept.push(f);
            } else {
                dropped += 1;
            }
        }

        if n < 4 {
            return Err(Error::Topology(format!("mesh has {n} vertices, need >= 4")));
        }
        if kept.is_empty() {
            return Err(Error::Topology("mesh has no non-degenerate faces".into()));
        }

        let mut masses = vec![0.0f64; n];
        for f in &kept {
            let area = face_area(&vertices[f[0]], &vertices[f[1]], &vertices[f[2]]);
            let third = area / 3.0;
            for &i in f {
                masses[i] += third;
            }
        }
        if let Some(i) = masses.iter().position(|&m| m <= 0.0) {
            return Err(Error::Topology(format!(
                "vertex {i} has zero lumped mass (not referenced by any kept face)"
            )));
        }

        Ok(Mesh {
            vertices,
            faces: kept,
            vertex_masses: masses,
            up_axis,
            dropped_faces: dropped,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    pub fn total_area(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| face_area(&self.vertices[f[0]], &self.vertices[f[1]], &self.vertices[f[2]]))
            .sum()
    }

    /// Mass-weighted vertex centroid.
    pub fn centroid(&self) -> Vector3<f64> {
        let total: f64 = self.vertex_masses.iter().sum();
        let mut c = Vector3::zeros();
        for (v, &m) in self.vertices.iter().zip(&self.vertex_masses) {
            c += v * m;
        }
        c / total
    }

    pub fn point_cloud(&self) -> PointCloud {
        PointCloud {
            points: self.vertices.clone(),
            parent_indices: None,
        }
    }
}

fn bounding_box(points: &[Vector3<f64>]) -> (Vector3<f64>, Vector3<f64>) {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    if points.is_empty() {
        (Vector3::zeros(), Vector3::zeros())
    } else {
        (lo, hi)
    }
}

/// Rescale a mesh about its centroid; masses are recomputed.
pub fn normalize_mesh(mesh: &Mesh, mode: Normalization) -> Result<Mesh> {
    let scale = match mode {
        Normalization::None => return Ok(mesh.clone()),
        Normalization::UnitArea => {
            let area = mesh.total_area();
            if area <= 0.0 {
                return Err(Error::Numeric("zero total area".into()));
            }
            1.0 / area.sqrt()
        }
        Normalization::UnitMaxExtent => {
            let (lo, hi) = bounding_box(&mesh.vertices);
            let extent = (hi - lo).amax();
            if extent <= 0.0 {
                return Err(Error::Numeric("zero extent".into()));
            }
            1.0 / extent
        }
    };
    let c = mesh.centroid();
    let vertices: Vec<Vector3<f64>> = mesh.vertices.iter().map(|v| c + (v - c) * scale).collect();
    Mesh::new(vertices, mesh.faces.clone(), mesh.up_axis)
}

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

fn parse_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// Load an ASCII OFF or ASCII PLY triangle mesh.
///
/// Comment lines starting with `#` (and PLY `comment` lines) are tolerated.
/// Binary PLY is rejected.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(Error::Io)?;
    let first = text
        .lines()
        .map(|l| strip_comment(l))
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| parse_err(path, "empty file"))?;
    let first = first.trim();
    if first == "OFF" || first.starts_with("OFF") {
        parse_off(path, &text)
    } else if first == "ply" {
        parse_ply(path, &text)
    } else {
        Err(parse_err(path, format!("unrecognized header {first:?} (expected OFF or ply)")))
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(pos) => &line[..pos],
        None => line,
    }
}

fn parse_off(path: &Path, text: &str) -> Result<Mesh> {
    let mut lines = text.lines().map(strip_comment).filter(|l| !l.trim().is_empty());

    let header = lines.next().ok_or_else(|| parse_err(path, "missing OFF header"))?;
    let mut header_rest: Vec<&str> = header.split_whitespace().collect();
    if header_rest.first() != Some(&"OFF") {
        return Err(parse_err(path, "missing OFF header"));
    }
    header_rest.remove(0);

    // Counts either share the header line or follow on the next one.
    let counts: Vec<&str> = if header_rest.is_empty() {
        lines
            .next()
            .ok_or_else(|| parse_err(path, "missing vertex/face counts"))?
            .split_whitespace()
            .collect()
    } else {
        header_rest
    };
    if counts.len() < 2 {
        return Err(parse_err(path, "expected `n f [e]` counts"));
    }
    let n: usize = counts[0]
        .parse()
        .map_err(|_| parse_err(path, format!("bad vertex count {:?}", counts[0])))?;
    let f: usize = counts[1]
        .parse()
        .map_err(|_| parse_err(path, format!("bad face count {:?}", counts[1])))?;

    let mut vertices = Vec::with_capacity(n);
    for i in 0..n {
        let line = lines
            .next()
            .ok_or_else(|| parse_err(path, format!("missing vertex line {i}")))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 3 {
            return Err(parse_err(path, format!("vertex line {i} has {} tokens", toks.len())));
        }
        let mut v = [0.0f64; 3];
        for a in 0..3 {
            v[a] = toks[a]
                .parse()
                .map_err(|_| parse_err(path, format!("bad coordinate {:?} on vertex {i}", toks[a])))?;
        }
        vertices.push(Vector3::new(v[0], v[1], v[2]));
    }

    let mut faces = Vec::with_capacity(f);
    for i in 0..f {
        let line = lines
            .next()
            .ok_or_else(|| parse_err(path, format!("missing face line {i}")))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        let arity: usize = toks
            .first()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| parse_err(path, format!("bad face arity on line {i}")))?;
        if arity != 3 {
            return Err(parse_err(path, format!("face {i} has {arity} vertices, only triangles are supported")));
        }
        if toks.len() < 4 {
            return Err(parse_err(path, format!("face line {i} is truncated")));
        }
        let mut idx = [0usize; 3];
        for a in 0..3 {
            idx[a] = toks[a + 1]
                .parse()
                .map_err(|_| parse_err(path, format!("bad index {:?} on face {i}", toks[a + 1])))?;
        }
        faces.push(idx);
    }

    Mesh::new(vertices, faces, Axis::default())
}

fn parse_ply(path: &Path, text: &str) -> Result<Mesh> {
    let mut lines = text.lines();

    if lines.next().map(str::trim) != Some("ply") {
        return Err(parse_err(path, "missing ply magic"));
    }

    #[derive(Default)]
    struct ElementSpec {
        name: String,
        count: usize,
        properties: Vec<String>,
        has_list: bool,
    }

    let mut elements: Vec<ElementSpec> = Vec::new();
    let mut format_seen = false;
    for line in lines.by_ref() {
        let line = line.trim();
        if line.is_empty() || line.starts_with("comment") || line.starts_with('#') {
            continue;
        }
        if line == "end_header" {
            break;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks[0] {
            "format" => {
                if toks.get(1) != Some(&"ascii") {
                    return Err(parse_err(path, "only ASCII PLY is supported (binary rejected)"));
                }
                format_seen = true;
            }
            "element" => {
                if toks.len() < 3 {
                    return Err(parse_err(path, "malformed element line"));
                }
                let count = toks[2]
                    .parse()
                    .map_err(|_| parse_err(path, format!("bad element count {:?}", toks[2])))?;
                elements.push(ElementSpec {
                    name: toks[1].to_string(),
                    count,
                    properties: Vec::new(),
                    has_list: false,
                });
            }
            "property" => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, "property before any element"))?;
                if toks.get(1) == Some(&"list") {
                    el.has_list = true;
                } else if let Some(name) = toks.last() {
                    el.properties.push(name.to_string());
                }
            }
            "obj_info" => {}
            other => return Err(parse_err(path, format!("unexpected header token {other:?}"))),
        }
    }
    if !format_seen {
        return Err(parse_err(path, "missing format line"));
    }

    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut data = lines.filter(|l| !l.trim().is_empty());
    for el in &elements {
        if el.name == "vertex" {
            let ix = el.properties.iter().position(|p| p == "x");
            let iy = el.properties.iter().position(|p| p == "y");
            let iz = el.properties.iter().position(|p| p == "z");
            let (ix, iy, iz) = match (ix, iy, iz) {
                (Some(a), Some(b), Some(c)) => (a, b, c),
                _ => return Err(parse_err(path, "vertex element lacks x/y/z properties")),
            };
            for i in 0..el.count {
                let line = data
                    .next()
                    .ok_or_else(|| parse_err(path, format!("missing vertex line {i}")))?;
                let toks: Vec<&str> = line.split_whitespace().collect();
                let get = |p: usize| -> Result<f64> {
                    toks.get(p)
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| parse_err(path, format!("bad vertex line {i}")))
                };
                vertices.push(Vector3::new(get(ix)?, get(iy)?, get(iz)?));
            }
        } else if el.name == "face" {
            for i in 0..el.count {
                let line = data
                    .next()
                    .ok_or_else(|| parse_err(path, format!("missing face line {i}")))?;
                let toks: Vec<&str> = line.split_whitespace().collect();
                let arity: usize = toks
                    .first()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| parse_err(path, format!("bad face line {i}")))?;
                if arity != 3 {
                    return Err(parse_err(path, format!("face {i} has {arity} vertices, only triangles are supported")));
                }
                let mut idx = [0usize; 3];
                for a in 0..3 {
                    idx[a] = toks
                        .get(a + 1)
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| parse_err(path, format!("bad index on face {i}")))?;
                }
                faces.push(idx);
            }
        } else {
            // Skip unknown elements line by line.
            for _ in 0..el.count {
                data.next();
            }
        }
    }

    Mesh::new(vertices, faces, Axis::default())
}

// ---------------------------------------------------------------------------
// Point clouds and grid subsampling
// ---------------------------------------------------------------------------

/// A bag of 3D points, optionally remembering which coarse cell each point of
/// the finer cloud it was subsampled from belongs to.
#[derive(Debug, Clone)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    /// For a cloud produced by [`grid_subsample`]: `parent_indices[i]` is the
    /// index in `points` of the cell containing point `i` of the input cloud.
    /// Every cell index occurs at least once.
    pub parent_indices: Option<Vec<usize>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Self {
        PointCloud {
            points,
            parent_indices: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn cell_key(p: &Vector3<f64>, cell: f64) -> (i64, i64, i64) {
    // `as i64` saturates, so extreme coordinates stay well-defined.
    (
        (p.x / cell).floor() as i64,
        (p.y / cell).floor() as i64,
        (p.z / cell).floor() as i64,
    )
}

/// One output point per occupied axis-aligned cell, at the barycenter of the
/// cell's points. Output order is lexicographic in integer cell coordinates.
pub fn grid_subsample(cloud: &PointCloud, cell_size: f64) -> PointCloud {
    assert!(cell_size > 0.0, "cell_size must be positive");
    use std::collections::BTreeMap;

    let mut cells: BTreeMap<(i64, i64, i64), (Vector3<f64>, usize)> = BTreeMap::new();
    for p in &cloud.points {
        let e = cells.entry(cell_key(p, cell_size)).or_insert((Vector3::zeros(), 0));
        e.0 += p;
        e.1 += 1;
    }

    let mut points = Vec::with_capacity(cells.len());
    let mut index_of: HashMap<(i64, i64, i64), usize> = HashMap::with_capacity(cells.len());
    for (key, (sum, count)) in &cells {
        index_of.insert(*key, points.len());
        points.push(sum / *count as f64);
    }
    let parents = cloud
        .points
        .iter()
        .map(|p| index_of[&cell_key(p, cell_size)])
        .collect();

    PointCloud {
        points,
        parent_indices: Some(parents),
    }
}

/// One resolution level of a [`SamplingHierarchy`].
#[derive(Debug, Clone)]
pub struct HierarchyLevel {
    /// Subsampled cloud; its `parent_indices` map the previous level's points
    /// (the original cloud, for level 0) into this level's cells.
    pub cloud: PointCloud,
    pub cell_size: f64,
}

/// Grid-subsampled clouds at doubling cell sizes with child-to-parent pooling.
#[derive(Debug, Clone)]
pub struct SamplingHierarchy {
    pub levels: Vec<HierarchyLevel>,
}

impl SamplingHierarchy {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }
}

/// Build `num_levels` grid levels with cell sizes `base_cell * 2^i`.
pub fn build_hierarchy(
    cloud: &PointCloud,
    base_cell: f64,
    num_levels: usize,
) -> Result<SamplingHierarchy> {
    assert!(num_levels >= 1, "num_levels must be >= 1");
    assert!(base_cell > 0.0, "base_cell must be positive");

    let mut levels = Vec::with_capacity(num_levels);
    let mut current = cloud.clone();
    for i in 0..num_levels {
        let cell = base_cell * (1u64 << i) as f64;
        let sub = grid_subsample(&current, cell);
        if sub.len() < 4 {
            return Err(Error::Hierarchy {
                level: i,
                points: sub.len(),
            });
        }
        current = PointCloud::new(sub.points.clone());
        levels.push(HierarchyLevel {
            cloud: sub,
            cell_size: cell,
        });
    }
    Ok(SamplingHierarchy { levels })
}

/// For each query, the indices of support points strictly within `radius`,
/// in ascending index order. Backed by a uniform grid; results match a
/// brute-force scan exactly.
pub fn radius_neighbors(
    queries: &PointCloud,
    support: &PointCloud,
    radius: f64,
) -> Vec<Vec<usize>> {
    assert!(radius > 0.0, "radius must be positive");

    let mut bins: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in support.points.iter().enumerate() {
        bins.entry(cell_key(p, radius)).or_default().push(i);
    }
    let r2 = radius * radius;

    queries
        .points
        .par_iter()
        .map(|q| {
            let (cx, cy, cz) = cell_key(q, radius);
            let mut found = Vec::new();
            for dx in -1..=1i64 {
                for dy in -1..=1i64 {
                    for dz in -1..=1i64 {
                        let key = (cx.saturating_add(dx), cy.saturating_add(dy), cz.saturating_add(dz));
                        if let Some(bucket) = bins.get(&key) {
                            for &i in bucket {
                                if (support.points[i] - q).norm_squared() < r2 {
                                    found.push(i);
                                }
                            }
                        }
                    }
                }
            }
            found.sort_unstable();
            found
        })
        .collect()
}
