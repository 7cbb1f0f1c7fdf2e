//! Geodesic distances and the correspondence-error protocol.
//!
//! Distances are single-source shortest paths over the edge graph weighted
//! by Euclidean edge lengths (a known slight overestimate of the polyhedral
//! geodesic, fine at the error magnitudes evaluated here). Errors are
//! normalized by the square root of the codomain mesh's area and
//! conventionally also reported multiplied by 100.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::convert::PointMap;
use crate::mesh::Mesh;
use crate::{Error, Result};

/// Distances from a source set over one mesh.
#[derive(Debug, Clone)]
pub struct GeodesicField {
    /// Length units; `f64::INFINITY` marks unreachable vertices.
    pub distances: Vec<f64>,
    /// `sqrt(total area)`, the protocol's normalization constant.
    pub normalization: f64,
}

impl GeodesicField {
    pub fn unreachable_count(&self) -> usize {
        self.distances.iter().filter(|d| !d.is_finite()).count()
    }
}

fn edge_adjacency(mesh: &Mesh) -> Vec<Vec<(usize, f64)>> {
    let n = mesh.vertex_count();
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut push = |a: usize, b: usize| {
        if !adj[a].iter().any(|&(v, _)| v == b) {
            let w = (mesh.vertices[a] - mesh.vertices[b]).norm();
            adj[a].push((b, w));
        }
    };
    for f in &mesh.faces {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            push(a, b);
            push(b, a);
        }
    }
    adj
}

#[derive(PartialEq)]
struct HeapEntry(f64, usize);

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

fn dijkstra(adj: &[Vec<(usize, f64)>], source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; adj.len()];
    dist[source] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(Reverse(HeapEntry(0.0, source)));
    while let Some(Reverse(HeapEntry(d, u))) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, w) in &adj[u] {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Reverse(HeapEntry(nd, v)));
            }
        }
    }
    dist
}

/// Single-source geodesic distances; unreachable vertices carry infinity.
pub fn geodesic_from(mesh: &Mesh, source: usize) -> Result<GeodesicField> {
    if source >= mesh.vertex_count() {
        return Err(Error::Dimension(format!(
            "source {source} out of range for {} vertices",
            mesh.vertex_count()
        )));
    }
    let adj = edge_adjacency(mesh);
    Ok(GeodesicField {
        distances: dijkstra(&adj, source),
        normalization: mesh.total_area().sqrt(),
    })
}

/// Per-map error statistics in units of `sqrt(area)`.
#[derive(Debug, Clone)]
pub struct ErrorStats {
    /// Mean normalized geodesic error over evaluated vertices.
    pub mean: f64,
    /// Vertices excluded because their distance was infinite.
    pub excluded: usize,
    /// Normalized error per target vertex (infinite where excluded).
    pub per_vertex: Vec<f64>,
}

impl ErrorStats {
    pub fn mean_x100(&self) -> f64 {
        self.mean * 100.0
    }
}

/// Mean geodesic distance between predicted and ground-truth images of every
/// target vertex, on the codomain mesh `M`, normalized by `sqrt(area(M))`.
pub fn mean_geodesic_error(pred: &PointMap, gt: &PointMap, mesh_m: &Mesh) -> Result<ErrorStats> {
    if pred.len() != gt.len() {
        return Err(Error::Dimension(format!(
            "maps have different lengths: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    let n_m = mesh_m.vertex_count();
    for &i in pred.assignment.iter().chain(gt.assignment.iter()) {
        if i >= n_m {
            return Err(Error::Dimension(format!(
                "vertex {i} out of range for codomain of {n_m} vertices"
            )));
        }
    }

    let adj = edge_adjacency(mesh_m);
    let norm = mesh_m.total_area().sqrt();

    // One Dijkstra per distinct ground-truth image.
    let mut sources: Vec<usize> = gt.assignment.clone();
    sources.sort_unstable();
    sources.dedup();
    let fields: Vec<(usize, Vec<f64>)> = sources
        .par_iter()
        .map(|&s| (s, dijkstra(&adj, s)))
        .collect();
    let field_of = |s: usize| -> &Vec<f64> {
        let pos = sources.binary_search(&s).expect("source present");
        &fields[pos].1
    };

    let per_vertex: Vec<f64> = pred
        .assignment
        .iter()
        .zip(gt.assignment.iter())
        .map(|(&p, &g)| field_of(g)[p] / norm)
        .collect();

    let mut sum = 0.0;
    let mut count = 0usize;
    let mut excluded = 0usize;
    for &e in &per_vertex {
        if e.is_finite() {
            sum += e;
            count += 1;
        } else {
            excluded += 1;
        }
    }
    if count == 0 {
        return Err(Error::Numeric("all vertices unreachable".into()));
    }
    Ok(ErrorStats {
        mean: sum / count as f64,
        excluded,
        per_vertex,
    })
}

/// Fraction of errors at or below each threshold; nondecreasing.
pub fn accuracy_curve(errors: &[f64], thresholds: &[f64]) -> Vec<f64> {
    debug_assert!(thresholds.windows(2).all(|w| w[0] <= w[1]));
    let n = errors.len().max(1) as f64;
    thresholds
        .iter()
        .map(|&t| errors.iter().filter(|&&e| e <= t).count() as f64 / n)
        .collect()
}

/// Evaluation report, serialized as JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub pairs: usize,
    pub mean_error: f64,
    pub mean_error_x100: f64,
    /// `[threshold, fraction]` rows.
    pub curve: Vec<[f64; 2]>,
    pub excluded_vertices: usize,
}

impl Report {
    pub fn from_stats(stats: &ErrorStats, thresholds: &[f64]) -> Report {
        let finite: Vec<f64> = stats.per_vertex.iter().copied().filter(|e| e.is_finite()).collect();
        let fractions = accuracy_curve(&finite, thresholds);
        Report {
            pairs: 1,
            mean_error: stats.mean,
            mean_error_x100: stats.mean_x100(),
            curve: thresholds.iter().zip(fractions).map(|(&t, f)| [t, f]).collect(),
            excluded_vertices: stats.excluded,
        }
    }
}

pub fn write_report(path: impl AsRef<Path>, report: &Report) -> Result<()> {
    let file = File::create(path)?;
    serde_json::to_writer_pretty(BufWriter::new(file), report)
        .map_err(|e| Error::Numeric(format!("report serialization failed: {e}")))?;
    Ok(())
}

/// Plain-text curve for external plotting tools: `threshold fraction` lines.
pub fn write_curve_text(path: impl AsRef<Path>, report: &Report) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for row in &report.curve {
        writeln!(out, "{} {}", row[0], row[1])?;
    }
    out.flush()?;
    Ok(())
}
