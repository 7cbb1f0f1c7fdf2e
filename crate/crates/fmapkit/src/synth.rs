//! Synthetic shape generators for tests, fixtures and demos.
//!
//! Everything here is deterministic given its inputs; randomized generators
//! take an explicit RNG.

use std::collections::HashMap;

use nalgebra::Vector3;
use rand::Rng;

use crate::mesh::{Axis, Mesh};

/// Unit icosphere: the regular icosahedron subdivided `subdivisions` times,
/// vertices projected to the unit sphere. Vertex counts: 12, 42, 162, 642,
/// 2562, ...
pub fn icosphere(subdivisions: usize) -> Mesh {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vector3<f64>> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vector3::new(x, y, z).normalize())
    .collect();

    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Vector3<f64>>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                let m = ((vertices[a] + vertices[b]) / 2.0).normalize();
                vertices.push(m);
                vertices.len() - 1
            })
        };
        for f in &faces {
            let ab = mid(f[0], f[1], &mut vertices);
            let bc = mid(f[1], f[2], &mut vertices);
            let ca = mid(f[2], f[0], &mut vertices);
            next.push([f[0], ab, ca]);
            next.push([f[1], bc, ab]);
            next.push([f[2], ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }

    Mesh::new(vertices, faces, Axis::Y).expect("icosphere is a valid mesh")
}

/// Lat-long sphere with asymmetric smooth radial bumps. Around 300 vertices
/// for the default 16x20 grid; the bumps break all rotational symmetries so
/// the Laplace spectrum is simple.
pub fn bumpy_sphere(rings: usize, segments: usize, bump_seed: u64) -> Mesh {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(bump_seed);
    let centers: Vec<Vector3<f64>> = (0..5)
        .map(|_| random_unit_vector(&mut rng))
        .collect();
    let amps: Vec<f64> = (0..5).map(|_| rng.random_range(0.05..0.15)).collect();
    let widths: Vec<f64> = (0..5).map(|_| rng.random_range(0.4..0.9)).collect();

    let radius = |dir: &Vector3<f64>| -> f64 {
        let mut r = 1.0;
        for ((c, a), w) in centers.iter().zip(&amps).zip(&widths) {
            let d = (dir - c).norm();
            r += a * (-d * d / (2.0 * w * w)).exp();
        }
        r
    };

    let mut vertices = Vec::new();
    vertices.push(Vector3::new(0.0, radius(&Vector3::new(0.0, 1.0, 0.0)), 0.0));
    for i in 1..=rings {
        let theta = std::f64::consts::PI * i as f64 / (rings + 1) as f64;
        for j in 0..segments {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / segments as f64;
            let dir = Vector3::new(theta.sin() * phi.cos(), theta.cos(), theta.sin() * phi.sin());
            vertices.push(dir * radius(&dir));
        }
    }
    let south = vertices.len();
    vertices.push(Vector3::new(0.0, -radius(&Vector3::new(0.0, -1.0, 0.0)), 0.0));

    let ring_start = |i: usize| 1 + (i - 1) * segments;
    let mut faces = Vec::new();
    for j in 0..segments {
        faces.push([0, ring_start(1) + (j + 1) % segments, ring_start(1) + j]);
    }
    for i in 1..rings {
        for j in 0..segments {
            let a = ring_start(i) + j;
            let b = ring_start(i) + (j + 1) % segments;
            let c = ring_start(i + 1) + j;
            let d = ring_start(i + 1) + (j + 1) % segments;
            faces.push([a, b, d]);
            faces.push([a, d, c]);
        }
    }
    for j in 0..segments {
        faces.push([south, ring_start(rings) + j, ring_start(rings) + (j + 1) % segments]);
    }

    Mesh::new(vertices, faces, Axis::Y).expect("bumpy sphere is a valid mesh")
}

fn random_unit_vector(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Displace every vertex radially from the centroid by bounded noise. Breaks
/// spectral degeneracies while keeping the mesh and its triangulation valid.
pub fn jitter(mesh: &Mesh, amplitude: f64, rng: &mut impl Rng) -> Mesh {
    let c = mesh.centroid();
    let vertices: Vec<Vector3<f64>> = mesh
        .vertices
        .iter()
        .map(|v| {
            let d = v - c;
            let scale = 1.0 + amplitude * rng.random_range(-1.0..1.0);
            c + d * scale
        })
        .collect();
    Mesh::new(vertices, mesh.faces.clone(), mesh.up_axis).expect("jittered mesh stays valid")
}

/// Apply a smooth random deformation: a sum of Gaussian bumps displacing
/// vertices along fixed random directions. Small amplitudes keep the result
/// near-isometric to the input; the vertex correspondence is the identity.
pub fn smooth_deform(mesh: &Mesh, amplitude: f64, rng: &mut impl Rng) -> Mesh {
    let c = mesh.centroid();
    let scale = mesh.total_area().sqrt();
    let bumps: Vec<(Vector3<f64>, Vector3<f64>, f64)> = (0..4)
        .map(|_| {
            let center = c + random_unit_vector(rng) * scale * 0.5;
            let dir = random_unit_vector(rng);
            let width = rng.random_range(0.4..0.8) * scale;
            (center, dir, width)
        })
        .collect();
    let vertices: Vec<Vector3<f64>> = mesh
        .vertices
        .iter()
        .map(|v| {
            let mut d = Vector3::zeros();
            for (center, dir, width) in &bumps {
                let r2 = (v - center).norm_squared();
                d += dir * (amplitude * scale * (-r2 / (2.0 * width * width)).exp());
            }
            v + d
        })
        .collect();
    Mesh::new(vertices, mesh.faces.clone(), mesh.up_axis).expect("deformed mesh stays valid")
}

/// Relabel vertices by a random permutation `sigma`: new vertex `i` is old
/// vertex `sigma[i]`. Returns the permuted mesh together with `sigma`, which
/// is exactly the ground-truth point map from the permuted copy back to the
/// original.
pub fn permuted_copy(mesh: &Mesh, rng: &mut impl Rng) -> (Mesh, Vec<usize>) {
    let n = mesh.vertex_count();
    let mut sigma: Vec<usize> = (0..n).collect();
    // Fisher-Yates.
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        sigma.swap(i, j);
    }
    let mut inverse = vec![0usize; n];
    for (new, &old) in sigma.iter().enumerate() {
        inverse[old] = new;
    }
    let vertices: Vec<Vector3<f64>> = sigma.iter().map(|&old| mesh.vertices[old]).collect();
    let faces: Vec<[usize; 3]> = mesh
        .faces
        .iter()
        .map(|f| [inverse[f[0]], inverse[f[1]], inverse[f[2]]])
        .collect();
    let permuted = Mesh::new(vertices, faces, mesh.up_axis).expect("permuted mesh stays valid");
    (permuted, sigma)
}

/// Write a mesh as ASCII OFF.
pub fn write_off(mesh: &Mesh, path: impl AsRef<std::path::Path>) -> crate::Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "OFF")?;
    writeln!(out, "{} {} 0", mesh.vertex_count(), mesh.face_count())?;
    for v in &mesh.vertices {
        writeln!(out, "{} {} {}", v.x, v.y, v.z)?;
    }
    for f in &mesh.faces {
        writeln!(out, "3 {} {} {}", f[0], f[1], f[2])?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn icosphere_counts() {
        assert_eq!(icosphere(0).vertex_count(), 12);
        assert_eq!(icosphere(1).vertex_count(), 42);
        assert_eq!(icosphere(2).vertex_count(), 162);
        assert_eq!(icosphere(3).vertex_count(), 642);
    }

    #[test]
    fn bumpy_sphere_is_closed() {
        let m = bumpy_sphere(16, 20, 3);
        assert_eq!(m.vertex_count(), 16 * 20 + 2);
        // Euler characteristic of a sphere: V - E + F = 2 with E = 3F/2.
        assert_eq!(m.vertex_count() as i64 - m.face_count() as i64 / 2, 2);
    }

    #[test]
    fn permuted_copy_roundtrip() {
        let mesh = icosphere(1);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (perm, sigma) = permuted_copy(&mesh, &mut rng);
        for (new, &old) in sigma.iter().enumerate() {
            assert_eq!(perm.vertices[new], mesh.vertices[old]);
        }
        assert_eq!(perm.total_area(), mesh.total_area());
    }

    #[test]
    fn off_roundtrip() {
        let mesh = icosphere(1);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ico.off");
        write_off(&mesh, &path).unwrap();
        let back = crate::mesh::load_mesh(&path).unwrap();
        assert_eq!(back.vertex_count(), mesh.vertex_count());
        assert_eq!(back.faces, mesh.faces);
    }
}
