//! Learnable point-cloud convolution features: kernel-point convolutions,
//! a reduced hierarchical extractor applied in a Siamese fashion, rotation
//! augmentation and the training loop.
//!
//! Kernel points `z_k` are fixed geometry; only the weight matrices `W_k`
//! (and the pointwise up-stage weights) are trained.

use nalgebra::{DMatrix, Vector3};
use rand::Rng;

use crate::mesh::{Mesh, PointCloud};
use crate::{Error, Result};

mod extractor;
mod train;

pub use extractor::{ExtractorConfig, ExtractorNet, ForwardTrace};
pub use train::{
    learning_rate, pair_loss_and_grad, read_checkpoint, train_step, write_checkpoint,
    CheckpointData, GridParams, ShapeInputs, TrainPair, TrainState,
};

/// One kernel: point locations inside the radius and one weight matrix per
/// point.
#[derive(Debug, Clone)]
pub struct KernelParams {
    pub kernel_points: Vec<Vector3<f64>>,
    /// `D x D'` weight matrices, one per kernel point.
    pub weights: Vec<DMatrix<f64>>,
    pub radius: f64,
    /// Influence range `sigma` of each kernel point.
    pub influence: f64,
}

/// Linear influence `h = max(0, 1 - |y - z| / sigma)`.
pub fn kernel_influence(y: &Vector3<f64>, z: &Vector3<f64>, sigma: f64) -> f64 {
    debug_assert!(sigma > 0.0);
    (1.0 - (y - z).norm() / sigma).max(0.0)
}

/// Deterministic kernel layout: one point at the origin, the rest on a
/// Fibonacci-sphere shell at three quarters of the radius.
pub fn fibonacci_kernel_points(count: usize, radius: f64) -> Vec<Vector3<f64>> {
    assert!(count >= 1);
    let mut points = Vec::with_capacity(count);
    points.push(Vector3::zeros());
    let shell = 0.75 * radius;
    let m = count - 1;
    let golden_angle = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    for i in 0..m {
        let y = 1.0 - 2.0 * (i as f64 + 0.5) / m as f64;
        let r = (1.0 - y * y).sqrt();
        let theta = golden_angle * i as f64;
        points.push(Vector3::new(r * theta.cos(), y, r * theta.sin()) * shell);
    }
    points
}

/// Point-cloud convolution:
/// `out(x) = sum_{i in N(x)} sum_k h(x_i - x, z_k) (f_i W_k)`,
/// accumulated in ascending neighbor then kernel index order.
pub fn kpconv_forward(
    support: &PointCloud,
    queries: &PointCloud,
    feats: &DMatrix<f64>,
    kernel: &KernelParams,
    neighbors: &[Vec<usize>],
) -> Result<DMatrix<f64>> {
    let d_in = feats.ncols();
    let d_out = kernel.weights.first().map(|w| w.ncols()).unwrap_or(0);
    if feats.nrows() != support.len() {
        return Err(Error::Dimension(format!(
            "{} feature rows for {} support points",
            feats.nrows(),
            support.len()
        )));
    }
    if neighbors.len() != queries.len() {
        return Err(Error::Dimension("neighbor lists do not match queries".into()));
    }
    for w in &kernel.weights {
        if w.nrows() != d_in || w.ncols() != d_out {
            return Err(Error::Dimension(format!(
                "kernel weight is {}x{}, expected {d_in}x{d_out}",
                w.nrows(),
                w.ncols()
            )));
        }
    }

    let mut out = DMatrix::zeros(queries.len(), d_out);
    for (q, nbrs) in neighbors.iter().enumerate() {
        for &i in nbrs {
            let rel = support.points[i] - queries.points[q];
            for (k, z) in kernel.kernel_points.iter().enumerate() {
                let h = kernel_influence(&rel, z, kernel.influence);
                if h == 0.0 {
                    continue;
                }
                let w = &kernel.weights[k];
                for c2 in 0..d_out {
                    let mut acc = 0.0;
                    for c1 in 0..d_in {
                        acc += feats[(i, c1)] * w[(c1, c2)];
                    }
                    out[(q, c2)] += h * acc;
                }
            }
        }
    }
    Ok(out)
}

/// Reverse-mode gradients of [`kpconv_forward`] with respect to the input
/// features and the kernel weights. Kernel positions are fixed.
pub fn kpconv_backward(
    support: &PointCloud,
    queries: &PointCloud,
    feats: &DMatrix<f64>,
    kernel: &KernelParams,
    neighbors: &[Vec<usize>],
    upstream: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, Vec<DMatrix<f64>>)> {
    let d_in = feats.ncols();
    let d_out = kernel.weights.first().map(|w| w.ncols()).unwrap_or(0);
    if upstream.nrows() != queries.len() || upstream.ncols() != d_out {
        return Err(Error::Dimension("upstream shape mismatch".into()));
    }
    if feats.nrows() != support.len() {
        return Err(Error::Dimension("feature rows do not match support".into()));
    }

    let mut d_feats = DMatrix::zeros(support.len(), d_in);
    let mut d_weights: Vec<DMatrix<f64>> = kernel
        .weights
        .iter()
        .map(|w| DMatrix::zeros(w.nrows(), w.ncols()))
        .collect();

    for (q, nbrs) in neighbors.iter().enumerate() {
        for &i in nbrs {
            let rel = support.points[i] - queries.points[q];
            for (k, z) in kernel.kernel_points.iter().enumerate() {
                let h = kernel_influence(&rel, z, kernel.influence);
                if h == 0.0 {
                    continue;
                }
                let w = &kernel.weights[k];
                let dw = &mut d_weights[k];
                for c1 in 0..d_in {
                    let f = feats[(i, c1)];
                    let mut acc = 0.0;
                    for c2 in 0..d_out {
                        let u = upstream[(q, c2)];
                        acc += u * w[(c1, c2)];
                        dw[(c1, c2)] += h * f * u;
                    }
                    d_feats[(i, c1)] += h * acc;
                }
            }
        }
    }
    Ok((d_feats, d_weights))
}

/// Rotate vertices by `angle` about the up axis through the centroid.
/// Connectivity and masses are untouched.
pub fn rotate_about_up_axis(mesh: &Mesh, angle: f64) -> Mesh {
    let c = mesh.centroid();
    let (s, co) = angle.sin_cos();
    let rotate = |v: &Vector3<f64>| -> Vector3<f64> {
        let p = v - c;
        let rotated = match mesh.up_axis {
            crate::mesh::Axis::X => Vector3::new(p.x, co * p.y - s * p.z, s * p.y + co * p.z),
            crate::mesh::Axis::Y => Vector3::new(co * p.x + s * p.z, p.y, -s * p.x + co * p.z),
            crate::mesh::Axis::Z => Vector3::new(co * p.x - s * p.y, s * p.x + co * p.y, p.z),
        };
        c + rotated
    };
    Mesh {
        vertices: mesh.vertices.iter().map(rotate).collect(),
        faces: mesh.faces.clone(),
        vertex_masses: mesh.vertex_masses.clone(),
        up_axis: mesh.up_axis,
        dropped_faces: mesh.dropped_faces,
    }
}

/// Data augmentation: rotate by a uniform random angle about the up axis.
pub fn augment_rotation(mesh: &Mesh, rng: &mut impl Rng) -> Mesh {
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    rotate_about_up_axis(mesh, angle)
}

/// Constant-one channel plus raw coordinates: the network's input signal.
pub fn input_features(mesh: &Mesh) -> DMatrix<f64> {
    let n = mesh.vertex_count();
    let mut f = DMatrix::zeros(n, 4);
    for (i, v) in mesh.vertices.iter().enumerate() {
        f[(i, 0)] = 1.0;
        f[(i, 1)] = v.x;
        f[(i, 2)] = v.y;
        f[(i, 3)] = v.z;
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::radius_neighbors;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn influence_ramp() {
        let z = Vector3::new(0.2, 0.0, 0.0);
        assert_eq!(kernel_influence(&z.clone(), &z, 0.5), 1.0);
        let far = Vector3::new(0.8, 0.0, 0.0);
        assert_eq!(kernel_influence(&far, &z, 0.5), 0.0);
        let mid = Vector3::new(0.45, 0.0, 0.0);
        assert_relative_eq!(kernel_influence(&mid, &z, 0.5), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn kernel_points_stay_inside_radius() {
        let pts = fibonacci_kernel_points(15, 0.4);
        assert_eq!(pts.len(), 15);
        assert_eq!(pts[0], Vector3::zeros());
        for p in &pts[1..] {
            assert_relative_eq!(p.norm(), 0.3, epsilon = 1e-12);
        }
    }

    fn identity_kernel(d: usize, radius: f64, sigma: f64) -> KernelParams {
        KernelParams {
            kernel_points: vec![Vector3::zeros()],
            weights: vec![DMatrix::identity(d, d)],
            radius,
            influence: sigma,
        }
    }

    #[test]
    fn conv_identity_single_point() {
        let support = PointCloud::new(vec![Vector3::new(0.3, 0.3, 0.3)]);
        let queries = support.clone();
        let feats = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let kernel = KernelParams {
            kernel_points: vec![Vector3::zeros()],
            weights: vec![DMatrix::identity(2, 2)],
            radius: 0.1,
            influence: 0.1,
        };
        let nbrs = radius_neighbors(&queries, &support, kernel.radius);
        let out = kpconv_forward(&support, &queries, &feats, &kernel, &nbrs).unwrap();
        assert_eq!(out, feats);
    }

    #[test]
    fn conv_empty_neighborhood_is_zero() {
        let support = PointCloud::new(vec![Vector3::new(10.0, 0.0, 0.0)]);
        let queries = PointCloud::new(vec![Vector3::zeros()]);
        let feats = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        let kernel = identity_kernel(3, 0.5, 0.5);
        let nbrs = radius_neighbors(&queries, &support, kernel.radius);
        let out = kpconv_forward(&support, &queries, &feats, &kernel, &nbrs).unwrap();
        assert_eq!(out.amax(), 0.0);
    }

    #[test]
    fn conv_hand_accumulation() {
        // Two neighbors at influences 0.5 and 0.25 from the single kernel
        // point at the origin, W = 2I: out = (0.5 + 0.25) * 2 * f = 1.5 f.
        let sigma = 0.4;
        let queries = PointCloud::new(vec![Vector3::zeros()]);
        let support = PointCloud::new(vec![
            Vector3::new(0.5 * sigma, 0.0, 0.0),
            Vector3::new(0.75 * sigma, 0.0, 0.0),
        ]);
        let f = [1.0, -2.0, 0.5];
        let feats = DMatrix::from_row_slice(2, 3, &[f[0], f[1], f[2], f[0], f[1], f[2]]);
        let kernel = KernelParams {
            kernel_points: vec![Vector3::zeros()],
            weights: vec![DMatrix::identity(3, 3) * 2.0],
            radius: 1.0,
            influence: sigma,
        };
        let nbrs = radius_neighbors(&queries, &support, kernel.radius);
        let out = kpconv_forward(&support, &queries, &feats, &kernel, &nbrs).unwrap();
        for c in 0..3 {
            assert_relative_eq!(out[(0, c)], 1.5 * f[c], epsilon = 1e-12);
        }
    }

    #[test]
    fn conv_linear_in_features_and_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        let support = PointCloud::new(
            (0..12)
                .map(|_| Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 0.0))
                .collect(),
        );
        let queries = PointCloud::new(
            (0..5)
                .map(|_| Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 0.0))
                .collect(),
        );
        let feats = DMatrix::from_fn(12, 3, |_, _| rng.random_range(-1.0..1.0));
        let kernel = KernelParams {
            kernel_points: fibonacci_kernel_points(5, 0.6),
            weights: (0..5)
                .map(|_| DMatrix::from_fn(3, 4, |_, _| rng.random_range(-1.0..1.0)))
                .collect(),
            radius: 0.6,
            influence: 0.3,
        };
        let nbrs = radius_neighbors(&queries, &support, kernel.radius);

        let base = kpconv_forward(&support, &queries, &feats, &kernel, &nbrs).unwrap();
        // Scaling by a power of two is exact in floating point.
        let doubled = kpconv_forward(&support, &queries, &(&feats * 2.0), &kernel, &nbrs).unwrap();
        assert_eq!(doubled, &base * 2.0);

        let mut scaled_kernel = kernel.clone();
        for w in &mut scaled_kernel.weights {
            *w *= 2.0;
        }
        let scaled = kpconv_forward(&support, &queries, &feats, &scaled_kernel, &nbrs).unwrap();
        assert_eq!(scaled, base * 2.0);
    }

    #[test]
    fn backward_zero_upstream() {
        let support = PointCloud::new(vec![Vector3::zeros()]);
        let queries = support.clone();
        let feats = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let kernel = identity_kernel(2, 0.5, 0.5);
        let nbrs = radius_neighbors(&queries, &support, kernel.radius);
        let (df, dw) =
            kpconv_backward(&support, &queries, &feats, &kernel, &nbrs, &DMatrix::zeros(1, 2))
                .unwrap();
        assert_eq!(df.amax(), 0.0);
        assert_eq!(dw[0].amax(), 0.0);
    }

    #[test]
    fn backward_single_point_outer_product() {
        let support = PointCloud::new(vec![Vector3::zeros()]);
        let queries = support.clone();
        let feats = DMatrix::from_row_slice(1, 3, &[1.0, -2.0, 0.5]);
        let kernel = identity_kernel(3, 0.5, 0.5);
        let nbrs = radius_neighbors(&queries, &support, kernel.radius);
        let upstream = DMatrix::from_row_slice(1, 3, &[2.0, 0.0, -1.0]);
        let (_, dw) =
            kpconv_backward(&support, &queries, &feats, &kernel, &nbrs, &upstream).unwrap();
        // d_W = f' u, the outer product of the feature row and upstream row.
        let expect = feats.transpose() * &upstream;
        assert_eq!(dw[0], expect);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        let (p, q, d_in, d_out, kcount) = (12, 6, 3, 4, 5);
        let support = PointCloud::new(
            (0..p)
                .map(|_| {
                    Vector3::new(
                        rng.random_range(-0.5..0.5),
                        rng.random_range(-0.5..0.5),
                        rng.random_range(-0.5..0.5),
                    )
                })
                .collect(),
        );
        let queries = PointCloud::new(
            (0..q)
                .map(|_| {
                    Vector3::new(
                        rng.random_range(-0.5..0.5),
                        rng.random_range(-0.5..0.5),
                        rng.random_range(-0.5..0.5),
                    )
                })
                .collect(),
        );
        let feats = DMatrix::from_fn(p, d_in, |_, _| rng.random_range(-1.0..1.0));
        let kernel = KernelParams {
            kernel_points: fibonacci_kernel_points(kcount, 0.8),
            weights: (0..kcount)
                .map(|_| DMatrix::from_fn(d_in, d_out, |_, _| rng.random_range(-1.0..1.0)))
                .collect(),
            radius: 0.8,
            influence: 0.4,
        };
        let nbrs = radius_neighbors(&queries, &support, kernel.radius);
        let upstream = DMatrix::from_fn(q, d_out, |_, _| rng.random_range(-1.0..1.0));

        let (df, dw) =
            kpconv_backward(&support, &queries, &feats, &kernel, &nbrs, &upstream).unwrap();

        let value = |feats: &DMatrix<f64>, kernel: &KernelParams| -> f64 {
            let out = kpconv_forward(&support, &queries, feats, kernel, &nbrs).unwrap();
            upstream.zip_map(&out, |u, o| u * o).sum()
        };

        let h = 1e-6;
        let scale = df.amax().max(dw.iter().map(|m| m.amax()).fold(0.0, f64::max)).max(1e-8);
        for r in 0..p {
            for c in 0..d_in {
                let mut plus = feats.clone();
                let mut minus = feats.clone();
                plus[(r, c)] += h;
                minus[(r, c)] -= h;
                let fd = (value(&plus, &kernel) - value(&minus, &kernel)) / (2.0 * h);
                let an = df[(r, c)];
                let denom = fd.abs().max(an.abs()).max(scale * 1e-3);
                assert!((fd - an).abs() / denom <= 1e-5, "d_feats ({r},{c})");
            }
        }
        for k in 0..kcount {
            for r in 0..d_in {
                for c in 0..d_out {
                    let mut plus = kernel.clone();
                    let mut minus = kernel.clone();
                    plus.weights[k][(r, c)] += h;
                    minus.weights[k][(r, c)] -= h;
                    let fd = (value(&feats, &plus) - value(&feats, &minus)) / (2.0 * h);
                    let an = dw[k][(r, c)];
                    let denom = fd.abs().max(an.abs()).max(scale * 1e-3);
                    assert!((fd - an).abs() / denom <= 1e-5, "d_w[{k}] ({r},{c})");
                }
            }
        }
    }

    #[test]
    fn rotation_identity_and_involution() {
        let mesh = crate::synth::bumpy_sphere(8, 10, 51);
        let same = rotate_about_up_axis(&mesh, 0.0);
        for (a, b) in mesh.vertices.iter().zip(&same.vertices) {
            assert!((a - b).norm() < 1e-15);
        }
        let twice = rotate_about_up_axis(
            &rotate_about_up_axis(&mesh, std::f64::consts::PI),
            std::f64::consts::PI,
        );
        for (a, b) in mesh.vertices.iter().zip(&twice.vertices) {
            assert!((a - b).norm() < 1e-12);
        }
        assert_eq!(twice.vertex_masses, mesh.vertex_masses);
    }

    #[test]
    fn rotation_preserves_hks() {
        use crate::spectral::{cotan_laplacian, eigendecompose, hks, hks_default_times};
        let mesh = crate::synth::bumpy_sphere(8, 10, 52);
        let mut rng = ChaCha8Rng::seed_from_u64(85);
        let rotated = augment_rotation(&mesh, &mut rng);
        let b0 = eigendecompose(&cotan_laplacian(&mesh).unwrap(), 8).unwrap();
        let b1 = eigendecompose(&cotan_laplacian(&rotated).unwrap(), 8).unwrap();
        let times = hks_default_times(&b0, 3);
        let h0 = hks(&b0, &times);
        let h1 = hks(&b1, &times);
        assert!((h0.values - h1.values).amax() < 1e-6);
    }
}
