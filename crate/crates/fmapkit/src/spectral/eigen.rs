//! Generalized symmetric eigensolver for the Laplace pencil `S phi = mu M phi`.
//!
//! With `M` diagonal positive, the pencil is symmetrized as
//! `B = M^{-1/2} S M^{-1/2}`; eigenvectors map back via `phi = M^{-1/2} y`.
//! Small problems use a dense decomposition; larger ones use shift-invert
//! subspace iteration around shift 0 (a small diagonal shift keeps the
//! factorization positive definite), which handles the clustered eigenvalues
//! of symmetric shapes.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{LaplaceOperators, SpectralBasis};
use crate::{Error, Result};

/// Problems at or below this size go through the dense path.
const DENSE_LIMIT: usize = 400;

/// Residual tolerance, relative to the operator scale.
const RESIDUAL_TOL: f64 = 1e-10;

/// Compute the `k` smallest generalized eigenpairs, mass-orthonormal, with
/// the largest-magnitude entry of each eigenfunction made positive.
pub fn eigendecompose(ops: &LaplaceOperators, k: usize) -> Result<SpectralBasis> {
    let n = ops.mass.len();
    if k < 1 || k + 1 > n {
        return Err(Error::Dimension(format!(
            "need 1 <= k <= n-1, got k={k} with n={n}"
        )));
    }
    if ops.mass.iter().any(|&m| m <= 0.0) {
        return Err(Error::Numeric("mass must be strictly positive".into()));
    }
    let isqrt: DVector<f64> = ops.mass.map(|m| 1.0 / m.sqrt());

    let (mut evals, ys) = if n <= DENSE_LIMIT || 3 * k >= n {
        dense_path(ops, &isqrt, k)
    } else {
        subspace_path(ops, &isqrt, k)?
    };

    // Tiny negative values are roundoff around the zero eigenvalue.
    for v in evals.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }

    let mut phi = DMatrix::zeros(n, k);
    for c in 0..k {
        let mut col: DVector<f64> = ys.column(c).component_mul(&isqrt);
        // Mass-normalize and fix the sign: largest-magnitude entry positive.
        let norm = col
            .iter()
            .zip(ops.mass.iter())
            .map(|(&x, &m)| m * x * x)
            .sum::<f64>()
            .sqrt();
        col /= norm;
        let mut best = 0;
        for i in 1..n {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col = -col;
        }
        phi.set_column(c, &col);
    }

    Ok(SpectralBasis {
        phi,
        evals,
        mass: ops.mass.clone(),
    })
}

fn build_symmetrized(ops: &LaplaceOperators, isqrt: &DVector<f64>) -> DMatrix<f64> {
    let n = isqrt.len();
    let mut b = DMatrix::zeros(n, n);
    for r in 0..n {
        for (c, v) in ops.stiffness.row(r) {
            b[(r, c)] = v * isqrt[r] * isqrt[c];
        }
    }
    b
}

fn apply_symmetrized(
    ops: &LaplaceOperators,
    isqrt: &DVector<f64>,
    x: &DVector<f64>,
) -> DVector<f64> {
    let scaled = x.component_mul(isqrt);
    ops.stiffness.matvec(&scaled).component_mul(isqrt)
}

fn dense_path(
    ops: &LaplaceOperators,
    isqrt: &DVector<f64>,
    k: usize,
) -> (DVector<f64>, DMatrix<f64>) {
    let b = build_symmetrized(ops, isqrt);
    let eig = b.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let n = isqrt.len();
    let mut evals = DVector::zeros(k);
    let mut ys = DMatrix::zeros(n, k);
    for (c, &idx) in order.iter().take(k).enumerate() {
        evals[c] = eig.eigenvalues[idx];
        ys.set_column(c, &eig.eigenvectors.column(idx));
    }
    (evals, ys)
}

fn subspace_path(
    ops: &LaplaceOperators,
    isqrt: &DVector<f64>,
    k: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = isqrt.len();
    let block = (k + (k / 2).max(8)).min(n);
    let budget = 100 * k;
    let max_sweeps = (budget / block).max(10);

    let scale = (0..n)
        .map(|r| (ops.stiffness.get(r, r) * isqrt[r] * isqrt[r]).abs())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let tol = RESIDUAL_TOL * scale;

    // Factor B + delta I once; retry with a larger shift if the nominal one
    // is not numerically positive definite.
    let base = build_symmetrized(ops, isqrt);
    let mut delta = 1e-8 * scale;
    let mut chol: Option<Cholesky<f64, nalgebra::Dyn>> = None;
    for _ in 0..4 {
        let mut shifted = base.clone();
        for i in 0..n {
            shifted[(i, i)] += delta;
        }
        if let Some(f) = Cholesky::new(shifted) {
            chol = Some(f);
            break;
        }
        delta *= 100.0;
    }
    let chol = chol.ok_or_else(|| {
        Error::Numeric("shifted Laplacian could not be factorized".into())
    })?;
    drop(base);

    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let mut x = DMatrix::from_fn(n, block, |_, _| rng.random_range(-1.0f64..1.0));
    orthonormalize(&mut x);

    let mut evals = DVector::zeros(block);
    for sweep in 0..max_sweeps {
        // Shift-invert power step on the whole block.
        x = chol.solve(&x);
        orthonormalize(&mut x);

        // Rayleigh-Ritz on the original operator.
        let mut bx = DMatrix::zeros(n, block);
        for c in 0..block {
            bx.set_column(c, &apply_symmetrized(ops, isqrt, &x.column(c).into_owned()));
        }
        let mut p = x.transpose() * &bx;
        for r in 0..block {
            for c in (r + 1)..block {
                let avg = 0.5 * (p[(r, c)] + p[(c, r)]);
                p[(r, c)] = avg;
                p[(c, r)] = avg;
            }
        }
        let eig = p.symmetric_eigen();
        let mut order: Vec<usize> = (0..block).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let mut rot = DMatrix::zeros(block, block);
        for (c, &idx) in order.iter().enumerate() {
            rot.set_column(c, &eig.eigenvectors.column(idx));
            evals[c] = eig.eigenvalues[idx];
        }
        x *= &rot;
        bx *= &rot;

        // True residuals of the first k Ritz pairs.
        let converged = (0..k).all(|c| {
            let r = bx.column(c) - x.column(c) * evals[c];
            r.norm() <= tol
        });
        if converged {
            return Ok((evals.rows(0, k).into_owned(), x.columns(0, k).into_owned()));
        }
        let _ = sweep;
    }

    Err(Error::EigensolverNonConvergence { budget })
}

fn orthonormalize(x: &mut DMatrix<f64>) {
    let qr = x.clone().qr();
    let q = qr.q();
    // Fix Q's column signs to keep the iteration deterministic regardless of
    // the QR implementation's conventions.
    x.copy_from(&q);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::cotan_laplacian;

    #[test]
    fn dense_and_subspace_paths_agree() {
        // 642 vertices: above the dense limit, so force both paths.
        let mesh = crate::synth::icosphere(3);
        let ops = cotan_laplacian(&mesh).unwrap();
        let k = 12;

        let isqrt: DVector<f64> = ops.mass.map(|m| 1.0 / m.sqrt());
        let (dense_evals, _) = dense_path(&ops, &isqrt, k);
        let (sub_evals, sub_ys) = subspace_path(&ops, &isqrt, k).unwrap();

        let scale = dense_evals[k - 1];
        for i in 0..k {
            assert!(
                (dense_evals[i] - sub_evals[i]).abs() / scale < 1e-8,
                "eval {i}: dense {} vs subspace {}",
                dense_evals[i],
                sub_evals[i]
            );
        }
        // Ritz vectors satisfy the pencil equation at the solver's tolerance.
        let opscale = (0..ops.mass.len())
            .map(|r| (ops.stiffness.get(r, r) * isqrt[r] * isqrt[r]).abs())
            .fold(0.0f64, f64::max);
        for c in 0..k {
            let y = sub_ys.column(c).into_owned();
            let r = apply_symmetrized(&ops, &isqrt, &y) - &y * sub_evals[c];
            assert!(r.norm() <= RESIDUAL_TOL * opscale, "residual {}", r.norm());
        }
    }

    #[test]
    fn invalid_k_is_rejected() {
        let mesh = crate::synth::icosphere(0);
        let ops = cotan_laplacian(&mesh).unwrap();
        assert!(eigendecompose(&ops, 0).is_err());
        assert!(eigendecompose(&ops, mesh.vertex_count()).is_err());
        assert!(eigendecompose(&ops, mesh.vertex_count() - 1).is_ok());
    }
}
