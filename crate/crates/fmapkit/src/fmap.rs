//! Functional-map estimation: the regularized differentiable row solver, its
//! unregularized baseline, the spectral loss and ground-truth map
//! construction.
//!
//! Orientation convention, used everywhere: `C` is `k_N x k_M` and acts on
//! source spectral coefficients, `C * A ~ B`. The energy solved here is
//! `|CA - B|^2 + lambda |C D_M - D_N C|^2` with the Laplacians diagonal in
//! their own eigenbases, which separates into one symmetric `k_M x k_M`
//! system per row of `C`:
//!
//! `(A A' + lambda diag_j((mu^M_j - mu^N_i)^2)) c_i = A b_i`

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::convert::PointMap;
use crate::spectral::SpectralBasis;
use crate::{Error, Result};

/// Default regularization weight.
pub const DEFAULT_LAMBDA: f64 = 1e-3;
/// Default spectral width for matching.
pub const DEFAULT_K: usize = 30;

/// A functional map `C: spectral(M) -> spectral(N)`, stored `k_N x k_M`.
#[derive(Debug, Clone, PartialEq)]
pub struct FuncMap {
    pub c: DMatrix<f64>,
}

impl FuncMap {
    pub fn new(c: DMatrix<f64>) -> Self {
        FuncMap { c }
    }

    pub fn identity(k: usize) -> Self {
        FuncMap {
            c: DMatrix::identity(k, k),
        }
    }

    /// Spectral width on the source side (columns).
    pub fn source_k(&self) -> usize {
        self.c.ncols()
    }

    /// Spectral width on the target side (rows).
    pub fn target_k(&self) -> usize {
        self.c.nrows()
    }
}

/// Where a ground-truth map came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    FromPointMap,
    FromTemplateComposition,
    Loaded,
}

/// A ground-truth functional map with its provenance.
#[derive(Debug, Clone)]
pub struct GroundTruthMap {
    pub map: FuncMap,
    pub provenance: Provenance,
}

enum RowFactor {
    Spd(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Pivoted(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

impl RowFactor {
    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        match self {
            RowFactor::Spd(c) => c.solve(rhs),
            RowFactor::Pivoted(lu) => lu.solve(rhs).expect("checked non-singular at factor time"),
        }
    }
}

/// Inputs of one functional-map solve, with cached per-row factorizations.
pub struct SolveContext {
    /// Source spectral coefficients, `k_M x d`.
    pub a: DMatrix<f64>,
    /// Target spectral coefficients, `k_N x d`.
    pub b: DMatrix<f64>,
    pub evals_m: DVector<f64>,
    pub evals_n: DVector<f64>,
    pub lambda: f64,
    factors: Option<Vec<RowFactor>>,
}

impl SolveContext {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        evals_m: DVector<f64>,
        evals_n: DVector<f64>,
        lambda: f64,
    ) -> Result<Self> {
        if a.ncols() != b.ncols() {
            return Err(Error::Dimension(format!(
                "descriptor counts differ: source {} target {}",
                a.ncols(),
                b.ncols()
            )));
        }
        if a.ncols() == 0 {
            return Err(Error::Dimension("need at least one descriptor".into()));
        }
        if a.nrows() != evals_m.len() || b.nrows() != evals_n.len() {
            return Err(Error::Dimension(
                "eigenvalue count does not match coefficient rows".into(),
            ));
        }
        if lambda < 0.0 {
            return Err(Error::Numeric("lambda must be nonnegative".into()));
        }
        Ok(SolveContext {
            a,
            b,
            evals_m,
            evals_n,
            lambda,
            factors: None,
        })
    }

    /// Commutativity penalty weights `Delta_ij = (mu^M_j - mu^N_i)^2`.
    pub fn delta(&self) -> DMatrix<f64> {
        let (kn, km) = (self.evals_n.len(), self.evals_m.len());
        DMatrix::from_fn(kn, km, |i, j| {
            let d = self.evals_m[j] - self.evals_n[i];
            d * d
        })
    }

    fn ensure_factors(&mut self) -> Result<()> {
        if self.factors.is_some() {
            return Ok(());
        }
        let aat = &self.a * self.a.transpose();
        let km = self.a.nrows();
        let mut factors = Vec::with_capacity(self.evals_n.len());
        for (i, &mu_n) in self.evals_n.iter().enumerate() {
            let mut m = aat.clone();
            for j in 0..km {
                let d = self.evals_m[j] - mu_n;
                m[(j, j)] += self.lambda * d * d;
            }
            // SPD solve first; pivoted fallback if positivity fails
            // numerically; a truly singular row is an error.
            let factor = match nalgebra::Cholesky::new(m.clone()) {
                Some(c) => RowFactor::Spd(c),
                None => {
                    let lu = m.lu();
                    let diag = lu.u().diagonal();
                    let max = diag.amax();
                    let min = diag.iter().fold(f64::INFINITY, |a, &d| a.min(d.abs()));
                    if !(min > 1e-13 * max) {
                        return Err(Error::SingularRow {
                            row: i,
                            message: format!("pivot ratio {:.3e}", min / max),
                        });
                    }
                    RowFactor::Pivoted(lu)
                }
            };
            factors.push(factor);
        }
        self.factors = Some(factors);
        Ok(())
    }
}

/// Solve the regularized energy row by row.
pub fn solve_regularized(ctx: &mut SolveContext) -> Result<FuncMap> {
    ctx.ensure_factors()?;
    let factors = ctx.factors.as_ref().unwrap();
    let (kn, km) = (ctx.evals_n.len(), ctx.evals_m.len());
    let mut c = DMatrix::zeros(kn, km);
    for i in 0..kn {
        let rhs = &ctx.a * ctx.b.row(i).transpose();
        let ci = factors[i].solve(&rhs);
        c.row_mut(i).copy_from(&ci.transpose());
    }
    Ok(FuncMap::new(c))
}

/// Least-squares baseline `C = B A' (A A')^{-1}`; fails on rank deficiency,
/// which is exactly the failure mode the regularizer removes.
pub fn solve_unregularized(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<FuncMap> {
    if a.ncols() != b.ncols() {
        return Err(Error::Dimension("descriptor counts differ".into()));
    }
    let (km, d) = (a.nrows(), a.ncols());
    if d < km {
        return Err(Error::Singular(format!(
            "A A' has rank at most {d} < {km}: need at least k linearly independent descriptors"
        )));
    }
    let aat = a * a.transpose();
    let chol = nalgebra::Cholesky::new(aat)
        .ok_or_else(|| Error::Singular("A A' is not positive definite".into()))?;
    let l_diag = chol.l_dirty().diagonal();
    let max = l_diag.amax();
    let min = l_diag.iter().fold(f64::INFINITY, |acc, &v| acc.min(v.abs()));
    if !(min > 1e-7 * max) {
        return Err(Error::Singular(format!(
            "A A' is numerically rank deficient (pivot ratio {:.3e})",
            min / max
        )));
    }
    // C = B A' (A A')^{-1}, via (A A') X = A B' and C = X'.
    let x = chol.solve(&(a * b.transpose()));
    Ok(FuncMap::new(x.transpose()))
}

/// Exact gradients of the row-wise solve by implicit differentiation.
///
/// With `M_i = A A' + lambda diag(Delta_i)` and adjoint `g_i = M_i^{-1} u_i`:
/// `dB_i = A' g_i` and `dA = sum_i g_i b_i' - (g_i c_i' + c_i g_i') A`.
/// Eigenvalues are fixed inputs; no gradient flows into them.
pub fn solve_backward(
    ctx: &mut SolveContext,
    c: &FuncMap,
    upstream: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (kn, km, d) = (ctx.evals_n.len(), ctx.evals_m.len(), ctx.a.ncols());
    if upstream.nrows() != kn || upstream.ncols() != km {
        return Err(Error::Dimension("upstream shape mismatch".into()));
    }
    if c.c.nrows() != kn || c.c.ncols() != km {
        return Err(Error::Dimension("solution shape mismatch".into()));
    }
    ctx.ensure_factors()?;
    let factors = ctx.factors.as_ref().unwrap();

    let mut d_a = DMatrix::zeros(km, d);
    let mut d_b = DMatrix::zeros(kn, d);
    for i in 0..kn {
        let u = upstream.row(i).transpose();
        let g = factors[i].solve(&u);
        let b_i = ctx.b.row(i).transpose();
        let c_i = c.c.row(i).transpose();

        d_b.row_mut(i).copy_from(&(g.transpose() * &ctx.a));
        d_a += &g * b_i.transpose() - (&g * c_i.transpose() + &c_i * g.transpose()) * &ctx.a;
    }
    Ok((d_a, d_b))
}

/// Squared Frobenius distance to the ground truth and its gradient in `C`.
pub fn spectral_loss(c: &FuncMap, gt: &GroundTruthMap) -> Result<(f64, DMatrix<f64>)> {
    if c.c.shape() != gt.map.c.shape() {
        return Err(Error::Dimension(format!(
            "map shapes differ: {:?} vs {:?}",
            c.c.shape(),
            gt.map.c.shape()
        )));
    }
    let diff = &c.c - &gt.map.c;
    let loss = diff.iter().map(|&x| x * x).sum();
    Ok((loss, 2.0 * diff))
}

/// Convert a pointwise map `T: N -> M` to its functional representation
/// `C = Phi_N' M_N Pi_T Phi_M` at the widths of the given bases.
pub fn gt_from_pointmap(
    basis_m: &SpectralBasis,
    basis_n: &SpectralBasis,
    t: &PointMap,
) -> Result<GroundTruthMap> {
    let (n_m, n_n) = (basis_m.n(), basis_n.n());
    if t.len() != n_n {
        return Err(Error::Dimension(format!(
            "point map has {} entries, target mesh has {n_n} vertices",
            t.len()
        )));
    }
    let mut gathered = DMatrix::zeros(n_n, basis_m.k());
    for (j, &image) in t.assignment.iter().enumerate() {
        if image >= n_m {
            return Err(Error::Dimension(format!(
                "assignment {image} out of range for source mesh of {n_m} vertices"
            )));
        }
        let row = basis_m.phi.row(image) * basis_n.mass[j];
        gathered.row_mut(j).copy_from(&row);
    }
    Ok(GroundTruthMap {
        map: FuncMap::new(basis_n.phi.transpose() * gathered),
        provenance: Provenance::FromPointMap,
    })
}

/// Compose template-to-shape maps into a shape-to-shape ground truth:
/// `C_{i->j} = pinv(C_j) C_i`. Both inputs are the functional maps of
/// template-to-shape point maps, so their matrices share the template's
/// spectral width on the row side.
pub fn gt_from_template(c_i: &FuncMap, c_j: &FuncMap) -> Result<GroundTruthMap> {
    if c_i.c.nrows() != c_j.c.nrows() {
        return Err(Error::Dimension(format!(
            "template widths differ: {} vs {}",
            c_i.c.nrows(),
            c_j.c.nrows()
        )));
    }
    let p = pseudo_inverse(&c_j.c, 1e-10);
    Ok(GroundTruthMap {
        map: FuncMap::new(p * &c_i.c),
        provenance: Provenance::FromTemplateComposition,
    })
}

/// Rank-revealing pseudo-inverse: singular values below `rel_tol * s_max`
/// are truncated.
fn pseudo_inverse(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let smax = svd.singular_values.amax();
    let tol = rel_tol * smax;
    let r = svd.singular_values.len();
    let mut sinv = DMatrix::zeros(r, r);
    for i in 0..r {
        let s = svd.singular_values[i];
        if s > tol {
            sinv[(i, i)] = 1.0 / s;
        }
    }
    v_t.transpose() * sinv * u.transpose()
}

// ---------------------------------------------------------------------------
// Functional-map files
// ---------------------------------------------------------------------------

/// Write the text format: `FMAP k_N k_M` then `k_N` rows of `k_M` floats.
pub fn write_fmap(path: impl AsRef<Path>, map: &FuncMap) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "FMAP {} {}", map.target_k(), map.source_k())?;
    for i in 0..map.target_k() {
        let row: Vec<String> = (0..map.source_k()).map(|j| map.c[(i, j)].to_string()).collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_fmap(path: impl AsRef<Path>) -> Result<FuncMap> {
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
    if toks.len() != 3 || toks[0] != "FMAP" {
        return Err(format_err(format!("bad header {header:?}")));
    }
    let k_n: usize = toks[1].parse().map_err(|_| format_err("bad k_N".into()))?;
    let k_m: usize = toks[2].parse().map_err(|_| format_err("bad k_M".into()))?;
    let mut c = DMatrix::zeros(k_n, k_m);
    for i in 0..k_n {
        let line = lines
            .next()
            .ok_or_else(|| format_err(format!("missing row {i}")))?
            .map_err(Error::Io)?;
        let vals: Vec<&str> = line.split_whitespace().collect();
        if vals.len() != k_m {
            return Err(format_err(format!("row {i} has {} values, expected {k_m}", vals.len())));
        }
        for (j, v) in vals.iter().enumerate() {
            c[(i, j)] = v.parse().map_err(|_| format_err(format!("bad value {v:?} in row {i}")))?;
        }
    }
    Ok(FuncMap::new(c))
}
