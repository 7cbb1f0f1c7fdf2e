//! Binary spectral cache files.
//!
//! Layout (little-endian): magic `SPEC1`, `u32 n`, `u32 k`, `f64` eigenfunctions
//! row-major (`n*k`), `f64` eigenvalues (`k`), `f64` masses (`n`), then a
//! 32-byte content hash of the source mesh used for invalidation.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::SpectralBasis;
use crate::{Error, Result};

const MAGIC: &[u8; 5] = b"SPEC1";

pub fn write_cache(path: impl AsRef<Path>, basis: &SpectralBasis, mesh_hash: &[u8; 32]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&(basis.n() as u32).to_le_bytes())?;
    out.write_all(&(basis.k() as u32).to_le_bytes())?;
    for r in 0..basis.n() {
        for c in 0..basis.k() {
            out.write_all(&basis.phi[(r, c)].to_le_bytes())?;
        }
    }
    for i in 0..basis.k() {
        out.write_all(&basis.evals[i].to_le_bytes())?;
    }
    for i in 0..basis.n() {
        out.write_all(&basis.mass[i].to_le_bytes())?;
    }
    out.write_all(mesh_hash)?;
    out.flush()?;
    Ok(())
}

pub fn read_cache(path: impl AsRef<Path>) -> Result<(SpectralBasis, [u8; 32])> {
    let path = path.as_ref();
    let format_err = |message: &str| Error::Format {
        path: path.display().to_string(),
        message: message.into(),
    };

    let mut input = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 5];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(format_err("bad magic"));
    }
    let mut u32buf = [0u8; 4];
    input.read_exact(&mut u32buf)?;
    let n = u32::from_le_bytes(u32buf) as usize;
    input.read_exact(&mut u32buf)?;
    let k = u32::from_le_bytes(u32buf) as usize;
    if n == 0 || k == 0 || k > n {
        return Err(format_err("inconsistent dimensions"));
    }

    let mut read_f64s = |count: usize| -> Result<Vec<f64>> {
        let mut buf = vec![0u8; count * 8];
        input.read_exact(&mut buf)?;
        Ok(buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };
    let phi_vals = read_f64s(n * k)?;
    let evals = read_f64s(k)?;
    let mass = read_f64s(n)?;
    let mut hash = [0u8; 32];
    input.read_exact(&mut hash)?;

    let phi = DMatrix::from_row_slice(n, k, &phi_vals);
    Ok((
        SpectralBasis {
            phi,
            evals: DVector::from_vec(evals),
            mass: DVector::from_vec(mass),
        },
        hash,
    ))
}
