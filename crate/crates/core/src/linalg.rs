//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Eigenvalues in `[-PSD_CLAMP, 0)` are treated as zero.
pub const PSD_CLAMP: f64 = 1e-10;

pub fn symmetrize<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * T::lit(0.5)
}

pub fn max_asymmetry<T: Scalar>(m: &DMatrix<T>) -> T {
    let mut worst = T::zero();
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            let d = (m[(i, j)] - m[(j, i)]).abs();
            if d > worst {
                worst = d;
            }
        }
    }
    worst
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue<T: Scalar>(m: &DMatrix<T>) -> T {
    if m.nrows() == 0 {
        return T::zero();
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    eig.eigenvalues
        .iter()
        .copied()
        .fold(T::max_value().unwrap(), |a, b| a.min(b))
}

pub fn quad_form<T: Scalar>(a: &DVector<T>, m: &DMatrix<T>) -> T {
    (a.transpose() * m * a)[(0, 0)]
}

pub fn all_finite<T: Scalar>(m: &DMatrix<T>) -> bool {
    m.iter().all(|v| v.is_finite_value())
}

/// Clamps eigenvalues in `[-PSD_CLAMP, 0)` to zero and rebuilds the matrix.
/// Fails if any eigenvalue lies below `-PSD_CLAMP`.
pub fn clamp_psd<T: Scalar>(field: &str, m: &DMatrix<T>) -> Result<DMatrix<T>> {
    if m.nrows() == 0 {
        return Ok(m.clone());
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let floor = T::lit(-PSD_CLAMP);
    if let Some(bad) = eig.eigenvalues.iter().find(|&&l| l < floor) {
        return Err(Error::invariant(
            field,
            format!("not positive semidefinite (eigenvalue {bad})"),
        ));
    }
    if eig.eigenvalues.iter().all(|&l| l >= T::zero()) {
        return Ok(symmetrize(m));
    }
    let clamped = eig.eigenvalues.map(|l| l.max(T::zero()));
    Ok(symmetrize(
        &(&eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose()),
    ))
}

/// Returns `F` with `FᵀF = M` for a PSD matrix, keeping only rows for
/// strictly positive eigenvalues (so `F` may have fewer rows than `M`).
pub fn psd_factor<T: Scalar>(field: &str, m: &DMatrix<T>) -> Result<DMatrix<T>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let floor = T::lit(-PSD_CLAMP);
    let scale = eig.eigenvalues.iter().fold(T::zero(), |a, &b| a.max(b.abs()));
    let keep = T::lit(1e-14) * scale;
    let mut rows = Vec::new();
    for (idx, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < floor {
            return Err(Error::Factorization(format!(
                "`{field}` is indefinite (eigenvalue {lambda})"
            )));
        }
        if lambda > keep && lambda > T::zero() {
            let v = eig.eigenvectors.column(idx);
            rows.push((v * lambda.sqrt()).transpose());
        }
    }
    if rows.is_empty() {
        return Ok(DMatrix::zeros(0, n));
    }
    Ok(DMatrix::from_rows(&rows))
}

pub fn to_rows<T: Scalar>(m: &DMatrix<T>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)].as_f64()).collect())
        .collect()
}

pub fn to_list<T: Scalar>(v: &DVector<T>) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

/// Builds a matrix from an array of rows. `ncols_hint` is used for an empty
/// row list so that `n×0` and `0×n` shapes survive a round trip.
pub fn from_rows<T: Scalar>(field: &str, rows: &[Vec<f64>], ncols_hint: usize) -> Result<DMatrix<T>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(ncols_hint, Vec::len);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != ncols {
            return Err(Error::dim(format!("{field}[{i}]"), ncols, r.len()));
        }
        if let Some(bad) = r.iter().find(|v| !v.is_finite()) {
            return Err(Error::invariant(field, format!("non-finite entry {bad}")));
        }
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| T::lit(rows[i][j])))
}

pub fn from_list<T: Scalar>(field: &str, v: &[f64]) -> Result<DVector<T>> {
    if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
        return Err(Error::invariant(field, format!("non-finite entry {bad}")));
    }
    Ok(DVector::from_iterator(v.len(), v.iter().map(|&x| T::lit(x))))
}

pub fn check_shape<T: Scalar>(field: &str, m: &DMatrix<T>, rows: usize, cols: usize) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::dim(
            field,
            format!("{rows}x{cols}"),
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}

pub fn check_len<T: Scalar>(field: &str, v: &DVector<T>, len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::dim(field, len, v.len()));
    }
    Ok(())
}
