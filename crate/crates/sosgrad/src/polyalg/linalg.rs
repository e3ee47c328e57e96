//! Column-major vectorization helpers: `vec`, `vech` (lower-triangle
//! half-vectorization of a symmetric matrix), their inverses, and the
//! diagonal duplication scaling used when matching quadratic-form
//! coefficients.

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::scalar::Scalar;

/// Column-major vectorization: stacks the columns of `m`.
pub fn vec_mat<T: Scalar>(m: &DMatrix<T>) -> DVector<T> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_mat`]: reshape a length `rows*cols` vector into a
/// matrix, filling column by column.
pub fn inv_vec<T: Scalar>(v: &DVector<T>, rows: usize, cols: usize) -> Result<DMatrix<T>, Error> {
    if v.len() != rows * cols {
        return Err(Error::DimensionMismatch {
            context: "inv_vec length",
            expected: rows * cols,
            got: v.len(),
        });
    }
    Ok(DMatrix::from_column_slice(rows, cols, v.as_slice()))
}

/// Number of entries of the half-vectorization of an n×n symmetric matrix.
pub fn vech_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Position of entry (i, j), i ≥ j, in the half-vectorization: columns
/// stacked in order, each from the diagonal down.
pub fn vech_index(i: usize, j: usize, n: usize) -> usize {
    debug_assert!(i >= j && i < n);
    // Entries of columns 0..j contribute n + (n-1) + ... + (n-j+1).
    j * (2 * n - j + 1) / 2 + (i - j)
}

/// Half-vectorization of a symmetric matrix (lower triangle, column by
/// column). Rejects matrices that are asymmetric beyond `tol`.
pub fn vech<T: Scalar>(m: &DMatrix<T>, tol: T) -> Result<DVector<T>, Error> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "vech input squareness",
            expected: n,
            got: m.ncols(),
        });
    }
    for i in 0..n {
        for j in 0..i {
            if num_traits::Float::abs(m[(i, j)] - m[(j, i)]) > tol {
                return Err(Error::BadConfig(format!(
                    "vech of an asymmetric matrix: |m[{i},{j}] - m[{j},{i}]| exceeds tolerance"
                )));
            }
        }
    }
    let mut v = DVector::zeros(vech_len(n));
    for j in 0..n {
        for i in j..n {
            v[vech_index(i, j, n)] = m[(i, j)];
        }
    }
    Ok(v)
}

/// Rebuild the symmetric matrix from its half-vectorization.
pub fn unvech<T: Scalar>(v: &DVector<T>, n: usize) -> Result<DMatrix<T>, Error> {
    if v.len() != vech_len(n) {
        return Err(Error::DimensionMismatch {
            context: "unvech length",
            expected: vech_len(n),
            got: v.len(),
        });
    }
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in j..n {
            let x = v[vech_index(i, j, n)];
            m[(i, j)] = x;
            m[(j, i)] = x;
        }
    }
    Ok(m)
}

/// Duplication scaling for quadratic-form coefficient matching: entry p of
/// the result is 1 where p indexes a diagonal entry (i = j) and 2 for an
/// off-diagonal entry, so that the z̃-coefficients of ξᵀTξ are
/// `scaling .* vech(T)` gathered per monomial.
pub fn vech_scaling<T: Scalar>(n: usize) -> DVector<T> {
    let mut s = DVector::from_element(vech_len(n), T::one() + T::one());
    for i in 0..n {
        s[vech_index(i, i, n)] = T::one();
    }
    s
}

/// Kronecker product of two vectors (column-major convention:
/// `kron(a, b)[i*len(b)+j] = a_i b_j`).
pub fn kron_vec<T: Scalar>(a: &DVector<T>, b: &DVector<T>) -> DVector<T> {
    let mut out = DVector::zeros(a.len() * b.len());
    for i in 0..a.len() {
        for j in 0..b.len() {
            out[i * b.len() + j] = a[i] * b[j];
        }
    }
    out
}
