use nalgebra::DMatrix;

use crate::error::Error;
use crate::scalar::Scalar;

use super::monomial::MonomialBasis;
use super::polynomial::Polynomial;

/// A dense matrix of polynomials in the state (row-major storage).
#[derive(Debug, Clone, PartialEq)]
pub struct PolyMatrix<T: Scalar> {
    rows: usize,
    cols: usize,
    nvars: usize,
    data: Vec<Polynomial<T>>,
}

impl<T: Scalar> PolyMatrix<T> {
    pub fn zeros(rows: usize, cols: usize, nvars: usize) -> Self {
        Self {
            rows,
            cols,
            nvars,
            data: vec![Polynomial::zero(nvars); rows * cols],
        }
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        nvars: usize,
        mut f: impl FnMut(usize, usize) -> Polynomial<T>,
    ) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                let p = f(i, j);
                debug_assert_eq!(p.nvars(), nvars);
                data.push(p);
            }
        }
        Self {
            rows,
            cols,
            nvars,
            data,
        }
    }

    /// A constant (degree-0) polynomial matrix.
    pub fn from_constant(m: &DMatrix<T>, nvars: usize) -> Self {
        Self::from_fn(m.nrows(), m.ncols(), nvars, |i, j| {
            Polynomial::constant(nvars, m[(i, j)])
        })
    }

    /// Row vector (1×n) holding the basis entries as polynomials.
    pub fn row_from_basis(b: &MonomialBasis) -> Self {
        Self::from_fn(1, b.len(), b.nvars(), |_, j| {
            Polynomial::monomial(b.entries()[j].clone(), T::one())
        })
    }

    /// Column vector (n×1) holding the basis entries as polynomials.
    pub fn col_from_basis(b: &MonomialBasis) -> Self {
        Self::row_from_basis(b).transpose()
    }

    /// The symbolic Jacobian ∂b/∂xᵀ of a basis: entry (i,j) = ∂b_i/∂x_j.
    pub fn jacobian_of_basis(b: &MonomialBasis) -> Self {
        Self::from_fn(b.len(), b.nvars(), b.nvars(), |i, j| {
            Polynomial::monomial(b.entries()[i].clone(), T::one()).partial_derivative(j)
        })
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn entry(&self, i: usize, j: usize) -> &Polynomial<T> {
        &self.data[i * self.cols + j]
    }

    pub fn entry_mut(&mut self, i: usize, j: usize) -> &mut Polynomial<T> {
        &mut self.data[i * self.cols + j]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, self.nvars, |i, j| {
            self.entry(j, i).clone()
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self, Error> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                context: "polynomial matrix addition",
                expected: self.rows * self.cols,
                got: other.rows * other.cols,
            });
        }
        Ok(Self::from_fn(self.rows, self.cols, self.nvars, |i, j| {
            self.entry(i, j).add(other.entry(i, j))
        }))
    }

    pub fn neg(&self) -> Self {
        Self::from_fn(self.rows, self.cols, self.nvars, |i, j| {
            self.entry(i, j).neg()
        })
    }

    pub fn scale(&self, s: T) -> Self {
        Self::from_fn(self.rows, self.cols, self.nvars, |i, j| {
            self.entry(i, j).scale(s)
        })
    }

    /// Symbolic matrix product.
    pub fn matmul(&self, other: &Self) -> Result<Self, Error> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                context: "polynomial matrix product",
                expected: self.cols,
                got: other.rows,
            });
        }
        Ok(Self::from_fn(self.rows, other.cols, self.nvars, |i, j| {
            let mut acc = Polynomial::zero(self.nvars);
            for k in 0..self.cols {
                acc = acc.add(&self.entry(i, k).mul(other.entry(k, j)));
            }
            acc
        }))
    }

    /// Left-multiply by a constant matrix: `c * self`.
    pub fn lmul_const(&self, c: &DMatrix<T>) -> Result<Self, Error> {
        if c.ncols() != self.rows {
            return Err(Error::DimensionMismatch {
                context: "constant-matrix left product",
                expected: self.rows,
                got: c.ncols(),
            });
        }
        Ok(Self::from_fn(c.nrows(), self.cols, self.nvars, |i, j| {
            let mut acc = Polynomial::zero(self.nvars);
            for k in 0..self.rows {
                acc = acc.add(&self.entry(k, j).scale(c[(i, k)]));
            }
            acc
        }))
    }

    /// Right-multiply by a constant matrix: `self * c`.
    pub fn rmul_const(&self, c: &DMatrix<T>) -> Result<Self, Error> {
        if self.cols != c.nrows() {
            return Err(Error::DimensionMismatch {
                context: "constant-matrix right product",
                expected: self.cols,
                got: c.nrows(),
            });
        }
        Ok(Self::from_fn(self.rows, c.ncols(), self.nvars, |i, j| {
            let mut acc = Polynomial::zero(self.nvars);
            for k in 0..self.cols {
                acc = acc.add(&self.entry(i, k).scale(c[(k, j)]));
            }
            acc
        }))
    }

    /// Evaluate every entry at `x`.
    pub fn eval(&self, x: &[T]) -> Result<DMatrix<T>, Error> {
        if x.len() != self.nvars {
            return Err(Error::DimensionMismatch {
                context: "polynomial matrix evaluation point",
                expected: self.nvars,
                got: x.len(),
            });
        }
        Ok(DMatrix::from_fn(self.rows, self.cols, |i, j| {
            self.entry(i, j).eval(x)
        }))
    }

    /// Coefficient-wise approximate equality with absolute tolerance.
    pub fn approx_eq(&self, other: &Self, tol: T) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && (0..self.rows).all(|i| {
                (0..self.cols).all(|j| self.entry(i, j).approx_eq(other.entry(i, j), tol))
            })
    }

    /// Maximum total degree over all entries.
    pub fn max_degree(&self) -> u32 {
        self.data.iter().map(Polynomial::total_degree).max().unwrap_or(0)
    }
}
