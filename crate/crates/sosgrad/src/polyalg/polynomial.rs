use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DVector;

use crate::error::Error;
use crate::scalar::Scalar;

use super::monomial::{Monomial, MonomialBasis};

/// A multivariate polynomial as a sparse map from monomials to
/// coefficients. Zero coefficients are never stored, so the zero
/// polynomial has an empty term map; the map order (graded lex) makes
/// iteration deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial<T: Scalar> {
    terms: BTreeMap<Monomial, T>,
    nvars: usize,
}

impl<T: Scalar> Polynomial<T> {
    pub fn zero(nvars: usize) -> Self {
        Self {
            terms: BTreeMap::new(),
            nvars,
        }
    }

    pub fn constant(nvars: usize, c: T) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(Monomial::one(nvars), c);
        p
    }

    /// The single-term polynomial `c * m`.
    pub fn monomial(m: Monomial, c: T) -> Self {
        let nvars = m.nvars();
        let mut p = Self::zero(nvars);
        p.add_term(m, c);
        p
    }

    /// The variable `x_{i+1}`.
    pub fn var(i: usize, nvars: usize) -> Self {
        Self::monomial(Monomial::var(i, nvars), T::one())
    }

    /// Build Σ c_i b_i from a coefficient vector over a basis.
    pub fn from_coefficients(basis: &MonomialBasis, c: &[T]) -> Result<Self, Error> {
        if c.len() != basis.len() {
            return Err(Error::DimensionMismatch {
                context: "polynomial coefficient vector",
                expected: basis.len(),
                got: c.len(),
            });
        }
        let mut p = Self::zero(basis.nvars());
        for (m, &ci) in basis.entries().iter().zip(c) {
            p.add_term(m.clone(), ci);
        }
        Ok(p)
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &T)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn total_degree(&self) -> u32 {
        self.terms
            .keys()
            .map(Monomial::total_degree)
            .max()
            .unwrap_or(0)
    }

    pub fn coefficient(&self, m: &Monomial) -> T {
        self.terms.get(m).copied().unwrap_or_else(T::zero)
    }

    /// Accumulate `c * m`, dropping the entry if the sum cancels exactly.
    pub fn add_term(&mut self, m: Monomial, c: T) {
        debug_assert_eq!(m.nvars(), self.nvars);
        if c == T::zero() {
            return;
        }
        let entry = self.terms.entry(m);
        match entry {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let s = *o.get() + c;
                if s == T::zero() {
                    o.remove();
                } else {
                    o.insert(s);
                }
            }
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        debug_assert_eq!(self.nvars, other.nvars);
        let mut out = self.clone();
        for (m, &c) in &other.terms {
            out.add_term(m.clone(), c);
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Self {
        let mut out = self.clone();
        for c in out.terms.values_mut() {
            *c = -*c;
        }
        out
    }

    pub fn scale(&self, s: T) -> Self {
        if s == T::zero() {
            return Self::zero(self.nvars);
        }
        let mut out = self.clone();
        for c in out.terms.values_mut() {
            *c = *c * s;
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        debug_assert_eq!(self.nvars, other.nvars);
        let mut out = Self::zero(self.nvars);
        for (ma, &ca) in &self.terms {
            for (mb, &cb) in &other.terms {
                out.add_term(ma.mul(mb), ca * cb);
            }
        }
        out
    }

    pub fn partial_derivative(&self, j: usize) -> Self {
        let mut out = Self::zero(self.nvars);
        for (m, &c) in &self.terms {
            if let Some((a, dm)) = m.derivative(j) {
                out.add_term(dm, c * T::from_u32(a).unwrap());
            }
        }
        out
    }

    pub fn eval(&self, x: &[T]) -> T {
        debug_assert_eq!(x.len(), self.nvars);
        let mut acc = T::zero();
        for (m, &c) in &self.terms {
            acc = acc + c * m.eval(x);
        }
        acc
    }

    /// Coefficient-wise comparison with absolute tolerance, treating
    /// absent terms as zero.
    pub fn approx_eq(&self, other: &Self, tol: T) -> bool {
        let diff = self.sub(other);
        diff.terms.values().all(|c| num_traits::Float::abs(*c) <= tol)
    }

    /// Decompose over a non-redundant basis: returns c with p = Σ c_i b_i
    /// exactly. A term of `p` outside `b` is an error.
    pub fn extract_coefficients(&self, b: &MonomialBasis) -> Result<DVector<T>, Error> {
        debug_assert!(b.is_non_redundant());
        let mut c = DVector::zeros(b.len());
        for (m, &coef) in &self.terms {
            match b.index_of(m) {
                Some(i) => c[i] = coef,
                None => return Err(Error::UnrepresentableMonomial(m.to_string())),
            }
        }
        Ok(c)
    }
}

impl<T: Scalar + fmt::Display> fmt::Display for Polynomial<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        for (i, (m, c)) in self.terms.iter().enumerate() {
            if i > 0 {
                write!(f, " + ")?;
            }
            if m.is_constant() {
                write!(f, "{c}")?;
            } else {
                write!(f, "{c}*{m}")?;
            }
        }
        Ok(())
    }
}
