use std::cmp::Ordering;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::scalar::Scalar;

/// A primitive monomial `x1^a1 * x2^a2 * ...` stored as its exponent
/// vector. The all-zero vector is the constant monomial `1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Monomial {
    exponents: Vec<u32>,
}

impl Monomial {
    pub fn new(exponents: Vec<u32>) -> Self {
        Self { exponents }
    }

    /// The constant monomial `1` in `nvars` variables.
    pub fn one(nvars: usize) -> Self {
        Self {
            exponents: vec![0; nvars],
        }
    }

    /// The variable `x_{i+1}` (zero-based index) in `nvars` variables.
    pub fn var(i: usize, nvars: usize) -> Self {
        let mut exponents = vec![0; nvars];
        exponents[i] = 1;
        Self { exponents }
    }

    pub fn exponents(&self) -> &[u32] {
        &self.exponents
    }

    pub fn nvars(&self) -> usize {
        self.exponents.len()
    }

    pub fn total_degree(&self) -> u32 {
        self.exponents.iter().sum()
    }

    pub fn is_constant(&self) -> bool {
        self.exponents.iter().all(|&a| a == 0)
    }

    /// True when the monomial is a pure power of a single variable.
    pub fn is_pure_power_of(&self, i: usize) -> bool {
        self.exponents[i] > 0
            && self
                .exponents
                .iter()
                .enumerate()
                .all(|(j, &a)| j == i || a == 0)
    }

    /// Product of two monomials (exponents add).
    pub fn mul(&self, other: &Monomial) -> Monomial {
        debug_assert_eq!(self.nvars(), other.nvars());
        Monomial {
            exponents: self
                .exponents
                .iter()
                .zip(&other.exponents)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    /// Partial derivative with respect to variable `j`: returns the
    /// integer factor and the reduced monomial, or `None` when the
    /// derivative is identically zero.
    pub fn derivative(&self, j: usize) -> Option<(u32, Monomial)> {
        let a = self.exponents[j];
        if a == 0 {
            return None;
        }
        let mut exponents = self.exponents.clone();
        exponents[j] = a - 1;
        Some((a, Monomial { exponents }))
    }

    /// Evaluate at a point.
    pub fn eval<T: Scalar>(&self, x: &[T]) -> T {
        debug_assert_eq!(x.len(), self.nvars());
        let mut acc = T::one();
        for (xi, &a) in x.iter().zip(&self.exponents) {
            acc = acc * num_traits::Float::powi(*xi, a as i32);
        }
        acc
    }
}

/// Graded lexicographic order: lower total degree first; within a degree,
/// higher power of the earliest variable first (so `x1² < x1x2 < x2²`).
impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.total_degree()
            .cmp(&other.total_degree())
            .then_with(|| other.exponents.cmp(&self.exponents))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_constant() {
            return write!(f, "1");
        }
        let mut first = true;
        for (i, &a) in self.exponents.iter().enumerate() {
            if a == 0 {
                continue;
            }
            if !first {
                write!(f, "*")?;
            }
            first = false;
            if a == 1 {
                write!(f, "x{}", i + 1)?;
            } else {
                write!(f, "x{}^{}", i + 1, a)?;
            }
        }
        Ok(())
    }
}

/// An ordered list of monomials used as an evaluation/decomposition basis.
///
/// The entry order is part of the basis identity (it fixes the layout of
/// every structure matrix built from it), so constructors never reorder
/// the caller's list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonomialBasis {
    name: String,
    entries: Vec<Monomial>,
    nvars: usize,
}

impl MonomialBasis {
    pub fn new(name: impl Into<String>, entries: Vec<Monomial>) -> Result<Self, Error> {
        let name = name.into();
        if entries.is_empty() {
            return Err(Error::BadConfig(format!("basis {name} has no entries")));
        }
        let nvars = entries[0].nvars();
        for m in &entries {
            if m.nvars() != nvars {
                return Err(Error::DimensionMismatch {
                    context: "basis entry arity",
                    expected: nvars,
                    got: m.nvars(),
                });
            }
        }
        Ok(Self {
            name,
            entries,
            nvars,
        })
    }

    /// All monomials with `min_deg <= total degree <= max_deg`, in graded
    /// lexicographic order.
    pub fn all_monomials(
        name: impl Into<String>,
        nvars: usize,
        min_deg: u32,
        max_deg: u32,
    ) -> Result<Self, Error> {
        let mut entries = Vec::new();
        let mut exps = vec![0u32; nvars];
        collect_monomials(&mut exps, 0, nvars, min_deg, max_deg, &mut entries);
        entries.sort();
        Self::new(name, entries)
    }

    /// The degree-one basis `[x1, ..., xn]`.
    pub fn linear(name: impl Into<String>, nvars: usize) -> Self {
        let entries = (0..nvars).map(|i| Monomial::var(i, nvars)).collect();
        Self::new(name, entries).expect("linear basis is non-empty")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn entries(&self) -> &[Monomial] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn max_degree(&self) -> u32 {
        self.entries
            .iter()
            .map(Monomial::total_degree)
            .max()
            .unwrap_or(0)
    }

    /// All entries pairwise distinct.
    pub fn is_non_redundant(&self) -> bool {
        let mut seen = std::collections::HashSet::new();
        self.entries.iter().all(|m| seen.insert(m))
    }

    /// A strict basis has no constant entry and vanishes only at x = 0,
    /// which holds exactly when every variable has a pure-power entry.
    pub fn is_strict(&self) -> bool {
        !self.entries.iter().any(Monomial::is_constant)
            && (0..self.nvars)
                .all(|i| self.entries.iter().any(|m| m.is_pure_power_of(i)))
    }

    /// Evaluate every entry at `x`.
    pub fn eval<T: Scalar>(&self, x: &[T]) -> Result<DVector<T>, Error> {
        if x.len() != self.nvars {
            return Err(Error::DimensionMismatch {
                context: "eval_basis point",
                expected: self.nvars,
                got: x.len(),
            });
        }
        Ok(DVector::from_iterator(
            self.len(),
            self.entries.iter().map(|m| m.eval(x)),
        ))
    }

    /// The Jacobian ∂(basis)/∂xᵀ at `x`: entry (i, j) = ∂basis_i/∂x_j.
    pub fn jacobian<T: Scalar>(&self, x: &[T]) -> Result<DMatrix<T>, Error> {
        if x.len() != self.nvars {
            return Err(Error::DimensionMismatch {
                context: "basis_jacobian point",
                expected: self.nvars,
                got: x.len(),
            });
        }
        let mut jac = DMatrix::zeros(self.len(), self.nvars);
        for (i, m) in self.entries.iter().enumerate() {
            for j in 0..self.nvars {
                if let Some((a, dm)) = m.derivative(j) {
                    jac[(i, j)] = T::from_u32(a).unwrap() * dm.eval(x);
                }
            }
        }
        Ok(jac)
    }

    /// The raw Kronecker product basis: entry `i*|b2|+j` is
    /// `self_i * other_j`, preserving Kronecker order (may be redundant).
    pub fn kron(&self, other: &MonomialBasis) -> Result<MonomialBasis, Error> {
        if self.nvars != other.nvars {
            return Err(Error::DimensionMismatch {
                context: "kron_basis arity",
                expected: self.nvars,
                got: other.nvars,
            });
        }
        let entries = self
            .entries
            .iter()
            .flat_map(|a| other.entries.iter().map(move |b| a.mul(b)))
            .collect();
        MonomialBasis::new(format!("{}(x){}", self.name, other.name), entries)
    }

    /// Deduplicate, keeping the first occurrence of each monomial in the
    /// original order. Returns the reduced basis and the selection map
    /// `sel` with `sel[i]` the reduced index of original entry `i`, so the
    /// 0/1 selection matrix S (reduced×original, `S[sel[i], i] = 1`)
    /// satisfies `original(x) = Sᵀ · reduced(x)` for all x.
    pub fn non_redundant_form(&self) -> (MonomialBasis, Vec<usize>) {
        let mut reduced: Vec<Monomial> = Vec::new();
        let mut sel = Vec::with_capacity(self.len());
        for m in &self.entries {
            match reduced.iter().position(|r| r == m) {
                Some(p) => sel.push(p),
                None => {
                    reduced.push(m.clone());
                    sel.push(reduced.len() - 1);
                }
            }
        }
        let basis = MonomialBasis::new(format!("nr({})", self.name), reduced)
            .expect("reduced basis inherits non-empty entries");
        (basis, sel)
    }

    /// The 0/1 selection matrix S of [`Self::non_redundant_form`].
    pub fn selection_matrix<T: Scalar>(sel: &[usize], reduced_len: usize) -> DMatrix<T> {
        let mut s = DMatrix::zeros(reduced_len, sel.len());
        for (i, &p) in sel.iter().enumerate() {
            s[(p, i)] = T::one();
        }
        s
    }

    /// Position of each entry, for coefficient extraction. Requires a
    /// non-redundant basis.
    pub fn index_of(&self, m: &Monomial) -> Option<usize> {
        self.entries.iter().position(|e| e == m)
    }
}

fn collect_monomials(
    exps: &mut Vec<u32>,
    var: usize,
    nvars: usize,
    min_deg: u32,
    max_deg: u32,
    out: &mut Vec<Monomial>,
) {
    let used: u32 = exps[..var].iter().sum();
    if var == nvars {
        let _ = used;
        let deg: u32 = exps.iter().sum();
        if deg >= min_deg && deg <= max_deg {
            out.push(Monomial::new(exps.clone()));
        }
        return;
    }
    for a in 0..=(max_deg - used) {
        exps[var] = a;
        collect_monomials(exps, var + 1, nvars, min_deg, max_deg, out);
    }
    exps[var] = 0;
}
