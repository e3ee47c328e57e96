//! Exact multivariate monomial and polynomial algebra over the state
//! vector: ordered bases, evaluation, Jacobians, Kronecker-structured
//! products, non-redundant forms and coefficient extraction.
//!
//! All types are immutable values after construction and every operation
//! is pure, so they can be shared freely across parallel workers.

mod linalg;
mod matrix;
mod monomial;
mod polynomial;

pub use linalg::{inv_vec, kron_vec, unvech, vec_mat, vech, vech_index, vech_len, vech_scaling};
pub use matrix::PolyMatrix;
pub use monomial::{Monomial, MonomialBasis};
pub use polynomial::Polynomial;
