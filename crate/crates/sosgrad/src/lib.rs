//! Offline synthesis of robustly stabilizing, suboptimal polynomial
//! state-feedback controllers for input-affine nonlinear systems whose
//! dynamics contain a time-invariant random parameter.
//!
//! The pipeline is:
//!
//! 1. [`sdpsolve`] solves two small dense SDPs to obtain an initial
//!    stabilizing controller gain, Lyapunov Gram matrix and free
//!    Gram-coordinates.
//! 2. [`costfit`] fits a polynomial value function to the closed-loop cost
//!    by minimizing a weighted Bellman residual; the fit and its gradient
//!    with respect to the controller gains are available in closed form.
//! 3. [`soscert`] turns positive definiteness of the Lyapunov matrix and of
//!    the per-vertex Gram matrices of the Lyapunov decrease rate into a
//!    log-barrier penalty whose finiteness certifies robust global
//!    asymptotic stability.
//! 4. [`optimize`] runs a monotone gradient descent with Wolfe backtracking
//!    on the expected fitted cost plus the barrier penalty.
//! 5. [`simulate`] verifies the result by closed-loop Runge-Kutta rollouts
//!    over the full parameter and initial-state supports.
//!
//! [`polyalg`] supplies the exact monomial/polynomial algebra everything
//! else is built on; [`sysmodel`] holds the polytopic plant description and
//! [`benchmark`] the built-in two-state example system.

pub mod benchmark;
pub mod costfit;
pub mod error;
pub mod optimize;
pub mod polyalg;
pub mod scalar;
pub mod sdpsolve;
pub mod simulate;
pub mod soscert;
pub mod sysmodel;

pub use error::Error;
pub use scalar::Scalar;

/// Concrete scalar used by the solver stack.
pub type Real = f64;

/// Polynomial in the state variables with `f64` coefficients.
pub type Poly = polyalg::Polynomial<Real>;
/// Matrix of [`Poly`] entries.
pub type PolyMat = polyalg::PolyMatrix<Real>;

pub type Result<T> = std::result::Result<T, Error>;
