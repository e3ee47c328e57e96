//! The polytopic stochastic plant: vertex dynamics, simplex weights,
//! parameter and initial-state distributions, and closed-loop
//! right-hand-side evaluation.
//!
//! Dynamics have the form `ẋ = f(x,θ) + G(x,θ)·u` with
//! `f(x,θ) = Σ_k h_k(θ) F_k(x) z(x)` and `G(x,θ) = Σ_k h_k(θ) G_k(x)`,
//! where the weights `h_k` lie on the probability simplex for every θ in
//! the support and z is a strict monomial basis (so `f(0,θ) = 0`).

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::polyalg::{Monomial, MonomialBasis, PolyMatrix};
use crate::{Real, Result};

/// Tolerance on the simplex condition Σ h_k = 1.
const SIMPLEX_TOL: Real = 1e-12;

/// The weight functions h_k(θ) mapping a parameter point to simplex
/// coordinates over the vertices.
pub enum WeightFamily {
    /// Multilinear interpolation over the corners of the box
    /// `[lo_1,hi_1]×…×[lo_p,hi_p]`. Vertex `k` reads the bits of `k`
    /// most-significant-first: bit i = 0 picks `lo_i`, bit 1 picks `hi_i`,
    /// so for p=2 the vertex order is (lo,lo), (lo,hi), (hi,lo), (hi,hi)
    /// and `h_k(θ) = ∏_i (bit_i ? s_i : 1−s_i)` with
    /// `s_i = (θ_i−lo_i)/(hi_i−lo_i)`.
    BilinearCorner { lo: Vec<Real>, hi: Vec<Real> },
    /// Arbitrary point-evaluable weights (not serializable).
    Custom {
        vertices: usize,
        eval: Box<dyn Fn(&[Real]) -> Vec<Real> + Send + Sync>,
    },
}

impl WeightFamily {
    pub fn vertex_count(&self) -> usize {
        match self {
            WeightFamily::BilinearCorner { lo, .. } => 1 << lo.len(),
            WeightFamily::Custom { vertices, .. } => *vertices,
        }
    }

    /// Parameter dimension, when known from the family itself.
    pub fn theta_dim(&self) -> Option<usize> {
        match self {
            WeightFamily::BilinearCorner { lo, .. } => Some(lo.len()),
            WeightFamily::Custom { .. } => None,
        }
    }

    /// The corner parameter values θ_k realizing h_k(θ_k) = 1, for
    /// families that have them.
    pub fn corner_points(&self) -> Option<Vec<DVector<Real>>> {
        match self {
            WeightFamily::BilinearCorner { lo, hi } => {
                let p = lo.len();
                let mut pts = Vec::with_capacity(1 << p);
                for k in 0..(1usize << p) {
                    pts.push(DVector::from_fn(p, |i, _| {
                        if (k >> (p - 1 - i)) & 1 == 1 {
                            hi[i]
                        } else {
                            lo[i]
                        }
                    }));
                }
                Some(pts)
            }
            WeightFamily::Custom { .. } => None,
        }
    }

    fn eval_raw(&self, theta: &[Real]) -> Vec<Real> {
        match self {
            WeightFamily::BilinearCorner { lo, hi } => {
                let p = lo.len();
                debug_assert_eq!(theta.len(), p);
                let s: Vec<Real> = (0..p)
                    .map(|i| (theta[i] - lo[i]) / (hi[i] - lo[i]))
                    .collect();
                (0..(1usize << p))
                    .map(|k| {
                        (0..p)
                            .map(|i| {
                                if (k >> (p - 1 - i)) & 1 == 1 {
                                    s[i]
                                } else {
                                    1.0 - s[i]
                                }
                            })
                            .product()
                    })
                    .collect()
            }
            WeightFamily::Custom { eval, .. } => eval(theta),
        }
    }
}

impl fmt::Debug for WeightFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightFamily::BilinearCorner { lo, hi } => f
                .debug_struct("BilinearCorner")
                .field("lo", lo)
                .field("hi", hi)
                .finish(),
            WeightFamily::Custom { vertices, .. } => f
                .debug_struct("Custom")
                .field("vertices", vertices)
                .finish_non_exhaustive(),
        }
    }
}

/// Finite-support distribution of the plant parameter θ.
///
/// Continuously distributed parameters are handled by the caller sampling
/// a finite support up front (seeded), so every expectation in the
/// pipeline is an exact enumeration.
#[derive(Debug, Clone)]
pub struct ThetaDistribution {
    points: Vec<DVector<Real>>,
    probs: Vec<Real>,
}

impl ThetaDistribution {
    pub fn new(points: Vec<DVector<Real>>, probs: Vec<Real>) -> Result<Self> {
        if points.len() != probs.len() || points.is_empty() {
            return Err(Error::BadConfig(
                "theta support and probabilities must be non-empty and equal length".into(),
            ));
        }
        let sum: Real = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::BadConfig(format!(
                "theta probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(Self { points, probs })
    }

    /// Uniform distribution over the given points.
    pub fn uniform(points: Vec<DVector<Real>>) -> Result<Self> {
        let n = points.len();
        let probs = vec![1.0 / n as Real; n];
        Self::new(points, probs)
    }

    /// Uniform distribution over the Cartesian product of per-coordinate
    /// value lists.
    pub fn uniform_product(values_per_coord: &[Vec<Real>]) -> Result<Self> {
        let mut points = vec![Vec::new()];
        for values in values_per_coord {
            let mut next = Vec::with_capacity(points.len() * values.len());
            for prefix in &points {
                for &v in values {
                    let mut p = prefix.clone();
                    p.push(v);
                    next.push(p);
                }
            }
            points = next;
        }
        Self::uniform(points.into_iter().map(DVector::from_vec).collect())
    }

    pub fn support(&self) -> &[DVector<Real>] {
        &self.points
    }

    pub fn probabilities(&self) -> &[Real] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&DVector<Real>, Real)> {
        self.points.iter().zip(self.probs.iter().copied())
    }
}

/// Finite-support distribution of the initial state x₀. Every monomial
/// moment is automatically finite.
#[derive(Debug, Clone)]
pub struct InitialStateDistribution {
    points: Vec<DVector<Real>>,
    probs: Vec<Real>,
}

impl InitialStateDistribution {
    pub fn new(points: Vec<DVector<Real>>, probs: Vec<Real>) -> Result<Self> {
        if points.len() != probs.len() || points.is_empty() {
            return Err(Error::BadConfig(
                "x0 support and probabilities must be non-empty and equal length".into(),
            ));
        }
        let sum: Real = probs.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::BadConfig(format!(
                "x0 probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(Self { points, probs })
    }

    pub fn uniform(points: Vec<DVector<Real>>) -> Result<Self> {
        let n = points.len();
        let probs = vec![1.0 / n as Real; n];
        Self::new(points, probs)
    }

    pub fn support(&self) -> &[DVector<Real>] {
        &self.points
    }

    pub fn probabilities(&self) -> &[Real] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&DVector<Real>, Real)> {
        self.points.iter().zip(self.probs.iter().copied())
    }
}

/// The polytopic plant with its parameter/initial-state distributions.
#[derive(Debug)]
pub struct PolytopicSystem {
    /// Vertex drift factor matrices F_k(x), each d_x × d_z.
    f_vertices: Vec<PolyMatrix<Real>>,
    /// Vertex input matrices G_k(x), each d_x × d_u.
    g_vertices: Vec<PolyMatrix<Real>>,
    /// Strict monomial basis z(x).
    z_basis: MonomialBasis,
    weights: WeightFamily,
    theta: ThetaDistribution,
    x0: InitialStateDistribution,
}

impl PolytopicSystem {
    pub fn new(
        f_vertices: Vec<PolyMatrix<Real>>,
        g_vertices: Vec<PolyMatrix<Real>>,
        z_basis: MonomialBasis,
        weights: WeightFamily,
        theta: ThetaDistribution,
        x0: InitialStateDistribution,
    ) -> Result<Self> {
        let k = weights.vertex_count();
        if f_vertices.len() != k || g_vertices.len() != k {
            return Err(Error::DimensionMismatch {
                context: "vertex count",
                expected: k,
                got: f_vertices.len().min(g_vertices.len()),
            });
        }
        if !z_basis.is_strict() {
            return Err(Error::BadConfig(format!(
                "basis {} must be strict (no constant entry, pure power of every variable)",
                z_basis.name()
            )));
        }
        let d_x = z_basis.nvars();
        for fk in &f_vertices {
            if fk.nrows() != d_x || fk.ncols() != z_basis.len() {
                return Err(Error::DimensionMismatch {
                    context: "drift factor matrix shape",
                    expected: d_x * z_basis.len(),
                    got: fk.nrows() * fk.ncols(),
                });
            }
        }
        let d_u = g_vertices[0].ncols();
        for gk in &g_vertices {
            if gk.nrows() != d_x || gk.ncols() != d_u {
                return Err(Error::DimensionMismatch {
                    context: "input matrix shape",
                    expected: d_x * d_u,
                    got: gk.nrows() * gk.ncols(),
                });
            }
        }
        Ok(Self {
            f_vertices,
            g_vertices,
            z_basis,
            weights,
            theta,
            x0,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.f_vertices.len()
    }

    pub fn state_dim(&self) -> usize {
        self.z_basis.nvars()
    }

    pub fn input_dim(&self) -> usize {
        self.g_vertices[0].ncols()
    }

    pub fn z_basis(&self) -> &MonomialBasis {
        &self.z_basis
    }

    pub fn f_vertex(&self, k: usize) -> &PolyMatrix<Real> {
        &self.f_vertices[k]
    }

    pub fn g_vertex(&self, k: usize) -> &PolyMatrix<Real> {
        &self.g_vertices[k]
    }

    pub fn weights(&self) -> &WeightFamily {
        &self.weights
    }

    pub fn theta(&self) -> &ThetaDistribution {
        &self.theta
    }

    pub fn x0(&self) -> &InitialStateDistribution {
        &self.x0
    }

    /// Simplex weights h(θ), validated: components in [0,1] and summing
    /// to 1 within tolerance.
    pub fn weights_eval(&self, theta: &[Real]) -> Result<DVector<Real>> {
        let h = self.weights.eval_raw(theta);
        if h.len() != self.vertex_count() {
            return Err(Error::DimensionMismatch {
                context: "weight vector length",
                expected: self.vertex_count(),
                got: h.len(),
            });
        }
        let sum: Real = h.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL || h.iter().any(|&v| !(-SIMPLEX_TOL..=1.0 + SIMPLEX_TOL).contains(&v)) {
            return Err(Error::SimplexViolation { sum });
        }
        Ok(DVector::from_vec(h))
    }

    /// The drift f(x,θ) = Σ_k h_k(θ) F_k(x) z(x).
    pub fn drift_eval(&self, x: &[Real], theta: &[Real]) -> Result<DVector<Real>> {
        let h = self.weights_eval(theta)?;
        let z = self.z_basis.eval(x)?;
        let mut f = DVector::zeros(self.state_dim());
        for (k, fk) in self.f_vertices.iter().enumerate() {
            if h[k] != 0.0 {
                f += fk.eval(x)? * &z * h[k];
            }
        }
        Ok(f)
    }

    /// The input matrix G(x,θ) = Σ_k h_k(θ) G_k(x).
    pub fn input_matrix_eval(&self, x: &[Real], theta: &[Real]) -> Result<DMatrix<Real>> {
        let h = self.weights_eval(theta)?;
        let mut g = DMatrix::zeros(self.state_dim(), self.input_dim());
        for (k, gk) in self.g_vertices.iter().enumerate() {
            if h[k] != 0.0 {
                g += gk.eval(x)? * h[k];
            }
        }
        Ok(g)
    }

    /// The closed-loop right-hand side f(x,θ) + G(x,θ)·u(x).
    pub fn closed_loop_rhs(
        &self,
        controller: &dyn Fn(&[Real]) -> DVector<Real>,
        x: &[Real],
        theta: &[Real],
    ) -> Result<DVector<Real>> {
        let u = controller(x);
        let rhs = self.drift_eval(x, theta)? + self.input_matrix_eval(x, theta)? * u;
        if rhs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("closed-loop right-hand side"));
        }
        Ok(rhs)
    }
}

/// On-disk system description: polynomial coefficient tables keyed by
/// exponent tuples, the weight-family kind, and the two supports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemConfig {
    pub state_dim: usize,
    /// Exponent vectors of the basis z, in order.
    pub z_basis: Vec<Vec<u32>>,
    /// Per-vertex drift factor F_k: sparse coefficient triplets.
    pub f_vertices: Vec<PolyMatrixConfig>,
    /// Per-vertex input matrix G_k.
    pub g_vertices: Vec<PolyMatrixConfig>,
    pub input_dim: usize,
    pub weights: WeightConfig,
    pub theta_support: Vec<SupportPoint>,
    pub x0_support: Vec<SupportPoint>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolyMatrixConfig {
    pub rows: usize,
    pub cols: usize,
    pub terms: Vec<PolyTermConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolyTermConfig {
    pub row: usize,
    pub col: usize,
    pub exponents: Vec<u32>,
    pub coeff: Real,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum WeightConfig {
    /// Multilinear interpolation over box corners (see
    /// [`WeightFamily::BilinearCorner`]).
    BilinearCorner { lo: Vec<Real>, hi: Vec<Real> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SupportPoint {
    pub point: Vec<Real>,
    pub prob: Real,
}

impl PolyMatrixConfig {
    pub fn build(&self, nvars: usize) -> Result<PolyMatrix<Real>> {
        let mut m = PolyMatrix::zeros(self.rows, self.cols, nvars);
        for t in &self.terms {
            if t.row >= self.rows || t.col >= self.cols {
                return Err(Error::BadConfig(format!(
                    "term index ({}, {}) outside {}x{} matrix",
                    t.row, t.col, self.rows, self.cols
                )));
            }
            if t.exponents.len() != nvars {
                return Err(Error::DimensionMismatch {
                    context: "term exponent arity",
                    expected: nvars,
                    got: t.exponents.len(),
                });
            }
            m.entry_mut(t.row, t.col)
                .add_term(Monomial::new(t.exponents.clone()), t.coeff);
        }
        Ok(m)
    }
}

impl SystemConfig {
    pub fn build(&self) -> Result<PolytopicSystem> {
        let z = MonomialBasis::new(
            "z",
            self.z_basis.iter().cloned().map(Monomial::new).collect(),
        )?;
        let f = self
            .f_vertices
            .iter()
            .map(|c| c.build(self.state_dim))
            .collect::<Result<Vec<_>>>()?;
        let g = self
            .g_vertices
            .iter()
            .map(|c| c.build(self.state_dim))
            .collect::<Result<Vec<_>>>()?;
        let weights = match &self.weights {
            WeightConfig::BilinearCorner { lo, hi } => WeightFamily::BilinearCorner {
                lo: lo.clone(),
                hi: hi.clone(),
            },
        };
        let theta = ThetaDistribution::new(
            self.theta_support
                .iter()
                .map(|s| DVector::from_vec(s.point.clone()))
                .collect(),
            self.theta_support.iter().map(|s| s.prob).collect(),
        )?;
        let x0 = InitialStateDistribution::new(
            self.x0_support
                .iter()
                .map(|s| DVector::from_vec(s.point.clone()))
                .collect(),
            self.x0_support.iter().map(|s| s.prob).collect(),
        )?;
        PolytopicSystem::new(f, g, z, weights, theta, x0)
    }
}
