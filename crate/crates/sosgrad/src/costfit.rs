//! Bellman-residual value fitting.
//!
//! A candidate value function `Ĵ(x,v) = φ(x)ᵀv` is fitted to the
//! closed-loop cost of the controller `û(x) = Φ(x)ᵀw` by minimizing the
//! weighted residual norm `M[B(·,v,w,θ)²] + η‖v‖²`, where
//! `B = q + ½ûᵀRû + (∂Ĵ/∂x)ᵀ(f + Gû)` and `M[·]` is a Dirac-sum measure
//! over a state grid. Because `B` is bilinear in `(v, w)`-derived
//! quantities, the optimal `v(w,θ)` has a closed form through two families
//! of constant moment matrices that are precomputed once
//! ([`compute_moments`]); the gradient of the expected fitted cost with
//! respect to `w` is then available analytically ([`cost_gradient`]).

use std::hash::Hasher;
use std::io::{Read as _, Write as _};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::error::Error;
use crate::polyalg::{inv_vec, kron_vec, MonomialBasis, PolyMatrix};
use crate::sysmodel::PolytopicSystem;
use crate::{Real, Result};

/// Smallest Cholesky pivot accepted when the fit is unregularized.
const PIVOT_TOL: Real = 1e-12;
/// Relative residual accepted for the fit's linear solve.
const SOLVE_TOL: Real = 1e-8;

/// State cost, input weight, value features, and controller structure.
#[derive(Debug, Clone)]
pub struct CostModel {
    /// State cost q(x), positive for x ≠ 0 on the fitting grid.
    q: crate::Poly,
    /// Input weight R(x), symmetric positive definite (d_u × d_u).
    r: PolyMatrix<Real>,
    /// Value features φ with φ(0) = 0 (no constant monomial).
    phi: MonomialBasis,
    /// The strict basis z shared with the plant.
    z: MonomialBasis,
    /// Input-structure rows Z(x) (d_u × d_Z); the controller is
    /// `û(x) = Z(x)·inv_vec(w)·z(x) = Φ(x)ᵀw` with `Φ = z ⊗ Zᵀ`.
    z_cap: PolyMatrix<Real>,
    /// Fit regularization weight.
    eta: Real,
}

impl CostModel {
    pub fn new(
        q: crate::Poly,
        r: PolyMatrix<Real>,
        phi: MonomialBasis,
        z: MonomialBasis,
        z_cap: PolyMatrix<Real>,
        eta: Real,
    ) -> Result<Self> {
        if r.nrows() != r.ncols() {
            return Err(Error::DimensionMismatch {
                context: "input weight squareness",
                expected: r.nrows(),
                got: r.ncols(),
            });
        }
        if z_cap.nrows() != r.nrows() {
            return Err(Error::DimensionMismatch {
                context: "input-structure row count",
                expected: r.nrows(),
                got: z_cap.nrows(),
            });
        }
        if phi.entries().iter().any(|m| m.is_constant()) {
            return Err(Error::BadConfig(
                "value features must vanish at the origin (no constant monomial)".into(),
            ));
        }
        if eta < 0.0 {
            return Err(Error::BadConfig("regularization must be non-negative".into()));
        }
        Ok(Self {
            q,
            r,
            phi,
            z,
            z_cap,
            eta,
        })
    }

    /// Single-input convenience: Z given as a monomial basis row.
    pub fn single_input(
        q: crate::Poly,
        r: Real,
        phi: MonomialBasis,
        z: MonomialBasis,
        z_cap: &MonomialBasis,
        eta: Real,
    ) -> Result<Self> {
        let r_mat = PolyMatrix::from_constant(&DMatrix::from_element(1, 1, r), z.nvars());
        let z_row = PolyMatrix::row_from_basis(z_cap);
        Self::new(q, r_mat, phi, z, z_row, eta)
    }

    pub fn q(&self) -> &crate::Poly {
        &self.q
    }

    pub fn r(&self) -> &PolyMatrix<Real> {
        &self.r
    }

    pub fn phi(&self) -> &MonomialBasis {
        &self.phi
    }

    pub fn z(&self) -> &MonomialBasis {
        &self.z
    }

    pub fn z_cap(&self) -> &PolyMatrix<Real> {
        &self.z_cap
    }

    pub fn eta(&self) -> Real {
        self.eta
    }

    /// Number of value features d_v.
    pub fn d_v(&self) -> usize {
        self.phi.len()
    }

    /// Controller gain dimension d_w = d_Z · d_z.
    pub fn d_w(&self) -> usize {
        self.z_cap.ncols() * self.z.len()
    }

    pub fn d_u(&self) -> usize {
        self.r.nrows()
    }

    pub fn d_z_cap(&self) -> usize {
        self.z_cap.ncols()
    }

    /// Φ(x) = z(x) ⊗ Z(x)ᵀ, shape d_w × d_u.
    pub fn phi_matrix(&self, x: &[Real]) -> Result<DMatrix<Real>> {
        let z = self.z.eval(x)?;
        let zc = self.z_cap.eval(x)?;
        Ok(DMatrix::from_column_slice(z.len(), 1, z.as_slice()).kronecker(&zc.transpose()))
    }

    /// û(x) = Z(x) · inv_vec(w) · z(x).
    pub fn controller_eval(&self, w: &DVector<Real>, x: &[Real]) -> Result<DVector<Real>> {
        let w_mat = inv_vec(w, self.z_cap.ncols(), self.z.len())?;
        Ok(self.z_cap.eval(x)? * w_mat * self.z.eval(x)?)
    }

    /// The controller as a standalone closure for simulation.
    pub fn controller_fn(
        &self,
        w: &DVector<Real>,
    ) -> Result<impl Fn(&[Real]) -> DVector<Real> + Send + Sync> {
        let w_mat = inv_vec(w, self.z_cap.ncols(), self.z.len())?;
        let z = self.z.clone();
        let z_cap = self.z_cap.clone();
        Ok(move |x: &[Real]| {
            let zx = z.eval(x).expect("state dimension fixed at construction");
            let zc = z_cap.eval(x).expect("state dimension fixed at construction");
            zc * &w_mat * zx
        })
    }

    /// Ĵ(x, v) = φ(x)ᵀ v.
    pub fn value_eval(&self, v: &DVector<Real>, x: &[Real]) -> Result<Real> {
        Ok(self.phi.eval(x)?.dot(v))
    }
}

/// Fitted value-function coefficients.
#[derive(Debug, Clone)]
pub struct CostParameters {
    pub v: DVector<Real>,
}

/// Dirac-sum weight measure: `M[π] = Σ_m π(x^(m))` over fixed grid points.
#[derive(Debug, Clone)]
pub struct WeightMeasure {
    points: Vec<DVector<Real>>,
}

impl WeightMeasure {
    pub fn new(points: Vec<DVector<Real>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::BadConfig("weight measure has no grid points".into()));
        }
        Ok(Self { points })
    }

    /// Uniform box grid `{lo : step : hi}^d` (inclusive endpoints,
    /// integer-indexed so the points carry no accumulated rounding).
    pub fn box_grid(lo: Real, hi: Real, step: Real, dim: usize) -> Result<Self> {
        let n = ((hi - lo) / step).round() as usize;
        let axis: Vec<Real> = (0..=n).map(|i| lo + i as Real * step).collect();
        let mut points = vec![Vec::new()];
        for _ in 0..dim {
            let mut next = Vec::with_capacity(points.len() * axis.len());
            for prefix in &points {
                for &v in &axis {
                    let mut p = prefix.clone();
                    p.push(v);
                    next.push(p);
                }
            }
            points = next;
        }
        Self::new(points.into_iter().map(DVector::from_vec).collect())
    }

    pub fn points(&self) -> &[DVector<Real>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Feature vector ψ₀(x) = [q(x); vec(Φ(x) R(x) Φ(x)ᵀ / 2)], length 1 + d_w².
pub fn psi0(model: &CostModel, x: &[Real]) -> Result<DVector<Real>> {
    let phi_mat = model.phi_matrix(x)?;
    let quad = &phi_mat * model.r.eval(x)? * phi_mat.transpose() * 0.5;
    let d_w = model.d_w();
    let mut out = DVector::zeros(1 + d_w * d_w);
    out[0] = model.q.eval(x);
    out.rows_mut(1, d_w * d_w).copy_from_slice(quad.as_slice());
    Ok(out)
}

/// Feature vector ψ_k(x) = vec(∂φ/∂xᵀ · [f_k(x), G_k(x)Φ(x)ᵀ]),
/// length d_v·(1 + d_w); the first d_v block is ∂φ/∂xᵀ·f_k(x).
pub fn psik(model: &CostModel, sys: &PolytopicSystem, k: usize, x: &[Real]) -> Result<DVector<Real>> {
    let jac = model.phi.jacobian(x)?;
    let z = model.z.eval(x)?;
    let f_k = sys.f_vertex(k).eval(x)? * z;
    let g_phi_t = sys.g_vertex(k).eval(x)? * model.phi_matrix(x)?.transpose();
    let d_v = model.d_v();
    let d_w = model.d_w();
    let mut out = DVector::zeros(d_v * (1 + d_w));
    out.rows_mut(0, d_v).copy_from(&(&jac * f_k));
    let tail = &jac * g_phi_t;
    out.rows_mut(d_v, d_v * d_w).copy_from_slice(tail.as_slice());
    Ok(out)
}

/// The constant moment matrices of the fit: `A[k][k'] = M[ψ_k ψ_k'ᵀ]`,
/// `B[k] = M[ψ_k ψ₀ᵀ]`, and the initial-state feature mean `E[φ(x₀)]`.
///
/// Everything downstream of the measure is a function of these matrices;
/// they are computed once per (model, system, measure) and may be
/// persisted ([`MomentCache::save`]) keyed by a content hash.
#[derive(Debug, Clone)]
pub struct MomentCache {
    a: Vec<Vec<DMatrix<Real>>>,
    b: Vec<DMatrix<Real>>,
    e_phi0: DVector<Real>,
    d_v: usize,
    d_w: usize,
    key: u64,
}

/// Per-point accumulator reduced across grid chunks; the chunked
/// fold/reduce gives pairwise (tree) summation over the grid, which keeps
/// cancellation error logarithmic in the point count.
struct MomentAccum {
    a: Vec<Vec<DMatrix<Real>>>,
    b: Vec<DMatrix<Real>>,
}

impl MomentAccum {
    fn zeros(k: usize, dk: usize, d0: usize) -> Self {
        Self {
            a: (0..k)
                .map(|_| (0..k).map(|_| DMatrix::zeros(dk, dk)).collect())
                .collect(),
            b: (0..k).map(|_| DMatrix::zeros(dk, d0)).collect(),
        }
    }

    fn merge(mut self, other: Self) -> Self {
        for (row_a, row_b) in self.a.iter_mut().zip(other.a) {
            for (m_a, m_b) in row_a.iter_mut().zip(row_b) {
                *m_a += m_b;
            }
        }
        for (m_a, m_b) in self.b.iter_mut().zip(other.b) {
            *m_a += m_b;
        }
        self
    }
}

/// Assemble the moment cache by summing feature outer products over the
/// measure's grid (parallel over grid chunks).
pub fn compute_moments(
    model: &CostModel,
    sys: &PolytopicSystem,
    measure: &WeightMeasure,
    key: u64,
) -> Result<MomentCache> {
    let k = sys.vertex_count();
    let d_v = model.d_v();
    let d_w = model.d_w();
    let dk = d_v * (1 + d_w);
    let d0 = 1 + d_w * d_w;

    let accum = measure
        .points()
        .par_chunks(64)
        .map(|chunk| -> Result<MomentAccum> {
            let mut acc = MomentAccum::zeros(k, dk, d0);
            for x in chunk {
                let p0 = psi0(model, x.as_slice())?;
                let pk: Vec<DVector<Real>> = (0..k)
                    .map(|i| psik(model, sys, i, x.as_slice()))
                    .collect::<Result<_>>()?;
                for i in 0..k {
                    for j in i..k {
                        // The (j, i) block is filled by transposition below.
                        acc.a[i][j].gemm(1.0, &pk[i], &pk[j].transpose(), 1.0);
                    }
                    acc.b[i].gemm(1.0, &pk[i], &p0.transpose(), 1.0);
                }
            }
            Ok(acc)
        })
        .try_reduce(
            || MomentAccum::zeros(k, dk, d0),
            |a, b| Ok(a.merge(b)),
        )?;

    let mut a = accum.a;
    for i in 0..k {
        for j in 0..i {
            a[i][j] = a[j][i].transpose();
        }
    }

    for row in &a {
        for m in row {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("moment matrix assembly"));
            }
        }
    }
    for m in &accum.b {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("moment matrix assembly"));
        }
    }

    let mut e_phi0 = DVector::zeros(d_v);
    for (x0, p) in sys.x0().iter() {
        e_phi0 += model.phi.eval(x0.as_slice())? * p;
    }

    Ok(MomentCache {
        a,
        b: accum.b,
        e_phi0,
        d_v,
        d_w,
        key,
    })
}

/// Parameter-point aggregate of the moment cache:
/// `Ã(θ) = Σ_k Σ_k' h_k h_k' A[k][k']` and `B̃(θ) = Σ_k h_k B[k]`.
/// The fit and its gradient at a fixed θ only ever touch these two
/// matrices, so the optimizer precomputes one aggregate per support point.
#[derive(Debug, Clone)]
pub struct ThetaAggregate {
    a: DMatrix<Real>,
    b: DMatrix<Real>,
    d_v: usize,
    d_w: usize,
}

impl MomentCache {
    pub fn d_v(&self) -> usize {
        self.d_v
    }

    pub fn d_w(&self) -> usize {
        self.d_w
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    pub fn a_matrix(&self, k: usize, kp: usize) -> &DMatrix<Real> {
        &self.a[k][kp]
    }

    pub fn b_matrix(&self, k: usize) -> &DMatrix<Real> {
        &self.b[k]
    }

    pub fn e_phi0(&self) -> &DVector<Real> {
        &self.e_phi0
    }

    pub fn aggregate(&self, h: &DVector<Real>) -> ThetaAggregate {
        let k = h.len();
        let dk = self.d_v * (1 + self.d_w);
        let d0 = 1 + self.d_w * self.d_w;
        let mut a = DMatrix::zeros(dk, dk);
        let mut b = DMatrix::zeros(dk, d0);
        for i in 0..k {
            if h[i] == 0.0 {
                continue;
            }
            for j in 0..k {
                if h[j] != 0.0 {
                    a += &self.a[i][j] * (h[i] * h[j]);
                }
            }
            b += &self.b[i] * h[i];
        }
        ThetaAggregate {
            a,
            b,
            d_v: self.d_v,
            d_w: self.d_w,
        }
    }

    /// `L_{k,k'}(w) = ([1;w] ⊗ I)ᵀ A[k][k'] ([1;w] ⊗ I) + η I` (d_v × d_v).
    pub fn l_matrix(&self, w: &DVector<Real>, k: usize, kp: usize, eta: Real) -> DMatrix<Real> {
        let u = stack_one(w);
        let mut l = contract_blocks(
            &contract_block_rows(&self.a[k][kp], &u, self.d_v),
            &u,
            self.d_v,
        );
        for i in 0..self.d_v {
            l[(i, i)] += eta;
        }
        l
    }

    /// `l_k(w) = ([1;w] ⊗ I)ᵀ B[k] [1; w ⊗ w]` (length d_v).
    pub fn l_vector(&self, w: &DVector<Real>, k: usize) -> DVector<Real> {
        let u = stack_one(w);
        let rhs = quad_stack(w);
        let bw = &self.b[k] * rhs;
        contract_block_vec(&bw, &u, self.d_v)
    }
}

impl ThetaAggregate {
    /// `L̃(w,θ) = ŪᵀÃŪ + ηI` with `Ū = [1;w] ⊗ I`.
    pub fn l_tilde(&self, w: &DVector<Real>, eta: Real) -> DMatrix<Real> {
        let u = stack_one(w);
        let mut l = contract_blocks(&contract_block_rows(&self.a, &u, self.d_v), &u, self.d_v);
        for i in 0..self.d_v {
            l[(i, i)] += eta;
        }
        l
    }

    /// `l̃(w,θ) = Ūᵀ B̃ [1; w ⊗ w]`.
    pub fn l_tilde_vec(&self, w: &DVector<Real>) -> DVector<Real> {
        let u = stack_one(w);
        let bw = &self.b * quad_stack(w);
        contract_block_vec(&bw, &u, self.d_v)
    }
}

fn stack_one(w: &DVector<Real>) -> DVector<Real> {
    let mut u = DVector::zeros(1 + w.len());
    u[0] = 1.0;
    u.rows_mut(1, w.len()).copy_from(w);
    u
}

fn quad_stack(w: &DVector<Real>) -> DVector<Real> {
    let mut v = DVector::zeros(1 + w.len() * w.len());
    v[0] = 1.0;
    v.rows_mut(1, w.len() * w.len())
        .copy_from(&kron_vec(w, w));
    v
}

/// `(u ⊗ I_blk)ᵀ · m`: weighted sum of the d_blk-row blocks of `m`.
fn contract_block_rows(m: &DMatrix<Real>, u: &DVector<Real>, blk: usize) -> DMatrix<Real> {
    let mut out = DMatrix::zeros(blk, m.ncols());
    for a in 0..u.len() {
        if u[a] != 0.0 {
            out += m.rows(a * blk, blk) * u[a];
        }
    }
    out
}

/// `m · (u ⊗ I_blk)`: weighted sum of the blk-column blocks of `m`.
fn contract_blocks(m: &DMatrix<Real>, u: &DVector<Real>, blk: usize) -> DMatrix<Real> {
    let mut out = DMatrix::zeros(m.nrows(), blk);
    for a in 0..u.len() {
        if u[a] != 0.0 {
            out += m.columns(a * blk, blk) * u[a];
        }
    }
    out
}

fn contract_block_vec(v: &DVector<Real>, u: &DVector<Real>, blk: usize) -> DVector<Real> {
    let mut out = DVector::zeros(blk);
    for a in 0..u.len() {
        if u[a] != 0.0 {
            out += v.rows(a * blk, blk) * u[a];
        }
    }
    out
}

/// Positive-definite solve of `L̃ v = −l̃`, reusing the factorization for
/// the gradient. Fails with [`Error::SingularFit`] when the system is not
/// PD to working precision.
struct FitFactorization {
    chol: Cholesky<Real, Dyn>,
    v: DVector<Real>,
}

fn factor_and_solve(agg: &ThetaAggregate, w: &DVector<Real>, eta: Real) -> Result<FitFactorization> {
    let l = agg.l_tilde(w, eta);
    let rhs = -agg.l_tilde_vec(w);
    let chol = Cholesky::new(l.clone()).ok_or(Error::SingularFit)?;
    let min_pivot = chol
        .l_dirty()
        .diagonal()
        .iter()
        .fold(Real::INFINITY, |m, &d| m.min(d * d));
    if min_pivot <= PIVOT_TOL {
        return Err(Error::SingularFit);
    }
    let v = chol.solve(&rhs);
    let resid = (&l * &v - &rhs).norm() / rhs.norm().max(1.0);
    if resid > SOLVE_TOL {
        return Err(Error::SingularFit);
    }
    Ok(FitFactorization { chol, v })
}

/// The closed-form optimal value coefficients
/// `v(w,θ) = −(Σ_k Σ_k' h_k h_k' L_{k,k'})⁻¹ Σ_k h_k l_k`.
pub fn fit_cost_parameters(
    cache: &MomentCache,
    sys: &PolytopicSystem,
    w: &DVector<Real>,
    theta: &[Real],
    eta: Real,
) -> Result<CostParameters> {
    let h = sys.weights_eval(theta)?;
    let agg = cache.aggregate(&h);
    fit_from_aggregate(&agg, w, eta)
}

/// As [`fit_cost_parameters`], from a precomputed θ-aggregate.
pub fn fit_from_aggregate(
    agg: &ThetaAggregate,
    w: &DVector<Real>,
    eta: Real,
) -> Result<CostParameters> {
    let fac = factor_and_solve(agg, w, eta)?;
    Ok(CostParameters { v: fac.v })
}

/// Analytic gradient of the expected fitted cost
/// `E[φ(x₀)]ᵀ v(w,θ)` with respect to the controller gains w:
/// `∂_j = −E[φ(x₀)]ᵀ L̃⁻¹ (∂l̃/∂w_j + (∂L̃/∂w_j) v)`, using
/// `∂L̃⁻¹ = −L̃⁻¹(∂L̃)L̃⁻¹`.
pub fn cost_gradient(
    cache: &MomentCache,
    sys: &PolytopicSystem,
    w: &DVector<Real>,
    theta: &[Real],
    eta: Real,
) -> Result<DVector<Real>> {
    let h = sys.weights_eval(theta)?;
    let agg = cache.aggregate(&h);
    cost_gradient_from_aggregate(&agg, cache.e_phi0(), w, eta)
}

/// As [`cost_gradient`], from a precomputed θ-aggregate.
pub fn cost_gradient_from_aggregate(
    agg: &ThetaAggregate,
    e_phi0: &DVector<Real>,
    w: &DVector<Real>,
    eta: Real,
) -> Result<DVector<Real>> {
    let d_v = agg.d_v;
    let d_w = agg.d_w;
    let fac = factor_and_solve(agg, w, eta)?;
    let v = &fac.v;
    let s = fac.chol.solve(e_phi0);

    let u = stack_one(w);
    // Ã·Ū (columns contracted) and ŪᵀÃ (rows contracted); their block
    // slices give the two halves of ∂L̃/∂w_j = Ẽ_jᵀÃŪ + ŪᵀÃẼ_j with
    // Ẽ_j = e_{j+1} ⊗ I.
    let a_u = contract_blocks(&agg.a, &u, d_v);
    let u_a = contract_block_rows(&agg.a, &u, d_v);
    let a_u_v = &a_u * v;

    // B̃-pieces of ∂l̃/∂w_j: the first term selects the (j+1)th block row
    // of B̃·[1; w⊗w]; the second applies Ūᵀ B̃ to [0; e_j⊗w + w⊗e_j].
    let b_q = &agg.b * quad_stack(w);
    let u_b = contract_block_rows(&agg.b, &u, d_v);

    let mut grad = DVector::zeros(d_w);
    for j in 0..d_w {
        // ∂L̃_j · v.
        let mut dl_v = DVector::zeros(d_v);
        dl_v += a_u_v.rows((j + 1) * d_v, d_v);
        dl_v += u_a.columns((j + 1) * d_v, d_v) * v;

        // ∂l̃_j.
        let mut dl = DVector::zeros(d_v);
        dl += b_q.rows((j + 1) * d_v, d_v);
        let mut dq = DVector::zeros(1 + d_w * d_w);
        for i in 0..d_w {
            // ∂(w⊗w)/∂w_j = e_j⊗w + w⊗e_j (column-major Kronecker).
            dq[1 + j * d_w + i] += w[i];
            dq[1 + i * d_w + j] += w[i];
        }
        dl += &u_b * dq;

        grad[j] = -s.dot(&(dl + dl_v));
    }
    let _ = eta; // η enters through the factorization only.
    Ok(grad)
}

/// The Bellman residual `B(x,v,w,θ) = q + ½ûᵀRû + (∂Ĵ/∂x)ᵀ(f + Gû)`,
/// evaluated from the definition.
pub fn bellman_residual(
    model: &CostModel,
    sys: &PolytopicSystem,
    x: &[Real],
    v: &DVector<Real>,
    w: &DVector<Real>,
    theta: &[Real],
) -> Result<Real> {
    let u = model.controller_eval(w, x)?;
    let quad = 0.5 * (model.r.eval(x)? * &u).dot(&u);
    let rhs = sys.drift_eval(x, theta)? + sys.input_matrix_eval(x, theta)? * u;
    let grad_j = model.phi.jacobian(x)?.transpose() * v;
    Ok(model.q.eval(x) + quad + grad_j.dot(&rhs))
}

/// The same residual through the feature vectors:
/// `ψ₀ᵀ[1; w⊗w] + Σ_k h_k ψ_kᵀ([1;w] ⊗ v)`. Used to cross-check the
/// vectorized identities the moment matrices rely on.
pub fn bellman_residual_features(
    model: &CostModel,
    sys: &PolytopicSystem,
    x: &[Real],
    v: &DVector<Real>,
    w: &DVector<Real>,
    theta: &[Real],
) -> Result<Real> {
    let h = sys.weights_eval(theta)?;
    let mut acc = psi0(model, x)?.dot(&quad_stack(w));
    let uv = kron_vec(&stack_one(w), v);
    for k in 0..sys.vertex_count() {
        if h[k] != 0.0 {
            acc += h[k] * psik(model, sys, k, x)?.dot(&uv);
        }
    }
    Ok(acc)
}

/// Sampled bound ratio between the fitted and true cost: the largest
/// `|B| / (q + ½ûᵀRû)` over the samples. If the bound held globally it
/// would imply `|Ĵ − J| ≤ β̂·J`; since it is only sampled, the report
/// labels it accordingly.
#[derive(Debug, Clone)]
pub struct BellmanBound {
    /// max over samples of |B|/(q + ½ûᵀRû).
    pub beta_hat: Real,
    /// Sample count actually used (origin-adjacent points are skipped).
    pub samples_used: usize,
    /// The sample attaining the maximum.
    pub argmax: Option<DVector<Real>>,
}

pub fn bellman_bound_diagnostic(
    model: &CostModel,
    sys: &PolytopicSystem,
    v: &DVector<Real>,
    w: &DVector<Real>,
    theta: &[Real],
    samples: &[DVector<Real>],
) -> Result<BellmanBound> {
    let mut beta_hat: Real = 0.0;
    let mut used = 0;
    let mut argmax = None;
    for x in samples {
        let u = model.controller_eval(w, x.as_slice())?;
        let denom = model.q.eval(x.as_slice()) + 0.5 * (model.r.eval(x.as_slice())? * &u).dot(&u);
        if denom < 1e-12 {
            continue;
        }
        let b = bellman_residual(model, sys, x.as_slice(), v, w, theta)?;
        let ratio = b.abs() / denom;
        if ratio > beta_hat {
            beta_hat = ratio;
            argmax = Some(x.clone());
        }
        used += 1;
    }
    Ok(BellmanBound {
        beta_hat,
        samples_used: used,
        argmax,
    })
}

/// Stable content hash (FNV-1a over a textual description) used to key
/// persisted moment caches to their (model, system, measure) inputs.
pub fn moment_cache_key(
    model: &CostModel,
    sys: &PolytopicSystem,
    measure: &WeightMeasure,
) -> u64 {
    let mut h = Fnv1a::new();
    h.write(format!("{:?}", model).as_bytes());
    h.write(format!("{:?}", sys).as_bytes());
    for p in measure.points() {
        for &c in p.iter() {
            h.write(&c.to_le_bytes());
        }
    }
    h.finish()
}

struct Fnv1a(u64);

impl Fnv1a {
    fn new() -> Self {
        Self(0xcbf29ce484222325)
    }
}

impl Hasher for Fnv1a {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x100000001b3);
        }
    }
}

const CACHE_MAGIC: &[u8; 8] = b"MOMCACH1";

impl MomentCache {
    /// Persist as a little-endian binary blob (magic, key, dims, then the
    /// matrices in fixed order).
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(CACHE_MAGIC)?;
        f.write_all(&self.key.to_le_bytes())?;
        let k = self.a.len();
        for dim in [k, self.d_v, self.d_w] {
            f.write_all(&(dim as u64).to_le_bytes())?;
        }
        let write_mat = |f: &mut dyn std::io::Write, m: &DMatrix<Real>| -> Result<()> {
            for &v in m.as_slice() {
                f.write_all(&v.to_le_bytes())?;
            }
            Ok(())
        };
        for row in &self.a {
            for m in row {
                write_mat(&mut f, m)?;
            }
        }
        for m in &self.b {
            write_mat(&mut f, m)?;
        }
        for &v in self.e_phi0.iter() {
            f.write_all(&v.to_le_bytes())?;
        }
        f.flush()?;
        Ok(())
    }

    /// Load a cache previously written by [`Self::save`], verifying the
    /// content key.
    pub fn load(path: &Path, expected_key: u64) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::BadConfig(format!(
                "{} is not a moment-cache file",
                path.display()
            )));
        }
        let mut u64buf = [0u8; 8];
        f.read_exact(&mut u64buf)?;
        let key = u64::from_le_bytes(u64buf);
        if key != expected_key {
            return Err(Error::BadConfig(format!(
                "moment cache {} was built from different inputs",
                path.display()
            )));
        }
        let read_dim = |f: &mut dyn std::io::Read| -> Result<usize> {
            let mut b = [0u8; 8];
            f.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b) as usize)
        };
        let k = read_dim(&mut f)?;
        let d_v = read_dim(&mut f)?;
        let d_w = read_dim(&mut f)?;
        let dk = d_v * (1 + d_w);
        let d0 = 1 + d_w * d_w;
        let read_mat = |f: &mut dyn std::io::Read, r: usize, c: usize| -> Result<DMatrix<Real>> {
            let mut data = vec![0.0; r * c];
            for v in &mut data {
                let mut b = [0u8; 8];
                f.read_exact(&mut b)?;
                *v = Real::from_le_bytes(b);
            }
            Ok(DMatrix::from_column_slice(r, c, &data))
        };
        let mut a = Vec::with_capacity(k);
        for _ in 0..k {
            let mut row = Vec::with_capacity(k);
            for _ in 0..k {
                row.push(read_mat(&mut f, dk, dk)?);
            }
            a.push(row);
        }
        let mut b = Vec::with_capacity(k);
        for _ in 0..k {
            b.push(read_mat(&mut f, dk, d0)?);
        }
        let e_phi0 = read_mat(&mut f, d_v, 1)?.column(0).into_owned();
        Ok(Self {
            a,
            b,
            e_phi0,
            d_v,
            d_w,
            key,
        })
    }
}
