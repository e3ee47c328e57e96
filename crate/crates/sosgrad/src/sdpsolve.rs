//! Small dense semidefinite programming for the two initialization
//! problems, plus assembly of the initial decision variables.
//!
//! Both problems are instances of one canonical form: maximize a shared
//! slack ε over scalar variables y subject to linear equalities `Ay = b`
//! and PSD blocks `X_i(y) = C_i + Σ_j y_j D_ij ⪰ 0`. They are solved with
//! a deterministic log-det barrier method (equality-constrained Newton
//! steps on a path-following schedule), which is adequate at this scale
//! (blocks ≤ ~12×12, a few hundred scalar unknowns).
//!
//! The first problem searches a common quadratic Lyapunov certificate
//! `Q ≻ 0` and gain factor `H` making every vertex matrix
//! `Y_k(x,Q,H) = −(∂z/∂xᵀ)(F_k Q + G_k Z H)` strictly SOS over ζ; the
//! second pins the free Gram coordinates r so that every
//! `T_k(W{0},P{0},r)` is strictly positive definite. The initial decision
//! variables are then `W{0} = vec(H*Q*⁻¹)`, `P{0} = Q*⁻¹`, `r{0} = r*`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::Error;
use crate::polyalg::{vec_mat, vech_index, vech_len, PolyMatrix};
use crate::soscert::{self, SosBases, SosStructure};
use crate::sysmodel::PolytopicSystem;
use crate::{Real, Result};

/// One PSD cone membership `C + Σ_j y_j D_j ⪰ 0` with sparse variable
/// coefficients.
#[derive(Debug, Clone)]
pub struct SdpBlock {
    pub dim: usize,
    pub constant: DMatrix<Real>,
    /// (variable index, symmetric coefficient matrix) pairs.
    pub coeffs: Vec<(usize, DMatrix<Real>)>,
}

impl SdpBlock {
    pub fn eval(&self, y: &DVector<Real>) -> DMatrix<Real> {
        let mut x = self.constant.clone();
        for (j, d) in &self.coeffs {
            if y[*j] != 0.0 {
                x += d * y[*j];
            }
        }
        x
    }
}

/// Canonical problem: maximize `y[eps_index]` subject to `eq_a·y = eq_b`
/// and every block PSD. `initial` must satisfy the equalities and make
/// every block strictly PD (the assemblers construct one).
#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub n: usize,
    pub eps_index: usize,
    pub eq_a: DMatrix<Real>,
    pub eq_b: DVector<Real>,
    pub blocks: Vec<SdpBlock>,
    pub initial: DVector<Real>,
}

/// Solver options; the defaults reproduce the tolerances used throughout.
#[derive(Debug, Clone)]
pub struct SdpOptions {
    /// Barrier parameter growth factor per outer stage.
    pub mu: Real,
    /// Initial barrier weight on the objective.
    pub t0: Real,
    /// Stop when (total block dimension)/t falls below this duality-gap
    /// bound.
    pub gap_tol: Real,
    /// Newton iteration budget across all stages.
    pub max_newton: usize,
    /// Hessian regularization absorbing directions no block sees
    /// (equality-only variables).
    pub reg: Real,
    /// Smallest optimal ε accepted as strictly feasible.
    pub eps_tol: Real,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self {
            mu: 10.0,
            t0: 1.0,
            gap_tol: 1e-8,
            max_newton: 2000,
            reg: 1e-8,
            eps_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub y: DVector<Real>,
    pub eps: Real,
}

fn min_eig(m: &DMatrix<Real>) -> Real {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(Real::INFINITY, |a, &b| a.min(b))
}

/// Remove linearly dependent equality rows (Gaussian elimination with
/// partial pivoting, tolerance 1e-12); inconsistent rows are an assembly
/// bug and surface as Infeasible.
fn prune_equalities(a: &DMatrix<Real>, b: &DVector<Real>) -> Result<(DMatrix<Real>, DVector<Real>)> {
    let (m, n) = a.shape();
    let mut work = DMatrix::zeros(m, n + 1);
    work.view_mut((0, 0), (m, n)).copy_from(a);
    work.column_mut(n).copy_from(b);
    let mut kept: Vec<usize> = Vec::new();
    let mut row = 0;
    for col in 0..n {
        if row == m {
            break;
        }
        let (pivot, val) = (row..m)
            .map(|i| (i, work[(i, col)].abs()))
            .fold((row, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if val <= 1e-12 {
            continue;
        }
        work.swap_rows(row, pivot);
        for i in (row + 1)..m {
            let f = work[(i, col)] / work[(row, col)];
            if f != 0.0 {
                for jj in col..=n {
                    work[(i, jj)] -= f * work[(row, jj)];
                }
            }
        }
        kept.push(col);
        row += 1;
    }
    // Any residual row with a nonzero right-hand side is inconsistent.
    for i in row..m {
        if work[(i, n)].abs() > 1e-9 {
            return Err(Error::Infeasible(
                "inconsistent equality constraints".into(),
            ));
        }
    }
    // Re-run selection on the original rows: keep rows that introduced a
    // pivot. The elimination above mixed rows, so instead rebuild by rank
    // detection on the original matrix via the same sweep tracking source
    // rows.
    let mut src: Vec<usize> = (0..m).collect();
    let mut work2 = DMatrix::zeros(m, n);
    work2.copy_from(a);
    let mut keep_rows = Vec::new();
    let mut r = 0;
    for col in 0..n {
        if r == m {
            break;
        }
        let (pivot, val) = (r..m)
            .map(|i| (i, work2[(i, col)].abs()))
            .fold((r, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
        if val <= 1e-12 {
            continue;
        }
        work2.swap_rows(r, pivot);
        src.swap(r, pivot);
        keep_rows.push(src[r]);
        for i in (r + 1)..m {
            let f = work2[(i, col)] / work2[(r, col)];
            if f != 0.0 {
                for jj in col..n {
                    work2[(i, jj)] -= f * work2[(r, jj)];
                }
            }
        }
        r += 1;
    }
    let ra = DMatrix::from_fn(keep_rows.len(), n, |i, j| a[(keep_rows[i], j)]);
    let rb = DVector::from_fn(keep_rows.len(), |i, _| b[keep_rows[i]]);
    Ok((ra, rb))
}

/// Barrier path-following solve of the canonical problem.
pub fn solve_sdp(p: &SdpProblem, opts: &SdpOptions) -> Result<SdpSolution> {
    let n = p.n;
    let (eq_a, eq_b) = prune_equalities(&p.eq_a, &p.eq_b)?;
    let meq = eq_a.nrows();
    let total_dim: usize = p.blocks.iter().map(|b| b.dim).sum();

    let mut y = p.initial.clone();
    // Sanity: the assembler must hand us a strictly feasible start.
    if (&eq_a * &y - &eq_b).norm() > 1e-8 {
        return Err(Error::Infeasible(
            "initial point violates equality constraints".into(),
        ));
    }

    // Least-norm projection back onto the equality manifold. The KKT
    // systems below grow ill-conditioned as the barrier sharpens and each
    // LU solve leaks a little equality error into the iterate; A·Aᵀ stays
    // well-conditioned, so this keeps the residual at roundoff level.
    let aat_lu = if meq > 0 {
        Some((&eq_a * eq_a.transpose()).lu())
    } else {
        None
    };
    // The correction is residual-sized (tiny against the cone margins),
    // but keep it guarded: only take a projection that stays in the cone.
    let project = |y: &mut DVector<Real>, blocks: &[SdpBlock]| {
        if let Some(lu) = &aat_lu {
            let resid = &eq_b - &eq_a * &*y;
            if let Some(lambda) = lu.solve(&resid) {
                let corrected = &*y + eq_a.transpose() * lambda;
                if blocks.iter().all(|b| b.eval(&corrected).cholesky().is_some()) {
                    *y = corrected;
                }
            }
        }
    };
    project(&mut y, &p.blocks);
    for blk in &p.blocks {
        if min_eig(&blk.eval(&y)) <= 0.0 {
            return Err(Error::Infeasible(
                "initial point is not strictly feasible".into(),
            ));
        }
    }

    let barrier = |y: &DVector<Real>, t: Real| -> Real {
        let mut f = -t * y[p.eps_index];
        for blk in &p.blocks {
            let x = blk.eval(y);
            match x.cholesky() {
                Some(ch) => {
                    f -= 2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<Real>()
                }
                None => return Real::INFINITY,
            }
        }
        f
    };

    let mut t = opts.t0;
    let mut newton_used = 0;
    loop {
        // Inner Newton loop at fixed t. A per-stage cap keeps a stalled
        // stage (Newton decrement pinned at its numerical floor) from
        // consuming the whole budget: the centering is then already as
        // accurate as the arithmetic allows and t can advance.
        let mut stage_newton = 0;
        loop {
            if newton_used >= opts.max_newton {
                return Err(Error::MaxIterations);
            }
            if stage_newton >= 100 {
                break;
            }
            newton_used += 1;
            stage_newton += 1;

            // Gradient and Hessian of the barrier.
            let mut grad = DVector::zeros(n);
            grad[p.eps_index] = -t;
            let mut hess = DMatrix::zeros(n, n);
            for blk in &p.blocks {
                let x = blk.eval(&y);
                let ch = x
                    .cholesky()
                    .ok_or(Error::Infeasible("iterate left the cone".into()))?;
                let xinv = ch.inverse();
                // W_j = X⁻¹ D_j; grad −= tr(W_j); Hessian via
                // tr(X⁻¹ D_i X⁻¹ D_j) = ⟨Xinv D_i, (Xinv D_j)ᵀ⟩.
                let ws: Vec<(usize, DMatrix<Real>)> = blk
                    .coeffs
                    .iter()
                    .map(|(j, d)| (*j, &xinv * d))
                    .collect();
                for (j, w) in &ws {
                    grad[*j] -= w.trace();
                }
                for (ii, (j1, w1)) in ws.iter().enumerate() {
                    let w1t = w1.transpose();
                    for (j2, w2) in ws.iter().skip(ii) {
                        let v = w1t.dot(w2);
                        hess[(*j1, *j2)] += v;
                        if j1 != j2 {
                            hess[(*j2, *j1)] += v;
                        }
                    }
                }
            }
            for i in 0..n {
                hess[(i, i)] += opts.reg;
            }

            // Equality-constrained Newton step via the KKT system.
            let dim = n + meq;
            let mut kkt = DMatrix::zeros(dim, dim);
            kkt.view_mut((0, 0), (n, n)).copy_from(&hess);
            if meq > 0 {
                kkt.view_mut((0, n), (n, meq)).copy_from(&eq_a.transpose());
                kkt.view_mut((n, 0), (meq, n)).copy_from(&eq_a);
            }
            let mut rhs = DVector::zeros(dim);
            rhs.rows_mut(0, n).copy_from(&(-&grad));
            if meq > 0 {
                // Infeasible-start form: the step also removes whatever
                // equality residual the assembled start carried over.
                rhs.rows_mut(n, meq).copy_from(&(&eq_b - &eq_a * &y));
            }
            let lu = kkt.clone().lu();
            let mut sol = lu
                .solve(&rhs)
                .ok_or(Error::Infeasible("singular KKT system".into()))?;
            // One iterative-refinement pass against the ill-conditioned
            // late-stage systems.
            let defect = &rhs - &kkt * &sol;
            if let Some(corr) = lu.solve(&defect) {
                sol += corr;
            }
            let dy = sol.rows(0, n).into_owned();

            let decrement = dy.dot(&(&hess * &dy));
            if decrement * 0.5 < 1e-10 {
                break;
            }

            // Backtracking: stay strictly inside the cone and require an
            // Armijo decrease.
            let f0 = barrier(&y, t);
            let slope = grad.dot(&dy);
            let mut alpha: Real = 1.0;
            let mut accepted = false;
            while alpha > 1e-12 {
                let trial = &y + &dy * alpha;
                let f1 = barrier(&trial, t);
                if f1.is_finite() && f1 <= f0 + 0.01 * alpha * slope {
                    // A vanishing realized decrease means the line search
                    // has hit floating-point resolution.
                    if f0 - f1 < 1e-12 * (1.0 + f0.abs()) {
                        accepted = false;
                    } else {
                        y = trial;
                        project(&mut y, &p.blocks);
                        accepted = true;
                    }
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
        }

        if total_dim as Real / t < opts.gap_tol {
            break;
        }
        t *= opts.mu;
    }

    let eps = y[p.eps_index];
    if eps <= opts.eps_tol {
        return Err(Error::Infeasible(format!(
            "no strictly feasible point: optimal slack {eps:.3e}"
        )));
    }
    Ok(SdpSolution { y, eps })
}

/// Upper cap `Q ⪯ νI` on the otherwise scale-free first problem.
const Q_CAP: Real = 10.0;

/// Gain budget `σ_max(H) ≤ ν` (as the block `[νI, H; Hᵀ, νI] ⪰ 0`).
/// Capping `Q` alone leaves `H` free to grow, which produces needlessly
/// aggressive initial gains `W{0} = vec(H*Q*⁻¹)`; the max-margin solution
/// then spends the whole budget, so the ratio to `Q_CAP` sets how
/// aggressive the initialization is allowed to be.
const H_CAP: Real = 4.0;

/// Variable layout of the first initialization problem.
#[derive(Debug, Clone)]
pub struct InitSdpLayout {
    pub d_z: usize,
    pub d_h: usize,
    pub d_s_block: usize,
    pub vertices: usize,
    pub q_offset: usize,
    pub h_offset: usize,
    pub s_offset: usize,
    pub eps_index: usize,
}

impl InitSdpLayout {
    fn new(bases: &SosBases, sys: &PolytopicSystem) -> Self {
        let d_z = bases.d_z();
        let d_h = bases.d_z_cap() * d_z;
        let d_s_block = bases.d_zeta() * d_z;
        let vertices = sys.vertex_count();
        let q_offset = 0;
        let h_offset = vech_len(d_z);
        let s_offset = h_offset + d_h;
        let eps_index = s_offset + vertices * vech_len(d_s_block);
        Self {
            d_z,
            d_h,
            d_s_block,
            vertices,
            q_offset,
            h_offset,
            s_offset,
            eps_index,
        }
    }

    pub fn n(&self) -> usize {
        self.eps_index + 1
    }

    pub fn q_of(&self, y: &DVector<Real>) -> DMatrix<Real> {
        let v = y.rows(self.q_offset, vech_len(self.d_z)).into_owned();
        crate::polyalg::unvech(&v, self.d_z).expect("layout dimensions are consistent")
    }

    pub fn h_of(&self, y: &DVector<Real>, d_z_cap: usize) -> DMatrix<Real> {
        let v = y.rows(self.h_offset, self.d_h).into_owned();
        crate::polyalg::inv_vec(&v, d_z_cap, self.d_z).expect("layout dimensions are consistent")
    }

    pub fn s_of(&self, y: &DVector<Real>, k: usize) -> DMatrix<Real> {
        let len = vech_len(self.d_s_block);
        let v = y.rows(self.s_offset + k * len, len).into_owned();
        crate::polyalg::unvech(&v, self.d_s_block).expect("layout dimensions are consistent")
    }
}

/// `Y_k(x,Q,H) = −(∂z/∂xᵀ)(F_k Q + G_k Z H)` as a polynomial matrix.
fn y_k_matrix(
    bases: &SosBases,
    sys: &PolytopicSystem,
    q: &DMatrix<Real>,
    h: &DMatrix<Real>,
    k: usize,
) -> Result<PolyMatrix<Real>> {
    let jac = PolyMatrix::jacobian_of_basis(bases.z());
    let inner = sys
        .f_vertex(k)
        .rmul_const(q)?
        .add(&sys.g_vertex(k).matmul(&bases.z_cap().rmul_const(h)?)?)?;
    Ok(jac.matmul(&inner)?.neg())
}

/// `(ζ ⊗ I)ᵀ S (ζ ⊗ I)` as a d_z×d_z polynomial matrix.
fn zeta_congruence(bases: &SosBases, s: &DMatrix<Real>) -> PolyMatrix<Real> {
    let d_z = bases.d_z();
    let d_zeta = bases.d_zeta();
    let nvars = bases.z().nvars();
    PolyMatrix::from_fn(d_z, d_z, nvars, |a, b| {
        let mut p = crate::Poly::zero(nvars);
        for i in 0..d_zeta {
            for j in 0..d_zeta {
                let v = s[(i * d_z + a, j * d_z + b)];
                if v != 0.0 {
                    p.add_term(
                        bases.zeta().entries()[i].mul(&bases.zeta().entries()[j]),
                        v,
                    );
                }
            }
        }
        p
    })
}

/// Coefficient vector of a symmetric d_z×d_z polynomial matrix over the
/// ζ⊗ζ product span: entries (a ≥ b) × monomials, flattened.
fn sym_polymat_coeffs(bases: &SosBases, m: &PolyMatrix<Real>) -> Result<DVector<Real>> {
    let d_z = m.nrows();
    let basis = nonredundant_zeta_products(bases);
    let nm = basis.len();
    let mut out = DVector::zeros(vech_len(d_z) * nm);
    for b in 0..d_z {
        for a in b..d_z {
            let c = match m.entry(a, b).extract_coefficients(&basis) {
                Ok(c) => c,
                Err(Error::UnrepresentableMonomial(mo)) => return Err(Error::BasisOverflow(mo)),
                Err(e) => return Err(e),
            };
            let row = vech_index(a, b, d_z);
            out.rows_mut(row * nm, nm).copy_from(&c);
        }
    }
    Ok(out)
}

fn nonredundant_zeta_products(bases: &SosBases) -> crate::polyalg::MonomialBasis {
    bases
        .zeta()
        .kron(bases.zeta())
        .expect("bases share the state arity")
        .non_redundant_form()
        .0
}

/// Assemble the first initialization problem:
/// maximize ε subject to `Y_k + Y_kᵀ = (ζ⊗I)ᵀ S_k (ζ⊗I)` (coefficient
/// matching), `S_k ⪰ εI`, `Q ⪰ εI`, and the boundedness caps
/// `Q ⪯ νI`, `σ_max(H) ≤ ν_H`.
pub fn assemble_init_sdp(
    bases: &SosBases,
    sys: &PolytopicSystem,
) -> Result<(SdpProblem, InitSdpLayout)> {
    let layout = InitSdpLayout::new(bases, sys);
    let d_z = layout.d_z;
    let d_s = layout.d_s_block;
    let n = layout.n();
    let kcount = layout.vertices;
    let nm = nonredundant_zeta_products(bases).len();
    let rows_per_k = vech_len(d_z) * nm;

    // Equality matrix: LHS(Q,H) − RHS(S_k) = 0 per vertex, assembled
    // column by column from unit directions.
    let mut eq_a = DMatrix::zeros(kcount * rows_per_k, n);
    let zero_q = DMatrix::zeros(d_z, d_z);
    let zero_h = DMatrix::zeros(bases.d_z_cap(), d_z);

    for k in 0..kcount {
        let row0 = k * rows_per_k;
        // Q directions.
        for jq in 0..vech_len(d_z) {
            let mut vq = DVector::zeros(vech_len(d_z));
            vq[jq] = 1.0;
            let dq = crate::polyalg::unvech(&vq, d_z)?;
            let y = y_k_matrix(bases, sys, &dq, &zero_h, k)?;
            let c = sym_polymat_coeffs(bases, &y.add(&y.transpose())?)?;
            for i in 0..rows_per_k {
                eq_a[(row0 + i, layout.q_offset + jq)] = c[i];
            }
        }
        // H directions.
        for jh in 0..layout.d_h {
            let mut vh = DVector::zeros(layout.d_h);
            vh[jh] = 1.0;
            let dh = crate::polyalg::inv_vec(&vh, bases.d_z_cap(), d_z)?;
            let y = y_k_matrix(bases, sys, &zero_q, &dh, k)?;
            let c = sym_polymat_coeffs(bases, &y.add(&y.transpose())?)?;
            for i in 0..rows_per_k {
                eq_a[(row0 + i, layout.h_offset + jh)] = c[i];
            }
        }
        // S_k directions (negative sign: LHS − RHS).
        for js in 0..vech_len(d_s) {
            let mut vs = DVector::zeros(vech_len(d_s));
            vs[js] = 1.0;
            let ds = crate::polyalg::unvech(&vs, d_s)?;
            let c = sym_polymat_coeffs(bases, &zeta_congruence(bases, &ds))?;
            let col = layout.s_offset + k * vech_len(d_s) + js;
            for i in 0..rows_per_k {
                eq_a[(row0 + i, col)] = -c[i];
            }
        }
    }
    let eq_b = DVector::zeros(kcount * rows_per_k);

    // Cone blocks.
    let mut blocks = Vec::new();
    let neg_i = |d: usize| -DMatrix::<Real>::identity(d, d);
    // Q − εI ⪰ 0.
    let mut q_coeffs = Vec::new();
    for jq in 0..vech_len(d_z) {
        let mut vq = DVector::zeros(vech_len(d_z));
        vq[jq] = 1.0;
        q_coeffs.push((layout.q_offset + jq, crate::polyalg::unvech(&vq, d_z)?));
    }
    let mut lower_q = q_coeffs.clone();
    lower_q.push((layout.eps_index, neg_i(d_z)));
    blocks.push(SdpBlock {
        dim: d_z,
        constant: DMatrix::zeros(d_z, d_z),
        coeffs: lower_q,
    });
    // νI − Q ⪰ 0.
    blocks.push(SdpBlock {
        dim: d_z,
        constant: DMatrix::identity(d_z, d_z) * Q_CAP,
        coeffs: q_coeffs.iter().map(|(j, d)| (*j, -d)).collect(),
    });
    // [ν_H I, H; Hᵀ, ν_H I] ⪰ 0, i.e. σ_max(H) ≤ ν_H.
    let d_zc = bases.d_z_cap();
    let d_gain = d_zc + d_z;
    let mut h_coeffs = Vec::new();
    for jh in 0..layout.d_h {
        let mut vh = DVector::zeros(layout.d_h);
        vh[jh] = 1.0;
        let dh = crate::polyalg::inv_vec(&vh, d_zc, d_z)?;
        let mut m = DMatrix::zeros(d_gain, d_gain);
        m.view_mut((0, d_zc), (d_zc, d_z)).copy_from(&dh);
        m.view_mut((d_zc, 0), (d_z, d_zc)).copy_from(&dh.transpose());
        h_coeffs.push((layout.h_offset + jh, m));
    }
    blocks.push(SdpBlock {
        dim: d_gain,
        constant: DMatrix::identity(d_gain, d_gain) * H_CAP,
        coeffs: h_coeffs,
    });
    // S_k − εI ⪰ 0.
    for k in 0..kcount {
        let mut coeffs = Vec::new();
        for js in 0..vech_len(d_s) {
            let mut vs = DVector::zeros(vech_len(d_s));
            vs[js] = 1.0;
            coeffs.push((
                layout.s_offset + k * vech_len(d_s) + js,
                crate::polyalg::unvech(&vs, d_s)?,
            ));
        }
        coeffs.push((layout.eps_index, neg_i(d_s)));
        blocks.push(SdpBlock {
            dim: d_s,
            constant: DMatrix::zeros(d_s, d_s),
            coeffs,
        });
    }

    // Strictly feasible start: Q = I, H = 0, S_k the least-norm Gram of
    // Y_k + Y_kᵀ, ε below every block's smallest eigenvalue.
    let mut initial = DVector::zeros(n);
    let q0 = DMatrix::identity(d_z, d_z);
    initial
        .rows_mut(layout.q_offset, vech_len(d_z))
        .copy_from(&crate::polyalg::vech(&q0, 1e-12)?);
    // Coefficient map of the S-congruence, reused per vertex.
    let mut s_map = DMatrix::zeros(rows_per_k, vech_len(d_s));
    for js in 0..vech_len(d_s) {
        let mut vs = DVector::zeros(vech_len(d_s));
        vs[js] = 1.0;
        let ds = crate::polyalg::unvech(&vs, d_s)?;
        s_map
            .column_mut(js)
            .copy_from(&sym_polymat_coeffs(bases, &zeta_congruence(bases, &ds))?);
    }
    let svd = s_map.clone().svd(true, true);
    let mut s_min: Real = 0.0;
    for k in 0..kcount {
        let y = y_k_matrix(bases, sys, &q0, &zero_h, k)?;
        let rhs = sym_polymat_coeffs(bases, &y.add(&y.transpose())?)?;
        let vs = svd
            .solve(&rhs, 1e-12)
            .map_err(|e| Error::Infeasible(format!("Gram least-norm solve failed: {e}")))?;
        let resid = (&s_map * &vs - &rhs).norm();
        if resid > 1e-8 {
            return Err(Error::BasisOverflow(format!(
                "vertex {k}: Y_k + Y_kᵀ is not representable over ζ⊗ζ (residual {resid:.3e})"
            )));
        }
        let s0 = crate::polyalg::unvech(&vs, d_s)?;
        s_min = s_min.min(min_eig(&s0));
        initial
            .rows_mut(layout.s_offset + k * vech_len(d_s), vech_len(d_s))
            .copy_from(&vs);
    }
    let mut min_block_eig = Q_CAP - 1.0; // cap block at Q = I.
    min_block_eig = min_block_eig.min(1.0); // Q block at ε = 0.
    min_block_eig = min_block_eig.min(s_min); // S blocks.
    min_block_eig = min_block_eig.min(H_CAP); // gain block at H = 0.
    initial[layout.eps_index] = min_block_eig - 0.1 * (1.0 + min_block_eig.abs());

    Ok((
        SdpProblem {
            n,
            eps_index: layout.eps_index,
            eq_a,
            eq_b,
            blocks,
            initial,
        },
        layout,
    ))
}

/// Assemble and solve the free-coordinate problem:
/// maximize ε₂ subject to `T_k(W{0}, P{0}, r_k) ⪰ ε₂ I` for every vertex
/// (T is affine in r, so the blocks are exactly linear).
pub fn solve_r_sdp(
    structure: &SosStructure,
    bases: &SosBases,
    sys: &PolytopicSystem,
    w0: &DVector<Real>,
    p0: &DMatrix<Real>,
    opts: &SdpOptions,
) -> Result<(DMatrix<Real>, Real)> {
    let d_r = structure.d_r();
    let kcount = sys.vertex_count();
    let d_xi = bases.d_xi();
    let n = d_r * kcount + 1;
    let eps_index = n - 1;

    let zero_r = DVector::zeros(d_r);
    let mut blocks = Vec::with_capacity(kcount);
    let mut min_eig0 = Real::INFINITY;
    for k in 0..kcount {
        let t0 = soscert::solve_t_k(structure, bases, sys, w0, p0, &zero_r, k)?;
        min_eig0 = min_eig0.min(min_eig(&t0));
        let mut coeffs: Vec<(usize, DMatrix<Real>)> = (0..d_r)
            .map(|m| {
                let dir = soscert::solve_t_k(
                    structure,
                    bases,
                    sys,
                    w0,
                    p0,
                    &DVector::from_fn(d_r, |i, _| if i == m { 1.0 } else { 0.0 }),
                    k,
                )
                .map(|t| t - &t0);
                dir.map(|d| (k * d_r + m, d))
            })
            .collect::<Result<_>>()?;
        coeffs.push((eps_index, -DMatrix::<Real>::identity(d_xi, d_xi)));
        blocks.push(SdpBlock {
            dim: d_xi,
            constant: t0,
            coeffs,
        });
    }

    let mut initial = DVector::zeros(n);
    initial[eps_index] = min_eig0 - 0.1 * (1.0 + min_eig0.abs());

    let problem = SdpProblem {
        n,
        eps_index,
        eq_a: DMatrix::zeros(0, n),
        eq_b: DVector::zeros(0),
        blocks,
        initial,
    };
    let sol = solve_sdp(&problem, opts)?;
    let r = DMatrix::from_fn(d_r, kcount, |m, k| sol.y[k * d_r + m]);
    Ok((r, sol.eps))
}

/// The initial decision variables of the gradient loop.
#[derive(Debug, Clone)]
pub struct InitResult {
    pub q: DMatrix<Real>,
    pub h: DMatrix<Real>,
    pub eps1: Real,
    pub r: DMatrix<Real>,
    pub eps2: Real,
    pub w0: DVector<Real>,
    pub p0: DMatrix<Real>,
}

/// `W{0} = vec(H Q⁻¹)`, `P{0} = Q⁻¹`.
pub fn initial_variables(q: &DMatrix<Real>, h: &DMatrix<Real>) -> Result<(DVector<Real>, DMatrix<Real>)> {
    let q_inv = q
        .clone()
        .cholesky()
        .ok_or(Error::Infeasible("Q is not positive definite".into()))?
        .inverse();
    let w0 = vec_mat(&(h * &q_inv));
    Ok((w0, q_inv))
}

/// Run the full initialization chain: first problem, variable assembly,
/// then the free-coordinate problem.
pub fn initialize(
    bases: &SosBases,
    structure: &SosStructure,
    sys: &PolytopicSystem,
    opts: &SdpOptions,
) -> Result<InitResult> {
    let (problem, layout) = assemble_init_sdp(bases, sys)?;
    let sol = solve_sdp(&problem, opts)?;
    let q = layout.q_of(&sol.y);
    let h = layout.h_of(&sol.y, bases.d_z_cap());
    let (w0, p0) = initial_variables(&q, &h)?;
    let (r, eps2) = solve_r_sdp(structure, bases, sys, &w0, &p0, opts)?;
    Ok(InitResult {
        q,
        h,
        eps1: sol.eps,
        r,
        eps2,
        w0,
        p0,
    })
}

/// Plain structured-text dump of an assembled problem for cross-checking
/// against an external solver.
#[derive(Serialize)]
struct SdpDump {
    n: usize,
    eps_index: usize,
    equalities: Vec<(usize, usize, Real)>,
    eq_rhs: Vec<Real>,
    blocks: Vec<SdpBlockDump>,
}

#[derive(Serialize)]
struct SdpBlockDump {
    dim: usize,
    constant: Vec<(usize, usize, Real)>,
    coeffs: Vec<(usize, Vec<(usize, usize, Real)>)>,
}

fn triplets(m: &DMatrix<Real>) -> Vec<(usize, usize, Real)> {
    let mut out = Vec::new();
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if m[(i, j)] != 0.0 {
                out.push((i, j, m[(i, j)]));
            }
        }
    }
    out
}

impl SdpProblem {
    pub fn dump(&self, path: &Path) -> Result<()> {
        let dump = SdpDump {
            n: self.n,
            eps_index: self.eps_index,
            equalities: triplets(&self.eq_a),
            eq_rhs: self.eq_b.iter().copied().collect(),
            blocks: self
                .blocks
                .iter()
                .map(|b| SdpBlockDump {
                    dim: b.dim,
                    constant: triplets(&b.constant),
                    coeffs: b.coeffs.iter().map(|(j, d)| (*j, triplets(d))).collect(),
                })
                .collect(),
        };
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(f, &dump)?;
        Ok(())
    }
}
