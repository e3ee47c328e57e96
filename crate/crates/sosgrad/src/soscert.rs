//! SOS stability machinery.
//!
//! The Lyapunov candidate is `V(x) = z(x)ᵀ P z(x)`. Along closed-loop
//! trajectories its rate at vertex k is `−2 zᵀ U_k z` with
//! `U_k(x,P,w) = −((P+Pᵀ)/2)·(∂z/∂xᵀ)·(F_k(x) + G_k(x) Z(x) inv_vec(w))`,
//! so robust global asymptotic stability is certified when each quadratic
//! form `zᵀU_kz` is strictly SOS over the product basis ξ (the
//! non-redundant form of ζ⊗z): `zᵀU_kz = ξᵀT_kξ` with `T_k ≻ 0`.
//!
//! Matching coefficients over the distinct product monomials z̃ determines
//! most of `T_k`; duplicated products leave `d_r` free coordinates per
//! vertex, collected in `r_k`, and the resulting `T_k(w,P,r_k)` is the
//! unique symmetric solution of the polynomial identity with those free
//! coordinates pinned — bilinear in `(w,P)` and affine in `r_k`. The
//! log-barrier penalty `ρ = −κ·ln(det((P+Pᵀ)/2)·∏_k det T_k)` (clamped to
//! `ρ_ub` off the feasible branch) turns the strict-PD certificate into a
//! differentiable objective term.

use nalgebra::{DMatrix, DVector};

use crate::error::Error;
use crate::polyalg::{inv_vec, vech_index, vech_len, MonomialBasis, PolyMatrix};
use crate::sysmodel::PolytopicSystem;
use crate::{Real, Result};

/// Strict-PD tolerance: eigenvalues must exceed this to count as feasible.
const PD_TOL: Real = 1e-12;

/// The monomial bases of the SOS decomposition.
#[derive(Debug, Clone)]
pub struct SosBases {
    /// Strict basis z (d_z), shared with the plant.
    z: MonomialBasis,
    /// Multiplier basis ζ (d_ζ) with first entry 1.
    zeta: MonomialBasis,
    /// Input-structure rows Z(x) (d_u × d_Z).
    z_cap: PolyMatrix<Real>,
    /// Non-redundant form of ζ⊗z (d_ξ).
    xi: MonomialBasis,
    /// Non-redundant form of the ζ⊗ζ product list, the span U_k entries
    /// must decompose over.
    zeta_products: MonomialBasis,
    /// Symbolic ∂z/∂xᵀ (d_z × d_x).
    z_jacobian: PolyMatrix<Real>,
}

impl SosBases {
    pub fn new(z: MonomialBasis, zeta: MonomialBasis, z_cap: PolyMatrix<Real>) -> Result<Self> {
        if !z.is_strict() {
            return Err(Error::BadConfig(format!(
                "basis {} must be strict",
                z.name()
            )));
        }
        if !zeta.entries()[0].is_constant() {
            return Err(Error::BadConfig(format!(
                "multiplier basis {} must have 1 as its first entry",
                zeta.name()
            )));
        }
        let (xi, _) = zeta.kron(&z)?.non_redundant_form();
        let (zeta_products, _) = zeta.kron(&zeta)?.non_redundant_form();
        let z_jacobian = PolyMatrix::jacobian_of_basis(&z);
        Ok(Self {
            z,
            zeta,
            z_cap,
            xi,
            zeta_products,
            z_jacobian,
        })
    }

    pub fn z(&self) -> &MonomialBasis {
        &self.z
    }

    pub fn zeta(&self) -> &MonomialBasis {
        &self.zeta
    }

    pub fn z_cap(&self) -> &PolyMatrix<Real> {
        &self.z_cap
    }

    pub fn xi(&self) -> &MonomialBasis {
        &self.xi
    }

    pub fn d_z(&self) -> usize {
        self.z.len()
    }

    pub fn d_zeta(&self) -> usize {
        self.zeta.len()
    }

    pub fn d_xi(&self) -> usize {
        self.xi.len()
    }

    pub fn d_z_cap(&self) -> usize {
        self.z_cap.ncols()
    }

    /// Controller gain dimension d_w = d_Z·d_z.
    pub fn d_w(&self) -> usize {
        self.z_cap.ncols() * self.z.len()
    }
}

/// One distinct product monomial of ξξᵀ: the half-vectorization positions
/// carrying it, split into the determined representative and the free
/// extras.
#[derive(Debug, Clone)]
struct ProductGroup {
    /// vech position whose T-entry is determined by the coefficient match.
    rep: usize,
    /// Duplication scaling of the representative (1 on the diagonal, 2 off).
    rep_scale: Real,
    /// Free positions: (vech position, r index, duplication scaling).
    extras: Vec<(usize, usize, Real)>,
}

/// Precomputed index/scaling maps turning the T_k reconstruction into a
/// fixed linear-map evaluation.
///
/// The diagonal duplication scaling (the entries 1 and 2 relating the
/// z̃-coefficients of ξᵀTξ to vech(T)), the selection of distinct product
/// monomials, and the permutation splitting determined from free
/// coordinates are all folded into the per-monomial [`ProductGroup`]
/// table; `cr` and the 0/1 selection matrix `C_r` recover the free
/// coordinates exactly.
#[derive(Debug, Clone)]
pub struct SosStructure {
    d_xi: usize,
    /// Distinct product monomials of ξξᵀ, in first-occurrence order.
    ztilde: MonomialBasis,
    groups: Vec<ProductGroup>,
    /// Free T-entries (i, j) with i > j, in r order.
    free_entries: Vec<(usize, usize)>,
    /// Constant directions ∂T/∂r_m (shared by all vertices).
    r_directions: Vec<DMatrix<Real>>,
}

/// Build the structure maps from the bases.
///
/// Representative choice within a duplicated product monomial: a diagonal
/// occurrence if one exists, otherwise the first occurrence in vech
/// order. Free-coordinate order: extras whose representative is diagonal
/// first, then by vech position.
pub fn build_structure(bases: &SosBases) -> Result<SosStructure> {
    let n = bases.d_xi();
    let xi = bases.xi().entries();

    // Group vech positions by their product monomial, keeping
    // first-occurrence order of the monomials.
    let mut monomials = Vec::new();
    let mut members: Vec<Vec<(usize, usize, usize)>> = Vec::new(); // (pos, i, j)
    for j in 0..n {
        for i in j..n {
            let m = xi[i].mul(&xi[j]);
            let p = vech_index(i, j, n);
            match monomials.iter().position(|x| *x == m) {
                Some(g) => members[g].push((p, i, j)),
                None => {
                    monomials.push(m);
                    members.push(vec![(p, i, j)]);
                }
            }
        }
    }
    let ztilde = MonomialBasis::new("ztilde", monomials)?;

    // Pick representatives and collect the free extras.
    let scale = |i: usize, j: usize| if i == j { 1.0 } else { 2.0 };
    let mut raw_groups = Vec::with_capacity(members.len());
    let mut extras_diag_rep = Vec::new();
    let mut extras_other = Vec::new();
    for mem in &members {
        let rep_slot = mem
            .iter()
            .position(|&(_, i, j)| i == j)
            .unwrap_or(0);
        let (rep, ri, rj) = mem[rep_slot];
        let extras: Vec<(usize, usize, usize)> = mem
            .iter()
            .enumerate()
            .filter(|&(s, _)| s != rep_slot)
            .map(|(_, &e)| e)
            .collect();
        for &(p, i, j) in &extras {
            if ri == rj {
                extras_diag_rep.push((p, i, j));
            } else {
                extras_other.push((p, i, j));
            }
        }
        raw_groups.push((rep, scale(ri, rj), extras));
    }
    extras_diag_rep.sort_by_key(|&(p, _, _)| p);
    extras_other.sort_by_key(|&(p, _, _)| p);
    let ordered_extras: Vec<(usize, usize, usize)> = extras_diag_rep
        .into_iter()
        .chain(extras_other)
        .collect();
    let r_index_of = |pos: usize| {
        ordered_extras
            .iter()
            .position(|&(p, _, _)| p == pos)
            .expect("every extra position was collected")
    };

    let groups: Vec<ProductGroup> = raw_groups
        .into_iter()
        .map(|(rep, rep_scale, extras)| ProductGroup {
            rep,
            rep_scale,
            extras: extras
                .into_iter()
                .map(|(p, i, j)| (p, r_index_of(p), scale(i, j)))
                .collect(),
        })
        .collect();

    let free_entries: Vec<(usize, usize)> = ordered_extras.iter().map(|&(_, i, j)| (i, j)).collect();

    // ∂T/∂r_m: the extra entry follows r_m one-to-one, and its group
    // representative compensates to keep the coefficient match at zero.
    let d_r = free_entries.len();
    let mut r_directions = Vec::with_capacity(d_r);
    for m in 0..d_r {
        let mut vech_dir = DVector::zeros(vech_len(n));
        for g in &groups {
            for &(p, idx, s) in &g.extras {
                if idx == m {
                    vech_dir[p] = 1.0;
                    vech_dir[g.rep] -= s / g.rep_scale;
                }
            }
        }
        r_directions.push(crate::polyalg::unvech(&vech_dir, n)?);
    }

    Ok(SosStructure {
        d_xi: n,
        ztilde,
        groups,
        free_entries,
        r_directions,
    })
}

impl SosStructure {
    /// Number of free T-coordinates per vertex.
    pub fn d_r(&self) -> usize {
        self.free_entries.len()
    }

    /// The distinct product monomials z̃ in decomposition order.
    pub fn ztilde(&self) -> &MonomialBasis {
        &self.ztilde
    }

    /// The free T-entries (i, j), zero-based, in r order.
    pub fn free_entries(&self) -> &[(usize, usize)] {
        &self.free_entries
    }

    /// The scalar c_r of the constraint `C_r vech(T) = c_r·r`: 1 when free
    /// coordinates exist, 0 otherwise.
    pub fn cr_scalar(&self) -> Real {
        if self.free_entries.is_empty() {
            0.0
        } else {
            1.0
        }
    }

    /// The 0/1 selection matrix C_r (d_r × vech_len) picking the free
    /// coordinates out of vech(T).
    pub fn cr_matrix(&self) -> DMatrix<Real> {
        let mut c = DMatrix::zeros(self.d_r(), vech_len(self.d_xi));
        for (m, &(i, j)) in self.free_entries.iter().enumerate() {
            c[(m, vech_index(i, j, self.d_xi))] = 1.0;
        }
        c
    }

    /// The diagonal duplication scaling M_a relating the z̃-coefficients of
    /// ξᵀTξ to vech(T).
    pub fn ma_diagonal(&self) -> DVector<Real> {
        crate::polyalg::vech_scaling(self.d_xi)
    }
}

/// The Gram-form vertex matrix
/// `U_k(x,P,w) = −((P+Pᵀ)/2)·(∂z/∂xᵀ)·(F_k + G_k Z inv_vec(w))`,
/// with every entry checked to decompose over ζ⊗ζ products.
pub fn build_u_k(
    bases: &SosBases,
    sys: &PolytopicSystem,
    p: &DMatrix<Real>,
    w: &DVector<Real>,
    k: usize,
) -> Result<PolyMatrix<Real>> {
    let w_mat = inv_vec(w, bases.d_z_cap(), bases.d_z())?;
    let gain = bases.z_cap.rmul_const(&w_mat)?;
    let closed = sys.f_vertex(k).add(&sys.g_vertex(k).matmul(&gain)?)?;
    let u = build_u_from_closed(bases, p, &closed)?;
    check_zeta_span(bases, &u)?;
    Ok(u)
}

/// The U contribution of a closed-loop factor matrix (F_k + G_k·gain):
/// `−P̄·(∂z/∂xᵀ)·closed`. Split out so directional derivatives can build
/// single-term variants.
fn build_u_from_closed(
    bases: &SosBases,
    p: &DMatrix<Real>,
    closed: &PolyMatrix<Real>,
) -> Result<PolyMatrix<Real>> {
    let p_bar = (p + p.transpose()) * 0.5;
    bases
        .z_jacobian
        .matmul(closed)?
        .lmul_const(&p_bar)
        .map(|m| m.neg())
}

fn check_zeta_span(bases: &SosBases, u: &PolyMatrix<Real>) -> Result<()> {
    for i in 0..u.nrows() {
        for j in 0..u.ncols() {
            if let Err(Error::UnrepresentableMonomial(m)) =
                u.entry(i, j).extract_coefficients(&bases.zeta_products)
            {
                return Err(Error::BasisOverflow(m));
            }
        }
    }
    Ok(())
}

/// Coefficients of zᵀUz over z̃.
fn quadratic_coefficients(
    bases: &SosBases,
    structure: &SosStructure,
    u: &PolyMatrix<Real>,
) -> Result<DVector<Real>> {
    let z_row = PolyMatrix::row_from_basis(&bases.z);
    let quad = z_row.matmul(u)?.matmul(&z_row.transpose())?;
    match quad.entry(0, 0).extract_coefficients(&structure.ztilde) {
        Ok(c) => Ok(c),
        Err(Error::UnrepresentableMonomial(m)) => Err(Error::BasisOverflow(m)),
        Err(e) => Err(e),
    }
}

/// The unique symmetric `T` with `ξᵀTξ ≡ zᵀUz` and the free coordinates
/// pinned to `r_k`.
fn solve_t_from_u(
    bases: &SosBases,
    structure: &SosStructure,
    u: &PolyMatrix<Real>,
    r_k: &DVector<Real>,
) -> Result<DMatrix<Real>> {
    if r_k.len() != structure.d_r() {
        return Err(Error::DimensionMismatch {
            context: "free-coordinate vector length",
            expected: structure.d_r(),
            got: r_k.len(),
        });
    }
    let c = quadratic_coefficients(bases, structure, u)?;
    let n = structure.d_xi;
    let mut vech_t = DVector::zeros(vech_len(n));
    for (g, &cg) in structure.groups.iter().zip(c.iter()) {
        let mut rep_val = cg;
        for &(p, idx, s) in &g.extras {
            vech_t[p] = r_k[idx];
            rep_val -= s * r_k[idx];
        }
        vech_t[g.rep] = rep_val / g.rep_scale;
    }
    crate::polyalg::unvech(&vech_t, n)
}

/// T_k(w, P, r_k): the Gram matrix of the vertex-k Lyapunov rate over ξ.
pub fn solve_t_k(
    structure: &SosStructure,
    bases: &SosBases,
    sys: &PolytopicSystem,
    w: &DVector<Real>,
    p: &DMatrix<Real>,
    r_k: &DVector<Real>,
    k: usize,
) -> Result<DMatrix<Real>> {
    let u = build_u_k(bases, sys, p, w, k)?;
    solve_t_from_u(bases, structure, &u, r_k)
}

fn symmetrize(p: &DMatrix<Real>) -> DMatrix<Real> {
    (p + p.transpose()) * 0.5
}

/// Eigenvalues of a symmetric matrix, ascending.
fn sym_eigenvalues(m: &DMatrix<Real>) -> DVector<Real> {
    let mut ev = m.clone().symmetric_eigenvalues();
    ev.as_mut_slice()
        .sort_by(|a, b| a.partial_cmp(b).expect("symmetric eigenvalues are finite"));
    ev
}

/// Feasibility data for one (w, P, r) point: symmetrized P, all T_k, and
/// their minimum eigenvalues.
#[derive(Debug, Clone)]
pub struct Certificate {
    pub p_bar: DMatrix<Real>,
    pub t: Vec<DMatrix<Real>>,
    pub p_min_eig: Real,
    pub t_min_eigs: Vec<Real>,
}

impl Certificate {
    pub fn feasible(&self) -> bool {
        self.p_min_eig > PD_TOL && self.t_min_eigs.iter().all(|&e| e > PD_TOL)
    }
}

/// Assemble the full certificate at (w, P, r); `r` holds one column per
/// vertex (d_r × K).
pub fn certificate(
    structure: &SosStructure,
    bases: &SosBases,
    sys: &PolytopicSystem,
    w: &DVector<Real>,
    p: &DMatrix<Real>,
    r: &DMatrix<Real>,
) -> Result<Certificate> {
    let p_bar = symmetrize(p);
    let mut t = Vec::with_capacity(sys.vertex_count());
    let mut t_min_eigs = Vec::with_capacity(sys.vertex_count());
    for k in 0..sys.vertex_count() {
        let t_k = solve_t_k(structure, bases, sys, w, p, &r.column(k).into_owned(), k)?;
        t_min_eigs.push(sym_eigenvalues(&t_k)[0]);
        t.push(t_k);
    }
    let p_min_eig = sym_eigenvalues(&p_bar)[0];
    Ok(Certificate {
        p_bar,
        t,
        p_min_eig,
        t_min_eigs,
    })
}

/// The log-barrier stability penalty
/// `ρ(w,P,r) = −κ·ln(det((P+Pᵀ)/2)·∏_k det T_k)` when all those matrices
/// are strictly positive definite, and exactly `ρ_ub` otherwise.
pub fn penalty(
    structure: &SosStructure,
    bases: &SosBases,
    sys: &PolytopicSystem,
    w: &DVector<Real>,
    p: &DMatrix<Real>,
    r: &DMatrix<Real>,
    kappa: Real,
    rho_ub: Real,
) -> Result<Real> {
    let cert = certificate(structure, bases, sys, w, p, r)?;
    if !cert.feasible() {
        return Ok(rho_ub);
    }
    let mut log_det = log_det_pd(&cert.p_bar);
    for t_k in &cert.t {
        log_det += log_det_pd(t_k);
    }
    Ok(-kappa * log_det)
}

/// ln det of a PD symmetric matrix via its eigenvalues.
fn log_det_pd(m: &DMatrix<Real>) -> Real {
    sym_eigenvalues(m).iter().map(|e| e.ln()).sum()
}

/// Gradient of the penalty on the feasible branch, via
/// `∂(−κ ln det X)/∂s = −κ·tr(X⁻¹ ∂X/∂s)` chained through the
/// bilinear/affine structure of T_k.
///
/// P is stored unsymmetrized but enters only through (P+Pᵀ)/2, so the
/// returned `grad_p` is the symmetrized-chain-rule gradient (symmetric in
/// (i,j); the antisymmetric part of P is flat).
pub fn penalty_gradient(
    structure: &SosStructure,
    bases: &SosBases,
    sys: &PolytopicSystem,
    w: &DVector<Real>,
    p: &DMatrix<Real>,
    r: &DMatrix<Real>,
    kappa: Real,
) -> Result<(DVector<Real>, DMatrix<Real>, DMatrix<Real>)> {
    let cert = certificate(structure, bases, sys, w, p, r)?;
    if !cert.feasible() {
        return Err(Error::InfeasiblePoint);
    }
    let kcount = sys.vertex_count();
    let d_z = bases.d_z();
    let d_w = bases.d_w();
    let d_r = structure.d_r();

    let p_bar_inv = cert
        .p_bar
        .clone()
        .cholesky()
        .expect("feasible branch implies PD")
        .inverse();
    let t_inv: Vec<DMatrix<Real>> = cert
        .t
        .iter()
        .map(|t_k| {
            t_k.clone()
                .cholesky()
                .expect("feasible branch implies PD")
                .inverse()
        })
        .collect();

    let zero_r = DVector::zeros(d_r);
    let w_mat = inv_vec(w, bases.d_z_cap(), d_z)?;
    let gain = bases.z_cap.rmul_const(&w_mat)?;

    // w-block: ∂T_k/∂w_j is T built from the input half alone at gain
    // direction e_j (U is linear in w for fixed P).
    let mut grad_w = DVector::zeros(d_w);
    for j in 0..d_w {
        let mut e_j = DVector::zeros(d_w);
        e_j[j] = 1.0;
        let dir_gain = bases
            .z_cap
            .rmul_const(&inv_vec(&e_j, bases.d_z_cap(), d_z)?)?;
        for k in 0..kcount {
            let du = build_u_from_closed(bases, p, &sys.g_vertex(k).matmul(&dir_gain)?)?;
            let dt = solve_t_from_u(bases, structure, &du, &zero_r)?;
            grad_w[j] -= kappa * (&t_inv[k] * dt).trace();
        }
    }

    // P-block: the barrier's own log-det term plus the T_k chain (U is
    // linear in P̄; ∂P̄/∂P_ij = (E_ij + E_ji)/2).
    let jac_closed: Vec<PolyMatrix<Real>> = (0..kcount)
        .map(|k| {
            let closed = sys.f_vertex(k).add(&sys.g_vertex(k).matmul(&gain)?)?;
            bases.z_jacobian.matmul(&closed)
        })
        .collect::<Result<_>>()?;
    let mut grad_p = -kappa * &p_bar_inv;
    for i in 0..d_z {
        for j in 0..d_z {
            let mut dp = DMatrix::zeros(d_z, d_z);
            dp[(i, j)] += 0.5;
            dp[(j, i)] += 0.5;
            for k in 0..kcount {
                let du = jac_closed[k].lmul_const(&dp)?.neg();
                let dt = solve_t_from_u(bases, structure, &du, &zero_r)?;
                grad_p[(i, j)] -= kappa * (&t_inv[k] * dt).trace();
            }
        }
    }

    // r-block: constant directions per free coordinate.
    let mut grad_r = DMatrix::zeros(d_r, kcount);
    for k in 0..kcount {
        for m in 0..d_r {
            grad_r[(m, k)] = -kappa * (&t_inv[k] * &structure.r_directions[m]).trace();
        }
    }

    Ok((grad_w, grad_p, grad_r))
}

/// V(x) = z(x)ᵀ P z(x).
pub fn lyapunov_eval(bases: &SosBases, p: &DMatrix<Real>, x: &[Real]) -> Result<Real> {
    let z = bases.z.eval(x)?;
    Ok((&z.transpose() * p * &z)[(0, 0)])
}

/// V̇ through the Gram decomposition: `−2 Σ_k h_k(θ) z(x)ᵀ U_k z(x)`.
pub fn lyapunov_rate(
    bases: &SosBases,
    sys: &PolytopicSystem,
    w: &DVector<Real>,
    p: &DMatrix<Real>,
    x: &[Real],
    theta: &[Real],
) -> Result<Real> {
    let h = sys.weights_eval(theta)?;
    let z = bases.z.eval(x)?;
    let mut rate = 0.0;
    for k in 0..sys.vertex_count() {
        if h[k] != 0.0 {
            let u_k = build_u_k(bases, sys, p, w, k)?.eval(x)?;
            rate -= 2.0 * h[k] * (&z.transpose() * u_k * &z)[(0, 0)];
        }
    }
    Ok(rate)
}

/// V̇ as the directional derivative `(∂V/∂x)·ẋ` with ẋ from the plant
/// under an arbitrary controller; used as the independent cross-check of
/// [`lyapunov_rate`] and for trajectory monitoring.
pub fn lyapunov_rate_directional(
    bases: &SosBases,
    sys: &PolytopicSystem,
    controller: &dyn Fn(&[Real]) -> DVector<Real>,
    p: &DMatrix<Real>,
    x: &[Real],
    theta: &[Real],
) -> Result<Real> {
    let p_bar = symmetrize(p);
    let z = bases.z.eval(x)?;
    let jac = bases.z.jacobian(x)?;
    let rhs = sys.closed_loop_rhs(controller, x, theta)?;
    Ok(2.0 * (z.transpose() * p_bar * jac * rhs)[(0, 0)])
}
