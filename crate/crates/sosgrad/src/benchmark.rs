//! The built-in two-state benchmark plant and its synthesis setup.
//!
//! Dynamics (state x = [x1, x2], scalar input, parameter θ ∈ [0,1]²):
//!
//! ```text
//! ẋ1 = x1 + x1² + (θ1 − 2)x1³ − x1x2²/2 + x2
//! ẋ2 = (θ2 + 1)x1 + x2²          +  [θ1, θ2 + 1]ᵀ u
//! ```
//!
//! θ is drawn uniformly from {0, 0.1, 0.9, 1.0}² and fixed for all time;
//! the vertex systems are the dynamics frozen at the four corners of
//! [0,1]², blended by the bilinear corner weights. The initial state is
//! uniform on {−3, 0, 3}² minus the origin. The cost uses q(x) = xᵀx and
//! R = 10 with value features φ spanning all monomials of degree 1..6,
//! and the fit measure is the Dirac sum over the grid {−3 : 0.1 : 3}².

use nalgebra::DMatrix;

use crate::costfit::{CostModel, WeightMeasure};
use crate::optimize::OptimizerConfig;
use crate::polyalg::{Monomial, MonomialBasis, PolyMatrix};
use crate::simulate::SimConfig;
use crate::soscert::SosBases;
use crate::sysmodel::{
    InitialStateDistribution, PolytopicSystem, ThetaDistribution, WeightFamily,
};
use crate::{Poly, Real};

fn poly(terms: &[(Real, [u32; 2])]) -> Poly {
    let mut p = Poly::zero(2);
    for &(c, e) in terms {
        p.add_term(Monomial::new(e.to_vec()), c);
    }
    p
}

/// The strict basis z(x) = [x1, x2].
pub fn z_basis() -> MonomialBasis {
    MonomialBasis::linear("z", 2)
}

/// The multiplier basis ζ(x) = [1, x1, x2].
pub fn zeta_basis() -> MonomialBasis {
    MonomialBasis::all_monomials("zeta", 2, 0, 1).expect("fixed basis construction")
}

/// The input-structure basis Z(x): all monomials of degree ≤ 2.
pub fn z_cap_basis() -> MonomialBasis {
    MonomialBasis::all_monomials("Z", 2, 0, 2).expect("fixed basis construction")
}

/// Value features φ: all monomials of degree 1..6 (27 entries).
pub fn phi_basis() -> MonomialBasis {
    MonomialBasis::all_monomials("phi", 2, 1, 6).expect("fixed basis construction")
}

/// Drift factor F(x,θ) at a fixed parameter point, so that
/// F(x,θ)·z(x) is the drift above.
fn f_at(theta: [Real; 2]) -> PolyMatrix<Real> {
    let [t1, t2] = theta;
    PolyMatrix::from_fn(2, 2, 2, |i, j| match (i, j) {
        (0, 0) => poly(&[(1.0, [0, 0]), (1.0, [1, 0]), (t1 - 2.0, [2, 0]), (-0.5, [0, 2])]),
        (0, 1) => poly(&[(1.0, [0, 0])]),
        (1, 0) => poly(&[(t2 + 1.0, [0, 0])]),
        (1, 1) => poly(&[(1.0, [0, 1])]),
        _ => unreachable!(),
    })
}

fn g_at(theta: [Real; 2]) -> PolyMatrix<Real> {
    PolyMatrix::from_constant(&DMatrix::from_column_slice(2, 1, &[theta[0], theta[1] + 1.0]), 2)
}

/// The four corner parameter points, in weight order.
pub fn corner_thetas() -> [[Real; 2]; 4] {
    [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]]
}

/// The benchmark plant with its θ and x₀ distributions.
pub fn system() -> PolytopicSystem {
    let f = corner_thetas().iter().map(|&t| f_at(t)).collect();
    let g = corner_thetas().iter().map(|&t| g_at(t)).collect();
    let weights = WeightFamily::BilinearCorner {
        lo: vec![0.0, 0.0],
        hi: vec![1.0, 1.0],
    };
    let theta = ThetaDistribution::uniform_product(&[
        vec![0.0, 0.1, 0.9, 1.0],
        vec![0.0, 0.1, 0.9, 1.0],
    ])
    .expect("fixed support construction");
    let x0_points = [-3.0, 0.0, 3.0]
        .iter()
        .flat_map(|&a| [-3.0, 0.0, 3.0].iter().map(move |&b| vec![a, b]))
        .filter(|p| p != &vec![0.0, 0.0])
        .map(nalgebra::DVector::from_vec)
        .collect();
    let x0 = InitialStateDistribution::uniform(x0_points).expect("fixed support construction");
    PolytopicSystem::new(f, g, z_basis(), weights, theta, x0)
        .expect("fixed benchmark construction")
}

/// q(x) = xᵀx, R = 10, φ of degree 1..6, η = 0.
pub fn cost_model() -> CostModel {
    CostModel::single_input(
        poly(&[(1.0, [2, 0]), (1.0, [0, 2])]),
        10.0,
        phi_basis(),
        z_basis(),
        &z_cap_basis(),
        0.0,
    )
    .expect("fixed cost-model construction")
}

/// The SOS bases (z, ζ, Z) of the stability machinery.
pub fn sos_bases() -> SosBases {
    SosBases::new(
        z_basis(),
        zeta_basis(),
        PolyMatrix::row_from_basis(&z_cap_basis()),
    )
    .expect("fixed basis construction")
}

/// The Dirac-sum fit measure over the grid {−3 : 0.1 : 3}² (3721 points).
pub fn weight_measure() -> WeightMeasure {
    WeightMeasure::box_grid(-3.0, 3.0, 0.1, 2).expect("fixed grid construction")
}

/// The published synthesis constants (κ = 0.1, ρ_ub = 1e20, χ = 1e-4,
/// α_ini = 0.01, γ_α = 0.5, N = 2000, η = 0).
pub fn optimizer_defaults() -> OptimizerConfig {
    OptimizerConfig::default()
}

/// Simulation defaults (T = 30 with desk-scale integrator settings).
pub fn sim_defaults() -> SimConfig {
    SimConfig::default()
}
