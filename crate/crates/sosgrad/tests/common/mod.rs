//! Shared fixtures for the integration suites: a one-dimensional linear
//! sandbox plant (ẋ = a·x + b·u) with a quadratic cost, and small helper
//! builders used across test binaries.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

use sosgrad::costfit::{CostModel, WeightMeasure};
use sosgrad::polyalg::{Monomial, MonomialBasis, PolyMatrix};
use sosgrad::soscert::SosBases;
use sosgrad::sysmodel::{
    InitialStateDistribution, PolytopicSystem, ThetaDistribution, WeightFamily,
};
use sosgrad::{Poly, Real};

/// A polynomial in the given number of variables from (coefficient,
/// exponent) pairs.
pub fn poly(nvars: usize, terms: &[(Real, &[u32])]) -> Poly {
    let mut p = Poly::zero(nvars);
    for &(c, e) in terms {
        assert_eq!(e.len(), nvars);
        p.add_term(Monomial::new(e.to_vec()), c);
    }
    p
}

/// Monomial basis from explicit exponent rows (fixed order).
pub fn basis(name: &str, entries: &[&[u32]]) -> MonomialBasis {
    MonomialBasis::new(
        name,
        entries.iter().map(|e| Monomial::new(e.to_vec())).collect(),
    )
    .expect("test basis construction")
}

/// The scalar plant ẋ = a·x + b·u as a single-vertex polytopic system
/// with a trivial parameter (θ support = {0}) and x₀ = 1.
pub fn linear_system(a: Real, b: Real) -> PolytopicSystem {
    let f = vec![PolyMatrix::from_constant(
        &DMatrix::from_element(1, 1, a),
        1,
    )];
    let g = vec![PolyMatrix::from_constant(
        &DMatrix::from_element(1, 1, b),
        1,
    )];
    let weights = WeightFamily::Custom {
        vertices: 1,
        eval: Box::new(|_| vec![1.0]),
    };
    let theta = ThetaDistribution::uniform(vec![DVector::from_vec(vec![0.0])])
        .expect("single-point support");
    let x0 = InitialStateDistribution::uniform(vec![DVector::from_vec(vec![1.0])])
        .expect("single-point support");
    PolytopicSystem::new(
        f,
        g,
        MonomialBasis::linear("z", 1),
        weights,
        theta,
        x0,
    )
    .expect("sandbox construction")
}

/// Quadratic sandbox cost: q = x², input weight r, value feature φ = [x²],
/// controller structure û = w·x (z = [x], Z = [1]).
pub fn linear_cost_model(r: Real, eta: Real) -> CostModel {
    CostModel::single_input(
        poly(1, &[(1.0, &[2])]),
        r,
        basis("phi", &[&[2]]),
        MonomialBasis::linear("z", 1),
        &basis("Z", &[&[0]]),
        eta,
    )
    .expect("sandbox cost model")
}

/// SOS bases for the scalar sandbox: z = [x], ζ = [1], Z = [1].
pub fn linear_sos_bases() -> SosBases {
    SosBases::new(
        MonomialBasis::linear("z", 1),
        basis("zeta", &[&[0]]),
        PolyMatrix::row_from_basis(&basis("Z", &[&[0]])),
    )
    .expect("sandbox bases")
}

/// A uniform 1-D grid measure over [lo, hi].
pub fn line_measure(lo: Real, hi: Real, n: usize) -> WeightMeasure {
    let step = (hi - lo) / (n - 1) as Real;
    WeightMeasure::new(
        (0..n)
            .map(|i| DVector::from_vec(vec![lo + i as Real * step]))
            .collect(),
    )
    .expect("line measure")
}

/// For the sandbox fit with û = w·x the Bellman residual is
/// `x²·(1 + ½ r w² + 2 v (a + b w))`, so the unconstrained grid minimizer
/// (η = 0, a + b·w ≠ 0) is the value that zeroes the bracket.
pub fn sandbox_optimal_v(a: Real, b: Real, r: Real, w: Real) -> Real {
    -(1.0 + 0.5 * r * w * w) / (2.0 * (a + b * w))
}
