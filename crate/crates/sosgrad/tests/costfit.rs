//! Value-fitting suite: feature vectors, moment assembly, the closed-form
//! fit against brute-force least-squares oracles, analytic gradients
//! against finite differences, and the Bellman-residual identities.

mod common;

use std::sync::OnceLock;

use approx::assert_abs_diff_eq;
use common::{basis, linear_cost_model, linear_system, line_measure, poly, sandbox_optimal_v};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sosgrad::costfit::{self, CostModel, MomentCache, WeightMeasure};
use sosgrad::sysmodel::PolytopicSystem;
use sosgrad::{benchmark, Error, Real};

fn benchmark_cache() -> &'static (PolytopicSystem, CostModel, MomentCache) {
    static CACHE: OnceLock<(PolytopicSystem, CostModel, MomentCache)> = OnceLock::new();
    CACHE.get_or_init(|| {
        let sys = benchmark::system();
        let model = benchmark::cost_model();
        let measure = benchmark::weight_measure();
        let key = costfit::moment_cache_key(&model, &sys, &measure);
        let cache = costfit::compute_moments(&model, &sys, &measure, key).unwrap();
        (sys, model, cache)
    })
}

fn sandbox_cache(a: Real, b: Real, r: Real) -> (PolytopicSystem, CostModel, MomentCache) {
    let sys = linear_system(a, b);
    let model = linear_cost_model(r, 0.0);
    let measure = line_measure(-2.0, 2.0, 41);
    let key = costfit::moment_cache_key(&model, &sys, &measure);
    let cache = costfit::compute_moments(&model, &sys, &measure, key).unwrap();
    (sys, model, cache)
}

/// Brute-force grid least-squares: minimize Σ_m (c0 + dᵀv)² + η‖v‖² with
/// c0 = q + ½ûᵀRû and d = ∂φ/∂xᵀ·(f + G·û), assembled point by point.
fn oracle_fit(
    model: &CostModel,
    sys: &PolytopicSystem,
    measure: &WeightMeasure,
    w: &DVector<Real>,
    theta: &[Real],
    eta: Real,
) -> DVector<Real> {
    let d_v = model.d_v();
    let mut normal = DMatrix::<Real>::identity(d_v, d_v) * eta;
    let mut rhs = DVector::<Real>::zeros(d_v);
    for x in measure.points() {
        let x = x.as_slice();
        let u = model.controller_eval(w, x).unwrap();
        let c0 = model.q().eval(x) + 0.5 * (model.r().eval(x).unwrap() * &u).dot(&u);
        let flow = sys.drift_eval(x, theta).unwrap() + sys.input_matrix_eval(x, theta).unwrap() * u;
        let d = model.phi().jacobian(x).unwrap() * flow;
        normal += &d * d.transpose();
        rhs -= &d * c0;
    }
    normal.lu().solve(&rhs).expect("oracle normal equations")
}

/// The fit objective M[B²] + η‖v‖² evaluated directly on the grid.
fn fit_objective(
    model: &CostModel,
    sys: &PolytopicSystem,
    measure: &WeightMeasure,
    v: &DVector<Real>,
    w: &DVector<Real>,
    theta: &[Real],
    eta: Real,
) -> Real {
    let mut acc = eta * v.norm_squared();
    for x in measure.points() {
        let b = costfit::bellman_residual(model, sys, x.as_slice(), v, w, theta).unwrap();
        acc += b * b;
    }
    acc
}

#[test]
fn psi0_vanishes_at_origin() {
    let (_, model, _) = benchmark_cache();
    let p = costfit::psi0(model, &[0.0, 0.0]).unwrap();
    assert!(p.iter().all(|&v| v == 0.0));
}

#[test]
fn psi0_first_entry_is_state_cost() {
    let (_, model, _) = benchmark_cache();
    let p = costfit::psi0(model, &[1.0, 0.0]).unwrap();
    assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-15);
    let p = costfit::psi0(model, &[1.5, -2.0]).unwrap();
    assert_abs_diff_eq!(p[0], 1.5 * 1.5 + 4.0, epsilon = 1e-12);
}

#[test]
fn psi0_vec_block_reshapes_symmetric() {
    let (_, model, _) = benchmark_cache();
    let d_w = model.d_w();
    let p = costfit::psi0(model, &[0.7, -1.1]).unwrap();
    let block = sosgrad::polyalg::inv_vec(&p.rows(1, d_w * d_w).into_owned(), d_w, d_w).unwrap();
    assert!((&block - block.transpose()).norm() < 1e-12);
}

#[test]
fn psik_first_block_vanishes_at_origin() {
    let (sys, model, _) = benchmark_cache();
    for k in 0..sys.vertex_count() {
        let p = costfit::psik(model, sys, k, &[0.0, 0.0]).unwrap();
        assert!(p.rows(0, model.d_v()).iter().all(|&v| v == 0.0));
    }
}

#[test]
fn psik_scalar_sandbox_hand_expansion() {
    // ẋ = a·x + b·u with value feature φ = [x] and Φ = [x]:
    // ψ_1 = vec(∂φ/∂xᵀ·[f_1, G_1Φᵀ]) = [a·x, b·x].
    let (a, b) = (0.7, -1.3);
    let sys = linear_system(a, b);
    let model = CostModel::single_input(
        poly(1, &[(1.0, &[2])]),
        1.0,
        basis("phi", &[&[1]]),
        sosgrad::polyalg::MonomialBasis::linear("z", 1),
        &basis("Z", &[&[0]]),
        0.0,
    )
    .unwrap();
    for x in [0.5, -2.0, 3.0] {
        let p = costfit::psik(&model, &sys, 0, &[x]).unwrap();
        assert_abs_diff_eq!(p[0], a * x, epsilon = 1e-14);
        assert_abs_diff_eq!(p[1], b * x, epsilon = 1e-14);
    }
}

#[test]
fn psik_matches_jacobian_product() {
    let (sys, model, _) = benchmark_cache();
    let x = [1.0, 1.0];
    let p = costfit::psik(model, sys, 0, &x).unwrap();
    let jac = model.phi().jacobian(&x).unwrap();
    let z = model.z().eval(&x).unwrap();
    let f = sys.f_vertex(0).eval(&x).unwrap() * z;
    let gp = sys.g_vertex(0).eval(&x).unwrap() * model.phi_matrix(&x).unwrap().transpose();
    let mut expect = DVector::zeros(p.len());
    expect.rows_mut(0, model.d_v()).copy_from(&(&jac * f));
    let tail = &jac * gp;
    expect
        .rows_mut(model.d_v(), model.d_v() * model.d_w())
        .copy_from_slice(tail.as_slice());
    assert!((p - expect).norm() < 1e-12);
}

#[test]
fn single_point_measure_gives_outer_products() {
    let sys = linear_system(0.5, 1.0);
    let model = linear_cost_model(2.0, 0.0);
    let xstar = DVector::from_vec(vec![1.7]);
    let measure = WeightMeasure::new(vec![xstar.clone()]).unwrap();
    let cache = costfit::compute_moments(&model, &sys, &measure, 0).unwrap();
    let p0 = costfit::psi0(&model, xstar.as_slice()).unwrap();
    let p1 = costfit::psik(&model, &sys, 0, xstar.as_slice()).unwrap();
    assert!((cache.a_matrix(0, 0) - &p1 * p1.transpose()).norm() < 1e-12);
    assert!((cache.b_matrix(0) - &p1 * p0.transpose()).norm() < 1e-12);
}

#[test]
fn moment_matrices_transpose_symmetric_on_benchmark_grid() {
    let (sys, _, cache) = benchmark_cache();
    for i in 0..sys.vertex_count() {
        for j in 0..sys.vertex_count() {
            let a_ij = cache.a_matrix(i, j);
            let a_ji = cache.a_matrix(j, i);
            let scale = a_ij.norm().max(1.0);
            assert!((a_ij - a_ji.transpose()).norm() < 1e-10 * scale);
        }
    }
}

#[test]
fn initial_state_feature_mean_respects_symmetry() {
    let (_, model, cache) = benchmark_cache();
    // The 8-point x₀ support is symmetric under x → −x, so every
    // odd-degree feature has zero mean; x1 is the first feature.
    let e = cache.e_phi0();
    for (i, m) in model.phi().entries().iter().enumerate() {
        if m.total_degree() % 2 == 1 {
            assert_abs_diff_eq!(e[i], 0.0, epsilon = 1e-12);
        }
    }
    // Even features average the grid values: E[x1²] = (6·9 + 2·0)/8.
    let idx = model
        .phi()
        .entries()
        .iter()
        .position(|m| m.exponents() == [2, 0])
        .unwrap();
    assert_abs_diff_eq!(e[idx], 54.0 / 8.0, epsilon = 1e-12);
}

#[test]
fn l_matrix_at_zero_w_selects_first_block() {
    let (_, model, cache) = benchmark_cache();
    let d_v = model.d_v();
    let w = DVector::zeros(model.d_w());
    let l = cache.l_matrix(&w, 0, 1, 0.0);
    let top_left = cache.a_matrix(0, 1).view((0, 0), (d_v, d_v)).into_owned();
    assert!((l - top_left).norm() < 1e-12);
}

#[test]
fn degenerate_origin_measure_gives_pure_regularizer() {
    // Every feature vanishes at x = 0, so the moments are all zero and
    // L = ηI while l = 0; the fit then returns v = 0.
    let sys = linear_system(1.0, 1.0);
    let model = linear_cost_model(1.0, 0.0);
    let measure = WeightMeasure::new(vec![DVector::zeros(1)]).unwrap();
    let cache = costfit::compute_moments(&model, &sys, &measure, 0).unwrap();
    let w = DVector::from_vec(vec![0.4]);
    let l = cache.l_matrix(&w, 0, 0, 5.0);
    assert!((l - DMatrix::<Real>::identity(1, 1) * 5.0).norm() < 1e-15);
    assert!(cache.l_vector(&w, 0).norm() == 0.0);
    let fit = costfit::fit_cost_parameters(&cache, &sys, &w, &[0.0], 5.0).unwrap();
    assert_eq!(fit.v.as_slice(), &[0.0]);
    let grad = costfit::cost_gradient(&cache, &sys, &w, &[0.0], 5.0).unwrap();
    assert_eq!(grad.as_slice(), &[0.0]);
}

#[test]
fn l_matrix_and_vector_match_explicit_kronecker_expansion() {
    let (_, model, cache) = benchmark_cache();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let d_v = model.d_v();
    let d_w = model.d_w();
    let w = DVector::from_fn(d_w, |_, _| rng.gen_range(-1.0..1.0));
    let mut stacked = DVector::zeros(1 + d_w);
    stacked[0] = 1.0;
    stacked.rows_mut(1, d_w).copy_from(&w);
    let u_bar = DMatrix::from_column_slice(1 + d_w, 1, stacked.as_slice())
        .kronecker(&DMatrix::identity(d_v, d_v));
    let mut quad = DVector::zeros(1 + d_w * d_w);
    quad[0] = 1.0;
    let ww = DMatrix::from_column_slice(d_w, 1, w.as_slice())
        .kronecker(&DMatrix::from_column_slice(d_w, 1, w.as_slice()));
    quad.rows_mut(1, d_w * d_w).copy_from_slice(ww.as_slice());

    for (k, kp) in [(0, 0), (1, 3), (2, 1)] {
        let expect = u_bar.transpose() * cache.a_matrix(k, kp) * &u_bar;
        let got = cache.l_matrix(&w, k, kp, 0.0);
        assert!((got - &expect).norm() < 1e-11 * expect.norm());
    }
    for k in 0..4 {
        let expect = u_bar.transpose() * cache.b_matrix(k) * &quad;
        let got = cache.l_vector(&w, k);
        assert!((got - &expect).norm() < 1e-11 * expect.norm());
    }
}

#[test]
fn sandbox_fit_matches_closed_form_and_oracle() {
    let (a, b, r) = (1.0, 1.0, 2.0);
    let (sys, model, cache) = sandbox_cache(a, b, r);
    let measure = line_measure(-2.0, 2.0, 41);
    for wv in [-3.0, -1.5, 0.5] {
        let w = DVector::from_vec(vec![wv]);
        let fit = costfit::fit_cost_parameters(&cache, &sys, &w, &[0.0], 0.0).unwrap();
        let closed = sandbox_optimal_v(a, b, r, wv);
        assert_abs_diff_eq!(fit.v[0], closed, epsilon = 1e-8 * closed.abs());
        let oracle = oracle_fit(&model, &sys, &measure, &w, &[0.0], 0.0);
        assert_abs_diff_eq!(fit.v[0], oracle[0], epsilon = 1e-8 * oracle[0].abs());
    }
}

#[test]
fn benchmark_fit_matches_oracle_on_nine_point_grid() {
    let sys = benchmark::system();
    let model = benchmark::cost_model();
    // Nine grid points cannot pin down 27 features, so the comparison
    // uses a ridge term on both sides; the unit box keeps the normal
    // equations well enough conditioned for an 1e-8 comparison.
    let eta = 1e-3;
    let measure = WeightMeasure::box_grid(-1.0, 1.0, 1.0, 2).unwrap();
    assert_eq!(measure.len(), 9);
    let key = costfit::moment_cache_key(&model, &sys, &measure);
    let cache = costfit::compute_moments(&model, &sys, &measure, key).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for theta in [[0.0, 0.0], [0.1, 0.9], [1.0, 1.0]] {
        let w = DVector::from_fn(model.d_w(), |_, _| rng.gen_range(-0.5..0.5));
        let fit = costfit::fit_cost_parameters(&cache, &sys, &w, &theta, eta).unwrap();
        let oracle = oracle_fit(&model, &sys, &measure, &w, &theta, eta);
        let rel = (&fit.v - &oracle).norm() / oracle.norm();
        assert!(rel < 1e-8, "θ={theta:?}: relative error {rel:.3e}");
    }
}

#[test]
fn singular_fit_detected_without_regularization() {
    let sys = benchmark::system();
    let model = benchmark::cost_model();
    let measure = WeightMeasure::box_grid(-3.0, 3.0, 3.0, 2).unwrap();
    let cache = costfit::compute_moments(&model, &sys, &measure, 0).unwrap();
    let w = DVector::zeros(model.d_w());
    assert!(matches!(
        costfit::fit_cost_parameters(&cache, &sys, &w, &[0.0, 0.0], 0.0),
        Err(Error::SingularFit)
    ));
}

#[test]
fn fit_perturbations_never_decrease_objective() {
    let (sys, model, cache) = sandbox_cache(1.0, 1.0, 2.0);
    let measure = line_measure(-2.0, 2.0, 41);
    let w = DVector::from_vec(vec![-1.8]);
    let fit = costfit::fit_cost_parameters(&cache, &sys, &w, &[0.0], 0.0).unwrap();
    let base = fit_objective(&model, &sys, &measure, &fit.v, &w, &[0.0], 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..20 {
        let dir: Real = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let v = DVector::from_vec(vec![fit.v[0] + dir * 1e-3]);
        assert!(fit_objective(&model, &sys, &measure, &v, &w, &[0.0], 0.0) >= base);
    }

    // Same check on the benchmark restricted to a 9-point grid.
    let (bsys, bmodel, _) = benchmark_cache();
    let bmeasure = WeightMeasure::box_grid(-1.0, 1.0, 1.0, 2).unwrap();
    let bcache = costfit::compute_moments(bmodel, bsys, &bmeasure, 0).unwrap();
    let eta = 1e-3;
    let w = DVector::from_fn(bmodel.d_w(), |i, _| -0.1 * (i as Real + 1.0) / 12.0);
    let fit = costfit::fit_cost_parameters(&bcache, bsys, &w, &[0.1, 0.9], eta).unwrap();
    let base = fit_objective(bmodel, bsys, &bmeasure, &fit.v, &w, &[0.1, 0.9], eta);
    for _ in 0..20 {
        let mut dv = DVector::from_fn(fit.v.len(), |_, _| rng.gen_range(-1.0..1.0));
        dv *= 1e-3 / dv.norm();
        let v = &fit.v + dv;
        let perturbed = fit_objective(bmodel, bsys, &bmeasure, &v, &w, &[0.1, 0.9], eta);
        assert!(perturbed >= base - 1e-12 * base.abs());
    }
}

#[test]
fn sandbox_gradient_matches_finite_differences() {
    let (sys, _, cache) = sandbox_cache(1.0, 1.0, 2.0);
    let h = 1e-5;
    for wv in [-3.0, -1.2, 0.4] {
        let w = DVector::from_vec(vec![wv]);
        let grad = costfit::cost_gradient(&cache, &sys, &w, &[0.0], 0.0).unwrap();
        let cost = |wv: Real| {
            let w = DVector::from_vec(vec![wv]);
            let fit = costfit::fit_cost_parameters(&cache, &sys, &w, &[0.0], 0.0).unwrap();
            cache.e_phi0().dot(&fit.v)
        };
        let fd = (cost(wv + h) - cost(wv - h)) / (2.0 * h);
        assert!(
            (grad[0] - fd).abs() < 1e-5 * (1.0 + fd.abs()),
            "w={wv}: analytic {} vs fd {fd}",
            grad[0]
        );
    }
}

#[test]
fn benchmark_gradient_matches_finite_differences() {
    let (sys, model, cache) = benchmark_cache();
    let mut rng = ChaCha8Rng::seed_from_u64(53);
    let thetas = sys.theta().support().to_vec();
    let h = 1e-5;
    for trial in 0..20 {
        let theta = thetas[rng.gen_range(0..thetas.len())].clone();
        let w = DVector::from_fn(model.d_w(), |_, _| rng.gen_range(-0.3..0.3));
        let grad = costfit::cost_gradient(&cache, sys, &w, theta.as_slice(), 0.0).unwrap();
        let cost = |w: &DVector<Real>| {
            let fit = costfit::fit_cost_parameters(&cache, sys, w, theta.as_slice(), 0.0).unwrap();
            cache.e_phi0().dot(&fit.v)
        };
        for j in [0, 5, 11] {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[j] += h;
            wm[j] -= h;
            let fd = (cost(&wp) - cost(&wm)) / (2.0 * h);
            let rel = (grad[j] - fd).abs() / (1.0 + fd.abs());
            assert!(rel < 1e-4, "trial {trial} component {j}: rel error {rel:.3e}");
        }
    }
}

#[test]
fn bellman_residual_trivial_cases() {
    let (sys, model, _) = benchmark_cache();
    let v = DVector::zeros(model.d_v());
    let w = DVector::zeros(model.d_w());
    let x = [1.2, -0.7];
    let b = costfit::bellman_residual(model, sys, &x, &v, &w, &[0.1, 0.1]).unwrap();
    assert_abs_diff_eq!(b, model.q().eval(&x), epsilon = 1e-14);

    let v = DVector::from_fn(model.d_v(), |i, _| (i as Real).sin());
    let w = DVector::from_fn(model.d_w(), |i, _| (i as Real).cos());
    let b0 = costfit::bellman_residual(model, sys, &[0.0, 0.0], &v, &w, &[0.9, 0.0]).unwrap();
    assert_abs_diff_eq!(b0, 0.0, epsilon = 1e-14);
}

#[test]
fn bellman_residual_direct_equals_feature_form() {
    let (sys, model, _) = benchmark_cache();
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    for _ in 0..50 {
        let x: [Real; 2] = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)];
        let theta: [Real; 2] = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
        let v = DVector::from_fn(model.d_v(), |_, _| rng.gen_range(-1.0..1.0));
        let w = DVector::from_fn(model.d_w(), |_, _| rng.gen_range(-1.0..1.0));
        let direct = costfit::bellman_residual(model, sys, &x, &v, &w, &theta).unwrap();
        let features =
            costfit::bellman_residual_features(model, sys, &x, &v, &w, &theta).unwrap();
        assert!(
            (direct - features).abs() < 1e-9 * (1.0 + direct.abs()),
            "direct {direct} vs features {features}"
        );
    }
}

#[test]
fn quadratic_form_identity_on_grid() {
    let (sys, model, cache) = sandbox_cache(1.0, 1.0, 2.0);
    let measure = line_measure(-2.0, 2.0, 41);
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    for _ in 0..10 {
        let w = DVector::from_vec(vec![rng.gen_range(-2.0..2.0)]);
        let v = DVector::from_vec(vec![rng.gen_range(-2.0..2.0)]);
        let eta = 0.3;
        let direct = fit_objective(&model, &sys, &measure, &v, &w, &[0.0], eta);

        let h = sys.weights_eval(&[0.0]).unwrap();
        let agg = cache.aggregate(&h);
        let l_mat = agg.l_tilde(&w, eta);
        let l_vec = agg.l_tilde_vec(&w);
        let mut constant = 0.0;
        for x in measure.points() {
            let p0 = costfit::psi0(&model, x.as_slice()).unwrap();
            let quad = p0[0] + p0[1] * w[0] * w[0];
            constant += quad * quad;
        }
        let assembled = (l_mat * &v).dot(&v) + 2.0 * l_vec.dot(&v) + constant;
        assert!(
            (direct - assembled).abs() < 1e-8 * (1.0 + direct.abs()),
            "direct {direct} vs assembled {assembled}"
        );
    }
}

#[test]
fn bellman_bound_exact_fit_is_zero() {
    // The sandbox residual is c(v)·x² and the optimal v zeroes c, so the
    // bound ratio collapses to numerical noise.
    let (sys, model, cache) = sandbox_cache(1.0, 1.0, 2.0);
    let w = DVector::from_vec(vec![-2.0]);
    let fit = costfit::fit_cost_parameters(&cache, &sys, &w, &[0.0], 0.0).unwrap();
    let samples: Vec<DVector<Real>> = (1..10).map(|i| DVector::from_vec(vec![i as Real * 0.2])).collect();
    let bound =
        costfit::bellman_bound_diagnostic(&model, &sys, &fit.v, &w, &[0.0], &samples).unwrap();
    assert_eq!(bound.samples_used, 9);
    assert!(bound.beta_hat < 1e-10);
}

#[test]
fn bellman_bound_zero_controller_identity() {
    // v = 0, w = 0: |B| = q and the denominator is q, so β̂ = 1; the
    // origin sample is skipped.
    let (sys, model, _) = benchmark_cache();
    let v = DVector::zeros(model.d_v());
    let w = DVector::zeros(model.d_w());
    let samples = vec![
        DVector::from_vec(vec![0.0, 0.0]),
        DVector::from_vec(vec![1.0, 2.0]),
        DVector::from_vec(vec![-0.5, 0.25]),
    ];
    let bound =
        costfit::bellman_bound_diagnostic(&model, &sys, &v, &w, &[0.0, 0.0], &samples).unwrap();
    assert_eq!(bound.samples_used, 2);
    assert_abs_diff_eq!(bound.beta_hat, 1.0, epsilon = 1e-12);
}

#[test]
fn moment_cache_save_load_round_trip() {
    let (sys, model, cache) = sandbox_cache(0.5, 1.0, 1.0);
    let path = std::env::temp_dir().join(format!("moments-{}.bin", std::process::id()));
    cache.save(&path).unwrap();
    let loaded = MomentCache::load(&path, cache.key()).unwrap();
    assert_eq!(loaded.d_v(), cache.d_v());
    assert_eq!(loaded.d_w(), cache.d_w());
    assert_eq!(loaded.a_matrix(0, 0), cache.a_matrix(0, 0));
    assert_eq!(loaded.b_matrix(0), cache.b_matrix(0));
    assert_eq!(loaded.e_phi0(), cache.e_phi0());
    // A different expected key must refuse the file.
    assert!(MomentCache::load(&path, cache.key().wrapping_add(1)).is_err());
    std::fs::remove_file(&path).ok();

    // The key separates distinct inputs.
    let other_model = linear_cost_model(3.0, 0.0);
    let measure = line_measure(-2.0, 2.0, 41);
    assert_ne!(
        costfit::moment_cache_key(&model, &sys, &measure),
        costfit::moment_cache_key(&other_model, &sys, &measure)
    );
}
