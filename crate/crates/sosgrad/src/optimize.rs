//! The outer gradient loop: barrier-penalized objective, simultaneous
//! gradient updates on (w, P, r), sufficient-decrease backtracking, and
//! per-iteration stability-condition monitoring.
//!
//! The objective is `g(w,P,r) = E_θ[E_{x₀}[Ĵ(x₀, v(w,θ))]] + ρ(w,P,r)`.
//! The w-update uses the analytic cost gradient plus the penalty's
//! w-dependence; P and r receive penalty-only gradients. A step is
//! accepted when `g(y') ≤ g(y) − χ·α·‖∇g‖²` over the stacked variable
//! `y = (w, vec P, vec r)`; together with the cost lower bound and the
//! barrier clamp ρ_ub this keeps every accepted iterate on the feasible
//! (stability-certified) branch.

use nalgebra::{DMatrix, DVector};

use crate::costfit::{self, MomentCache, ThetaAggregate};
use crate::error::Error;
use crate::soscert::{self, SosBases, SosStructure};
use crate::sysmodel::PolytopicSystem;
use crate::{Real, Result};

/// Step sizes below this abort the loop with the current state.
const STEP_UNDERFLOW: Real = 1e-16;

/// Objective variants for the baseline controllers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveMode {
    /// Expected fitted cost plus stability penalty (the full method).
    CostPlusPenalty,
    /// `‖w‖² + ρ(w,P,r)`: shrinks the gains under the stability
    /// certificate without optimizing cost.
    GainNormPlusPenalty,
    /// Expected fitted cost alone, no stability penalty; the loop stops
    /// early once the fitted cost goes negative.
    CostOnly,
}

#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    /// Iteration budget N.
    pub iterations: usize,
    pub kappa: Real,
    pub rho_ub: Real,
    /// Sufficient-decrease coefficient χ.
    pub chi: Real,
    /// Initial trial step α_ini.
    pub alpha_init: Real,
    /// Backtracking factor γ_α.
    pub gamma_alpha: Real,
    /// Fit regularization η.
    pub eta: Real,
    /// Lower bound Ĵ_lb on the expected fitted cost; with ρ_ub it makes
    /// infeasible points strictly worse than any feasible one.
    pub cost_lower_bound: Real,
    pub mode: ObjectiveMode,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            kappa: 0.1,
            rho_ub: 1e20,
            chi: 1e-4,
            alpha_init: 0.01,
            gamma_alpha: 0.5,
            eta: 0.0,
            cost_lower_bound: -1e12,
            mode: ObjectiveMode::CostPlusPenalty,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.chi > 0.0 && self.chi < 1.0) {
            return Err(Error::BadConfig("chi must lie in (0,1)".into()));
        }
        if !(self.gamma_alpha > 0.0 && self.gamma_alpha < 1.0) {
            return Err(Error::BadConfig("gamma_alpha must lie in (0,1)".into()));
        }
        if self.alpha_init <= 0.0 {
            return Err(Error::BadConfig("alpha_init must be positive".into()));
        }
        if self.kappa <= 0.0 {
            return Err(Error::BadConfig("kappa must be positive".into()));
        }
        Ok(())
    }
}

/// Immutable evaluation context shared by every iteration: the plant, the
/// SOS machinery, and per-θ aggregates of the moment cache.
pub struct OptimizeDeps<'a> {
    pub sys: &'a PolytopicSystem,
    pub bases: &'a SosBases,
    pub structure: &'a SosStructure,
    pub cache: &'a MomentCache,
    /// One (probability, aggregate) per θ support point.
    aggregates: Vec<(Real, ThetaAggregate)>,
}

impl<'a> OptimizeDeps<'a> {
    pub fn new(
        sys: &'a PolytopicSystem,
        bases: &'a SosBases,
        structure: &'a SosStructure,
        cache: &'a MomentCache,
    ) -> Result<Self> {
        let mut aggregates = Vec::with_capacity(sys.theta().len());
        for (theta, prob) in sys.theta().iter() {
            let h = sys.weights_eval(theta.as_slice())?;
            aggregates.push((prob, cache.aggregate(&h)));
        }
        Ok(Self {
            sys,
            bases,
            structure,
            cache,
            aggregates,
        })
    }

    /// Exact expected fitted cost `Σ_θ p(θ)·E[φ(x₀)]ᵀ v(w,θ)`.
    pub fn expected_cost(&self, w: &DVector<Real>, eta: Real) -> Result<Real> {
        let mut acc = 0.0;
        for (prob, agg) in &self.aggregates {
            let fit = costfit::fit_from_aggregate(agg, w, eta)?;
            acc += prob * self.cache.e_phi0().dot(&fit.v);
        }
        Ok(acc)
    }

    /// Gradient of [`Self::expected_cost`] with respect to w.
    pub fn expected_cost_gradient(&self, w: &DVector<Real>, eta: Real) -> Result<DVector<Real>> {
        let mut acc = DVector::zeros(w.len());
        for (prob, agg) in &self.aggregates {
            acc += costfit::cost_gradient_from_aggregate(agg, self.cache.e_phi0(), w, eta)? * *prob;
        }
        Ok(acc)
    }
}

/// Decision variables plus iteration metadata.
#[derive(Debug, Clone)]
pub struct DecisionState {
    pub w: DVector<Real>,
    pub p: DMatrix<Real>,
    pub r: DMatrix<Real>,
    pub iteration: usize,
    pub history: Vec<IterationRecord>,
    /// Set when the loop ended on a step underflow rather than the budget.
    pub step_underflow: bool,
    /// Set when the cost-only mode stopped on a negative fitted cost.
    pub early_stop: bool,
}

/// One accepted iteration (or the initial point, at `alpha = 0`).
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: usize,
    pub objective: Real,
    pub cost_term: Real,
    pub penalty_term: Real,
    pub alpha: Real,
    pub grad_norm_sq: Real,
    pub p_min_eig: Real,
    pub t_min_eig: Real,
    /// Sufficient-decrease inequality held for this step.
    pub wolfe_ok: bool,
    /// Objective did not increase relative to the previous record.
    pub monotone_ok: bool,
    /// Cost term stayed at or above the configured lower bound.
    pub above_lower_bound: bool,
    pub wall_time_s: Real,
}

impl IterationRecord {
    /// Both PD certificates hold (always true on accepted iterates of the
    /// penalized modes; meaningless and false-free in cost-only mode).
    pub fn pd_ok(&self) -> bool {
        self.p_min_eig > 0.0 && self.t_min_eig > 0.0
    }

    /// Wall time is tracked on the struct but kept out of the CSV so that
    /// identical configurations produce byte-identical logs.
    pub const CSV_HEADER: &'static str =
        "iteration,objective,cost,penalty,alpha,grad_norm_sq,p_min_eig,t_min_eig,wolfe_ok,monotone_ok,above_lower_bound";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{:.12e},{:.12e},{:.12e},{:.6e},{:.6e},{:.6e},{:.6e},{},{},{}",
            self.iteration,
            self.objective,
            self.cost_term,
            self.penalty_term,
            self.alpha,
            self.grad_norm_sq,
            self.p_min_eig,
            self.t_min_eig,
            self.wolfe_ok,
            self.monotone_ok,
            self.above_lower_bound
        )
    }
}

/// The objective value split into its cost and penalty terms.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveValue {
    pub total: Real,
    pub cost: Real,
    pub penalty: Real,
}

/// Evaluate the mode's objective at (w, P, r).
pub fn objective(
    deps: &OptimizeDeps,
    cfg: &OptimizerConfig,
    w: &DVector<Real>,
    p: &DMatrix<Real>,
    r: &DMatrix<Real>,
) -> Result<ObjectiveValue> {
    let cost = match cfg.mode {
        ObjectiveMode::CostPlusPenalty | ObjectiveMode::CostOnly => {
            deps.expected_cost(w, cfg.eta)?
        }
        ObjectiveMode::GainNormPlusPenalty => w.norm_squared(),
    };
    let penalty = match cfg.mode {
        ObjectiveMode::CostOnly => 0.0,
        _ => soscert::penalty(
            deps.structure,
            deps.bases,
            deps.sys,
            w,
            p,
            r,
            cfg.kappa,
            cfg.rho_ub,
        )?,
    };
    Ok(ObjectiveValue {
        total: cost + penalty,
        cost,
        penalty,
    })
}

/// The simultaneous gradient: w receives the cost gradient plus the
/// penalty's w-gradient; P and r receive penalty-only gradients.
pub fn full_gradient(
    deps: &OptimizeDeps,
    cfg: &OptimizerConfig,
    w: &DVector<Real>,
    p: &DMatrix<Real>,
    r: &DMatrix<Real>,
) -> Result<(DVector<Real>, DMatrix<Real>, DMatrix<Real>)> {
    let cost_grad = match cfg.mode {
        ObjectiveMode::CostPlusPenalty | ObjectiveMode::CostOnly => {
            deps.expected_cost_gradient(w, cfg.eta)?
        }
        ObjectiveMode::GainNormPlusPenalty => w * 2.0,
    };
    match cfg.mode {
        ObjectiveMode::CostOnly => Ok((
            cost_grad,
            DMatrix::zeros(p.nrows(), p.ncols()),
            DMatrix::zeros(r.nrows(), r.ncols()),
        )),
        _ => {
            let (pen_w, pen_p, pen_r) = soscert::penalty_gradient(
                deps.structure,
                deps.bases,
                deps.sys,
                w,
                p,
                r,
                cfg.kappa,
            )?;
            Ok((cost_grad + pen_w, pen_p, pen_r))
        }
    }
}

/// Objective for line-search trials: a singular fit at a trial point is
/// treated as +∞ (rejected) rather than an error.
fn trial_objective(
    deps: &OptimizeDeps,
    cfg: &OptimizerConfig,
    w: &DVector<Real>,
    p: &DMatrix<Real>,
    r: &DMatrix<Real>,
) -> Result<Real> {
    match objective(deps, cfg, w, p, r) {
        Ok(v) => Ok(v.total),
        Err(Error::SingularFit) => Ok(Real::INFINITY),
        Err(e) => Err(e),
    }
}

/// Backtracking search for the first step in `{α_ini·γ_α^j}` satisfying
/// `g(y − α∇g) ≤ g(y) − χ·α·‖∇g‖²`; returns the accepted step and trial
/// objective, or [`Error::StepUnderflow`].
#[allow(clippy::too_many_arguments)]
pub fn wolfe_backtrack(
    deps: &OptimizeDeps,
    cfg: &OptimizerConfig,
    w: &DVector<Real>,
    p: &DMatrix<Real>,
    r: &DMatrix<Real>,
    grads: &(DVector<Real>, DMatrix<Real>, DMatrix<Real>),
    g_current: Real,
    grad_norm_sq: Real,
) -> Result<(Real, Real)> {
    let (g_w, g_p, g_r) = grads;
    let mut alpha = cfg.alpha_init;
    while alpha >= STEP_UNDERFLOW {
        let w_t = w - g_w * alpha;
        let p_t = p - g_p * alpha;
        let r_t = r - g_r * alpha;
        let g_trial = trial_objective(deps, cfg, &w_t, &p_t, &r_t)?;
        if g_trial <= g_current - cfg.chi * alpha * grad_norm_sq {
            return Ok((alpha, g_trial));
        }
        alpha *= cfg.gamma_alpha;
    }
    Err(Error::StepUnderflow)
}

fn record_point(
    deps: &OptimizeDeps,
    cfg: &OptimizerConfig,
    w: &DVector<Real>,
    p: &DMatrix<Real>,
    r: &DMatrix<Real>,
    iteration: usize,
    value: ObjectiveValue,
    alpha: Real,
    grad_norm_sq: Real,
    wolfe_ok: bool,
    prev_objective: Real,
    started: std::time::Instant,
) -> Result<IterationRecord> {
    let (p_min_eig, t_min_eig) = if cfg.mode == ObjectiveMode::CostOnly {
        (0.0, 0.0)
    } else {
        let cert = soscert::certificate(deps.structure, deps.bases, deps.sys, w, p, r)?;
        (
            cert.p_min_eig,
            cert.t_min_eigs
                .iter()
                .fold(Real::INFINITY, |a, &b| a.min(b)),
        )
    };
    Ok(IterationRecord {
        iteration,
        objective: value.total,
        cost_term: value.cost,
        penalty_term: value.penalty,
        alpha,
        grad_norm_sq,
        p_min_eig,
        t_min_eig,
        wolfe_ok,
        monotone_ok: value.total <= prev_objective + 1e-12 * prev_objective.abs().max(1.0),
        above_lower_bound: value.cost >= cfg.cost_lower_bound,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

/// Run the gradient loop from the given initial variables.
///
/// The returned state carries the per-iteration log; in the penalized
/// modes a precondition check asserts the start is on the feasible branch
/// (so `g(y{0}) < Ĵ_lb + ρ_ub` and monotone acceptance keep it there).
pub fn run(
    deps: &OptimizeDeps,
    cfg: &OptimizerConfig,
    w0: DVector<Real>,
    p0: DMatrix<Real>,
    r0: DMatrix<Real>,
) -> Result<DecisionState> {
    cfg.validate()?;
    let started = std::time::Instant::now();

    let mut w = w0;
    let mut p = p0;
    let mut r = r0;
    let mut value = objective(deps, cfg, &w, &p, &r)?;
    if cfg.mode != ObjectiveMode::CostOnly {
        if value.penalty >= cfg.rho_ub {
            return Err(Error::Infeasible(
                "initial variables are outside the certified-stability region".into(),
            ));
        }
        if value.total >= cfg.cost_lower_bound + cfg.rho_ub {
            return Err(Error::Infeasible(
                "initial objective does not separate feasible from infeasible points".into(),
            ));
        }
    }

    let mut history = vec![record_point(
        deps, cfg, &w, &p, &r, 0, value, 0.0, 0.0, true, value.total, started,
    )?];
    let mut step_underflow = false;
    let mut early_stop = false;
    let mut iteration = 0;

    for ell in 0..cfg.iterations {
        if cfg.mode == ObjectiveMode::CostOnly && value.cost < 0.0 {
            early_stop = true;
            break;
        }
        let grads = full_gradient(deps, cfg, &w, &p, &r)?;
        let grad_norm_sq =
            grads.0.norm_squared() + grads.1.norm_squared() + grads.2.norm_squared();
        if grad_norm_sq == 0.0 {
            break;
        }
        let (alpha, _) = match wolfe_backtrack(
            deps,
            cfg,
            &w,
            &p,
            &r,
            &grads,
            value.total,
            grad_norm_sq,
        ) {
            Ok(res) => res,
            Err(Error::StepUnderflow) => {
                step_underflow = true;
                break;
            }
            Err(e) => return Err(e),
        };
        w -= &grads.0 * alpha;
        p -= &grads.1 * alpha;
        r -= &grads.2 * alpha;
        let prev_total = value.total;
        value = objective(deps, cfg, &w, &p, &r)?;
        iteration = ell + 1;
        history.push(record_point(
            deps,
            cfg,
            &w,
            &p,
            &r,
            iteration,
            value,
            alpha,
            grad_norm_sq,
            value.total <= prev_total - cfg.chi * alpha * grad_norm_sq + 1e-9,
            prev_total,
            started,
        )?);
    }

    Ok(DecisionState {
        w,
        p,
        r,
        iteration,
        history,
        step_underflow,
        early_stop,
    })
}
