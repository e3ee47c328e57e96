//! Closed-loop verification by numerical integration: trajectory rollout,
//! truncated-horizon cost, expected-cost tables over the (θ, x₀) supports,
//! divergence detection, and Lyapunov monitoring along trajectories.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::Error;
use crate::polyalg::PolyMatrix;
use crate::soscert::SosBases;
use crate::sysmodel::PolytopicSystem;
use crate::{Real, Result};

#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Truncation horizon T of the infinite-horizon cost.
    pub horizon: Real,
    /// Fixed integration step.
    pub dt: Real,
    /// Divergence bound on ‖x‖.
    pub x_max: Real,
    /// Convergence threshold on ‖x(T)‖.
    pub eps_conv: Real,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            horizon: 30.0,
            dt: 1e-3,
            x_max: 1e6,
            eps_conv: 1e-2,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon <= 0.0 || self.dt <= 0.0 {
            return Err(Error::BadConfig("horizon and dt must be positive".into()));
        }
        if !(self.x_max > self.eps_conv && self.eps_conv > 0.0) {
            return Err(Error::BadConfig(
                "divergence bound must exceed the convergence threshold".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryStatus {
    /// ‖x(T)‖ fell below the convergence threshold.
    Converged,
    /// Remained inside the divergence bound without converging.
    Bounded,
    /// ‖x‖ exceeded the divergence bound (integration stopped early).
    Diverged,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<Real>,
    pub states: Vec<DVector<Real>>,
    pub inputs: Vec<DVector<Real>>,
    pub status: TrajectoryStatus,
}

impl Trajectory {
    pub fn final_state(&self) -> &DVector<Real> {
        self.states.last().expect("a trajectory has at least its initial sample")
    }

    pub fn write_csv(&self, out: &mut dyn std::io::Write) -> Result<()> {
        let d_x = self.states[0].len();
        let d_u = self.inputs[0].len();
        let mut header = String::from("t");
        for i in 1..=d_x {
            header.push_str(&format!(",x{i}"));
        }
        for i in 1..=d_u {
            header.push_str(&format!(",u{i}"));
        }
        writeln!(out, "{header}")?;
        for ((t, x), u) in self.times.iter().zip(&self.states).zip(&self.inputs) {
            let mut row = format!("{t:.6}");
            for v in x.iter().chain(u.iter()) {
                row.push_str(&format!(",{v:.9e}"));
            }
            writeln!(out, "{row}")?;
        }
        Ok(())
    }
}

/// Classic fixed-step 4th-order integration of the closed loop
/// `ẋ = f(x,θ) + G(x,θ)u(x)` from `x0`, stopping early on divergence.
pub fn integrate(
    sys: &PolytopicSystem,
    controller: &(dyn Fn(&[Real]) -> DVector<Real> + Sync),
    x0: &DVector<Real>,
    theta: &[Real],
    cfg: &SimConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    let steps = (cfg.horizon / cfg.dt).round() as usize;
    let rhs = |x: &DVector<Real>| -> Result<DVector<Real>> {
        sys.closed_loop_rhs(&controller, x.as_slice(), theta)
    };

    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut inputs = Vec::with_capacity(steps + 1);
    let mut x = x0.clone();
    let mut status = TrajectoryStatus::Bounded;
    times.push(0.0);
    inputs.push(controller(x.as_slice()));
    states.push(x.clone());

    // A non-finite right-hand side is a trajectory escaping faster than
    // the norm bound can catch it, not a caller error.
    let stages = |x: &DVector<Real>, h: Real| -> Result<Option<DVector<Real>>> {
        let eval = |p: &DVector<Real>| match rhs(p) {
            Ok(k) if k.iter().all(|v| v.is_finite()) => Ok(Some(k)),
            Ok(_) | Err(crate::Error::NonFinite(_)) => Ok(None),
            Err(e) => Err(e),
        };
        let Some(k1) = eval(x)? else { return Ok(None) };
        let Some(k2) = eval(&(x + &k1 * (h / 2.0)))? else { return Ok(None) };
        let Some(k3) = eval(&(x + &k2 * (h / 2.0)))? else { return Ok(None) };
        let Some(k4) = eval(&(x + &k3 * h))? else { return Ok(None) };
        Ok(Some((k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)))
    };

    for step in 0..steps {
        let h = cfg.dt;
        match stages(&x, h)? {
            Some(dx) => x += dx,
            None => {
                status = TrajectoryStatus::Diverged;
                break;
            }
        }

        if !x.iter().all(|v| v.is_finite()) {
            status = TrajectoryStatus::Diverged;
            break;
        }
        times.push((step + 1) as Real * h);
        inputs.push(controller(x.as_slice()));
        states.push(x.clone());

        if x.norm() > cfg.x_max {
            status = TrajectoryStatus::Diverged;
            break;
        }
    }
    if status != TrajectoryStatus::Diverged && x.norm() < cfg.eps_conv {
        status = TrajectoryStatus::Converged;
    }
    Ok(Trajectory {
        times,
        states,
        inputs,
        status,
    })
}

/// Truncated cost `∫₀ᵀ q(x) + ½uᵀR(x)u dt` by composite trapezoidal
/// accumulation along the trajectory samples; diverged trajectories get
/// the +∞ sentinel.
pub fn trajectory_cost(traj: &Trajectory, q: &crate::Poly, r: &PolyMatrix<Real>) -> Result<Real> {
    if traj.status == TrajectoryStatus::Diverged {
        return Ok(Real::INFINITY);
    }
    let integrand = |x: &DVector<Real>, u: &DVector<Real>| -> Result<Real> {
        Ok(q.eval(x.as_slice()) + 0.5 * (r.eval(x.as_slice())? * u).dot(u))
    };
    let mut acc = 0.0;
    for i in 1..traj.times.len() {
        let h = traj.times[i] - traj.times[i - 1];
        let a = integrand(&traj.states[i - 1], &traj.inputs[i - 1])?;
        let b = integrand(&traj.states[i], &traj.inputs[i])?;
        acc += 0.5 * h * (a + b);
    }
    Ok(acc)
}

/// Expected-cost aggregate mirroring the reporting convention: one
/// diverged cell makes the whole aggregate "diverged" instead of
/// averaging a sentinel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostAggregate {
    Finite(Real),
    Diverged,
}

impl CostAggregate {
    pub fn as_finite(&self) -> Option<Real> {
        match self {
            CostAggregate::Finite(v) => Some(*v),
            CostAggregate::Diverged => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub theta_index: usize,
    pub x0_index: usize,
    pub prob: Real,
    pub cost: Real,
    pub status: TrajectoryStatus,
    pub final_norm: Real,
    /// Largest increase of V between consecutive samples, when a
    /// certificate was supplied (0 for a perfectly nonincreasing V).
    pub lyapunov_max_increase: Option<Real>,
}

#[derive(Debug, Clone)]
pub struct ExpectedCostReport {
    pub aggregate: CostAggregate,
    pub cells: Vec<CellResult>,
}

impl ExpectedCostReport {
    pub fn all_converged(&self, eps_conv: Real) -> bool {
        self.cells
            .iter()
            .all(|c| c.status == TrajectoryStatus::Converged && c.final_norm < eps_conv)
    }

    pub fn any_diverged(&self) -> bool {
        self.cells
            .iter()
            .any(|c| c.status == TrajectoryStatus::Diverged)
    }

    /// Largest Lyapunov increase over all cells carrying the check.
    pub fn lyapunov_max_increase(&self) -> Option<Real> {
        self.cells
            .iter()
            .filter_map(|c| c.lyapunov_max_increase)
            .fold(None, |acc, v| Some(acc.map_or(v, |a: Real| a.max(v))))
    }
}

/// Optional Lyapunov certificate to monitor along trajectories.
pub struct LyapunovMonitor<'a> {
    pub bases: &'a SosBases,
    pub p: &'a DMatrix<Real>,
}

/// Probability-weighted average of the truncated cost over all
/// (θ, x₀) support pairs, with per-cell detail. Cells run in parallel.
pub fn expected_cost(
    sys: &PolytopicSystem,
    controller: &(dyn Fn(&[Real]) -> DVector<Real> + Sync),
    q: &crate::Poly,
    r: &PolyMatrix<Real>,
    cfg: &SimConfig,
    monitor: Option<&LyapunovMonitor>,
) -> Result<ExpectedCostReport> {
    cfg.validate()?;
    let theta = sys.theta();
    let x0 = sys.x0();
    let mut pairs = Vec::new();
    for (ti, (tp, tprob)) in theta.iter().enumerate() {
        for (xi, (xp, xprob)) in x0.iter().enumerate() {
            pairs.push((ti, tp, xi, xp, tprob * xprob));
        }
    }

    let cells: Vec<CellResult> = pairs
        .par_iter()
        .map(|&(ti, tp, xi, xp, prob)| -> Result<CellResult> {
            let traj = integrate(sys, controller, xp, tp.as_slice(), cfg)?;
            let cost = trajectory_cost(&traj, q, r)?;
            let lyapunov_max_increase = match monitor {
                Some(m) => {
                    let p_bar = (m.p + m.p.transpose()) * 0.5;
                    let mut max_inc: Real = 0.0;
                    let mut prev = Real::INFINITY;
                    for x in &traj.states {
                        let z = m.bases.z().eval(x.as_slice())?;
                        let v = (&z.transpose() * &p_bar * &z)[(0, 0)];
                        if prev.is_finite() {
                            max_inc = max_inc.max(v - prev);
                        }
                        prev = v;
                    }
                    Some(max_inc)
                }
                None => None,
            };
            Ok(CellResult {
                theta_index: ti,
                x0_index: xi,
                prob,
                cost,
                status: traj.status,
                final_norm: traj.final_state().norm(),
                lyapunov_max_increase,
            })
        })
        .collect::<Result<_>>()?;

    let aggregate = if cells.iter().any(|c| c.status == TrajectoryStatus::Diverged) {
        CostAggregate::Diverged
    } else {
        CostAggregate::Finite(cells.iter().map(|c| c.prob * c.cost).sum())
    };
    Ok(ExpectedCostReport { aggregate, cells })
}

/// Per-cell status grid plus summary booleans; the Lyapunov cross-check
/// runs when a certificate is supplied.
pub fn stability_report(
    sys: &PolytopicSystem,
    controller: &(dyn Fn(&[Real]) -> DVector<Real> + Sync),
    q: &crate::Poly,
    r: &PolyMatrix<Real>,
    cfg: &SimConfig,
    monitor: Option<&LyapunovMonitor>,
) -> Result<ExpectedCostReport> {
    expected_cost(sys, controller, q, r, cfg, monitor)
}
