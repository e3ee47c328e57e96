//! The three pipeline commands.

use std::path::{Path, PathBuf};

use clap::Args;
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use sosgrad::costfit::{self, MomentCache};
use sosgrad::optimize::{self, IterationRecord, ObjectiveMode, OptimizeDeps, OptimizerConfig};
use sosgrad::polyalg::inv_vec;
use sosgrad::sdpsolve::{self, SdpOptions};
use sosgrad::simulate::{self, LyapunovMonitor, SimConfig};
use sosgrad::soscert;
use sosgrad::{Error, Real, Result};

use crate::artifacts::{
    from_rows, write_iteration_csv, CertificateRecord, ControllerFile, SimTable, Summary,
};
use crate::problem::{Problem, ProblemArgs};

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Objective variant: synth (full method), no-opt (initialization
    /// only), no-optimality (gain shrinking), no-stability (no penalty).
    #[arg(long, default_value = "synth")]
    pub mode: String,
    /// Output directory (created if absent).
    #[arg(long)]
    pub out: PathBuf,
    /// Iteration budget N.
    #[arg(long, default_value_t = 2000)]
    pub iterations: usize,
    /// Penalty weight κ.
    #[arg(long, default_value_t = 0.1)]
    pub kappa: Real,
    /// Infeasibility penalty value ρ_ub.
    #[arg(long, default_value_t = 1e20)]
    pub rho_ub: Real,
    /// Sufficient-decrease coefficient χ.
    #[arg(long, default_value_t = 1e-4)]
    pub chi: Real,
    /// Initial trial step α_ini.
    #[arg(long, default_value_t = 0.01)]
    pub alpha_init: Real,
    /// Backtracking factor γ_α.
    #[arg(long, default_value_t = 0.5)]
    pub gamma_alpha: Real,
    /// Fit regularization η.
    #[arg(long, default_value_t = 0.0)]
    pub eta: Real,
    /// Lower bound on the expected fitted cost.
    #[arg(long, default_value_t = -1e12, allow_hyphen_values = true)]
    pub cost_lower_bound: Real,
    /// Moment-cache file: loaded when present and key-compatible,
    /// (re)written otherwise.
    #[arg(long)]
    pub moment_cache: Option<PathBuf>,
    /// Recorded in the artifacts for provenance (the pipeline itself is
    /// deterministic).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn optimizer_config(args: &SynthArgs, mode: ObjectiveMode) -> OptimizerConfig {
    OptimizerConfig {
        iterations: args.iterations,
        kappa: args.kappa,
        rho_ub: args.rho_ub,
        chi: args.chi,
        alpha_init: args.alpha_init,
        gamma_alpha: args.gamma_alpha,
        eta: args.eta,
        cost_lower_bound: args.cost_lower_bound,
        mode,
    }
}

fn obtain_moments(problem: &Problem, path: Option<&Path>) -> Result<MomentCache> {
    let key = costfit::moment_cache_key(&problem.model, &problem.sys, &problem.measure);
    if let Some(path) = path {
        if path.exists() {
            match MomentCache::load(path, key) {
                Ok(cache) => return Ok(cache),
                Err(_) => eprintln!(
                    "moment cache {path:?} is stale or incompatible; recomputing"
                ),
            }
        }
    }
    let cache = costfit::compute_moments(&problem.model, &problem.sys, &problem.measure, key)?;
    if let Some(path) = path {
        cache.save(path)?;
    }
    Ok(cache)
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let started = std::time::Instant::now();
    let problem = args.problem.build()?;
    let structure = soscert::build_structure(&problem.bases)?;
    let init = sdpsolve::initialize(&problem.bases, &structure, &problem.sys, &SdpOptions::default())?;
    let cache = obtain_moments(&problem, args.moment_cache.as_deref())?;
    let deps = OptimizeDeps::new(&problem.sys, &problem.bases, &structure, &cache)?;

    let objective_mode = match args.mode.as_str() {
        "synth" => Some(ObjectiveMode::CostPlusPenalty),
        "no-opt" => None,
        "no-optimality" => Some(ObjectiveMode::GainNormPlusPenalty),
        "no-stability" => Some(ObjectiveMode::CostOnly),
        other => {
            return Err(Error::BadConfig(format!(
                "unknown mode {other:?}; expected synth, no-opt, no-optimality, or no-stability"
            )))
        }
    };

    let state = match objective_mode {
        Some(mode) => optimize::run(
            &deps,
            &optimizer_config(args, mode),
            init.w0.clone(),
            init.p0.clone(),
            init.r.clone(),
        )?,
        // Initialization only: the gradient loop is never entered, the
        // single history record describes the initial point.
        None => {
            let cfg = optimizer_config(args, ObjectiveMode::CostPlusPenalty);
            let value = optimize::objective(&deps, &cfg, &init.w0, &init.p0, &init.r)?;
            let (gw, gp, gr) =
                optimize::full_gradient(&deps, &cfg, &init.w0, &init.p0, &init.r)?;
            let cert = soscert::certificate(
                &structure,
                &problem.bases,
                &problem.sys,
                &init.w0,
                &init.p0,
                &init.r,
            )?;
            optimize::DecisionState {
                w: init.w0.clone(),
                p: init.p0.clone(),
                r: init.r.clone(),
                iteration: 0,
                history: vec![IterationRecord {
                    iteration: 0,
                    objective: value.total,
                    cost_term: value.cost,
                    penalty_term: value.penalty,
                    alpha: 0.0,
                    grad_norm_sq: gw.norm_squared()
                        + gp.norm_squared()
                        + gr.norm_squared(),
                    p_min_eig: cert.p_min_eig,
                    t_min_eig: cert
                        .t_min_eigs
                        .iter()
                        .cloned()
                        .fold(Real::INFINITY, Real::min),
                    wolfe_ok: true,
                    monotone_ok: true,
                    above_lower_bound: value.cost >= cfg.cost_lower_bound,
                    wall_time_s: started.elapsed().as_secs_f64(),
                }],
                step_underflow: false,
                early_stop: false,
            }
        }
    };

    std::fs::create_dir_all(&args.out)?;
    let certificate = match args.mode.as_str() {
        // The unpenalized baseline carries no stability certificate.
        "no-stability" => None,
        _ => {
            let cert = soscert::certificate(
                &structure,
                &problem.bases,
                &problem.sys,
                &state.w,
                &state.p,
                &state.r,
            )?;
            Some(CertificateRecord {
                p: (0..state.p.nrows())
                    .map(|i| (0..state.p.ncols()).map(|j| state.p[(i, j)]).collect())
                    .collect(),
                r: (0..state.r.nrows())
                    .map(|i| (0..state.r.ncols()).map(|j| state.r[(i, j)]).collect())
                    .collect(),
                p_min_eig: cert.p_min_eig,
                t_min_eigs: cert.t_min_eigs.clone(),
                eps1: init.eps1,
                eps2: init.eps2,
            })
        }
    };

    let w_matrix = inv_vec(
        &state.w,
        problem.model.d_z_cap(),
        problem.bases.z().len(),
    )?;
    let controller = ControllerFile::new(
        &args.mode,
        problem.bases.z(),
        &problem.z_cap,
        problem.model.d_u(),
        &w_matrix,
        certificate,
        args.seed,
    );
    controller.save(&args.out.join("controller.json"))?;
    write_iteration_csv(&args.out.join("iterations.csv"), &state.history)?;

    let last = state.history.last().expect("history has the initial record");
    Summary {
        mode: args.mode.clone(),
        system: args.problem.system.clone(),
        iterations_run: state.iteration,
        step_underflow: state.step_underflow,
        early_stop: state.early_stop,
        final_objective: last.objective,
        final_cost: last.cost_term,
        final_penalty: last.penalty_term,
        eps1: init.eps1,
        eps2: init.eps2,
        all_wolfe_ok: state.history.iter().all(|r| r.wolfe_ok),
        all_pd_ok: args.mode != "no-stability" && state.history.iter().all(|r| r.pd_ok()),
        moment_cache_key: format!("{:016x}", cache.key()),
        wall_time_s: started.elapsed().as_secs_f64(),
    }
    .save(&args.out.join("summary.json"))?;
    println!(
        "synth ({}) finished: {} iterations, objective {:.6}",
        args.mode, state.iteration, last.objective
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Controller file produced by `synth`.
    #[arg(long)]
    pub controller: PathBuf,
    /// Output directory (created if absent).
    #[arg(long)]
    pub out: PathBuf,
    /// Truncation horizon T.
    #[arg(long, default_value_t = 30.0)]
    pub horizon: Real,
    /// Integration step.
    #[arg(long, default_value_t = 1e-3)]
    pub dt: Real,
    /// Divergence bound on ‖x‖.
    #[arg(long, default_value_t = 1e6)]
    pub x_max: Real,
    /// Convergence threshold on ‖x(T)‖.
    #[arg(long, default_value_t = 1e-2)]
    pub eps_conv: Real,
    /// Keep every n-th sample in the trajectory CSVs (0 disables them).
    #[arg(long, default_value_t = 100)]
    pub trajectory_stride: usize,
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let problem = args.problem.build()?;
    let file = ControllerFile::load(&args.controller)?;
    if file.state_dim != problem.sys.state_dim() {
        return Err(Error::BadConfig(format!(
            "controller is for a {}-state plant, the system has {} states",
            file.state_dim,
            problem.sys.state_dim()
        )));
    }
    let controller = file.closure()?;
    let cfg = SimConfig {
        horizon: args.horizon,
        dt: args.dt,
        x_max: args.x_max,
        eps_conv: args.eps_conv,
    };

    // Lyapunov cross-check when the file carries a certificate for the
    // same z basis the plant uses.
    let p_matrix = match &file.certificate {
        Some(cert) => Some(from_rows(&cert.p)?),
        None => None,
    };
    let same_z = file.z_exponents
        == problem
            .bases
            .z()
            .entries()
            .iter()
            .map(|m| m.exponents().to_vec())
            .collect::<Vec<_>>();
    let monitor = match (&p_matrix, same_z) {
        (Some(p), true) => Some(LyapunovMonitor {
            bases: &problem.bases,
            p,
        }),
        _ => None,
    };

    let report = simulate::expected_cost(
        &problem.sys,
        &controller,
        problem.model.q(),
        problem.model.r(),
        &cfg,
        monitor.as_ref(),
    )?;

    std::fs::create_dir_all(&args.out)?;
    let table = SimTable::from_report(&file.mode, &report, cfg.eps_conv);
    table.save(&args.out.join("expected_cost.json"))?;
    table.write_cells_csv(&args.out.join("cells.csv"))?;

    if args.trajectory_stride > 0 {
        write_trajectories(&problem, &controller, &cfg, args)?;
    }

    match table.expected_cost {
        Some(v) => println!("expected cost {v:.4} over {} cells", table.cells.len()),
        None => println!("diverged: at least one (θ, x₀) cell escaped"),
    }
    Ok(())
}

fn write_trajectories(
    problem: &Problem,
    controller: &(impl Fn(&[Real]) -> DVector<Real> + Sync),
    cfg: &SimConfig,
    args: &SimulateArgs,
) -> Result<()> {
    let dir = args.out.join("trajectories");
    std::fs::create_dir_all(&dir)?;
    let mut pairs = Vec::new();
    for (ti, (tp, _)) in problem.sys.theta().iter().enumerate() {
        for (xi, (xp, _)) in problem.sys.x0().iter().enumerate() {
            pairs.push((ti, tp.clone(), xi, xp.clone()));
        }
    }
    pairs
        .par_iter()
        .map(|(ti, tp, xi, xp)| -> Result<()> {
            let mut traj =
                simulate::integrate(&problem.sys, controller, xp, tp.as_slice(), cfg)?;
            let stride = args.trajectory_stride;
            let keep = |i: usize, n: usize| i % stride == 0 || i + 1 == n;
            let n = traj.times.len();
            traj.times = thin(&traj.times, n, keep);
            traj.states = thin(&traj.states, n, keep);
            traj.inputs = thin(&traj.inputs, n, keep);
            let mut out = std::fs::File::create(dir.join(format!("theta{ti:02}_x{xi}.csv")))?;
            traj.write_csv(&mut out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(())
}

fn thin<T: Clone>(v: &[T], n: usize, keep: impl Fn(usize, usize) -> bool) -> Vec<T> {
    v.iter()
        .enumerate()
        .filter(|(i, _)| keep(*i, n))
        .map(|(_, x)| x.clone())
        .collect()
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Directory holding one subdirectory per run (or the artifacts
    /// directly).
    #[arg(long)]
    pub dir: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
struct ReportRow {
    name: String,
    mode: Option<String>,
    iterations_run: Option<usize>,
    final_objective: Option<Real>,
    expected_cost: Option<Real>,
    diverged: Option<bool>,
}

pub fn report(args: &ReportArgs) -> Result<()> {
    let mut candidates = vec![args.dir.clone()];
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(&args.dir)
        .map_err(|e| Error::MissingArtifact(format!("report directory {:?}: {e}", args.dir)))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    candidates.extend(subdirs);

    let mut rows = Vec::new();
    for dir in &candidates {
        let summary_path = dir.join("summary.json");
        let table_path = dir.join("expected_cost.json");
        if !summary_path.exists() && !table_path.exists() {
            continue;
        }
        let name = if dir == &args.dir {
            ".".to_string()
        } else {
            dir.file_name().unwrap_or_default().to_string_lossy().into_owned()
        };
        let summary: Option<Summary> = summary_path
            .exists()
            .then(|| -> Result<Summary> {
                Ok(serde_json::from_str(&std::fs::read_to_string(&summary_path)?)?)
            })
            .transpose()?;
        let table: Option<SimTable> = table_path
            .exists()
            .then(|| -> Result<SimTable> {
                Ok(serde_json::from_str(&std::fs::read_to_string(&table_path)?)?)
            })
            .transpose()?;
        rows.push(ReportRow {
            name,
            mode: summary
                .as_ref()
                .map(|s| s.mode.clone())
                .or_else(|| table.as_ref().map(|t| t.controller_mode.clone())),
            iterations_run: summary.as_ref().map(|s| s.iterations_run),
            final_objective: summary.as_ref().map(|s| s.final_objective),
            expected_cost: table.as_ref().and_then(|t| t.expected_cost),
            diverged: table.as_ref().map(|t| t.diverged),
        });

        // Plot-ready objective-vs-iteration extraction.
        let iter_path = dir.join("iterations.csv");
        if iter_path.exists() {
            let text = std::fs::read_to_string(&iter_path)?;
            let mut out = String::from("iteration,objective\n");
            let header: Vec<&str> = IterationRecord::CSV_HEADER.split(',').collect();
            let obj_col = header.iter().position(|&h| h == "objective").unwrap();
            for line in text.lines().skip(1) {
                let cols: Vec<&str> = line.split(',').collect();
                if cols.len() > obj_col {
                    out.push_str(&format!("{},{}\n", cols[0], cols[obj_col]));
                }
            }
            let name = rows.last().unwrap().name.replace('.', "root");
            std::fs::write(args.dir.join(format!("objective_{name}.csv")), out)?;
        }
    }

    if rows.is_empty() {
        return Err(Error::MissingArtifact(format!(
            "no summary.json or expected_cost.json under {:?}; run synth and simulate first",
            args.dir
        )));
    }
    let payload = serde_json::json!({ "runs": rows });
    std::fs::write(
        args.dir.join("report.json"),
        serde_json::to_string_pretty(&payload)? + "\n",
    )?;
    println!("report covers {} run(s)", rows.len());
    Ok(())
}
