use sosgrad::{benchmark, costfit, optimize, sdpsolve, simulate, soscert};
use sosgrad::optimize::{ObjectiveMode, OptimizeDeps};
use sosgrad::simulate::SimConfig;

fn main() {
    let sys = benchmark::system();
    let bases = benchmark::sos_bases();
    let structure = soscert::build_structure(&bases).unwrap();
    let init = sdpsolve::initialize(&bases, &structure, &sys, &Default::default()).unwrap();
    println!("eps2 {:.4e} |w0| {:.4e}", init.eps2, init.w0.norm());
    let model = benchmark::cost_model();
    let measure = benchmark::weight_measure();
    let key = costfit::moment_cache_key(&model, &sys, &measure);
    let cache = costfit::compute_moments(&model, &sys, &measure, key).unwrap();
    let deps = OptimizeDeps::new(&sys, &bases, &structure, &cache).unwrap();
    let sim = SimConfig { dt: 1e-4, ..benchmark::sim_defaults() };

    let c0 = model.controller_fn(&init.w0).unwrap();
    let rep0 = simulate::expected_cost(&sys, &c0, model.q(), model.r(), &sim, None).unwrap();
    println!("no-opt sim {:?}", rep0.aggregate);

    let cfg = benchmark::optimizer_defaults();
    let out = optimize::run(&deps, &cfg, init.w0.clone(), init.p0.clone(), init.r.clone()).unwrap();
    let last = out.history.last().unwrap();
    println!("proposed fitted {:.4e} alpha {:.3e} t_min {:.3e}", last.cost_term, last.alpha, last.t_min_eig);
    let ctrl = model.controller_fn(&out.w).unwrap();
    let rep = simulate::expected_cost(&sys, &ctrl, model.q(), model.r(), &sim, None).unwrap();
    println!("proposed sim {:?} all_conv {}", rep.aggregate, rep.all_converged(sim.eps_conv));

    let mut cfg_gain = benchmark::optimizer_defaults();
    cfg_gain.mode = ObjectiveMode::GainNormPlusPenalty;
    let ng = optimize::run(&deps, &cfg_gain, init.w0.clone(), init.p0.clone(), init.r.clone()).unwrap();
    let cg = model.controller_fn(&ng.w).unwrap();
    let repg = simulate::expected_cost(&sys, &cg, model.q(), model.r(), &sim, None).unwrap();
    println!("no-optimality sim {:?}", repg.aggregate);
}
