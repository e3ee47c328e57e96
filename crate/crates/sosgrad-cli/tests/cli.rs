//! End-to-end runs of the `sosgrad` binary against temp directories.

use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sosgrad"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "command {args:?} failed:\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("reading {path:?}: {e}"))
}

/// A one-state plant ẋ = a·x + g·u with two (identical) vertices, a single
/// parameter point, and a single initial state.
fn one_state_config(a: f64, g: f64) -> String {
    let vertex = |c: f64| {
        format!(
            r#"{{"rows": 1, "cols": 1, "terms": [{{"row": 0, "col": 0, "exponents": [0], "coeff": {c}}}]}}"#
        )
    };
    let f = vertex(a);
    let g = vertex(g);
    format!(
        r#"{{
  "state_dim": 1,
  "z_basis": [[1]],
  "f_vertices": [{f}, {f}],
  "g_vertices": [{g}, {g}],
  "input_dim": 1,
  "weights": {{"kind": "bilinear-corner", "lo": [0.0], "hi": [1.0]}},
  "theta_support": [{{"point": [0.5], "prob": 1.0}}],
  "x0_support": [{{"point": [1.0], "prob": 1.0}}]
}}"#
    )
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("system.json");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

const FAST_BENCH: &[&str] = &["--grid-step", "1.0", "--iterations", "3"];

#[test]
fn synth_artifacts_are_deterministic() {
    let tmp = TempDir::new().unwrap();
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    for out in [&out_a, &out_b] {
        run_ok(
            &[
                &["synth", "--out", out.to_str().unwrap()],
                FAST_BENCH,
            ]
            .concat(),
        );
    }
    for name in ["controller.json", "iterations.csv"] {
        assert_eq!(
            read(&out_a.join(name)),
            read(&out_b.join(name)),
            "{name} differs between identical runs"
        );
    }
    let controller: serde_json::Value =
        serde_json::from_str(&read(&out_a.join("controller.json"))).unwrap();
    assert_eq!(controller["format"], "sosgrad-controller-v1");
    assert_eq!(controller["state_dim"], 2);
    assert!(controller["certificate"].is_object());
    let csv = read(&out_a.join("iterations.csv"));
    assert_eq!(csv.lines().count(), 1 + 4, "header plus initial plus 3 steps");
}

#[test]
fn synth_with_zero_iterations_keeps_the_initialization() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    run_ok(&[
        "synth",
        "--out",
        out.to_str().unwrap(),
        "--grid-step",
        "1.0",
        "--iterations",
        "0",
    ]);
    let summary: serde_json::Value = serde_json::from_str(&read(&out.join("summary.json"))).unwrap();
    assert_eq!(summary["iterations_run"], 0);
    assert_eq!(read(&out.join("iterations.csv")).lines().count(), 2);

    // The no-opt mode is also initialization-only: identical controller.
    let out2 = tmp.path().join("noopt");
    run_ok(&[
        "synth",
        "--mode",
        "no-opt",
        "--out",
        out2.to_str().unwrap(),
        "--grid-step",
        "1.0",
    ]);
    let a: serde_json::Value = serde_json::from_str(&read(&out.join("controller.json"))).unwrap();
    let b: serde_json::Value = serde_json::from_str(&read(&out2.join("controller.json"))).unwrap();
    assert_eq!(a["w"], b["w"]);
    assert_eq!(b["mode"], "no-opt");
}

#[test]
fn no_stability_mode_emits_no_certificate() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("run");
    run_ok(
        &[
            &[
                "synth",
                "--mode",
                "no-stability",
                "--out",
                out.to_str().unwrap(),
            ],
            FAST_BENCH,
        ]
        .concat(),
    );
    let controller: serde_json::Value =
        serde_json::from_str(&read(&out.join("controller.json"))).unwrap();
    assert!(controller["certificate"].is_null());
}

#[test]
fn simulate_produces_the_cell_table_and_trajectories() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &one_state_config(-1.0, 1.0));
    let synth_out = tmp.path().join("synth");
    // The margin-maximizing initialization drives this plant to large
    // gains, so the closed loop is stiff: simulate with a small step and a
    // short horizon (the transient settles within milliseconds).
    run_ok(&[
        "synth",
        "--system",
        &cfg,
        "--out",
        synth_out.to_str().unwrap(),
        "--iterations",
        "0",
        "--grid-step",
        "0.5",
        "--phi-degree",
        "4",
    ]);
    let sim_out = tmp.path().join("sim");
    run_ok(&[
        "simulate",
        "--system",
        &cfg,
        "--controller",
        synth_out.join("controller.json").to_str().unwrap(),
        "--out",
        sim_out.to_str().unwrap(),
        "--horizon",
        "0.5",
        "--dt",
        "1e-5",
        "--grid-step",
        "0.5",
        "--phi-degree",
        "4",
    ]);
    let table: serde_json::Value =
        serde_json::from_str(&read(&sim_out.join("expected_cost.json"))).unwrap();
    assert_eq!(table["cells"].as_array().unwrap().len(), 1);
    assert_eq!(table["diverged"], false);
    assert!(table["expected_cost"].as_f64().unwrap() > 0.0);
    // One (θ, x₀) cell, certificate present, so the monitor ran.
    assert!(table["cells"][0]["lyapunov_max_increase"].as_f64().unwrap() <= 1e-8);
    assert_eq!(read(&sim_out.join("cells.csv")).lines().count(), 2);
    assert!(sim_out.join("trajectories").join("theta00_x0.csv").exists());
}

#[test]
fn report_merges_runs_and_is_idempotent() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &one_state_config(-1.0, 1.0));
    let root = tmp.path().join("runs");
    let synth_out = root.join("synth");
    run_ok(&[
        "synth",
        "--system",
        &cfg,
        "--out",
        synth_out.to_str().unwrap(),
        "--iterations",
        "0",
        "--grid-step",
        "0.5",
        "--phi-degree",
        "4",
    ]);
    run_ok(&[
        "simulate",
        "--system",
        &cfg,
        "--controller",
        synth_out.join("controller.json").to_str().unwrap(),
        "--out",
        synth_out.to_str().unwrap(),
        "--horizon",
        "0.5",
        "--dt",
        "1e-5",
        "--grid-step",
        "0.5",
        "--phi-degree",
        "4",
    ]);
    run_ok(&["report", "--dir", root.to_str().unwrap()]);
    let first = read(&root.join("report.json"));
    let report: serde_json::Value = serde_json::from_str(&first).unwrap();
    let runs = report["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 1);
    assert_eq!(runs[0]["name"], "synth");
    assert_eq!(runs[0]["mode"], "synth");
    assert!(runs[0]["expected_cost"].as_f64().unwrap() > 0.0);
    assert!(root.join("objective_synth.csv").exists());

    run_ok(&["report", "--dir", root.to_str().unwrap()]);
    assert_eq!(first, read(&root.join("report.json")), "report must be idempotent");
}

#[test]
fn moment_cache_round_trip_gives_identical_controllers() {
    let tmp = TempDir::new().unwrap();
    let cache = tmp.path().join("moments.json");
    let out_a = tmp.path().join("a");
    let out_b = tmp.path().join("b");
    for out in [&out_a, &out_b] {
        run_ok(&[
            "synth",
            "--out",
            out.to_str().unwrap(),
            "--grid-step",
            "1.0",
            "--iterations",
            "1",
            "--moment-cache",
            cache.to_str().unwrap(),
        ]);
    }
    assert!(cache.exists());
    assert_eq!(
        read(&out_a.join("controller.json")),
        read(&out_b.join("controller.json"))
    );
}

fn expect_failure(args: &[&str], code: i32) -> serde_json::Value {
    let out = bin().args(args).output().expect("binary runs");
    assert_eq!(
        out.status.code(),
        Some(code),
        "expected exit {code} from {args:?}; stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("error line on stderr");
    serde_json::from_str(line).expect("stderr carries a JSON error object")
}

#[test]
fn uncontrollable_plant_exits_with_the_infeasible_code() {
    let tmp = TempDir::new().unwrap();
    // Unstable drift, zero input matrix: no certificate can exist.
    let cfg = write_config(tmp.path(), &one_state_config(1.0, 0.0));
    let payload = expect_failure(
        &[
            "synth",
            "--system",
            &cfg,
            "--out",
            tmp.path().join("out").to_str().unwrap(),
            "--grid-step",
            "0.5",
            "--phi-degree",
            "4",
        ],
        2,
    );
    assert_eq!(payload["error"]["exit_code"], 2);
}

#[test]
fn missing_artifacts_exit_with_the_config_code() {
    let tmp = TempDir::new().unwrap();
    let payload = expect_failure(
        &[
            "simulate",
            "--controller",
            tmp.path().join("nope.json").to_str().unwrap(),
            "--out",
            tmp.path().join("out").to_str().unwrap(),
        ],
        4,
    );
    assert_eq!(payload["error"]["exit_code"], 4);

    let empty = tmp.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    expect_failure(&["report", "--dir", empty.to_str().unwrap()], 4);
}

#[test]
fn unknown_mode_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    expect_failure(
        &[
            "synth",
            "--mode",
            "banana",
            "--out",
            tmp.path().join("out").to_str().unwrap(),
            "--grid-step",
            "1.0",
        ],
        4,
    );
}
