//! Command-line pipeline: controller synthesis (`synth`), closed-loop
//! evaluation (`simulate`), and artifact aggregation (`report`).

mod artifacts;
mod commands;
mod problem;

use clap::Parser;

use sosgrad::Error;

#[derive(Parser)]
#[command(name = "sosgrad", version, about = "Polynomial feedback-controller synthesis for input-affine plants with time-invariant stochastic parameters")]
enum Cli {
    /// Synthesize a controller (full method or one of the baselines).
    Synth(commands::SynthArgs),
    /// Simulate a synthesized controller over the (θ, x₀) support.
    Simulate(commands::SimulateArgs),
    /// Merge synthesis and simulation artifacts into one report.
    Report(commands::ReportArgs),
}

/// Exit codes: 0 success, 2 infeasible, 3 numerical failure, 4 bad config.
fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Infeasible(_) | Error::InfeasiblePoint => 2,
        Error::SingularFit
        | Error::NonFinite(_)
        | Error::MaxIterations
        | Error::StepUnderflow
        | Error::BasisOverflow(_)
        | Error::SimplexViolation { .. }
        | Error::UnrepresentableMonomial(_) => 3,
        _ => 4,
    }
}

fn main() {
    let result = match Cli::parse() {
        Cli::Synth(args) => commands::synth(&args),
        Cli::Simulate(args) => commands::simulate(&args),
        Cli::Report(args) => commands::report(&args),
    };
    if let Err(e) = result {
        let code = exit_code(&e);
        let payload = serde_json::json!({
            "error": {
                "kind": format!("{e:?}").split([' ', '(', '{']).next().unwrap_or("Unknown"),
                "message": e.to_string(),
                "exit_code": code,
            }
        });
        eprintln!("{payload}");
        std::process::exit(code);
    }
}
