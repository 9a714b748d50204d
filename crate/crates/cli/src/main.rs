use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use relay_aoi_cli::{
    parse_f64_list, parse_u64_list, run, Command, ExperimentSpec, Format, SpecError,
};

/// Age-of-information experiments for a two-hop relay.
///
/// List flags take comma-separated values; integer lists also accept
/// inclusive ranges such as `1..8`. Exit status is 0 on success, 1 when a
/// cell fails or `verify` finds a violation, and 2 on usage errors.
#[derive(Debug, Parser)]
#[command(name = "relay-aoi", version)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    #[command(flatten)]
    args: Args,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Sub {
    /// Constrained optimum: Lagrangian bracketing and the two-policy mixture.
    SolveCmdp,
    /// Closed-form average AoI and forwarding rate of threshold policies.
    EvalDtr,
    /// Best threshold pair under each budget; delta lists give the search bounds.
    OptimizeDtr,
    /// Numerical stationary solve of the threshold chain.
    Oracle,
    /// Monte-Carlo estimates; budgets select CMDP mixtures, else threshold policies.
    Simulate,
    /// Recurrence, closed-form, branch and structure checks.
    Verify,
    /// CMDP mixture against the best threshold policy.
    Compare,
    /// Closed form next to simulation over a threshold grid.
    Sweep,
}

#[derive(Debug, Clone, clap::Args)]
struct Args {
    /// Source-to-relay success probabilities.
    #[arg(long, global = true, value_parser = f64_list)]
    p: Option<F64List>,
    /// Relay-to-destination success probabilities.
    #[arg(long, global = true, value_parser = f64_list)]
    q: Option<F64List>,
    /// Forwarding budgets.
    #[arg(long = "eta-c", global = true, value_parser = f64_list)]
    eta_c: Option<F64List>,
    /// Relay-age thresholds.
    #[arg(long, global = true, value_parser = u64_list)]
    delta1: Option<U64List>,
    /// Age-gain thresholds.
    #[arg(long, global = true, value_parser = u64_list)]
    delta2: Option<U64List>,
    /// Relay-age cap of the truncated space.
    #[arg(long, global = true)]
    kmax: Option<u64>,
    /// Age-gain cap of the truncated space.
    #[arg(long, global = true)]
    dmax: Option<u64>,
    /// Slots per simulation run [default: 1000000].
    #[arg(long, global = true)]
    horizon: Option<u64>,
    /// Independent simulation runs [default: 20].
    #[arg(long, global = true)]
    runs: Option<u64>,
    /// Master seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Multiplier tolerance (CMDP solves) or agreement tolerance (verify).
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Table output file; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Table format.
    #[arg(long, global = true, default_value = "csv")]
    format: Format,
    /// JSON file for policies, distributions and per-run results.
    #[arg(long = "detail-out", global = true)]
    detail_out: Option<PathBuf>,
    /// Worker threads; all cores when absent.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Horizon 10^7 with 1000 runs unless given explicitly.
    #[arg(long = "full-scale", global = true)]
    full_scale: bool,
}

#[derive(Debug, Clone)]
struct F64List(Vec<f64>);

#[derive(Debug, Clone)]
struct U64List(Vec<u64>);

fn f64_list(s: &str) -> Result<F64List, String> {
    parse_f64_list(s).map(F64List)
}

fn u64_list(s: &str) -> Result<U64List, String> {
    parse_u64_list(s).map(U64List)
}

fn command(sub: Sub) -> Command {
    match sub {
        Sub::SolveCmdp => Command::SolveCmdp,
        Sub::EvalDtr => Command::EvalDtr,
        Sub::OptimizeDtr => Command::OptimizeDtr,
        Sub::Oracle => Command::Oracle,
        Sub::Simulate => Command::Simulate,
        Sub::Verify => Command::Verify,
        Sub::Compare => Command::Compare,
        Sub::Sweep => Command::Sweep,
    }
}

fn build_spec(cli: Cli) -> Result<ExperimentSpec, SpecError> {
    let mut spec = ExperimentSpec::new(command(cli.command));
    let a = cli.args;
    let g = &mut spec.grid;
    if let Some(v) = a.p {
        g.p = v.0;
    }
    if let Some(v) = a.q {
        g.q = v.0;
    }
    if let Some(v) = a.eta_c {
        g.eta_c = v.0;
    }
    if let Some(v) = a.delta1 {
        g.delta1 = v.0;
    }
    if let Some(v) = a.delta2 {
        g.delta2 = v.0;
    }
    let o = &mut spec.options;
    if a.full_scale {
        o.horizon = 10_000_000;
        o.runs = 1000;
    }
    o.horizon = a.horizon.unwrap_or(o.horizon);
    o.runs = a.runs.unwrap_or(o.runs);
    o.k_max = a.kmax;
    o.d_max = a.dmax;
    o.seed = a.seed;
    o.tol = a.tol;
    o.workers = a.workers;
    spec.output.path = a.out;
    spec.output.format = a.format;
    spec.output.detail_path = a.detail_out;
    spec.validate()?;
    Ok(spec)
}

fn main() -> ExitCode {
    let spec = match build_spec(Cli::parse()) {
        Ok(spec) => spec,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match run(&spec) {
        Ok(outcome) => {
            eprintln!(
                "{}: {} rows, {} failed cells, {} violations",
                spec.command.name(),
                outcome.table.rows.len(),
                outcome.failed_cells,
                outcome.violations
            );
            if outcome.success() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
