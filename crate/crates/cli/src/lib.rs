//! Experiment runner for the two-hop relay age-of-information model.
//!
//! An [`ExperimentSpec`] names a command and a parameter grid; [`run`]
//! evaluates every grid cell in parallel, collects the rows in grid order and
//! writes one table (CSV or JSON) plus an optional JSON file of nested
//! artifacts.

mod commands;
mod spec;
mod table;

use std::fs::File;
use std::io::{self, BufWriter, Write};

use anyhow::Context;

pub use commands::{execute, RunOutcome, AGREEMENT_TOLERANCE};
pub use spec::{
    parse_f64_list, parse_u64_list, Command, ExperimentSpec, Format, Options, OutputSpec,
    ParamGrid, SpecError,
};
pub use table::Table;

/// Executes `spec` and writes its outputs.
pub fn run(spec: &ExperimentSpec) -> anyhow::Result<RunOutcome> {
    let outcome = execute(spec)?;
    match &spec.output.path {
        Some(path) => {
            let file =
                File::create(path).with_context(|| format!("creating {}", path.display()))?;
            let mut w = BufWriter::new(file);
            outcome.table.write(spec.output.format, &mut w)?;
            w.flush()?;
        }
        None => outcome
            .table
            .write(spec.output.format, io::stdout().lock())?,
    }
    if let Some(path) = &spec.output.detail_path {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, &outcome.detail)?;
        w.flush()?;
    }
    Ok(outcome)
}
