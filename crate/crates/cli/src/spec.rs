use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use relay_aoi::dtr::DtrThresholds;
use relay_aoi::sim::SimConfig;
use relay_aoi::{LinkParams, ResourceBudget, SystemState};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    SolveCmdp,
    EvalDtr,
    OptimizeDtr,
    Oracle,
    Simulate,
    Verify,
    Compare,
    Sweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SolveCmdp => "solve-cmdp",
            Command::EvalDtr => "eval-dtr",
            Command::OptimizeDtr => "optimize-dtr",
            Command::Oracle => "oracle",
            Command::Simulate => "simulate",
            Command::Verify => "verify",
            Command::Compare => "compare",
            Command::Sweep => "sweep",
        }
    }

    fn uses_budgets(self) -> bool {
        matches!(
            self,
            Command::SolveCmdp | Command::OptimizeDtr | Command::Compare | Command::Verify
        )
    }

    fn uses_thresholds(self) -> bool {
        !matches!(self, Command::SolveCmdp | Command::Compare)
    }

    /// Default caps of the truncated space.
    pub fn default_cap(self) -> u64 {
        match self {
            Command::Oracle | Command::Verify => relay_aoi::oracle::DEFAULT_CAP,
            _ => relay_aoi::cmdp::DEFAULT_CAP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(format!("unknown format `{s}` (expected csv or json)")),
        }
    }
}

/// Parameter lists; the command runs on their Cartesian product.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamGrid {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub eta_c: Vec<f64>,
    pub delta1: Vec<u64>,
    pub delta2: Vec<u64>,
}

impl ParamGrid {
    /// Defaults: `p = 0.6`, `q = 0.7`, budgets `0.25, 0.45, 0.65` where a
    /// budget is used, `delta1 in 1..=8` and `delta2 in 2..=8` where thresholds
    /// are listed, and search bounds of 30 for `optimize-dtr` and `compare`.
    pub fn defaults(command: Command) -> Self {
        let searches = matches!(command, Command::OptimizeDtr | Command::Compare);
        ParamGrid {
            p: vec![0.6],
            q: vec![0.7],
            eta_c: if command.uses_budgets() {
                vec![0.25, 0.45, 0.65]
            } else {
                Vec::new()
            },
            delta1: if searches {
                vec![30]
            } else {
                (1..=8).collect()
            },
            delta2: if searches {
                vec![30]
            } else {
                (2..=8).collect()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Options {
    /// Relay-age cap; the command's default when absent.
    pub k_max: Option<u64>,
    /// Age-gain cap; the command's default when absent.
    pub d_max: Option<u64>,
    pub horizon: u64,
    pub runs: u64,
    pub seed: u64,
    /// Multiplier tolerance for CMDP solves, agreement tolerance for `verify`.
    pub tol: Option<f64>,
    /// Worker threads; all cores when absent.
    pub workers: Option<usize>,
}

impl Default for Options {
    fn default() -> Self {
        Options {
            k_max: None,
            d_max: None,
            horizon: 1_000_000,
            runs: 20,
            seed: 0,
            tol: None,
            workers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OutputSpec {
    /// Table destination; standard output when absent.
    pub path: Option<PathBuf>,
    pub format: Format,
    /// JSON file for nested artifacts (policies, distributions, per-run results).
    pub detail_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub command: Command,
    pub grid: ParamGrid,
    pub options: Options,
    pub output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecError(pub String);

impl fmt::Display for SpecError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for SpecError {}

fn bad(msg: impl Into<String>) -> SpecError {
    SpecError(msg.into())
}

impl ExperimentSpec {
    pub fn new(command: Command) -> Self {
        ExperimentSpec {
            command,
            grid: ParamGrid::defaults(command),
            options: Options::default(),
            output: OutputSpec::default(),
        }
    }

    pub fn caps(&self) -> (u64, u64) {
        let cap = self.command.default_cap();
        (
            self.options.k_max.unwrap_or(cap),
            self.options.d_max.unwrap_or(cap),
        )
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        let g = &self.grid;
        if g.p.is_empty() || g.q.is_empty() {
            return Err(bad("--p and --q need at least one value"));
        }
        for &p in &g.p {
            for &q in &g.q {
                LinkParams::new(p, q).map_err(|e| bad(e.to_string()))?;
            }
        }
        if self.command.uses_budgets() && g.eta_c.is_empty() {
            return Err(bad(format!(
                "{} needs at least one --eta-c",
                self.command.name()
            )));
        }
        for &eta in &g.eta_c {
            ResourceBudget::new(eta).map_err(|e| bad(e.to_string()))?;
        }
        let needs_thresholds = self.command.uses_thresholds()
            && !(self.command == Command::Simulate && !g.eta_c.is_empty());
        if needs_thresholds && (g.delta1.is_empty() || g.delta2.is_empty()) {
            return Err(bad(format!(
                "{} needs at least one --delta1 and --delta2",
                self.command.name()
            )));
        }
        for &d1 in &g.delta1 {
            DtrThresholds::new(d1, 2).map_err(|e| bad(e.to_string()))?;
        }
        for &d2 in &g.delta2 {
            DtrThresholds::new(1, d2).map_err(|e| bad(e.to_string()))?;
        }
        let (k_max, d_max) = self.caps();
        relay_aoi::TruncatedStateSpace::new(k_max, d_max).map_err(|e| bad(e.to_string()))?;
        let o = &self.options;
        SimConfig::new(o.horizon, o.runs, o.seed, SystemState::synchronized())
            .map_err(|e| bad(e.to_string()))?;
        if let Some(tol) = o.tol {
            if !(tol.is_finite() && tol > 0.0) {
                return Err(bad(format!("--tol must be positive, got {tol}")));
            }
        }
        if o.workers == Some(0) {
            return Err(bad("--workers must be at least 1"));
        }
        Ok(())
    }
}

/// Parses `a,b,c` into reals.
pub fn parse_f64_list(s: &str) -> Result<Vec<f64>, String> {
    split(s)
        .map(|item| item.parse::<f64>().map_err(|e| format!("`{item}`: {e}")))
        .collect()
}

/// Parses `a,b..c` into integers; `b..c` is inclusive.
pub fn parse_u64_list(s: &str) -> Result<Vec<u64>, String> {
    let mut out = Vec::new();
    for item in split(s) {
        let num = |t: &str| {
            t.trim()
                .parse::<u64>()
                .map_err(|e| format!("`{item}`: {e}"))
        };
        match item.split_once("..") {
            Some((lo, hi)) => {
                let (lo, hi) = (num(lo)?, num(hi)?);
                if lo > hi {
                    return Err(format!("`{item}`: empty range"));
                }
                out.extend(lo..=hi);
            }
            None => out.push(num(item)?),
        }
    }
    Ok(out)
}

fn split(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|t| !t.is_empty())
}
