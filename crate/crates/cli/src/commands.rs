use anyhow::{ensure, Context};
use rayon::prelude::*;
use relay_aoi::cmdp::{
    cmdp_solve_with, policy_long_run_metrics, verify_switching_structure, DeterministicPolicy,
    MixedPolicy, RviConfig, MULTIPLIER_TOLERANCE,
};
use relay_aoi::dtr::{
    dtr_action, dtr_avg_aoi, dtr_forwarding_rate, optimize_thresholds, CaseBranch,
    ClosedFormDistribution, DtrThresholds,
};
use relay_aoi::oracle::{build_chain, solve_stationary, verify_lemma_recurrences, OracleReport};
use relay_aoi::sim::{simulate, simulate_mixed, SimConfig, SimResult};
use relay_aoi::{LinkParams, ResourceBudget, SystemState, TruncatedStateSpace};
use serde_json::{json, Map, Value};

use crate::spec::{Command, ExperimentSpec};
use crate::table::Table;

/// Default closed-form agreement tolerance of `verify`.
pub const AGREEMENT_TOLERANCE: f64 = 1e-8;

/// Relative tolerance for the two branch formulas on their shared boundary.
const BRANCH_TOLERANCE: f64 = 1e-12;

/// Stationary masses below this are left out of distribution artifacts.
const MASS_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Cell {
    p: f64,
    q: f64,
    eta_c: Option<f64>,
    thresholds: Option<(u64, u64)>,
}

impl Cell {
    fn link(&self) -> anyhow::Result<LinkParams> {
        Ok(LinkParams::new(self.p, self.q)?)
    }

    fn budget(&self) -> anyhow::Result<ResourceBudget> {
        let eta = self.eta_c.context("cell has no budget")?;
        Ok(ResourceBudget::new(eta)?)
    }

    fn dtr(&self) -> anyhow::Result<DtrThresholds> {
        let (d1, d2) = self.thresholds.context("cell has no thresholds")?;
        Ok(DtrThresholds::new(d1, d2)?)
    }

    fn base_row(&self) -> Map<String, Value> {
        let mut row = Map::new();
        row.insert("p".into(), json!(self.p));
        row.insert("q".into(), json!(self.q));
        if let Some(eta) = self.eta_c {
            row.insert("eta_c".into(), json!(eta));
        }
        if let Some((d1, d2)) = self.thresholds {
            row.insert("delta1".into(), json!(d1));
            row.insert("delta2".into(), json!(d2));
        }
        row
    }
}

#[derive(Debug, Default)]
struct CellOutput {
    rows: Vec<Map<String, Value>>,
    detail: Option<Value>,
    violations: usize,
}

/// Result of running a spec, before anything is written.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub table: Table,
    /// Nested artifacts, one entry per cell that produced any.
    pub detail: Vec<Value>,
    pub failed_cells: usize,
    pub violations: usize,
}

impl RunOutcome {
    pub fn success(&self) -> bool {
        self.failed_cells == 0 && self.violations == 0
    }
}

struct Settings {
    space: TruncatedStateSpace,
    rvi: RviConfig,
    sim: SimConfig,
    multiplier_tolerance: f64,
    agreement_tolerance: f64,
    delta1_bound: u64,
    delta2_bound: u64,
}

fn columns(command: Command) -> Vec<&'static str> {
    let mut cols: Vec<&'static str> = match command {
        Command::SolveCmdp => vec![
            "p",
            "q",
            "eta_c",
            "lambda1",
            "lambda2",
            "alpha",
            "theta1_visit_probability",
            "differing_states",
            "avg_aoi",
            "forwarding_rate",
            "exact",
        ],
        Command::EvalDtr => vec![
            "p",
            "q",
            "delta1",
            "delta2",
            "case",
            "avg_aoi",
            "exact",
            "forwarding_rate",
        ],
        Command::OptimizeDtr => vec![
            "p",
            "q",
            "eta_c",
            "delta1",
            "delta2",
            "avg_aoi",
            "exact",
            "forwarding_rate",
        ],
        Command::Oracle => vec![
            "p",
            "q",
            "delta1",
            "delta2",
            "avg_aoi",
            "forwarding_rate",
            "exact",
            "residual",
            "boundary_mass",
            "closed_form_aoi",
            "closed_form_exact",
            "aoi_abs_error",
            "rate_abs_error",
        ],
        Command::Simulate => vec![
            "policy",
            "p",
            "q",
            "eta_c",
            "delta1",
            "delta2",
            "mean_aoi",
            "aoi_std_error",
            "forwarding_rate",
            "rate_std_error",
            "exact",
            "runs",
            "horizon",
            "seed",
        ],
        Command::Verify => vec![
            "check",
            "p",
            "q",
            "eta_c",
            "delta1",
            "delta2",
            "checked",
            "violations",
            "max_error",
            "detail",
        ],
        Command::Compare => vec![
            "p",
            "q",
            "eta_c",
            "cmdp_avg_aoi",
            "cmdp_forwarding_rate",
            "delta1",
            "delta2",
            "dtr_avg_aoi",
            "dtr_exact",
            "dtr_evaluated_aoi",
            "dtr_forwarding_rate",
            "ratio",
            "exact",
        ],
        Command::Sweep => vec![
            "p",
            "q",
            "delta1",
            "delta2",
            "avg_aoi",
            "exact",
            "forwarding_rate",
            "sim_mean_aoi",
            "sim_aoi_std_error",
            "sim_forwarding_rate",
            "sim_rate_std_error",
            "aoi_z",
            "rate_z",
        ],
    };
    cols.extend(["status", "error"]);
    cols
}

fn cells(spec: &ExperimentSpec) -> Vec<Cell> {
    let g = &spec.grid;
    let mut out = Vec::new();
    let budget_cells = |out: &mut Vec<Cell>| {
        for &p in &g.p {
            for &q in &g.q {
                for &eta in &g.eta_c {
                    out.push(Cell {
                        p,
                        q,
                        eta_c: Some(eta),
                        thresholds: None,
                    });
                }
            }
        }
    };
    let threshold_cells = |out: &mut Vec<Cell>| {
        for &p in &g.p {
            for &q in &g.q {
                for &d1 in &g.delta1 {
                    for &d2 in &g.delta2 {
                        out.push(Cell {
                            p,
                            q,
                            eta_c: None,
                            thresholds: Some((d1, d2)),
                        });
                    }
                }
            }
        }
    };
    match spec.command {
        Command::SolveCmdp | Command::OptimizeDtr | Command::Compare => budget_cells(&mut out),
        Command::EvalDtr | Command::Oracle | Command::Sweep => threshold_cells(&mut out),
        Command::Simulate if g.eta_c.is_empty() => threshold_cells(&mut out),
        Command::Simulate => budget_cells(&mut out),
        Command::Verify => {
            threshold_cells(&mut out);
            budget_cells(&mut out);
        }
    }
    out
}

/// Runs every cell of a validated spec. Cell failures become `status=error`
/// rows and do not stop the remaining cells.
pub fn execute(spec: &ExperimentSpec) -> anyhow::Result<RunOutcome> {
    spec.validate()?;
    let (k_max, d_max) = spec.caps();
    let o = &spec.options;
    let cx = Settings {
        space: TruncatedStateSpace::new(k_max, d_max)?,
        rvi: RviConfig::default(),
        sim: SimConfig::new(o.horizon, o.runs, o.seed, SystemState::synchronized())?,
        multiplier_tolerance: o.tol.unwrap_or(MULTIPLIER_TOLERANCE),
        agreement_tolerance: o.tol.unwrap_or(AGREEMENT_TOLERANCE),
        delta1_bound: spec.grid.delta1.iter().copied().max().unwrap_or(1),
        delta2_bound: spec.grid.delta2.iter().copied().max().unwrap_or(2),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(o.workers.unwrap_or(0))
        .build()?;
    let cells = cells(spec);
    let results: Vec<(Cell, anyhow::Result<CellOutput>)> = pool.install(|| {
        cells
            .par_iter()
            .map(|c| (*c, evaluate(spec.command, &cx, c)))
            .collect()
    });

    let mut outcome = RunOutcome {
        table: Table::new(columns(spec.command)),
        detail: Vec::new(),
        failed_cells: 0,
        violations: 0,
    };
    for (cell, result) in results {
        match result {
            Ok(out) => {
                outcome.violations += out.violations;
                outcome
                    .table
                    .rows
                    .extend(out.rows.into_iter().map(|mut row| {
                        row.insert("status".into(), json!("ok"));
                        row
                    }));
                outcome.detail.extend(out.detail);
            }
            Err(e) => {
                outcome.failed_cells += 1;
                let mut row = cell.base_row();
                row.insert("status".into(), json!("error"));
                row.insert("error".into(), json!(format!("{e:#}")));
                outcome.table.rows.push(row);
            }
        }
    }
    Ok(outcome)
}

fn evaluate(command: Command, cx: &Settings, cell: &Cell) -> anyhow::Result<CellOutput> {
    match command {
        Command::SolveCmdp => solve_cmdp(cx, cell),
        Command::EvalDtr => eval_dtr(cell),
        Command::OptimizeDtr => optimize_dtr(cx, cell),
        Command::Oracle => oracle(cx, cell),
        Command::Simulate => simulate_cell(cx, cell),
        Command::Verify if cell.eta_c.is_some() => verify_cmdp(cx, cell),
        Command::Verify => verify_dtr(cx, cell),
        Command::Compare => compare(cx, cell),
        Command::Sweep => sweep(cx, cell),
    }
}

fn single(row: Map<String, Value>) -> CellOutput {
    CellOutput {
        rows: vec![row],
        ..CellOutput::default()
    }
}

fn states_label(states: &[SystemState]) -> String {
    states
        .iter()
        .map(|s| s.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

fn case_label(t: DtrThresholds) -> &'static str {
    match t.case_flag() {
        CaseBranch::Ge => "ge",
        CaseBranch::Le => "le",
    }
}

fn solve_mixture(cx: &Settings, cell: &Cell) -> anyhow::Result<MixedPolicy> {
    Ok(cmdp_solve_with(
        cell.link()?,
        cell.budget()?,
        cx.space,
        cx.rvi,
        cx.multiplier_tolerance,
    )?)
}

fn solve_cmdp(cx: &Settings, cell: &Cell) -> anyhow::Result<CellOutput> {
    let mp = solve_mixture(cx, cell)?;
    let mut row = cell.base_row();
    row.insert("lambda1".into(), json!(mp.lambda1));
    row.insert("lambda2".into(), json!(mp.lambda2));
    row.insert("alpha".into(), json!(mp.alpha));
    row.insert(
        "theta1_visit_probability".into(),
        json!(mp.theta1_visit_probability),
    );
    row.insert(
        "differing_states".into(),
        json!(states_label(&mp.differing_states)),
    );
    row.insert("avg_aoi".into(), json!(mp.avg_aoi()));
    row.insert("forwarding_rate".into(), json!(mp.forwarding_rate()));
    row.insert("exact".into(), json!(false));
    let detail = json!({
        "p": cell.p,
        "q": cell.q,
        "eta_c": cell.eta_c,
        "differing_states": mp.differing_states,
        "theta1": mp.theta1.cells().collect::<Vec<_>>(),
        "theta2": mp.theta2.cells().collect::<Vec<_>>(),
    });
    Ok(CellOutput {
        rows: vec![row],
        detail: Some(detail),
        violations: 0,
    })
}

fn eval_dtr(cell: &Cell) -> anyhow::Result<CellOutput> {
    let (lp, t) = (cell.link()?, cell.dtr()?);
    let aoi = dtr_avg_aoi(lp, t);
    let mut row = cell.base_row();
    row.insert("case".into(), json!(case_label(t)));
    row.insert("avg_aoi".into(), json!(aoi.value));
    row.insert("exact".into(), json!(aoi.exact));
    row.insert("forwarding_rate".into(), json!(dtr_forwarding_rate(lp, t)));
    Ok(single(row))
}

fn optimize_dtr(cx: &Settings, cell: &Cell) -> anyhow::Result<CellOutput> {
    let best = optimize_thresholds(
        cell.link()?,
        cell.budget()?,
        cx.delta1_bound,
        cx.delta2_bound,
    )?;
    let mut row = cell.base_row();
    row.insert("delta1".into(), json!(best.thresholds.delta1()));
    row.insert("delta2".into(), json!(best.thresholds.delta2()));
    row.insert("avg_aoi".into(), json!(best.avg_aoi.value));
    row.insert("exact".into(), json!(best.avg_aoi.exact));
    row.insert("forwarding_rate".into(), json!(best.forwarding_rate));
    Ok(single(row))
}

fn solve_oracle(cx: &Settings, cell: &Cell) -> anyhow::Result<OracleReport> {
    let chain = build_chain(cell.dtr()?, cell.link()?, cx.space)?;
    Ok(solve_stationary(&chain)?)
}

fn oracle(cx: &Settings, cell: &Cell) -> anyhow::Result<CellOutput> {
    let (lp, t) = (cell.link()?, cell.dtr()?);
    let report = solve_oracle(cx, cell)?;
    let aoi = dtr_avg_aoi(lp, t);
    let rate = dtr_forwarding_rate(lp, t);
    let mut row = cell.base_row();
    row.insert("avg_aoi".into(), json!(report.avg_aoi));
    row.insert("forwarding_rate".into(), json!(report.forwarding_rate));
    row.insert("exact".into(), json!(false));
    row.insert("residual".into(), json!(report.residual));
    row.insert("boundary_mass".into(), json!(report.boundary_mass));
    row.insert("closed_form_aoi".into(), json!(aoi.value));
    row.insert("closed_form_exact".into(), json!(aoi.exact));
    row.insert(
        "aoi_abs_error".into(),
        json!((aoi.value - report.avg_aoi).abs()),
    );
    row.insert(
        "rate_abs_error".into(),
        json!((rate - report.forwarding_rate).abs()),
    );
    let masses: Vec<(u64, u64, f64)> = report
        .space
        .states()
        .zip(&report.stationary)
        .filter(|(_, &m)| m >= MASS_FLOOR)
        .map(|(s, &m)| (s.k(), s.d(), m))
        .collect();
    let detail = json!({
        "p": cell.p,
        "q": cell.q,
        "delta1": t.delta1(),
        "delta2": t.delta2(),
        "k_max": report.space.k_max(),
        "d_max": report.space.d_max(),
        "stationary": masses,
    });
    Ok(CellOutput {
        rows: vec![row],
        detail: Some(detail),
        violations: 0,
    })
}

fn sim_detail(cell: &Cell, r: &SimResult) -> Value {
    json!({
        "p": cell.p,
        "q": cell.q,
        "eta_c": cell.eta_c,
        "thresholds": cell.thresholds,
        "runs": r.runs,
    })
}

fn simulate_cell(cx: &Settings, cell: &Cell) -> anyhow::Result<CellOutput> {
    let lp = cell.link()?;
    let (label, r) = match cell.eta_c {
        Some(_) => (
            "cmdp",
            simulate_mixed(&solve_mixture(cx, cell)?, lp, &cx.sim),
        ),
        None => ("dtr", simulate(&cell.dtr()?, lp, &cx.sim)),
    };
    let mut row = cell.base_row();
    row.insert("policy".into(), json!(label));
    row.insert("mean_aoi".into(), json!(r.mean_aoi));
    row.insert("aoi_std_error".into(), json!(r.aoi_std_error));
    row.insert("forwarding_rate".into(), json!(r.mean_forwarding_rate));
    row.insert("rate_std_error".into(), json!(r.rate_std_error));
    row.insert("exact".into(), json!(false));
    row.insert("runs".into(), json!(cx.sim.runs()));
    row.insert("horizon".into(), json!(cx.sim.horizon()));
    row.insert("seed".into(), json!(cx.sim.seed()));
    Ok(CellOutput {
        detail: Some(sim_detail(cell, &r)),
        rows: vec![row],
        violations: 0,
    })
}

fn check_row(
    cell: &Cell,
    check: &str,
    checked: usize,
    violations: usize,
    max_error: f64,
) -> Map<String, Value> {
    let mut row = cell.base_row();
    row.insert("check".into(), json!(check));
    row.insert("checked".into(), json!(checked));
    row.insert("violations".into(), json!(violations));
    row.insert("max_error".into(), json!(max_error));
    row
}

/// Recurrences on the oracle solution, closed-form agreement where the
/// closed form is exact, and branch agreement on the shared boundary.
fn verify_dtr(cx: &Settings, cell: &Cell) -> anyhow::Result<CellOutput> {
    let (lp, t) = (cell.link()?, cell.dtr()?);
    let report = solve_oracle(cx, cell)?;
    let tol = cx.agreement_tolerance;
    let mut out = CellOutput::default();

    let lemma = verify_lemma_recurrences(lp, t, &report);
    let worst = lemma
        .iter()
        .map(|v| (v.lhs - v.rhs).abs())
        .fold(0.0, f64::max);
    let mut row = check_row(cell, "recurrences", report.space.len(), lemma.len(), worst);
    if let Some(v) = lemma.first() {
        row.insert(
            "detail".into(),
            json!(format!("{:?} at {}", v.recurrence, v.state)),
        );
    }
    out.violations += lemma.len();
    out.rows.push(row);

    let aoi = dtr_avg_aoi(lp, t);
    let mut errors = vec![(dtr_forwarding_rate(lp, t) - report.forwarding_rate).abs()];
    if aoi.exact {
        errors.push((aoi.value - report.avg_aoi).abs());
    }
    let bad = errors.iter().filter(|&&e| e > tol).count();
    let mut row = check_row(
        cell,
        "closed-form",
        errors.len(),
        bad,
        errors.iter().copied().fold(0.0, f64::max),
    );
    row.insert(
        "detail".into(),
        json!(if aoi.exact {
            "rate and aoi"
        } else {
            "rate only"
        }),
    );
    out.violations += bad;
    out.rows.push(row);

    if t.delta2() == t.delta1() + 1 {
        let ge = ClosedFormDistribution::with_branch(lp, t, CaseBranch::Ge).grid(12, 12);
        let le = ClosedFormDistribution::with_branch(lp, t, CaseBranch::Le).grid(12, 12);
        let rel: Vec<f64> = ge
            .iter()
            .zip(&le)
            .map(|((_, a), (_, b))| (a - b).abs() / a.abs().max(f64::MIN_POSITIVE))
            .collect();
        let bad = rel.iter().filter(|&&e| e > BRANCH_TOLERANCE).count();
        let worst = rel.iter().copied().fold(0.0, f64::max);
        out.violations += bad;
        out.rows
            .push(check_row(cell, "branch-agreement", rel.len(), bad, worst));
    }
    Ok(out)
}

/// Switching structure of both mixture components, at most one differing
/// state, and budget feasibility of the mixture.
fn verify_cmdp(cx: &Settings, cell: &Cell) -> anyhow::Result<CellOutput> {
    let mp = solve_mixture(cx, cell)?;
    let eta = cell.budget()?.eta_c();
    let mut out = CellOutput::default();
    let mut violations = Vec::new();
    for policy in [&mp.theta1, &mp.theta2] {
        violations.extend(verify_switching_structure(policy, &cx.space)?);
    }
    let mut row = check_row(cell, "structure", 2 * cx.space.len(), violations.len(), 0.0);
    if let Some(v) = violations.first() {
        row.insert(
            "detail".into(),
            json!(format!("{:?} from {} to {}", v.rule, v.from, v.to)),
        );
    }
    out.violations += violations.len();
    out.rows.push(row);

    let extra = mp.differing_states.len().saturating_sub(1);
    let mut row = check_row(cell, "differing-states", 1, usize::from(extra > 0), 0.0);
    row.insert("detail".into(), json!(states_label(&mp.differing_states)));
    out.violations += usize::from(extra > 0);
    out.rows.push(row);

    let excess = (mp.forwarding_rate() - eta).max(0.0);
    let bad = usize::from(excess > cx.agreement_tolerance);
    out.violations += bad;
    out.rows.push(check_row(cell, "budget", 1, bad, excess));
    Ok(out)
}

/// CMDP mixture against the best closed-form DTR pair, both evaluated on the
/// same truncated space.
fn compare(cx: &Settings, cell: &Cell) -> anyhow::Result<CellOutput> {
    let lp = cell.link()?;
    let mp = solve_mixture(cx, cell)?;
    let best = optimize_thresholds(lp, cell.budget()?, cx.delta1_bound, cx.delta2_bound)?;
    let t = best.thresholds;
    let policy = DeterministicPolicy::from_fn(cx.space, |s| dtr_action(t, s));
    let evaluated = policy_long_run_metrics(&policy, lp)?;
    ensure!(mp.avg_aoi() > 0.0, "non-positive CMDP average AoI");
    let mut row = cell.base_row();
    row.insert("cmdp_avg_aoi".into(), json!(mp.avg_aoi()));
    row.insert("cmdp_forwarding_rate".into(), json!(mp.forwarding_rate()));
    row.insert("delta1".into(), json!(t.delta1()));
    row.insert("delta2".into(), json!(t.delta2()));
    row.insert("dtr_avg_aoi".into(), json!(best.avg_aoi.value));
    row.insert("dtr_exact".into(), json!(best.avg_aoi.exact));
    row.insert("dtr_evaluated_aoi".into(), json!(evaluated.avg_aoi));
    row.insert(
        "dtr_forwarding_rate".into(),
        json!(evaluated.forwarding_rate),
    );
    row.insert("ratio".into(), json!(evaluated.avg_aoi / mp.avg_aoi()));
    row.insert("exact".into(), json!(false));
    Ok(single(row))
}

/// Closed form next to simulation, with z-scores of their gaps.
fn sweep(cx: &Settings, cell: &Cell) -> anyhow::Result<CellOutput> {
    let (lp, t) = (cell.link()?, cell.dtr()?);
    let aoi = dtr_avg_aoi(lp, t);
    let rate = dtr_forwarding_rate(lp, t);
    let r = simulate(&t, lp, &cx.sim);
    let mut row = cell.base_row();
    row.insert("avg_aoi".into(), json!(aoi.value));
    row.insert("exact".into(), json!(aoi.exact));
    row.insert("forwarding_rate".into(), json!(rate));
    row.insert("sim_mean_aoi".into(), json!(r.mean_aoi));
    row.insert("sim_aoi_std_error".into(), json!(r.aoi_std_error));
    row.insert("sim_forwarding_rate".into(), json!(r.mean_forwarding_rate));
    row.insert("sim_rate_std_error".into(), json!(r.rate_std_error));
    row.insert(
        "aoi_z".into(),
        json!((r.mean_aoi - aoi.value) / r.aoi_std_error),
    );
    row.insert(
        "rate_z".into(),
        json!((r.mean_forwarding_rate - rate) / r.rate_std_error),
    );
    Ok(CellOutput {
        detail: Some(sim_detail(cell, &r)),
        rows: vec![row],
        violations: 0,
    })
}
