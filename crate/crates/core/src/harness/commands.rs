use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{proof_chain_check, theorem1_report, BoundReport, ProofChain};
use crate::data::{generate_scenario, Scenario};
use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::graph::PlantedParams;
use crate::solver::{solve_exact, solve_iterative, GtvProblem, SolveResult};

use super::config::{ExperimentConfig, SolverChoice};

pub const CSV_COLUMNS: [&str; 15] = [
    "seed", "n", "d", "alpha", "lambda2", "boundary", "epsilon", "R", "lhs", "rhs", "slack",
    "satisfied", "degenerate", "cluster", "p_out",
];

pub fn csv_header() -> String {
    CSV_COLUMNS.join(",")
}

/// One CSV row. Missing seed or `p_out` (user-supplied scenarios) are left
/// empty.
pub fn csv_row(scenario: &Scenario, cluster: usize, report: &BoundReport) -> String {
    let params = scenario.params();
    let opt = |v: Option<String>| v.unwrap_or_default();
    let mut row = String::new();
    let _ = write!(
        row,
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        opt(params.map(|p| p.seed.to_string())),
        scenario.node_count(),
        scenario.dim(),
        fmt_f64(report.alpha),
        fmt_f64(report.lambda2),
        fmt_f64(report.boundary),
        fmt_f64(report.epsilon),
        fmt_f64(report.r_outside),
        fmt_f64(report.lhs),
        fmt_f64(report.rhs),
        fmt_f64(report.slack),
        report.satisfied,
        report.degenerate,
        cluster,
        opt(params.map(|p| fmt_f64(p.graph.p_out))),
    );
    row
}

/// Writes the configured scenario to `config.out`.
pub fn cmd_generate(config: &ExperimentConfig) -> Result<PathBuf> {
    config.validate()?;
    let scenario = generate_scenario(&config.scenario_params())?;
    scenario.save(&config.out)?;
    Ok(config.out.clone())
}

fn solve(scenario: &Scenario, alpha: f64, solver: &SolverChoice) -> Result<SolveResult> {
    let problem = GtvProblem::from_scenario(scenario, alpha)?;
    match solver {
        SolverChoice::Exact(opts) => solve_exact(&problem, opts),
        SolverChoice::Iterative(opts) => solve_iterative(&problem, opts),
    }
}

/// Solves the scenario stored in `scenario_dir` and writes the result JSON.
pub fn cmd_solve(scenario_dir: &Path, alpha: f64, solver: &SolverChoice, out: &Path) -> Result<SolveResult> {
    let scenario = Scenario::load(scenario_dir)?;
    let result = solve(&scenario, alpha, solver)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    result.write(out)?;
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClusterSelector {
    All,
    Index(usize),
}

impl FromStr for ClusterSelector {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "all" {
            return Ok(Self::All);
        }
        s.parse()
            .map(Self::Index)
            .map_err(|_| format!("expected a cluster index or \"all\", got {s:?}"))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisRecord {
    pub cluster: usize,
    pub members: Vec<usize>,
    pub report: BoundReport,
    pub proof_chain: ProofChain,
}

fn analyze(scenario: &Scenario, result: &SolveResult, selector: ClusterSelector) -> Result<Vec<AnalysisRecord>> {
    let problem = GtvProblem::from_scenario(scenario, result.alpha)?;
    problem.check_params(&result.params)?;
    let indices: Vec<usize> = match selector {
        ClusterSelector::All => (0..scenario.clusters().len()).collect(),
        ClusterSelector::Index(k) if k < scenario.clusters().len() => vec![k],
        ClusterSelector::Index(k) => {
            return Err(Error::InvalidArgument(format!(
                "cluster index {k} out of range ({} clusters)",
                scenario.clusters().len()
            )))
        }
    };
    indices
        .into_iter()
        .map(|k| {
            let cluster = &scenario.clusters()[k];
            Ok(AnalysisRecord {
                cluster: k,
                members: cluster.members().to_vec(),
                report: theorem1_report(&problem, result, cluster)?,
                proof_chain: proof_chain_check(&problem, result, cluster)?,
            })
        })
        .collect()
}

/// Analyzes a stored solution and writes `analysis.json` and `analysis.csv`
/// into `out_dir`.
pub fn cmd_analyze(
    scenario_dir: &Path,
    result_path: &Path,
    selector: ClusterSelector,
    out_dir: &Path,
) -> Result<Vec<AnalysisRecord>> {
    let scenario = Scenario::load(scenario_dir)?;
    let result = SolveResult::read(result_path)?;
    let records = analyze(&scenario, &result, selector)?;

    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let json_path = out_dir.join("analysis.json");
    let mut json = serde_json::to_string_pretty(&records).map_err(|e| Error::Json {
        path: json_path.clone(),
        source: e,
    })?;
    json.push('\n');
    std::fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;

    let mut csv = csv_header();
    csv.push('\n');
    for r in &records {
        csv.push_str(&csv_row(&scenario, r.cluster, &r.report));
        csv.push('\n');
    }
    let csv_path = out_dir.join("analysis.csv");
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    Ok(records)
}

/// Runs every `(p_out, alpha)` cell, analyzes all clusters and writes the
/// merged `sweep.csv` into `config.out`. Returns the CSV text.
///
/// Cells run in parallel; rows are merged in `(p_out, alpha, cluster)`
/// order so the output is byte-identical across runs.
pub fn cmd_sweep(config: &ExperimentConfig) -> Result<String> {
    config.validate()?;
    if let Some(a) = config.alpha_list.iter().find(|&&a| a <= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sweep analyzes the deviation bound, which needs alpha > 0; got {a}"
        )));
    }
    let base = generate_scenario(&config.scenario_params())?;
    let p_outs = config
        .p_out_list
        .clone()
        .unwrap_or_else(|| vec![config.graph_params.p_out]);
    let scenarios = p_outs
        .iter()
        .map(|&p_out| rewire(&base, config, p_out))
        .collect::<Result<Vec<_>>>()?;

    let solver = config.solver_choice();
    let cells: Vec<(usize, f64)> = (0..scenarios.len())
        .flat_map(|s| config.alpha_list.iter().map(move |&a| (s, a)))
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(s, alpha)| {
            let scenario = &scenarios[s];
            let result = solve(scenario, alpha, &solver)?;
            let records = analyze(scenario, &result, ClusterSelector::All)?;
            Ok(records
                .iter()
                .map(|r| csv_row(scenario, r.cluster, &r.report))
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;

    let mut csv = csv_header();
    csv.push('\n');
    for row in rows.into_iter().flatten() {
        csv.push_str(&row);
        csv.push('\n');
    }
    std::fs::create_dir_all(&config.out).map_err(|e| Error::io(&config.out, e))?;
    let path = config.out.join("sweep.csv");
    std::fs::write(&path, &csv).map_err(|e| Error::io(&path, e))?;
    Ok(csv)
}

/// Same datasets and clusters on a graph regenerated with a different
/// `p_out`. The graph seed is unchanged, so only boundary edges differ.
fn rewire(base: &Scenario, config: &ExperimentConfig, p_out: f64) -> Result<Scenario> {
    if p_out == config.graph_params.p_out {
        return Ok(base.clone());
    }
    let mut params = config.scenario_params();
    params.graph = PlantedParams {
        p_out,
        ..config.graph_params
    };
    // the graph seed is the first draw of the scenario stream, so the
    // datasets come out identical
    let scenario = generate_scenario(&params)?;
    debug_assert_eq!(scenario.datasets(), base.datasets());
    Ok(scenario)
}
