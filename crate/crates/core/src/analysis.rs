//! Cluster-wise error analysis of GTVMin solutions.
//!
//! For a cluster `C` the learned parameters split into the cluster average
//! and the deviations `w~_i = w_i - avg_C(w)`. [`theorem1_report`] bounds
//! the total squared deviation by
//!
//! ```text
//! (eps_C + 2 alpha bd(C) (|w_C|^2 + R^2)) / (alpha lambda2(C))
//! ```
//!
//! and [`proof_chain_check`] evaluates each inequality that leads to it, so
//! a violated bound can be traced to the step that failed.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{ClusterSpec, SimilarityGraph};
use crate::solver::{GtvProblem, LocalLoss, SolveResult, StackedParams};

/// Relative tolerance of every inequality verdict: `a <= b` is accepted when
/// `a <= b + BOUND_TOL * max(1, |b|)`.
pub const BOUND_TOL: f64 = 1e-9;

fn leq_tol(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs + BOUND_TOL * rhs.abs().max(1.0)
}

fn check_members(params: &StackedParams, cluster: &ClusterSpec) -> Result<()> {
    cluster.validate_for(params.node_count())
}

/// `(1/|C|) sum_{i in C} w_i`.
pub fn cluster_average(params: &StackedParams, cluster: &ClusterSpec) -> Result<DVector<f64>> {
    check_members(params, cluster)?;
    if cluster.is_empty() {
        return Err(Error::InvalidCluster("cluster has no members".into()));
    }
    let sum = cluster
        .members()
        .iter()
        .fold(DVector::zeros(params.dim()), |acc, &i| acc + params.node(i));
    Ok(sum / cluster.len() as f64)
}

/// Deviations of the cluster members from their own average.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviationVector {
    pub members: Vec<usize>,
    pub per_node: Vec<DVector<f64>>,
}

impl DeviationVector {
    /// `sum_{i in C} |w~_i|^2`.
    pub fn squared_norm(&self) -> f64 {
        self.per_node.iter().map(|v| v.norm_squared()).sum()
    }

    pub fn sum(&self) -> DVector<f64> {
        let dim = self.per_node.first().map_or(0, |v| v.len());
        self.per_node.iter().fold(DVector::zeros(dim), |acc, v| acc + v)
    }

    pub fn stacked(&self) -> DVector<f64> {
        stack(&self.per_node)
    }
}

pub fn deviations(params: &StackedParams, cluster: &ClusterSpec) -> Result<DeviationVector> {
    let avg = cluster_average(params, cluster)?;
    Ok(DeviationVector {
        members: cluster.members().to_vec(),
        per_node: cluster.members().iter().map(|&i| params.node(i) - &avg).collect(),
    })
}

fn stack(blocks: &[DVector<f64>]) -> DVector<f64> {
    let dim = blocks.first().map_or(0, |v| v.len());
    DVector::from_iterator(blocks.len() * dim, blocks.iter().flat_map(|v| v.iter().copied()))
}

/// Cluster members' parameters stacked in member order.
pub fn stack_cluster(params: &StackedParams, cluster: &ClusterSpec) -> Result<DVector<f64>> {
    check_members(params, cluster)?;
    let blocks: Vec<_> = cluster.members().iter().map(|&i| params.node(i)).collect();
    Ok(stack(&blocks))
}

/// Estimation error `stack{w_i - w_C}` over the cluster members.
pub fn estimation_error(params: &StackedParams, cluster: &ClusterSpec) -> Result<DVector<f64>> {
    let reference = require_reference(cluster)?.0;
    if reference.len() != params.dim() {
        return Err(Error::DimensionMismatch {
            expected: params.dim(),
            found: reference.len(),
        });
    }
    check_members(params, cluster)?;
    let blocks: Vec<_> = cluster.members().iter().map(|&i| params.node(i) - reference).collect();
    Ok(stack(&blocks))
}

fn block_mean(delta: &DVector<f64>, dim: usize) -> Result<DVector<f64>> {
    if dim == 0 || delta.is_empty() || !delta.len().is_multiple_of(dim) {
        return Err(Error::InvalidArgument(format!(
            "stacked length {} is not a positive multiple of dimension {dim}",
            delta.len()
        )));
    }
    let blocks = delta.len() / dim;
    let mut mean = DVector::zeros(dim);
    for b in 0..blocks {
        mean += delta.rows(b * dim, dim);
    }
    Ok(mean / blocks as f64)
}

/// Orthogonal projection onto the subspace of block-constant vectors: the
/// block average replicated into every block.
pub fn project_s(delta: &DVector<f64>, dim: usize) -> Result<DVector<f64>> {
    let mean = block_mean(delta, dim)?;
    Ok(DVector::from_fn(delta.len(), |k, _| mean[k % dim]))
}

/// Projection onto the complement: `delta - project_s(delta)`.
pub fn project_s_perp(delta: &DVector<f64>, dim: usize) -> Result<DVector<f64>> {
    Ok(delta - project_s(delta, dim)?)
}

/// Both sides of the spectral lower bound on the intra-cluster variation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TvLowerBound {
    /// TV restricted to edges with both endpoints in the cluster.
    pub intra_tv: f64,
    pub lambda2: f64,
    /// `sum_{i in C} |w_i - avg_C(w)|^2`.
    pub deviation_sq: f64,
    /// `lambda2 * deviation_sq`.
    pub rhs: f64,
    pub holds: bool,
}

pub fn tv_lower_bound_check(
    graph: &SimilarityGraph,
    cluster: &ClusterSpec,
    params: &StackedParams,
) -> Result<TvLowerBound> {
    if cluster.len() < 2 {
        return Err(Error::InvalidCluster(
            "spectral bound needs at least two cluster members".into(),
        ));
    }
    if params.node_count() != graph.node_count() {
        return Err(Error::DimensionMismatch {
            expected: graph.node_count() * params.dim(),
            found: params.as_flat().len(),
        });
    }
    let sub = graph.induced_subgraph(cluster)?;
    let members = cluster.members();
    let intra_tv = sub
        .edges()
        .iter()
        .map(|e| e.weight * (params.node(members[e.source]) - params.node(members[e.target])).norm_squared())
        .sum();
    let lambda2 = sub.lambda2()?;
    let deviation_sq = deviations(params, cluster)?.squared_norm();
    let rhs = lambda2 * deviation_sq;
    Ok(TvLowerBound {
        intra_tv,
        lambda2,
        deviation_sq,
        rhs,
        holds: intra_tv >= rhs - BOUND_TOL * rhs.max(1.0),
    })
}

/// Every quantity of the cluster-wise deviation bound for one solution.
///
/// `rhs` and `slack` are `+inf` for a degenerate report (cluster subgraph
/// disconnected or a single node); such reports count as satisfied. In JSON,
/// infinite values are written as `null`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundReport {
    pub lhs: f64,
    pub lambda2: f64,
    pub boundary: f64,
    pub epsilon: f64,
    pub r_outside: f64,
    pub w_bar_norm_sq: f64,
    pub alpha: f64,
    pub rhs: f64,
    pub satisfied: bool,
    pub slack: f64,
    pub degenerate: bool,
}

impl BoundReport {
    /// Recomputes the right-hand side from the stored components.
    pub fn recompute_rhs(&self) -> f64 {
        if self.degenerate {
            return f64::INFINITY;
        }
        (self.epsilon + self.alpha * self.boundary * 2.0 * (self.w_bar_norm_sq + self.r_outside * self.r_outside))
            / (self.alpha * self.lambda2)
    }
}

fn require_reference(cluster: &ClusterSpec) -> Result<(&DVector<f64>, f64)> {
    match (cluster.reference_params(), cluster.epsilon()) {
        (Some(w), Some(eps)) => Ok((w, eps)),
        _ => Err(Error::InvalidCluster(
            "cluster needs reference parameters and a clustering error".into(),
        )),
    }
}

struct ClusterQuantities<'c> {
    w_bar: &'c DVector<f64>,
    epsilon: f64,
    lambda2: f64,
    degenerate: bool,
    boundary: f64,
    r_outside: f64,
    deviation_sq: f64,
}

fn cluster_quantities<'c, L: LocalLoss>(
    problem: &GtvProblem<'_, L>,
    params: &StackedParams,
    cluster: &'c ClusterSpec,
) -> Result<ClusterQuantities<'c>> {
    let (w_bar, epsilon) = require_reference(cluster)?;
    if !(problem.alpha() > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "the deviation bound needs alpha > 0, got {}",
            problem.alpha()
        )));
    }
    problem.check_params(params)?;
    if w_bar.len() != problem.dim() {
        return Err(Error::DimensionMismatch {
            expected: problem.dim(),
            found: w_bar.len(),
        });
    }
    let graph = problem.graph();
    let inside = cluster.mask(graph.node_count())?;
    let (lambda2, degenerate) = if cluster.len() < 2 {
        (0.0, true)
    } else {
        let conn = graph.induced_subgraph(cluster)?.algebraic_connectivity()?;
        (conn.lambda2, conn.disconnected)
    };
    let r_outside = (0..graph.node_count())
        .filter(|&i| !inside[i])
        .map(|i| params.node(i).norm())
        .fold(0.0, f64::max);
    Ok(ClusterQuantities {
        w_bar,
        epsilon,
        lambda2,
        degenerate,
        boundary: graph.cluster_boundary(cluster)?,
        r_outside,
        deviation_sq: deviations(params, cluster)?.squared_norm(),
    })
}

/// Evaluates the deviation bound for the solution `result` of `problem`.
///
/// `R` is measured from the solution as the largest parameter norm outside
/// the cluster (zero when the cluster covers every node).
pub fn theorem1_report<L: LocalLoss>(
    problem: &GtvProblem<'_, L>,
    result: &SolveResult,
    cluster: &ClusterSpec,
) -> Result<BoundReport> {
    let q = cluster_quantities(problem, &result.params, cluster)?;
    let alpha = problem.alpha();
    let mut report = BoundReport {
        lhs: q.deviation_sq,
        lambda2: q.lambda2,
        boundary: q.boundary,
        epsilon: q.epsilon,
        r_outside: q.r_outside,
        w_bar_norm_sq: q.w_bar.norm_squared(),
        alpha,
        rhs: f64::INFINITY,
        satisfied: true,
        slack: f64::INFINITY,
        degenerate: q.degenerate,
    };
    if !q.degenerate {
        report.rhs = report.recompute_rhs();
        report.slack = report.rhs - report.lhs;
        report.satisfied = leq_tol(report.lhs, report.rhs);
    }
    Ok(report)
}

/// The cluster part of the objective: member losses plus `alpha` times the
/// TV over every edge with at least one endpoint in the cluster.
pub fn f_prime<L: LocalLoss>(
    problem: &GtvProblem<'_, L>,
    cluster: &ClusterSpec,
    params: &StackedParams,
) -> Result<f64> {
    problem.check_params(params)?;
    let inside = cluster.mask(problem.node_count())?;
    let losses: f64 = cluster
        .members()
        .iter()
        .map(|&i| problem.losses()[i].value(&params.node(i)))
        .sum();
    let tv: f64 = problem
        .graph()
        .edges()
        .iter()
        .filter(|e| inside[e.source] || inside[e.target])
        .map(|e| e.weight * (params.node(e.source) - params.node(e.target)).norm_squared())
        .sum();
    Ok(losses + problem.alpha() * tv)
}

/// The inequalities behind the deviation bound, evaluated numerically.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProofChain {
    /// `f'` with every member set to the reference parameters and the other
    /// nodes held at the solution.
    pub candidate_value: f64,
    /// `eps_C + 2 alpha bd(C) (|w_C|^2 + R^2)`.
    pub candidate_bound: f64,
    /// `f'` at the solution.
    pub solution_value: f64,
    /// `alpha lambda2(C) sum |w~_i|^2`.
    pub solution_lower_bound: f64,
    /// `sum |w~_i|^2`.
    pub deviation_sq: f64,
    pub candidate_within_bound: bool,
    pub solution_above_lower_bound: bool,
    pub solution_not_worse: bool,
}

impl ProofChain {
    pub fn all_hold(&self) -> bool {
        self.candidate_within_bound && self.solution_above_lower_bound && self.solution_not_worse
    }
}

/// Evaluates the proof chain at `params` (normally a GTVMin solution).
pub fn proof_chain_at<L: LocalLoss>(
    problem: &GtvProblem<'_, L>,
    params: &StackedParams,
    cluster: &ClusterSpec,
) -> Result<ProofChain> {
    let q = cluster_quantities(problem, params, cluster)?;
    let alpha = problem.alpha();
    let mut candidate = params.clone();
    for &i in cluster.members() {
        candidate.set_node(i, q.w_bar);
    }
    let candidate_value = f_prime(problem, cluster, &candidate)?;
    let candidate_bound =
        q.epsilon + alpha * q.boundary * 2.0 * (q.w_bar.norm_squared() + q.r_outside * q.r_outside);
    let solution_value = f_prime(problem, cluster, params)?;
    let solution_lower_bound = alpha * q.lambda2 * q.deviation_sq;
    Ok(ProofChain {
        candidate_value,
        candidate_bound,
        solution_value,
        solution_lower_bound,
        deviation_sq: q.deviation_sq,
        candidate_within_bound: leq_tol(candidate_value, candidate_bound),
        solution_above_lower_bound: leq_tol(solution_lower_bound, solution_value),
        solution_not_worse: leq_tol(solution_value, candidate_value),
    })
}

pub fn proof_chain_check<L: LocalLoss>(
    problem: &GtvProblem<'_, L>,
    result: &SolveResult,
    cluster: &ClusterSpec,
) -> Result<ProofChain> {
    proof_chain_at(problem, &result.params, cluster)
}
