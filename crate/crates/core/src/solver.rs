//! The GTVMin objective and its solvers.
//!
//! ```text
//! f(w) = sum_i L_i(w_i) + alpha * sum_{edges {i,j}} A_ij |w_i - w_j|^2
//! ```
//!
//! [`solve_exact`] handles squared-error losses by solving the stationarity
//! system `(Q + alpha L (x) I_d) w = q` with a dense Cholesky factorization.
//! [`solve_iterative`] works for any [`LocalLoss`] and runs synchronous
//! gradient descent in which each node only reads its own loss and the
//! parameters of its graph neighbors.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{LocalDataset, Scenario};
use crate::error::{Error, Result};
use crate::graph::SimilarityGraph;

/// Pivot threshold, relative to the largest diagonal entry, below which the
/// stationarity system is reported as singular.
const PIVOT_RTOL: f64 = 1e-12;
/// Relative residual accepted from the direct solver.
const RESIDUAL_RTOL: f64 = 1e-8;
/// Node-parameter count above which iterative rounds run on the rayon pool.
const PARALLEL_MIN_PARAMS: usize = 4096;

/// A non-negative local loss with a Lipschitz-continuous gradient.
pub trait LocalLoss: Sync {
    fn dim(&self) -> usize;
    fn value(&self, w: &DVector<f64>) -> f64;
    fn gradient(&self, w: &DVector<f64>) -> DVector<f64>;
    /// Upper bound on the Lipschitz constant of [`LocalLoss::gradient`].
    fn smoothness(&self) -> f64;
}

impl LocalLoss for LocalDataset {
    fn dim(&self) -> usize {
        LocalDataset::dim(self)
    }

    fn value(&self, w: &DVector<f64>) -> f64 {
        self.loss_unchecked(w)
    }

    fn gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        self.gradient_unchecked(w)
    }

    fn smoothness(&self) -> f64 {
        LocalDataset::smoothness(self)
    }
}

/// Per-node parameter vectors stacked in node order.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedParams {
    dim: usize,
    values: DVector<f64>,
}

impl StackedParams {
    pub fn zeros(nodes: usize, dim: usize) -> Self {
        Self {
            dim,
            values: DVector::zeros(nodes * dim),
        }
    }

    pub fn from_flat(dim: usize, values: DVector<f64>) -> Result<Self> {
        if dim == 0 || !values.len().is_multiple_of(dim) {
            return Err(Error::InvalidArgument(format!(
                "stacked length {} is not a multiple of dimension {dim}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "parameters contain non-finite values".into(),
            ));
        }
        Ok(Self { dim, values })
    }

    pub fn from_nodes(nodes: &[DVector<f64>]) -> Result<Self> {
        let dim = nodes
            .first()
            .map(|w| w.len())
            .ok_or_else(|| Error::InvalidArgument("no node parameters".into()))?;
        if let Some(w) = nodes.iter().find(|w| w.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: w.len(),
            });
        }
        let flat = DVector::from_iterator(
            nodes.len() * dim,
            nodes.iter().flat_map(|w| w.iter().copied()),
        );
        Self::from_flat(dim, flat)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn node_count(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn node(&self, i: usize) -> DVector<f64> {
        self.values.rows(i * self.dim, self.dim).into_owned()
    }

    pub fn set_node(&mut self, i: usize, w: &DVector<f64>) {
        self.values.rows_mut(i * self.dim, self.dim).copy_from(w);
    }

    pub fn as_flat(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn into_flat(self) -> DVector<f64> {
        self.values
    }

    fn check_shape(&self, nodes: usize, dim: usize) -> Result<()> {
        if self.dim != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: self.dim,
            });
        }
        if self.node_count() != nodes {
            return Err(Error::DimensionMismatch {
                expected: nodes * dim,
                found: self.values.len(),
            });
        }
        Ok(())
    }
}

/// `sum_{edges} A_ij |w_i - w_j|^2`.
pub fn total_variation(graph: &SimilarityGraph, params: &StackedParams) -> Result<f64> {
    if params.node_count() != graph.node_count() {
        return Err(Error::DimensionMismatch {
            expected: graph.node_count() * params.dim(),
            found: params.as_flat().len(),
        });
    }
    Ok(graph
        .edges()
        .iter()
        .map(|e| e.weight * (params.node(e.source) - params.node(e.target)).norm_squared())
        .sum())
}

/// One GTVMin instance: local losses on the nodes of a graph plus the
/// regularization strength `alpha`.
#[derive(Debug, Clone, Copy)]
pub struct GtvProblem<'a, L: LocalLoss = LocalDataset> {
    losses: &'a [L],
    graph: &'a SimilarityGraph,
    alpha: f64,
    dim: usize,
}

impl<'a, L: LocalLoss> GtvProblem<'a, L> {
    pub fn new(losses: &'a [L], graph: &'a SimilarityGraph, alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must be finite and non-negative, got {alpha}"
            )));
        }
        if losses.len() != graph.node_count() {
            return Err(Error::InvalidArgument(format!(
                "graph has {} nodes but there are {} local losses",
                graph.node_count(),
                losses.len()
            )));
        }
        let dim = losses[0].dim();
        if let Some(l) = losses.iter().find(|l| l.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: l.dim(),
            });
        }
        Ok(Self {
            losses,
            graph,
            alpha,
            dim,
        })
    }

    pub fn losses(&self) -> &'a [L] {
        self.losses
    }

    pub fn graph(&self) -> &'a SimilarityGraph {
        self.graph
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn node_count(&self) -> usize {
        self.losses.len()
    }

    pub fn check_params(&self, params: &StackedParams) -> Result<()> {
        params.check_shape(self.node_count(), self.dim)
    }
}

impl<'a> GtvProblem<'a, LocalDataset> {
    pub fn from_scenario(scenario: &'a Scenario, alpha: f64) -> Result<Self> {
        Self::new(scenario.datasets(), scenario.graph(), alpha)
    }
}

/// `sum_i L_i(w_i) + alpha * TV(w)`.
pub fn objective<L: LocalLoss>(problem: &GtvProblem<'_, L>, params: &StackedParams) -> Result<f64> {
    problem.check_params(params)?;
    let loss: f64 = problem
        .losses
        .iter()
        .enumerate()
        .map(|(i, l)| l.value(&params.node(i)))
        .sum();
    Ok(loss + problem.alpha * total_variation(problem.graph, params)?)
}

/// Gradient of node `i`'s block: `grad L_i(w_i) + 2 alpha sum_j A_ij (w_i - w_j)`.
fn node_gradient<L: LocalLoss>(problem: &GtvProblem<'_, L>, params: &StackedParams, i: usize) -> DVector<f64> {
    let wi = params.node(i);
    let mut grad = problem.losses[i].gradient(&wi);
    for &(j, a) in problem.graph.neighbors(i) {
        grad += (&wi - params.node(j)) * (2.0 * problem.alpha * a);
    }
    grad
}

/// Full gradient of the GTVMin objective, stacked in node order.
pub fn objective_gradient<L: LocalLoss>(
    problem: &GtvProblem<'_, L>,
    params: &StackedParams,
) -> Result<StackedParams> {
    problem.check_params(params)?;
    let blocks: Vec<_> = (0..problem.node_count())
        .map(|i| node_gradient(problem, params, i))
        .collect();
    StackedParams::from_nodes(&blocks)
}

/// One synchronous gradient step for node `i`. Reads only `L_i`, `w_i` and
/// the parameters of `i`'s neighbors.
pub fn local_update<L: LocalLoss>(
    problem: &GtvProblem<'_, L>,
    params: &StackedParams,
    i: usize,
    step: f64,
) -> DVector<f64> {
    params.node(i) - node_gradient(problem, params, i) * step
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExactOptions {
    /// Opt-in ridge `delta * I` added to the system matrix. Zero by default.
    pub ridge: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterativeOptions {
    pub max_iter: usize,
    /// Relative objective decrease per round; `sqrt(tol)` is also the
    /// gradient-norm target.
    pub tol: f64,
}

impl Default for IterativeOptions {
    fn default() -> Self {
        Self {
            max_iter: 100_000,
            tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub params: StackedParams,
    pub objective_value: f64,
    /// Zero for the direct solver.
    pub iterations: usize,
    pub converged: bool,
    /// Linear-system residual (direct) or final gradient norm (iterative).
    pub residual: f64,
    pub alpha: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct SolveResultJson {
    alpha: f64,
    objective: f64,
    iterations: usize,
    residual: f64,
    converged: bool,
    n: usize,
    d: usize,
    params: Vec<f64>,
}

impl SolveResult {
    pub fn to_json(&self) -> String {
        let doc = SolveResultJson {
            alpha: self.alpha,
            objective: self.objective_value,
            iterations: self.iterations,
            residual: self.residual,
            converged: self.converged,
            n: self.params.node_count(),
            d: self.params.dim(),
            params: self.params.as_flat().iter().copied().collect(),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("finite floats serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let doc: SolveResultJson = serde_json::from_str(text).map_err(|e| Error::Json {
            path: origin.to_path_buf(),
            source: e,
        })?;
        if doc.params.len() != doc.n * doc.d {
            return Err(Error::DimensionMismatch {
                expected: doc.n * doc.d,
                found: doc.params.len(),
            });
        }
        Ok(Self {
            params: StackedParams::from_flat(doc.d, DVector::from_vec(doc.params))?,
            objective_value: doc.objective,
            iterations: doc.iterations,
            converged: doc.converged,
            residual: doc.residual,
            alpha: doc.alpha,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }
}

/// Assembles `H = Q + alpha (L (x) I_d)` and `q = stack{(1/m_i) X_i^T y_i}`.
pub fn stationarity_system(problem: &GtvProblem<'_, LocalDataset>) -> (DMatrix<f64>, DVector<f64>) {
    let d = problem.dim;
    let n = problem.node_count();
    let mut h = DMatrix::zeros(n * d, n * d);
    let mut q = DVector::zeros(n * d);
    for (i, ds) in problem.losses.iter().enumerate() {
        h.view_mut((i * d, i * d), (d, d)).copy_from(&ds.normal_matrix());
        q.rows_mut(i * d, d).copy_from(&ds.normal_rhs());
    }
    for e in problem.graph.edges() {
        let c = problem.alpha * e.weight;
        for k in 0..d {
            let (a, b) = (e.source * d + k, e.target * d + k);
            h[(a, a)] += c;
            h[(b, b)] += c;
            h[(a, b)] -= c;
            h[(b, a)] -= c;
        }
    }
    (h, q)
}

/// Direct solve of the stationarity system for squared-error losses.
///
/// Fails with [`Error::Singular`] when the system has no unique solution;
/// there is no pseudo-inverse fallback. `options.ridge` adds `delta * I`.
pub fn solve_exact(problem: &GtvProblem<'_, LocalDataset>, options: &ExactOptions) -> Result<SolveResult> {
    if !(options.ridge.is_finite() && options.ridge >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ridge must be finite and non-negative, got {}",
            options.ridge
        )));
    }
    let (mut h, q) = stationarity_system(problem);
    for k in 0..h.nrows() {
        h[(k, k)] += options.ridge;
    }
    let max_diag = h.diagonal().iter().copied().fold(0.0, f64::max);
    let chol = Cholesky::new(h.clone()).ok_or_else(|| Error::Singular(diagnose_singularity(problem)))?;
    let min_pivot_sq = chol
        .l_dirty()
        .diagonal()
        .iter()
        .map(|p| p * p)
        .fold(f64::INFINITY, f64::min);
    if max_diag == 0.0 || min_pivot_sq <= PIVOT_RTOL * max_diag {
        return Err(Error::Singular(diagnose_singularity(problem)));
    }
    let w = chol.solve(&q);
    let residual = (&h * &w - &q).norm();
    if residual > RESIDUAL_RTOL * q.norm() {
        return Err(Error::Singular(format!(
            "residual {residual:e} exceeds {RESIDUAL_RTOL:e} * |q|; system is ill-conditioned ({})",
            diagnose_singularity(problem)
        )));
    }
    let params = StackedParams::from_flat(problem.dim, w)?;
    Ok(SolveResult {
        objective_value: objective(problem, &params)?,
        params,
        iterations: 0,
        converged: true,
        residual,
        alpha: problem.alpha,
    })
}

fn is_rank_deficient(gram: &DMatrix<f64>) -> bool {
    let eig = SymmetricEigen::new(gram.clone());
    let max = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    max == 0.0 || min <= PIVOT_RTOL * max
}

fn diagnose_singularity(problem: &GtvProblem<'_, LocalDataset>) -> String {
    let d = problem.dim;
    if problem.alpha == 0.0 {
        if let Some((i, ds)) = problem
            .losses
            .iter()
            .enumerate()
            .find(|(_, ds)| is_rank_deficient(&ds.normal_matrix()))
        {
            return format!(
                "alpha = 0 decouples the nodes and node {i} has rank-deficient features \
                 ({} samples, dimension {d})",
                ds.sample_count()
            );
        }
    } else {
        for component in problem.graph.connected_components() {
            let pooled = component
                .iter()
                .fold(DMatrix::zeros(d, d), |acc, &i| acc + problem.losses[i].normal_matrix());
            if is_rank_deficient(&pooled) {
                return format!(
                    "graph component {component:?} has no identifiable parameters: \
                     its pooled features are rank-deficient"
                );
            }
        }
    }
    "stationarity system is not positive definite".into()
}

/// Synchronous gradient descent from the all-zero start with step `1/L_f`,
/// `L_f = max_i smoothness(L_i) + 2 alpha lambda_max(L)`.
///
/// Stops once a round lowers the objective by less than `tol` relative to
/// its previous value and the gradient norm has dropped below `1e-2 * sqrt(tol)`.
/// The decrease test alone stops far from the minimizer on flat,
/// ill-conditioned objectives.
///
/// Every round updates all nodes from the previous round's parameters
/// (Jacobi semantics), so the result does not depend on execution order.
pub fn solve_iterative<L: LocalLoss>(
    problem: &GtvProblem<'_, L>,
    options: &IterativeOptions,
) -> Result<SolveResult> {
    if options.max_iter == 0 || !(options.tol.is_finite() && options.tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "iterative solver needs max_iter > 0 and tol > 0, got {} and {}",
            options.max_iter, options.tol
        )));
    }
    let n = problem.node_count();
    let lipschitz = problem
        .losses
        .iter()
        .map(LocalLoss::smoothness)
        .fold(0.0, f64::max)
        + 2.0 * problem.alpha * problem.graph.lambda_max();

    let mut params = StackedParams::zeros(n, problem.dim);
    let mut value = objective(problem, &params)?;
    let grad_target = 1e-2 * options.tol.sqrt();
    let mut iterations = 0;
    let mut converged = false;
    if lipschitz == 0.0 {
        // constant objective
        converged = true;
    }
    let step = 1.0 / lipschitz;
    while !converged && iterations < options.max_iter {
        iterations += 1;
        let blocks: Vec<DVector<f64>> = if n * problem.dim >= PARALLEL_MIN_PARAMS {
            (0..n)
                .into_par_iter()
                .map(|i| local_update(problem, &params, i, step))
                .collect()
        } else {
            (0..n).map(|i| local_update(problem, &params, i, step)).collect()
        };
        if blocks.iter().any(|b| b.iter().any(|v| !v.is_finite())) {
            return Err(Error::Diverged { iteration: iterations });
        }
        params = StackedParams::from_nodes(&blocks)?;
        let next = objective(problem, &params)?;
        if !next.is_finite() {
            return Err(Error::Diverged { iteration: iterations });
        }
        let decrease = value - next;
        value = next;
        if value == 0.0 || decrease < options.tol * (value + decrease).abs() {
            converged = objective_gradient(problem, &params)?.as_flat().norm() <= grad_target;
        }
    }
    let residual = objective_gradient(problem, &params)?.as_flat().norm();
    Ok(SolveResult {
        params,
        objective_value: value,
        iterations,
        converged,
        residual,
        alpha: problem.alpha,
    })
}
