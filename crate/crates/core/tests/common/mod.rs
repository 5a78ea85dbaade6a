//! Test-only oracles, written without the library's linear algebra paths.
#![allow(dead_code)]

use gtvmin::data::{generate_scenario, Scenario, ScenarioParams};
use gtvmin::graph::PlantedParams;
use gtvmin::{SimilarityGraph, StackedParams};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn jacobi_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| m[(i, j)]).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let scale: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum::<f64>().max(1.0);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                let t = sign / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Laplacian assembled entry by entry from the edge list.
pub fn oracle_laplacian(graph: &SimilarityGraph) -> DMatrix<f64> {
    let n = graph.node_count();
    let mut l = DMatrix::zeros(n, n);
    for e in graph.edges() {
        l[(e.source, e.target)] -= e.weight;
        l[(e.target, e.source)] -= e.weight;
        l[(e.source, e.source)] += e.weight;
        l[(e.target, e.target)] += e.weight;
    }
    l
}

pub fn oracle_lambda2(graph: &SimilarityGraph) -> f64 {
    jacobi_eigenvalues(&oracle_laplacian(graph))[1].max(0.0)
}

pub fn complete_graph(m: usize) -> SimilarityGraph {
    SimilarityGraph::from_edges(m, (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j, 1.0)))).unwrap()
}

/// Random weighted graph on `n` nodes with edge probability `p`.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> SimilarityGraph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                edges.push((i, j, rng.random_range(0.05..3.0)));
            }
        }
    }
    SimilarityGraph::from_edges(n, edges).unwrap()
}

pub fn random_stacked(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f64) -> StackedParams {
    let flat = DVector::from_fn(n * d, |_, _| scale * rng.random_range(-1.0..1.0));
    StackedParams::from_flat(d, flat).unwrap()
}

/// Random scenario whose graph is connected, drawn from `seed`.
pub fn connected_scenario(seed: u64, max_nodes: usize, max_dim: usize) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let d = rng.random_range(1..=max_dim);
        let n = rng.random_range(4..=max_nodes);
        let clusters = rng.random_range(1..=if d == 1 { 2 } else { 3 }.min(n / 2));
        let mut sizes = vec![2usize; clusters];
        for _ in 2 * clusters..n {
            sizes[rng.random_range(0..clusters)] += 1;
        }
        let params = ScenarioParams {
            seed: rng.random(),
            cluster_sizes: sizes,
            dim: d,
            samples_per_node: d + rng.random_range(2..=10),
            noise_std: rng.random_range(0.0..1.0),
            separation: rng.random_range(0.5..2.0),
            graph: PlantedParams {
                p_in: rng.random_range(0.6..=1.0),
                p_out: rng.random_range(0.05..=0.3),
                w_in: rng.random_range(0.5..=2.0),
                w_out: rng.random_range(0.05..=0.5),
            },
        };
        let scenario = generate_scenario(&params).unwrap();
        if scenario.graph().is_connected() {
            return scenario;
        }
    }
}

/// `sum_i (1/m) |y_i - X_i w_i|^2 + alpha sum_edges A_ij |w_i - w_j|^2`,
/// evaluated with plain loops.
pub fn oracle_objective(scenario: &Scenario, alpha: f64, w: &StackedParams) -> f64 {
    let d = scenario.dim();
    let mut total = 0.0;
    for (i, ds) in scenario.datasets().iter().enumerate() {
        let x = ds.features();
        let y = ds.labels();
        let m = x.nrows();
        let mut sq = 0.0;
        for r in 0..m {
            let mut pred = 0.0;
            for c in 0..d {
                pred += x[(r, c)] * w.as_flat()[i * d + c];
            }
            sq += (y[r] - pred).powi(2);
        }
        total += sq / m as f64;
    }
    for e in scenario.graph().edges() {
        let mut sq = 0.0;
        for c in 0..d {
            sq += (w.as_flat()[e.source * d + c] - w.as_flat()[e.target * d + c]).powi(2);
        }
        total += alpha * e.weight * sq;
    }
    total
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}
