//! Randomized property suites behind `gtvmin selftest`.

use nalgebra::DVector;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::analysis::{proof_chain_check, theorem1_report, tv_lower_bound_check, BOUND_TOL};
use crate::data::{generate_scenario, ScenarioParams};
use crate::error::Result;
use crate::graph::{generate_planted_clusters, ClusterSpec, PlantedParams, SimilarityGraph};
use crate::solver::{solve_exact, ExactOptions, GtvProblem, StackedParams};

pub const SUITE_ALPHAS: [f64; 3] = [0.1, 1.0, 10.0];
pub const SUITE_NOISE: [f64; 3] = [0.0, 0.1, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteSummary {
    pub name: &'static str,
    pub cases: usize,
    /// Cases actually tested (e.g. non-degenerate reports).
    pub checked: usize,
    pub failures: Vec<String>,
    /// Largest `lhs - rhs` seen, scaled by `max(1, rhs)`.
    pub worst_violation: f64,
}

impl SuiteSummary {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Scenario `k` of the randomized suite derived from `seed`: `n` in
/// `[4, 40]`, `d` in `[1, 8]`, alpha and noise from the fixed grids.
pub fn random_scenario_params(seed: u64, k: u64) -> (ScenarioParams, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ k.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let d = rng.random_range(1..=8usize);
    let n = rng.random_range(4..=40usize);
    // centers on a sphere in low dimension cannot be pairwise far apart
    let max_clusters = match d {
        1 => 2,
        2 => 3,
        _ => 4,
    };
    let clusters = rng.random_range(1..=max_clusters.min(n / 2));
    let mut sizes = vec![1usize; clusters];
    for _ in clusters..n {
        let c = rng.random_range(0..clusters);
        sizes[c] += 1;
    }
    let graph = PlantedParams {
        p_in: rng.random_range(0.5..=1.0),
        p_out: rng.random_range(0.0..=0.2),
        w_in: rng.random_range(0.5..=2.0),
        w_out: rng.random_range(0.05..=0.5),
    };
    let params = ScenarioParams {
        seed: rng.random(),
        cluster_sizes: sizes,
        dim: d,
        samples_per_node: d + rng.random_range(2..=15usize),
        noise_std: *SUITE_NOISE.choose(&mut rng).unwrap(),
        separation: rng.random_range(0.5..=3.0),
        graph,
    };
    let alpha = *SUITE_ALPHAS.choose(&mut rng).unwrap();
    (params, alpha)
}

/// Solves `count` random scenarios exactly and checks the deviation bound
/// and the proof chain on every cluster.
pub fn theorem1_suite(seed: u64, count: usize) -> Result<SuiteSummary> {
    let per_case = (0..count as u64)
        .into_par_iter()
        .map(|k| -> Result<(usize, usize, Vec<String>, f64)> {
            let (params, alpha) = random_scenario_params(seed, k);
            let scenario = generate_scenario(&params)?;
            let problem = GtvProblem::from_scenario(&scenario, alpha)?;
            let result = solve_exact(&problem, &ExactOptions::default())?;
            let (mut reports, mut checked, mut worst) = (0, 0, f64::NEG_INFINITY);
            let mut failures = Vec::new();
            for (c, cluster) in scenario.clusters().iter().enumerate() {
                reports += 1;
                let report = theorem1_report(&problem, &result, cluster)?;
                let chain = proof_chain_check(&problem, &result, cluster)?;
                if !chain.all_hold() {
                    failures.push(format!("scenario {k} cluster {c}: proof chain {chain:?}"));
                }
                if report.degenerate {
                    continue;
                }
                checked += 1;
                worst = worst.max((report.lhs - report.rhs) / report.rhs.max(1.0));
                if !report.satisfied {
                    failures.push(format!("scenario {k} cluster {c}: {report:?}"));
                }
            }
            Ok((reports, checked, failures, worst))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut summary = SuiteSummary {
        name: "deviation bound",
        cases: 0,
        checked: 0,
        failures: Vec::new(),
        worst_violation: f64::NEG_INFINITY,
    };
    for (cases, checked, failures, worst) in per_case {
        summary.cases += cases;
        summary.checked += checked;
        summary.failures.extend(failures);
        summary.worst_violation = summary.worst_violation.max(worst);
    }
    Ok(summary)
}

fn complete_graph(m: usize) -> SimilarityGraph {
    SimilarityGraph::from_edges(m, (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j, 1.0))))
        .expect("complete graph is valid")
}

fn random_params(rng: &mut ChaCha8Rng, n: usize, d: usize) -> StackedParams {
    let flat = DVector::from_fn(n * d, |_, _| 3.0 * rng.sample::<f64, _>(StandardNormal));
    StackedParams::from_flat(d, flat).expect("finite")
}

/// Spectral lower bound on intra-cluster variation: must hold on `count`
/// random instances and be tight on complete unit-weight clusters.
pub fn tv_bound_suite(seed: u64, count: usize) -> Result<SuiteSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut summary = SuiteSummary {
        name: "spectral variation bound",
        cases: 0,
        checked: 0,
        failures: Vec::new(),
        worst_violation: f64::NEG_INFINITY,
    };
    for k in 0..count {
        let n = rng.random_range(4..=30usize);
        let d = rng.random_range(1..=6usize);
        let planted = PlantedParams {
            p_in: rng.random_range(0.3..=1.0),
            p_out: rng.random_range(0.0..=0.3),
            w_in: rng.random_range(0.1..=3.0),
            w_out: rng.random_range(0.1..=3.0),
        };
        let (graph, _) = generate_planted_clusters(rng.random(), &[n], &PlantedParams { p_out: 0.0, ..planted })?;
        let mut nodes: Vec<usize> = (0..n).collect();
        nodes.shuffle(&mut rng);
        let size = rng.random_range(2..=n);
        let cluster = ClusterSpec::new(nodes[..size].to_vec())?;
        let params = random_params(&mut rng, n, d);
        let check = tv_lower_bound_check(&graph, &cluster, &params)?;
        summary.cases += 1;
        summary.checked += 1;
        summary.worst_violation = summary
            .worst_violation
            .max((check.rhs - check.intra_tv) / check.rhs.max(1.0));
        if !check.holds {
            summary.failures.push(format!("instance {k}: {check:?}"));
        }
    }
    for m in 2..=10 {
        let graph = complete_graph(m);
        let cluster = ClusterSpec::new((0..m).collect())?;
        let params = random_params(&mut rng, m, 3);
        let check = tv_lower_bound_check(&graph, &cluster, &params)?;
        summary.cases += 1;
        summary.checked += 1;
        let gap = (check.intra_tv - check.rhs).abs() / check.rhs.max(f64::MIN_POSITIVE);
        if !check.holds || gap > BOUND_TOL {
            summary.failures.push(format!("complete graph K{m}: relative gap {gap:e}"));
        }
    }
    Ok(summary)
}
