//! Local datasets, the squared-error loss and synthetic clustered scenarios.
//!
//! A synthetic scenario draws one reference parameter vector per cluster and
//! generates every member's labels from the linear model
//! `y_i = X_i w_C + noise_i`. The cluster's clustering error is recorded as
//! `sum_{i in C} |noise_i|^2 / m_i`, the smallest value for which the
//! clustering assumption holds.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::graph::{generate_planted_clusters, ClusterSpec, PlantedParams, SimilarityGraph};

const MAX_CENTER_RETRIES: usize = 1000;

/// Feature matrix `X` (one row per sample) and label vector `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalDataset {
    features: DMatrix<f64>,
    labels: DVector<f64>,
}

impl LocalDataset {
    pub fn new(features: DMatrix<f64>, labels: DVector<f64>) -> Result<Self> {
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(Error::InvalidArgument(format!(
                "dataset needs at least one sample and one feature, got {}x{}",
                features.nrows(),
                features.ncols()
            )));
        }
        if labels.len() != features.nrows() {
            return Err(Error::DimensionMismatch {
                expected: features.nrows(),
                found: labels.len(),
            });
        }
        if features.iter().chain(labels.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "dataset contains non-finite values".into(),
            ));
        }
        Ok(Self { features, labels })
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &DVector<f64> {
        &self.labels
    }

    pub fn sample_count(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    fn check_dim(&self, w: &DVector<f64>) -> Result<()> {
        if w.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: w.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn loss_unchecked(&self, w: &DVector<f64>) -> f64 {
        let residual = &self.labels - &self.features * w;
        residual.norm_squared() / self.sample_count() as f64
    }

    pub(crate) fn gradient_unchecked(&self, w: &DVector<f64>) -> DVector<f64> {
        let residual = &self.features * w - &self.labels;
        self.features.tr_mul(&residual) * (2.0 / self.sample_count() as f64)
    }

    /// `(1/m) X^T X`.
    pub fn normal_matrix(&self) -> DMatrix<f64> {
        self.features.tr_mul(&self.features) / self.sample_count() as f64
    }

    /// `(1/m) X^T y`.
    pub fn normal_rhs(&self) -> DVector<f64> {
        self.features.tr_mul(&self.labels) / self.sample_count() as f64
    }

    /// Lipschitz constant of the loss gradient: `2 lambda_max(X^T X) / m`.
    pub fn smoothness(&self) -> f64 {
        let eig = SymmetricEigen::new(self.normal_matrix());
        2.0 * eig.eigenvalues.iter().copied().fold(0.0, f64::max)
    }
}

/// `(1/m) |y - X w|^2`.
pub fn quadratic_loss(ds: &LocalDataset, w: &DVector<f64>) -> Result<f64> {
    ds.check_dim(w)?;
    Ok(ds.loss_unchecked(w))
}

/// `(2/m) X^T (X w - y)`.
pub fn quadratic_loss_gradient(ds: &LocalDataset, w: &DVector<f64>) -> Result<DVector<f64>> {
    ds.check_dim(w)?;
    Ok(ds.gradient_unchecked(w))
}

/// Generator settings for a synthetic clustered scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub seed: u64,
    pub cluster_sizes: Vec<usize>,
    pub dim: usize,
    pub samples_per_node: usize,
    pub noise_std: f64,
    pub separation: f64,
    pub graph: PlantedParams,
}

impl ScenarioParams {
    pub fn validate(&self) -> Result<()> {
        if self.cluster_sizes.is_empty() || self.cluster_sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "cluster sizes must be a non-empty list of positive integers, got {:?}",
                self.cluster_sizes
            )));
        }
        if self.dim == 0 {
            return Err(Error::InvalidArgument("dimension must be at least 1".into()));
        }
        if self.samples_per_node == 0 {
            return Err(Error::InvalidArgument(
                "samples per node must be at least 1".into(),
            ));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise_std must be finite and non-negative, got {}",
                self.noise_std
            )));
        }
        if !(self.separation.is_finite() && self.separation > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "separation must be positive, got {}",
                self.separation
            )));
        }
        self.graph.validate()
    }
}

/// Datasets on the nodes of a similarity graph plus the clusters they form.
///
/// Every cluster carries its reference parameters and clustering error.
/// `params` is present for generated scenarios and absent for user data.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    datasets: Vec<LocalDataset>,
    graph: SimilarityGraph,
    clusters: Vec<ClusterSpec>,
    dim: usize,
    params: Option<ScenarioParams>,
}

impl Scenario {
    pub fn new(
        datasets: Vec<LocalDataset>,
        graph: SimilarityGraph,
        clusters: Vec<ClusterSpec>,
        params: Option<ScenarioParams>,
    ) -> Result<Self> {
        let dim = datasets
            .first()
            .map(LocalDataset::dim)
            .ok_or_else(|| Error::InvalidArgument("scenario has no datasets".into()))?;
        if let Some(ds) = datasets.iter().find(|ds| ds.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: ds.dim(),
            });
        }
        if graph.node_count() != datasets.len() {
            return Err(Error::InvalidArgument(format!(
                "graph has {} nodes but there are {} datasets",
                graph.node_count(),
                datasets.len()
            )));
        }
        let mut covered = vec![false; datasets.len()];
        for cluster in &clusters {
            for (i, inside) in cluster.mask(datasets.len())?.into_iter().enumerate() {
                covered[i] |= inside;
            }
            let reference = cluster.reference_params().ok_or_else(|| {
                Error::InvalidCluster("scenario clusters need reference parameters".into())
            })?;
            if reference.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: reference.len(),
                });
            }
        }
        if let Some(i) = covered.iter().position(|c| !c) {
            return Err(Error::InvalidCluster(format!(
                "node {i} does not belong to any cluster"
            )));
        }
        Ok(Self {
            datasets,
            graph,
            clusters,
            dim,
            params,
        })
    }

    pub fn datasets(&self) -> &[LocalDataset] {
        &self.datasets
    }

    pub fn graph(&self) -> &SimilarityGraph {
        &self.graph
    }

    pub fn clusters(&self) -> &[ClusterSpec] {
        &self.clusters
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn node_count(&self) -> usize {
        self.datasets.len()
    }

    pub fn params(&self) -> Option<&ScenarioParams> {
        self.params.as_ref()
    }

    pub fn seed(&self) -> Option<u64> {
        self.params.as_ref().map(|p| p.seed)
    }

    /// Same data on a different graph (used by boundary sweeps).
    pub fn with_graph(&self, graph: SimilarityGraph) -> Result<Self> {
        Self::new(
            self.datasets.clone(),
            graph,
            self.clusters.clone(),
            self.params.clone(),
        )
    }

    /// Writes `graph.txt`, `meta.json` and one `node_<i>.csv` per node.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.graph.write(&dir.join("graph.txt"))?;

        let meta = ScenarioMeta {
            n: self.node_count(),
            d: self.dim,
            seed: self.seed(),
            clusters: self
                .clusters
                .iter()
                .map(|c| ClusterMeta {
                    members: c.members().to_vec(),
                    reference_params: c
                        .reference_params()
                        .map(|w| w.iter().copied().collect())
                        .unwrap_or_default(),
                    epsilon: c.epsilon().unwrap_or(0.0),
                })
                .collect(),
            generator: self.params.clone(),
        };
        let meta_path = dir.join("meta.json");
        let mut json = serde_json::to_string_pretty(&meta).map_err(|e| Error::Json {
            path: meta_path.clone(),
            source: e,
        })?;
        json.push('\n');
        std::fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))?;

        for (i, ds) in self.datasets.iter().enumerate() {
            let path = dir.join(format!("node_{i}.csv"));
            std::fs::write(&path, dataset_to_csv(ds)).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("meta.json");
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: ScenarioMeta = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: meta_path.clone(),
            source: e,
        })?;
        let graph = SimilarityGraph::read(&dir.join("graph.txt"))?;
        let datasets = (0..meta.n)
            .map(|i| {
                let path = dir.join(format!("node_{i}.csv"));
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                dataset_from_csv(&text, meta.d, &path)
            })
            .collect::<Result<Vec<_>>>()?;
        let clusters = meta
            .clusters
            .into_iter()
            .map(|c| {
                ClusterSpec::new(c.members)?
                    .with_reference(DVector::from_vec(c.reference_params), c.epsilon)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(datasets, graph, clusters, meta.generator)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ScenarioMeta {
    n: usize,
    d: usize,
    seed: Option<u64>,
    clusters: Vec<ClusterMeta>,
    generator: Option<ScenarioParams>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ClusterMeta {
    members: Vec<usize>,
    reference_params: Vec<f64>,
    epsilon: f64,
}

fn dataset_to_csv(ds: &LocalDataset) -> String {
    let mut out = String::new();
    for r in 0..ds.sample_count() {
        for c in 0..ds.dim() {
            out.push_str(&fmt_f64(ds.features[(r, c)]));
            out.push(',');
        }
        let _ = writeln!(out, "{}", fmt_f64(ds.labels[r]));
    }
    out
}

fn dataset_from_csv(text: &str, dim: usize, path: &Path) -> Result<LocalDataset> {
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: k + 1,
            message,
        };
        let values = line
            .split(',')
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(format!("bad number {f:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != dim + 1 {
            return Err(parse_err(format!(
                "expected {} columns, found {}",
                dim + 1,
                values.len()
            )));
        }
        features.extend_from_slice(&values[..dim]);
        labels.push(values[dim]);
    }
    let rows = labels.len();
    LocalDataset::new(
        DMatrix::from_row_slice(rows, dim, &features),
        DVector::from_vec(labels),
    )
    .map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })
}

/// Draws a synthetic clustered scenario; a pure function of `params`.
///
/// Cluster centers lie on the sphere of radius `separation * sqrt(d) / 2`
/// and are re-drawn until every pair is at least `separation` apart.
pub fn generate_scenario(params: &ScenarioParams) -> Result<Scenario> {
    params.validate()?;
    let d = params.dim;
    let m = params.samples_per_node;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let graph_seed = rng.next_u64();

    let radius = params.separation * (d as f64).sqrt() / 2.0;
    let mut centers: Vec<DVector<f64>> = Vec::with_capacity(params.cluster_sizes.len());
    for c in 0..params.cluster_sizes.len() {
        let mut placed = None;
        for _ in 0..MAX_CENTER_RETRIES {
            let candidate = sample_sphere(&mut rng, d, radius);
            if centers
                .iter()
                .all(|other| (&candidate - other).norm() >= params.separation)
            {
                placed = Some(candidate);
                break;
            }
        }
        let center = placed.ok_or_else(|| {
            Error::InvalidArgument(format!(
                "could not place cluster center {c} at separation {} in dimension {d} \
                 after {MAX_CENTER_RETRIES} draws",
                params.separation
            ))
        })?;
        centers.push(center);
    }

    let (graph, blocks) = generate_planted_clusters(graph_seed, &params.cluster_sizes, &params.graph)?;

    let mut datasets = Vec::with_capacity(graph.node_count());
    let mut clusters = Vec::with_capacity(blocks.len());
    for (block, center) in blocks.into_iter().zip(&centers) {
        let mut epsilon = 0.0;
        for _ in block.members() {
            let features = DMatrix::from_fn(m, d, |_, _| rng.sample::<f64, _>(StandardNormal));
            let noise = DVector::from_fn(m, |_, _| {
                params.noise_std * rng.sample::<f64, _>(StandardNormal)
            });
            epsilon += noise.norm_squared() / m as f64;
            let labels = &features * center + noise;
            datasets.push(LocalDataset::new(features, labels)?);
        }
        clusters.push(block.with_reference(center.clone(), epsilon)?);
    }
    Scenario::new(datasets, graph, clusters, Some(params.clone()))
}

fn sample_sphere(rng: &mut ChaCha8Rng, d: usize, radius: f64) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = v.norm();
        if norm > 0.0 {
            return v * (radius / norm);
        }
    }
}

/// `sum_{i in C} L_i(w_bar)`: the total loss of a shared parameter vector
/// over the cluster members.
pub fn clustering_error(scenario: &Scenario, cluster: &ClusterSpec, w_bar: &DVector<f64>) -> Result<f64> {
    cluster.validate_for(scenario.node_count())?;
    cluster
        .members()
        .iter()
        .map(|&i| quadratic_loss(&scenario.datasets[i], w_bar))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_dataset() -> LocalDataset {
        LocalDataset::new(DMatrix::identity(2, 2), DVector::from_vec(vec![1.0, 2.0])).unwrap()
    }

    fn params(seed: u64, sizes: Vec<usize>, noise_std: f64) -> ScenarioParams {
        ScenarioParams {
            seed,
            cluster_sizes: sizes,
            dim: 3,
            samples_per_node: 20,
            noise_std,
            separation: 2.0,
            graph: PlantedParams::default(),
        }
    }

    #[test]
    fn loss_examples() {
        let ds = identity_dataset();
        assert_eq!(quadratic_loss(&ds, &DVector::from_vec(vec![1.0, 2.0])).unwrap(), 0.0);
        assert_eq!(quadratic_loss(&ds, &DVector::zeros(2)).unwrap(), 2.5);
        let ds = LocalDataset::new(DMatrix::from_element(1, 1, 2.0), DVector::from_element(1, 4.0)).unwrap();
        assert_eq!(quadratic_loss(&ds, &DVector::from_element(1, 1.0)).unwrap(), 4.0);
        assert!(matches!(
            quadratic_loss(&ds, &DVector::zeros(2)),
            Err(Error::DimensionMismatch { expected: 1, found: 2 })
        ));
    }

    #[test]
    fn gradient_examples() {
        let ds = identity_dataset();
        let g = quadratic_loss_gradient(&ds, &DVector::from_vec(vec![1.0, 2.0])).unwrap();
        assert_eq!(g, DVector::zeros(2));
        let ds = LocalDataset::new(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, 0.0)).unwrap();
        let g = quadratic_loss_gradient(&ds, &DVector::from_element(1, 3.0)).unwrap();
        assert_eq!(g, DVector::from_element(1, 6.0));
        assert!(quadratic_loss_gradient(&ds, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn dataset_validation() {
        assert!(LocalDataset::new(DMatrix::zeros(0, 2), DVector::zeros(0)).is_err());
        assert!(LocalDataset::new(DMatrix::zeros(2, 2), DVector::zeros(3)).is_err());
        assert!(LocalDataset::new(DMatrix::from_element(1, 1, f64::NAN), DVector::zeros(1)).is_err());
    }

    #[test]
    fn smoothness_of_identity() {
        // (1/2) I has largest eigenvalue 1/2, so the gradient constant is 1
        assert!((identity_dataset().smoothness() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn noiseless_scenario_has_zero_error() {
        let s = generate_scenario(&params(5, vec![3, 4], 0.0)).unwrap();
        for c in s.clusters() {
            assert_eq!(c.epsilon(), Some(0.0));
            for &i in c.members() {
                assert_eq!(quadratic_loss(&s.datasets()[i], c.reference_params().unwrap()).unwrap(), 0.0);
            }
            assert_eq!(clustering_error(&s, c, c.reference_params().unwrap()).unwrap(), 0.0);
        }
    }

    #[test]
    fn scenario_is_deterministic() {
        let a = generate_scenario(&params(9, vec![3, 3], 0.3)).unwrap();
        let b = generate_scenario(&params(9, vec![3, 3], 0.3)).unwrap();
        assert_eq!(a, b);
        let c = generate_scenario(&params(10, vec![3, 3], 0.3)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn recorded_epsilon_matches_data() {
        let mut p = params(11, vec![5], 0.1);
        p.dim = 2;
        let s = generate_scenario(&p).unwrap();
        let c = &s.clusters()[0];
        let w = c.reference_params().unwrap();
        let recomputed: f64 = c
            .members()
            .iter()
            .map(|&i| {
                let ds = &s.datasets()[i];
                (ds.labels() - ds.features() * w).norm_squared() / ds.sample_count() as f64
            })
            .sum();
        assert!((recomputed - c.epsilon().unwrap()).abs() <= 1e-12);
        assert!((clustering_error(&s, c, w).unwrap() - c.epsilon().unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn singleton_clustering_error_is_node_loss() {
        let s = generate_scenario(&params(2, vec![2, 2], 0.5)).unwrap();
        let w = DVector::from_vec(vec![0.3, -0.1, 2.0]);
        let single = ClusterSpec::new(vec![3]).unwrap();
        assert_eq!(
            clustering_error(&s, &single, &w).unwrap(),
            quadratic_loss(&s.datasets()[3], &w).unwrap()
        );
    }

    #[test]
    fn centers_are_separated() {
        let mut p = params(3, vec![2, 2, 2, 2], 0.0);
        p.dim = 4;
        p.separation = 1.5;
        let s = generate_scenario(&p).unwrap();
        let centers: Vec<_> = s.clusters().iter().map(|c| c.reference_params().unwrap()).collect();
        for a in 0..centers.len() {
            assert!((centers[a].norm() - 1.5).abs() < 1e-12);
            for b in a + 1..centers.len() {
                assert!((centers[a] - centers[b]).norm() >= 1.5);
            }
        }
    }

    #[test]
    fn impossible_separation_is_an_error() {
        // three points on the 1-sphere {-s/2, s/2} cannot be pairwise s apart
        let mut p = params(1, vec![1, 1, 1], 0.0);
        p.dim = 1;
        assert!(matches!(generate_scenario(&p), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn invalid_params() {
        let mut p = params(1, vec![], 0.0);
        assert!(generate_scenario(&p).is_err());
        p.cluster_sizes = vec![2];
        p.dim = 0;
        assert!(generate_scenario(&p).is_err());
        p.dim = 2;
        p.noise_std = -1.0;
        assert!(generate_scenario(&p).is_err());
    }

    #[test]
    fn save_and_load_round_trip() {
        let s = generate_scenario(&params(4, vec![2, 3], 0.7)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        s.save(dir.path()).unwrap();
        let back = Scenario::load(dir.path()).unwrap();
        assert_eq!(back, s);

        std::fs::remove_file(dir.path().join("node_2.csv")).unwrap();
        let err = Scenario::load(dir.path()).unwrap_err();
        assert!(err.to_string().contains("node_2.csv"), "{err}");
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn scenario_validation() {
        let ds = identity_dataset();
        let g = SimilarityGraph::edgeless(2).unwrap();
        let c = ClusterSpec::new(vec![0]).unwrap().with_reference(DVector::zeros(2), 0.0).unwrap();
        // node 1 uncovered
        assert!(Scenario::new(vec![ds.clone(), ds.clone()], g.clone(), vec![c], None).is_err());
        // missing reference
        let bare = ClusterSpec::new(vec![0, 1]).unwrap();
        assert!(Scenario::new(vec![ds.clone(), ds.clone()], g.clone(), vec![bare], None).is_err());
        // graph size mismatch
        let all = ClusterSpec::new(vec![0]).unwrap().with_reference(DVector::zeros(2), 0.0).unwrap();
        assert!(Scenario::new(vec![ds], g, vec![all], None).is_err());
    }
}
