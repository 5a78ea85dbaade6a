//! Weighted undirected similarity graphs.
//!
//! Nodes are data generators, edges carry positive similarity weights
//! `A[i][j]`. The Laplacian is `L = D - A`, and the algebraic connectivity
//! (second-smallest Laplacian eigenvalue) is computed by a dense symmetric
//! eigendecomposition, which is adequate up to a few thousand nodes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt_f64;

/// Relative threshold (against the maximum weighted degree) below which
/// `lambda2` is treated as zero, i.e. the graph is considered disconnected.
pub const DISCONNECTED_RTOL: f64 = 1e-9;

/// An undirected edge stored in canonical orientation `source < target`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityGraph {
    n: usize,
    /// Sorted by `(source, target)`.
    edges: Vec<Edge>,
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl SimilarityGraph {
    /// Builds a graph from `(i, j, weight)` triples.
    ///
    /// Pairs are canonicalized to `(min, max)`. Inserting the same pair twice
    /// with the same weight is accepted; with a different weight it is an
    /// error, as are self-loops, out-of-range indices and weights that are
    /// not strictly positive and finite.
    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        if n == 0 {
            return Err(Error::InvalidGraph("node count must be positive".into()));
        }
        let mut canonical: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (i, j, weight) in edges {
            let key = canonical_pair(n, i, j, weight)?;
            if let Some(&existing) = canonical.get(&key) {
                if existing != weight {
                    return Err(Error::InvalidGraph(format!(
                        "edge {{{}, {}}} inserted twice with weights {existing} and {weight}",
                        key.0, key.1
                    )));
                }
            } else {
                canonical.insert(key, weight);
            }
        }
        Ok(Self::from_canonical(n, canonical))
    }

    fn from_canonical(n: usize, canonical: BTreeMap<(usize, usize), f64>) -> Self {
        let mut neighbors = vec![Vec::new(); n];
        let edges: Vec<Edge> = canonical
            .into_iter()
            .map(|((source, target), weight)| {
                neighbors[source].push((target, weight));
                neighbors[target].push((source, weight));
                Edge {
                    source,
                    target,
                    weight,
                }
            })
            .collect();
        for list in &mut neighbors {
            list.sort_by_key(|&(j, _)| j);
        }
        Self {
            n,
            edges,
            neighbors,
        }
    }

    /// Graph with `n` nodes and no edges.
    pub fn edgeless(n: usize) -> Result<Self> {
        Self::from_edges(n, std::iter::empty())
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Neighbors of `i` with edge weights, sorted by neighbor index.
    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    /// Weighted degree `sum_j A[i][j]`.
    pub fn degree(&self, i: usize) -> f64 {
        self.neighbors[i].iter().map(|&(_, w)| w).sum()
    }

    pub fn max_degree(&self) -> f64 {
        (0..self.n).map(|i| self.degree(i)).fold(0.0, f64::max)
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.weight).sum()
    }

    /// Dense Laplacian `D - A`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut lap = DMatrix::zeros(self.n, self.n);
        for e in &self.edges {
            lap[(e.source, e.target)] -= e.weight;
            lap[(e.target, e.source)] -= e.weight;
            lap[(e.source, e.source)] += e.weight;
            lap[(e.target, e.target)] += e.weight;
        }
        lap
    }

    /// Laplacian eigenvalues in ascending order.
    pub fn laplacian_spectrum(&self) -> Vec<f64> {
        let eig = SymmetricEigen::new(self.laplacian());
        let mut values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        values.sort_by(f64::total_cmp);
        values
    }

    /// Second-smallest Laplacian eigenvalue (algebraic connectivity).
    ///
    /// Undefined for fewer than two nodes. Tiny negative round-off is
    /// clamped to zero.
    pub fn lambda2(&self) -> Result<f64> {
        if self.n < 2 {
            return Err(Error::InvalidGraph(format!(
                "lambda2 needs at least 2 nodes, graph has {}",
                self.n
            )));
        }
        Ok(self.laplacian_spectrum()[1].max(0.0))
    }

    /// Largest Laplacian eigenvalue; zero for an edgeless graph.
    pub fn lambda_max(&self) -> f64 {
        if self.edges.is_empty() {
            return 0.0;
        }
        self.laplacian_spectrum().last().copied().unwrap_or(0.0).max(0.0)
    }

    /// `lambda2` together with the disconnection verdict.
    pub fn algebraic_connectivity(&self) -> Result<AlgebraicConnectivity> {
        let lambda2 = self.lambda2()?;
        Ok(AlgebraicConnectivity {
            lambda2,
            disconnected: lambda2 <= DISCONNECTED_RTOL * self.max_degree(),
        })
    }

    /// Subgraph induced by the cluster members, re-indexed `0..|C|` in
    /// member order.
    pub fn induced_subgraph(&self, cluster: &ClusterSpec) -> Result<SimilarityGraph> {
        cluster.validate_for(self.n)?;
        let mut local = vec![usize::MAX; self.n];
        for (k, &i) in cluster.members().iter().enumerate() {
            local[i] = k;
        }
        let mut canonical = BTreeMap::new();
        for e in &self.edges {
            let (a, b) = (local[e.source], local[e.target]);
            if a != usize::MAX && b != usize::MAX {
                canonical.insert((a.min(b), a.max(b)), e.weight);
            }
        }
        Ok(Self::from_canonical(cluster.len(), canonical))
    }

    /// Total weight of edges with exactly one endpoint in the cluster.
    pub fn cluster_boundary(&self, cluster: &ClusterSpec) -> Result<f64> {
        let inside = cluster.mask(self.n)?;
        Ok(self
            .edges
            .iter()
            .filter(|e| inside[e.source] != inside[e.target])
            .map(|e| e.weight)
            .sum())
    }

    /// Connected components as sorted node lists, ordered by smallest node.
    pub fn connected_components(&self) -> Vec<Vec<usize>> {
        let mut label = vec![usize::MAX; self.n];
        let mut components = Vec::new();
        for start in 0..self.n {
            if label[start] != usize::MAX {
                continue;
            }
            let id = components.len();
            let mut stack = vec![start];
            let mut members = Vec::new();
            label[start] = id;
            while let Some(i) = stack.pop() {
                members.push(i);
                for &(j, _) in &self.neighbors[i] {
                    if label[j] == usize::MAX {
                        label[j] = id;
                        stack.push(j);
                    }
                }
            }
            members.sort_unstable();
            components.push(members);
        }
        components
    }

    pub fn is_connected(&self) -> bool {
        self.connected_components().len() == 1
    }

    /// Serializes to the line-oriented text format: `n` on the first line,
    /// then `i j weight` per edge in canonical order.
    pub fn to_text(&self) -> String {
        let mut out = format!("{}\n", self.n);
        for e in &self.edges {
            let _ = writeln!(out, "{} {} {}", e.source, e.target, fmt_f64(e.weight));
        }
        out
    }

    /// Parses the text format. Unlike [`SimilarityGraph::from_edges`], any
    /// repeated pair is rejected.
    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(k, l)| (k + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (first_line, header) = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing node count".into()))?;
        let n: usize = header
            .parse()
            .map_err(|_| parse_err(first_line, format!("bad node count {header:?}")))?;
        if n == 0 {
            return Err(parse_err(first_line, "node count must be positive".into()));
        }
        let mut canonical = BTreeMap::new();
        for (line_no, line) in lines {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(parse_err(
                    line_no,
                    format!("expected `i j weight`, got {line:?}"),
                ));
            }
            let i: usize = fields[0]
                .parse()
                .map_err(|_| parse_err(line_no, format!("bad node index {:?}", fields[0])))?;
            let j: usize = fields[1]
                .parse()
                .map_err(|_| parse_err(line_no, format!("bad node index {:?}", fields[1])))?;
            let weight: f64 = fields[2]
                .parse()
                .map_err(|_| parse_err(line_no, format!("bad weight {:?}", fields[2])))?;
            let key = canonical_pair(n, i, j, weight).map_err(|e| parse_err(line_no, e.to_string()))?;
            if canonical.insert(key, weight).is_some() {
                return Err(parse_err(
                    line_no,
                    format!("duplicate edge {{{}, {}}}", key.0, key.1),
                ));
            }
        }
        Ok(Self::from_canonical(n, canonical))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}

fn canonical_pair(n: usize, i: usize, j: usize, weight: f64) -> Result<(usize, usize)> {
    if i == j {
        return Err(Error::InvalidGraph(format!("self-loop at node {i}")));
    }
    if i >= n || j >= n {
        return Err(Error::InvalidGraph(format!(
            "edge {{{i}, {j}}} out of range for {n} nodes"
        )));
    }
    if !(weight.is_finite() && weight > 0.0) {
        return Err(Error::InvalidGraph(format!(
            "edge {{{i}, {j}}} has non-positive or non-finite weight {weight}"
        )));
    }
    Ok((i.min(j), i.max(j)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlgebraicConnectivity {
    pub lambda2: f64,
    pub disconnected: bool,
}

/// A node subset together with the data that makes it a cluster: a shared
/// reference parameter vector and the total loss it incurs on the members.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSpec {
    members: Vec<usize>,
    reference_params: Option<DVector<f64>>,
    epsilon: Option<f64>,
}

impl ClusterSpec {
    pub fn new(members: Vec<usize>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidCluster("cluster has no members".into()));
        }
        let mut sorted = members.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::InvalidCluster(format!(
                "node {} listed twice",
                w[0]
            )));
        }
        Ok(Self {
            members,
            reference_params: None,
            epsilon: None,
        })
    }

    /// Attaches the reference parameters and clustering error.
    pub fn with_reference(mut self, params: DVector<f64>, epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::InvalidCluster(format!(
                "clustering error must be finite and non-negative, got {epsilon}"
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCluster(
                "reference parameters must be finite".into(),
            ));
        }
        self.reference_params = Some(params);
        self.epsilon = Some(epsilon);
        Ok(self)
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn reference_params(&self) -> Option<&DVector<f64>> {
        self.reference_params.as_ref()
    }

    pub fn epsilon(&self) -> Option<f64> {
        self.epsilon
    }

    pub fn validate_for(&self, n: usize) -> Result<()> {
        match self.members.iter().find(|&&i| i >= n) {
            Some(i) => Err(Error::InvalidCluster(format!(
                "member {i} out of range for {n} nodes"
            ))),
            None => Ok(()),
        }
    }

    /// Membership indicator over `0..n`.
    pub fn mask(&self, n: usize) -> Result<Vec<bool>> {
        self.validate_for(n)?;
        let mut inside = vec![false; n];
        for &i in &self.members {
            inside[i] = true;
        }
        Ok(inside)
    }
}

/// Per-node vector representations used to derive a similarity graph.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    vectors: Vec<DVector<f64>>,
}

impl Embedding {
    pub fn new(vectors: Vec<DVector<f64>>) -> Result<Self> {
        let dim = vectors
            .first()
            .map(|v| v.len())
            .ok_or_else(|| Error::InvalidArgument("embedding has no vectors".into()))?;
        for (i, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "embedding vector {i} has non-finite entries"
                )));
            }
        }
        Ok(Self { vectors })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[DVector<f64>] {
        &self.vectors
    }
}

/// Symmetric k-nearest-neighbor graph with Gaussian weights
/// `exp(-|z_i - z_j|^2 / sigma^2)`.
///
/// An edge is kept when either endpoint selects the other. Distance ties are
/// broken by the lower node index. Weights that underflow are clamped to the
/// smallest positive normal `f64` so that selected edges survive.
pub fn graph_from_embedding(emb: &Embedding, k: usize, sigma: f64) -> Result<SimilarityGraph> {
    let n = emb.len();
    if k >= n {
        return Err(Error::InvalidArgument(format!(
            "neighbor count k = {k} must be smaller than node count {n}"
        )));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "kernel width must be positive, got {sigma}"
        )));
    }
    let z = emb.vectors();
    let mut canonical = BTreeMap::new();
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| ((&z[i] - &z[j]).norm_squared(), j))
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(dist_sq, j) in others.iter().take(k) {
            let weight = (-dist_sq / (sigma * sigma)).exp().max(f64::MIN_POSITIVE);
            canonical.insert((i.min(j), i.max(j)), weight);
        }
    }
    Ok(SimilarityGraph::from_canonical(n, canonical))
}

/// Parameters of the planted-partition (stochastic block model) generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedParams {
    pub p_in: f64,
    pub p_out: f64,
    pub w_in: f64,
    pub w_out: f64,
}

impl Default for PlantedParams {
    fn default() -> Self {
        Self {
            p_in: 0.8,
            p_out: 0.05,
            w_in: 1.0,
            w_out: 0.1,
        }
    }
}

impl PlantedParams {
    pub fn validate(&self) -> Result<()> {
        let ok_prob = |p: f64| (0.0..=1.0).contains(&p);
        if !(ok_prob(self.p_in) && ok_prob(self.p_out) && self.p_out <= self.p_in) {
            return Err(Error::InvalidArgument(format!(
                "need 0 <= p_out <= p_in <= 1, got p_in = {}, p_out = {}",
                self.p_in, self.p_out
            )));
        }
        for (name, w) in [("w_in", self.w_in), ("w_out", self.w_out)] {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// Random graph with planted clusters of the given sizes, laid out as
/// consecutive index blocks. Each pair draws exactly one uniform variate, in
/// lexicographic pair order, so the output depends only on the arguments.
pub fn generate_planted_clusters(
    seed: u64,
    cluster_sizes: &[usize],
    params: &PlantedParams,
) -> Result<(SimilarityGraph, Vec<ClusterSpec>)> {
    params.validate()?;
    if cluster_sizes.is_empty() || cluster_sizes.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "cluster sizes must be a non-empty list of positive integers, got {cluster_sizes:?}"
        )));
    }
    let n: usize = cluster_sizes.iter().sum();
    let mut block = Vec::with_capacity(n);
    let mut clusters = Vec::with_capacity(cluster_sizes.len());
    let mut start = 0;
    for (c, &size) in cluster_sizes.iter().enumerate() {
        block.extend(std::iter::repeat_n(c, size));
        clusters.push(ClusterSpec::new((start..start + size).collect())?);
        start += size;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut canonical = BTreeMap::new();
    for i in 0..n {
        for j in i + 1..n {
            let u: f64 = rng.random();
            let (p, w) = if block[i] == block[j] {
                (params.p_in, params.w_in)
            } else {
                (params.p_out, params.w_out)
            };
            if u < p {
                canonical.insert((i, j), w);
            }
        }
    }
    Ok((SimilarityGraph::from_canonical(n, canonical), clusters))
}
