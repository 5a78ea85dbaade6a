mod common;

use gtvmin::graph::{generate_planted_clusters, graph_from_embedding, PlantedParams};
use gtvmin::{ClusterSpec, Embedding, SimilarityGraph, StackedParams};
use nalgebra::DVector;
use proptest::prelude::*;

use common::*;

fn arb_graph(max_n: usize) -> impl Strategy<Value = SimilarityGraph> {
    (2..=max_n).prop_flat_map(|n| {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        let len = pairs.len();
        proptest::collection::vec(proptest::option::weighted(0.4, 0.01f64..5.0), len).prop_map(move |ws| {
            let edges = pairs.iter().zip(ws).filter_map(|(&(i, j), w)| w.map(|w| (i, j, w)));
            SimilarityGraph::from_edges(n, edges).unwrap()
        })
    })
}

/// Graph plus a proper non-empty subset of its nodes (as a mask).
fn arb_graph_and_cluster(max_n: usize) -> impl Strategy<Value = (SimilarityGraph, Vec<usize>)> {
    arb_graph(max_n).prop_flat_map(|g| {
        let n = g.node_count();
        (Just(g), proptest::sample::subsequence((0..n).collect::<Vec<_>>(), 1..=n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn laplacian_rows_sum_to_zero_and_matches_oracle(g in arb_graph(15)) {
        let l = g.laplacian();
        for i in 0..g.node_count() {
            prop_assert!(l.row(i).sum().abs() <= 1e-12 * (1.0 + g.degree(i)));
        }
        prop_assert!((l - oracle_laplacian(&g)).amax() <= 1e-12);
    }

    #[test]
    fn spectrum_is_psd_and_matches_oracle(g in arb_graph(15)) {
        let spectrum = g.laplacian_spectrum();
        let oracle = jacobi_eigenvalues(&oracle_laplacian(&g));
        let scale = 1.0 + g.max_degree();
        prop_assert!(spectrum[0] >= -1e-10 * scale);
        for (a, b) in spectrum.iter().zip(&oracle) {
            prop_assert!((a - b).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn lambda2_vanishes_exactly_when_disconnected(g in arb_graph(12)) {
        let conn = g.algebraic_connectivity().unwrap();
        prop_assert_eq!(conn.disconnected, !g.is_connected());
    }

    #[test]
    fn courant_fischer_upper_bound(g in arb_graph(12), seed in any::<u64>()) {
        // lambda2 <= x^T L x / |x|^2 for any x orthogonal to the ones vector
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = g.node_count();
        let mut x = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let mean = x.mean();
        x.add_scalar_mut(-mean);
        prop_assume!(x.norm() > 1e-6);
        let rayleigh = (x.transpose() * g.laplacian() * &x)[(0, 0)] / x.norm_squared();
        prop_assert!(g.lambda2().unwrap() <= rayleigh + 1e-9 * (1.0 + rayleigh));
    }

    #[test]
    fn boundary_matches_edge_scan_and_complement((g, members) in arb_graph_and_cluster(15)) {
        let n = g.node_count();
        let cluster = ClusterSpec::new(members.clone()).unwrap();
        let bd = g.cluster_boundary(&cluster).unwrap();
        let scan: f64 = g.edges().iter()
            .filter(|e| members.contains(&e.source) != members.contains(&e.target))
            .map(|e| e.weight)
            .sum();
        prop_assert!((bd - scan).abs() <= 1e-12 * (1.0 + scan));
        if members.len() < n {
            let rest: Vec<usize> = (0..n).filter(|i| !members.contains(i)).collect();
            let complement = g.cluster_boundary(&ClusterSpec::new(rest).unwrap()).unwrap();
            prop_assert!((bd - complement).abs() <= 1e-12 * (1.0 + bd));
        }
        // internal + boundary + external weights partition the total
        let internal = g.induced_subgraph(&cluster).unwrap().total_weight();
        let outside: Vec<usize> = (0..n).filter(|i| !members.contains(i)).collect();
        let external = if outside.is_empty() {
            0.0
        } else {
            g.induced_subgraph(&ClusterSpec::new(outside).unwrap()).unwrap().total_weight()
        };
        prop_assert!((internal + bd + external - g.total_weight()).abs() <= 1e-10 * (1.0 + g.total_weight()));
    }

    #[test]
    fn adding_a_boundary_edge_grows_the_boundary((g, members) in arb_graph_and_cluster(12), w in 0.01f64..3.0) {
        let n = g.node_count();
        prop_assume!(members.len() < n);
        let cluster = ClusterSpec::new(members.clone()).unwrap();
        let outside = (0..n).find(|i| !members.contains(i)).unwrap();
        let inside = members[0];
        let (a, b) = (inside.min(outside), inside.max(outside));
        prop_assume!(!g.edges().iter().any(|e| e.source == a && e.target == b));
        let mut edges: Vec<(usize, usize, f64)> = g.edges().iter().map(|e| (e.source, e.target, e.weight)).collect();
        edges.push((a, b, w));
        let bigger = SimilarityGraph::from_edges(n, edges).unwrap();
        let before = g.cluster_boundary(&cluster).unwrap();
        let after = bigger.cluster_boundary(&cluster).unwrap();
        prop_assert!((after - before - w).abs() <= 1e-12 * (1.0 + after));
    }

    #[test]
    fn induced_subgraph_lambda2_matches_oracle((g, members) in arb_graph_and_cluster(15)) {
        prop_assume!(members.len() >= 2);
        let sub = g.induced_subgraph(&ClusterSpec::new(members).unwrap()).unwrap();
        let scale = 1.0 + sub.max_degree();
        prop_assert!((sub.lambda2().unwrap() - oracle_lambda2(&sub)).abs() <= 1e-9 * scale);
    }

    #[test]
    fn text_format_round_trips(g in arb_graph(10)) {
        let back = SimilarityGraph::from_text(&g.to_text(), std::path::Path::new("mem")).unwrap();
        prop_assert_eq!(back, g);
    }

    #[test]
    fn intra_variation_bounds_deviation((g, members) in arb_graph_and_cluster(12), seed in any::<u64>(), d in 1usize..4) {
        use rand::SeedableRng;
        prop_assume!(members.len() >= 2);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let w: StackedParams = random_stacked(&mut rng, g.node_count(), d, 4.0);
        let check = gtvmin::analysis::tv_lower_bound_check(&g, &ClusterSpec::new(members).unwrap(), &w).unwrap();
        prop_assert!(check.holds);
        prop_assert!(check.intra_tv >= check.rhs - 1e-9 * (1.0 + check.rhs));
    }
}

#[test]
fn complete_graph_spectrum() {
    for m in 2..=10 {
        let spectrum = complete_graph(m).laplacian_spectrum();
        assert!(spectrum[0].abs() < 1e-12);
        for v in &spectrum[1..] {
            assert!((v - m as f64).abs() < 1e-9 * m as f64);
        }
    }
}

#[test]
fn path_graph_lambda2() {
    // P_n has lambda2 = 2 - 2 cos(pi / n)
    for n in 2..=12 {
        let g = SimilarityGraph::from_edges(n, (0..n - 1).map(|i| (i, i + 1, 1.0))).unwrap();
        let expected = 2.0 - 2.0 * (std::f64::consts::PI / n as f64).cos();
        assert!((g.lambda2().unwrap() - expected).abs() < 1e-12, "P_{n}");
    }
}

#[test]
fn planted_graph_is_seed_deterministic_and_blocky() {
    let params = PlantedParams { p_in: 1.0, p_out: 0.0, ..PlantedParams::default() };
    let (g, clusters) = generate_planted_clusters(5, &[3, 4], &params).unwrap();
    assert_eq!(g.edge_count(), 3 + 6);
    assert_eq!(clusters.len(), 2);
    for c in &clusters {
        assert_eq!(g.cluster_boundary(c).unwrap(), 0.0);
    }
    let params = PlantedParams { p_out: 0.3, p_in: 0.7, ..PlantedParams::default() };
    let a = generate_planted_clusters(9, &[5, 5, 5], &params).unwrap();
    let b = generate_planted_clusters(9, &[5, 5, 5], &params).unwrap();
    assert_eq!(a, b);
}

#[test]
fn knn_graph_links_nearby_points() {
    let points = [0.0, 0.1, 0.2, 5.0, 5.1, 5.2];
    let emb = Embedding::new(points.iter().map(|&x| DVector::from_element(1, x)).collect()).unwrap();
    let g = graph_from_embedding(&emb, 2, 1.0).unwrap();
    let left = ClusterSpec::new(vec![0, 1, 2]).unwrap();
    assert_eq!(g.cluster_boundary(&left).unwrap(), 0.0);
    assert_eq!(g.edge_count(), 6);
    for e in g.edges() {
        let d = points[e.target] - points[e.source];
        assert!((e.weight - (-d * d).exp()).abs() < 1e-15);
    }
}
