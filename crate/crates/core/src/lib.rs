//! Generalized total variation minimization (GTVMin) for clustered federated
//! learning.
//!
//! Each node of a weighted similarity graph owns a local dataset and a
//! personalized linear model. GTVMin trains all models jointly by minimizing
//! the sum of local losses plus `alpha` times the weighted squared parameter
//! differences across edges. The [`analysis`] module measures how far the
//! learned parameters inside a cluster deviate from their cluster average
//! and checks that deviation against the bound
//!
//! ```text
//! sum_{i in C} |w~_i|^2 <= (eps_C + 2 alpha bd(C) (|w_C|^2 + R^2)) / (alpha lambda2(C))
//! ```
//!
//! where `bd(C)` is the cluster boundary weight, `lambda2(C)` the algebraic
//! connectivity of the induced subgraph and `R` bounds the parameter norms
//! outside the cluster.

pub mod analysis;
pub mod data;
pub mod error;
pub mod graph;
pub mod harness;
pub mod solver;

pub use analysis::{BoundReport, DeviationVector, ProofChain, TvLowerBound};
pub use data::{LocalDataset, Scenario, ScenarioParams};
pub use error::{Error, Result};
pub use graph::{ClusterSpec, Embedding, PlantedParams, SimilarityGraph};
pub use solver::{GtvProblem, LocalLoss, SolveResult, StackedParams};

/// Formats a float with 17 significant digits in locale-independent
/// scientific notation, enough to round-trip every `f64` exactly.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::fmt_f64;
    use proptest::prelude::*;

    #[test]
    fn non_finite_formatting() {
        assert_eq!(fmt_f64(f64::INFINITY), "inf");
        assert_eq!(fmt_f64(f64::NEG_INFINITY), "-inf");
        assert_eq!(fmt_f64(1.0), "1.0000000000000000e0");
    }

    proptest! {
        #[test]
        fn formatting_round_trips(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
            let back: f64 = fmt_f64(x).parse().unwrap();
            prop_assert_eq!(back.to_bits(), x.to_bits());
        }
    }
}
