use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::ScenarioParams;
use crate::error::{Error, Result};
use crate::graph::PlantedParams;
use crate::solver::{ExactOptions, IterativeOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Exact,
    Iterative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolverChoice {
    Exact(ExactOptions),
    Iterative(IterativeOptions),
}

/// One JSON document describing an experiment. Command-line flags override
/// individual keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub cluster_sizes: Vec<usize>,
    pub d: usize,
    pub m_per_node: usize,
    pub noise_std: f64,
    pub separation: f64,
    pub graph_params: PlantedParams,
    pub alpha_list: Vec<f64>,
    /// Optional boundary sweep: regenerate the graph with each `p_out`.
    pub p_out_list: Option<Vec<f64>>,
    pub solver: SolverKind,
    pub max_iter: usize,
    pub tol: f64,
    pub ridge: f64,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            cluster_sizes: vec![5, 5],
            d: 2,
            m_per_node: 20,
            noise_std: 0.1,
            separation: 2.0,
            graph_params: PlantedParams::default(),
            alpha_list: vec![0.1, 1.0, 10.0],
            p_out_list: None,
            solver: SolverKind::Exact,
            max_iter: 100_000,
            tol: 1e-12,
            ridge: 0.0,
            out: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha_list.is_empty() {
            return Err(Error::InvalidArgument("alpha_list must not be empty".into()));
        }
        if let Some(a) = self.alpha_list.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "alpha values must be finite and non-negative, got {a}"
            )));
        }
        if self.max_iter == 0 || !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "solver needs max_iter > 0 and tol > 0, got {} and {}",
                self.max_iter, self.tol
            )));
        }
        if !(self.ridge.is_finite() && self.ridge >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "ridge must be non-negative, got {}",
                self.ridge
            )));
        }
        if let Some(list) = &self.p_out_list {
            if list.is_empty() {
                return Err(Error::InvalidArgument("p_out_list must not be empty when given".into()));
            }
            for &p_out in list {
                PlantedParams {
                    p_out,
                    ..self.graph_params
                }
                .validate()?;
            }
        }
        self.scenario_params().validate()
    }

    pub fn scenario_params(&self) -> ScenarioParams {
        ScenarioParams {
            seed: self.seed,
            cluster_sizes: self.cluster_sizes.clone(),
            dim: self.d,
            samples_per_node: self.m_per_node,
            noise_std: self.noise_std,
            separation: self.separation,
            graph: self.graph_params,
        }
    }

    pub fn solver_choice(&self) -> SolverChoice {
        match self.solver {
            SolverKind::Exact => SolverChoice::Exact(ExactOptions { ridge: self.ridge }),
            SolverKind::Iterative => SolverChoice::Iterative(IterativeOptions {
                max_iter: self.max_iter,
                tol: self.tol,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = ExperimentConfig { alpha_list: vec![], ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ExperimentConfig { alpha_list: vec![1.0, -1.0], ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ExperimentConfig { tol: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ExperimentConfig { p_out_list: Some(vec![0.99]), ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ExperimentConfig { d: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn partial_json_uses_defaults() {
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"seed": 7, "solver": "iterative", "graph_params": {"p_in": 1.0, "p_out": 0.0, "w_in": 1.0, "w_out": 1.0}}"#).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.solver, SolverKind::Iterative);
        assert_eq!(cfg.d, 2);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"sed": 7}"#).is_err());
    }
}
