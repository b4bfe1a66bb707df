//! Experiment configuration: a single TOML file with `[graph]`, `[instance]`,
//! `[run]` and `[output]` tables. The format round-trips losslessly through
//! serde, so a parsed config serialized back parses to the same value.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use concord_core::algorithms::{Algorithm, DsmStepSize, RunConfig};
use concord_core::costs::LsInstance;
use concord_core::graph::Topology;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        source: Box<toml::de::Error>,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("graph construction failed: {0}")]
    Graph(#[from] concord_core::graph::GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    Path,
    Ring,
    Complete,
    ErdosRenyi,
    RandomConnected,
}

/// Either an explicit edge list or a named generator with a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    pub nodes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<(usize, usize)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Edge probability for the Erdős–Rényi generator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
}

impl GraphSpec {
    pub fn build(&self) -> Result<Topology, ConfigError> {
        match (&self.edges, self.generator) {
            (Some(edges), None) => Ok(Topology::new(self.nodes, edges)?),
            (None, Some(kind)) => {
                let seed = self.seed.unwrap_or(0);
                let t = match kind {
                    GeneratorKind::Path => Topology::path(self.nodes)?,
                    GeneratorKind::Ring => Topology::ring(self.nodes)?,
                    GeneratorKind::Complete => Topology::complete(self.nodes)?,
                    GeneratorKind::ErdosRenyi => {
                        let p = self.p.ok_or_else(|| {
                            ConfigError::Invalid("erdos-renyi generator needs p".into())
                        })?;
                        Topology::erdos_renyi(self.nodes, p, seed)?
                    }
                    GeneratorKind::RandomConnected => {
                        Topology::random_connected(self.nodes, seed)?
                    }
                };
                Ok(t)
            }
            (Some(_), Some(_)) => Err(ConfigError::Invalid(
                "give either [graph].edges or [graph].generator, not both".into(),
            )),
            (None, None) => Err(ConfigError::Invalid(
                "[graph] needs edges or a generator".into(),
            )),
        }
    }
}

/// Fresh instance from a seed, or replay of a previously saved instance file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay: Option<PathBuf>,
}

impl InstanceSpec {
    pub fn load(&self, n: usize) -> Result<LsInstance, ConfigError> {
        match (&self.seed, &self.replay) {
            (Some(seed), None) => Ok(LsInstance::generate(n, *seed)),
            (None, Some(path)) => {
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                    path: path.clone(),
                    source,
                })?;
                let inst: LsInstance =
                    toml::from_str(&text).map_err(|source| ConfigError::Parse {
                        path: path.clone(),
                        source: Box::new(source),
                    })?;
                if inst.n != n {
                    return Err(ConfigError::Invalid(format!(
                        "replayed instance has {} agents, graph has {n}",
                        inst.n
                    )));
                }
                Ok(inst)
            }
            (Some(_), Some(_)) => Err(ConfigError::Invalid(
                "give either [instance].seed or [instance].replay, not both".into(),
            )),
            (None, None) => Err(ConfigError::Invalid(
                "[instance] needs a seed or a replay file".into(),
            )),
        }
    }
}

fn default_subproblem_tol() -> f64 {
    1e-12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub algorithms: Vec<Algorithm>,
    pub rho: f64,
    #[serde(default)]
    pub eps1: f64,
    #[serde(default)]
    pub eps2: f64,
    pub max_iter: usize,
    #[serde(default = "default_subproblem_tol")]
    pub subproblem_tol: f64,
    /// Early-stop threshold on the relative residual; absent means a fixed
    /// iteration budget, which produces full comparison curves.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dsm_stepsize: Option<DsmStepSize>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    /// Compute and write the certificate report alongside the traces.
    #[serde(default = "default_true")]
    pub certificates: bool,
    /// Save the realized instance next to the traces for replay.
    #[serde(default = "default_true")]
    pub save_instance: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            dir: default_out_dir(),
            certificates: true,
            save_instance: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub graph: GraphSpec,
    pub instance: InstanceSpec,
    pub run: RunSpec,
    #[serde(default)]
    pub output: OutputSpec,
}

impl ExperimentConfig {
    /// The default benchmark: 9 agents on a seeded random connected graph,
    /// all four algorithms, rho = 1, eps = 0, zero initialization.
    pub fn default_benchmark() -> Self {
        ExperimentConfig {
            graph: GraphSpec {
                nodes: 9,
                edges: None,
                generator: Some(GeneratorKind::RandomConnected),
                seed: Some(42),
                p: None,
            },
            instance: InstanceSpec {
                seed: Some(42),
                replay: None,
            },
            run: RunSpec {
                algorithms: Algorithm::ALL.to_vec(),
                rho: 1.0,
                eps1: 0.0,
                eps2: 0.0,
                max_iter: 1000,
                subproblem_tol: default_subproblem_tol(),
                stop_tolerance: None,
                dsm_stepsize: None,
            },
            output: OutputSpec::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|source| ConfigError::Parse {
                path: path.to_path_buf(),
                source: Box::new(source),
            })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.run.algorithms.is_empty() {
            return Err(ConfigError::Invalid("at least one algorithm".into()));
        }
        if !(self.run.rho > 0.0) {
            return Err(ConfigError::Invalid(format!(
                "rho must be positive, got {}",
                self.run.rho
            )));
        }
        if self.run.eps1 < 0.0 || self.run.eps2 < 0.0 {
            return Err(ConfigError::Invalid("eps1/eps2 must be nonnegative".into()));
        }
        if let Some(path) = &self.instance.replay {
            if !path.exists() {
                return Err(ConfigError::Invalid(format!(
                    "instance file {} does not exist",
                    path.display()
                )));
            }
        }
        Ok(())
    }

    /// Run parameters for one algorithm from this config.
    pub fn run_config(&self, algorithm: Algorithm) -> RunConfig {
        RunConfig {
            rho: self.run.rho,
            eps1: self.run.eps1,
            eps2: self.run.eps2,
            algorithm,
            max_iter: self.run.max_iter,
            subproblem_tol: self.run.subproblem_tol,
            dsm_stepsize: self.run.dsm_stepsize.unwrap_or_default(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
